#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pdeformer/params.hpp"
#include "pdeformer/transformer.hpp"

namespace pdeformer {

struct MIEstimate {
  double value = 0.0;  // nats, >= 0
  std::string estimator;
  std::size_t bins = 0;
};

// Plug-in mutual information between quantile-binned activations and labels,
// averaged over feature dimensions. Equal values always share a bin, so a
// constant dimension contributes 0 and any strictly monotone per-dimension
// transform leaves the estimate unchanged.
MIEstimate binned_mi(const Tensor& features, const std::vector<std::size_t>& labels,
                     std::size_t bins);

// Gaussian encoder head for the variational bound: mean and log-variance
// projections d -> r against a standard-normal prior. Log-variance is
// clamped to [-10, 10].
ParamMap init_vib_params(std::size_t in_dim, std::size_t width, std::uint64_t seed);

// Mean KL(q(t|x) || N(0, I)) over the batch; differentiable, >= 0.
// `features` is B x d; parameters live under "vib." in `tp`.
NodeId vib_bound(DiffGraph& g, NodeId features, const TapedParams& tp);

// theta <- theta - lr * (task + l2_sign * lambda * theta + beta * vib).
// With lambda = beta = 0 and sgd this is a plain gradient step.
void ib_update(ParamMap& params, const GradMap& task_grads, const GradMap& vib_grads,
               const TrainSettings& s, OptState& opt);

}  // namespace pdeformer
