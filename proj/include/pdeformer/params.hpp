#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "pdeformer/diffgraph.hpp"
#include "pdeformer/rng.hpp"
#include "pdeformer/tensor.hpp"

namespace pdeformer {

// Named parameter tensors. std::map keeps iteration order stable, which
// pins tape construction order and therefore gradient accumulation order.
using ParamMap = std::map<std::string, Tensor>;
using GradMap = std::map<std::string, Tensor>;

// Parameter leaves registered on a graph for one forward/backward pass.
struct TapedParams {
  DiffGraph* graph = nullptr;
  std::map<std::string, NodeId> ids;

  static TapedParams bind(DiffGraph& g, const ParamMap& params);

  NodeId at(const std::string& name) const;
  bool has(const std::string& name) const { return ids.count(name) != 0; }
};

// Gradients of every bound parameter after backward(); zero tensors for
// parameters the root does not depend on.
GradMap collect_grads(const DiffGraph& g, const TapedParams& tp);

// Mean |g| per name prefix (text before the first '.'): "layer3.wq" and
// "layer3.ffn_w1" both land in group "layer3".
std::map<std::string, double> group_mean_abs(const GradMap& grads);

// Zero-mean uniform with scale 1/sqrt(fan_in), substream keyed by name.
Tensor init_uniform(std::uint64_t seed, const std::string& name, Shape shape,
                    std::size_t fan_in);

}  // namespace pdeformer
