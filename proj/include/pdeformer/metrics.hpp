#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "pdeformer/rng.hpp"
#include "pdeformer/transformer.hpp"

namespace pdeformer {

// Sample Pearson correlation; nullopt when either input is constant
// (undefined rather than silently zero).
std::optional<double> pearson(const std::vector<double>& a, const std::vector<double>& b);

// Pearson over fractional ranks, ties get average ranks.
std::optional<double> spearman(const std::vector<double>& a, const std::vector<double>& b);

// dot(a, b) / (|a| |b|); rejects zero vectors.
double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

// sum p log(p/q) in nats. Inputs must each sum to 1 within 1e-9; q is floored
// at 1e-12 before the log and p = 0 terms contribute 0.
double kl_divergence(const std::vector<double>& p, const std::vector<double>& q);

// Pearson between flattened activations of consecutive trace levels.
std::vector<std::optional<double>> interlayer_correlations(const LayerTrace& trace);

struct LayerSimilarity {
  std::optional<double> pearson;
  std::optional<double> spearman;
};

// Both statistics on flattened same-index levels of two traces.
std::vector<LayerSimilarity> crosslayer_similarity(const LayerTrace& a, const LayerTrace& b);

struct AttentionSimilarity {
  std::vector<double> cosine;   // per layer, over head-averaged maps
  std::vector<double> mean_kl;  // per layer, averaged over rows (A rows as p)
  double overall_cosine = 0.0;  // over all layers concatenated
  double overall_kl = 0.0;
};

AttentionSimilarity attention_similarity(const std::vector<Tensor>& a,
                                         const std::vector<Tensor>& b);

// Mean |gradient| per parameter group recorded in the trace; rejects traces
// without a completed backward pass.
std::vector<std::pair<std::string, double>> gradient_stats(const LayerTrace& trace);

struct SweepPoint {
  double eps = 0.0;
  double mean_loss = 0.0;
  double stderr_est = 0.0;
  bool saturated = false;  // non-finite loss at this strength
};

// Mean loss under eps-scaled embedding noise. `loss_fn(eps, rng)` evaluates
// one trial; trials use per-epsilon derived seeds so the grid can be
// extended without disturbing earlier points.
std::vector<SweepPoint> perturbation_sweep(
    const std::function<double(double, Rng&)>& loss_fn, const std::vector<double>& eps_grid,
    std::size_t trials, std::uint64_t seed);

}  // namespace pdeformer
