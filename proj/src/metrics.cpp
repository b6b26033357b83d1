#include "pdeformer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace pdeformer {

std::optional<double> pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw ShapeError("pearson needs two equal-length vectors of size >= 2");
  }
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;  // undefined for constant input
  return sab / std::sqrt(saa * sbb);
}

namespace {
std::vector<double> fractional_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}
}  // namespace

std::optional<double> spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw ShapeError("spearman needs two equal-length vectors of size >= 2");
  }
  return pearson(fractional_ranks(a), fractional_ranks(b));
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("cosine_similarity length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw ShapeError("cosine_similarity rejects zero vectors");
  return dot / std::sqrt(na * nb);
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw ShapeError("kl_divergence length mismatch");
  double sp = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0 || q[i] < 0.0) throw ShapeError("kl_divergence needs nonnegative entries");
    sp += p[i];
    sq += q[i];
  }
  if (std::abs(sp - 1.0) > 1e-9 || std::abs(sq - 1.0) > 1e-9) {
    throw ShapeError("kl_divergence inputs must sum to 1 within 1e-9");
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    kl += p[i] * std::log(p[i] / std::max(q[i], 1e-12));
  }
  return kl;
}

std::vector<std::optional<double>> interlayer_correlations(const LayerTrace& trace) {
  if (trace.activations.size() < 2) {
    throw ShapeError("interlayer_correlations needs at least two trace levels");
  }
  std::vector<std::optional<double>> out;
  for (std::size_t l = 0; l + 1 < trace.activations.size(); ++l) {
    out.push_back(pearson(trace.activations[l].data(), trace.activations[l + 1].data()));
  }
  return out;
}

std::vector<LayerSimilarity> crosslayer_similarity(const LayerTrace& a, const LayerTrace& b) {
  if (a.activations.size() != b.activations.size()) {
    throw ShapeError("crosslayer_similarity needs traces of equal depth");
  }
  std::vector<LayerSimilarity> out;
  for (std::size_t l = 0; l < a.activations.size(); ++l) {
    if (!a.activations[l].same_shape(b.activations[l])) {
      throw ShapeError("crosslayer_similarity shape mismatch at level " + std::to_string(l));
    }
    out.push_back({pearson(a.activations[l].data(), b.activations[l].data()),
                   spearman(a.activations[l].data(), b.activations[l].data())});
  }
  return out;
}

namespace {
// h x s x s -> head-averaged s x s; rows stay stochastic under averaging.
Tensor head_average(const Tensor& a) {
  if (a.rank() != 3) throw ShapeError("attention stack must be h x s x s");
  const std::size_t h = a.extent(0), s = a.extent(1);
  Tensor avg({s, s});
  for (std::size_t k = 0; k < h; ++k)
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < s; ++j) avg(i, j) += a(k, i, j) / static_cast<double>(h);
  return avg;
}
}  // namespace

AttentionSimilarity attention_similarity(const std::vector<Tensor>& a,
                                         const std::vector<Tensor>& b) {
  if (a.size() != b.size() || a.empty()) {
    throw ShapeError("attention_similarity needs equal nonempty layer stacks");
  }
  AttentionSimilarity out;
  std::vector<double> all_a, all_b;
  double kl_sum = 0.0;
  std::size_t kl_rows = 0;
  for (std::size_t l = 0; l < a.size(); ++l) {
    if (!a[l].same_shape(b[l])) {
      throw ShapeError("attention shape mismatch at layer " + std::to_string(l));
    }
    const Tensor ha = head_average(a[l]);
    const Tensor hb = head_average(b[l]);
    out.cosine.push_back(cosine_similarity(ha.data(), hb.data()));
    double layer_kl = 0.0;
    const std::size_t s = ha.rows();
    for (std::size_t i = 0; i < s; ++i) {
      std::vector<double> pa(s), pb(s);
      for (std::size_t j = 0; j < s; ++j) {
        pa[j] = ha(i, j);
        pb[j] = hb(i, j);
      }
      layer_kl += kl_divergence(pa, pb);
    }
    out.mean_kl.push_back(layer_kl / static_cast<double>(s));
    kl_sum += layer_kl;
    kl_rows += s;
    all_a.insert(all_a.end(), ha.data().begin(), ha.data().end());
    all_b.insert(all_b.end(), hb.data().begin(), hb.data().end());
  }
  out.overall_cosine = cosine_similarity(all_a, all_b);
  out.overall_kl = kl_sum / static_cast<double>(kl_rows);
  return out;
}

std::vector<std::pair<std::string, double>> gradient_stats(const LayerTrace& trace) {
  if (trace.grad_groups.empty()) {
    throw ShapeError("gradient_stats needs a trace with a completed backward pass");
  }
  return {trace.grad_groups.begin(), trace.grad_groups.end()};
}

std::vector<SweepPoint> perturbation_sweep(
    const std::function<double(double, Rng&)>& loss_fn, const std::vector<double>& eps_grid,
    std::size_t trials, std::uint64_t seed) {
  if (trials < 1) throw ShapeError("perturbation_sweep needs trials >= 1");
  for (std::size_t i = 0; i + 1 < eps_grid.size(); ++i) {
    if (!(eps_grid[i] >= 0.0) || eps_grid[i] >= eps_grid[i + 1]) {
      throw ShapeError("epsilon grid must be nonnegative and ascending");
    }
  }
  std::vector<SweepPoint> out;
  for (double eps : eps_grid) {
    SweepPoint pt;
    pt.eps = eps;
    std::vector<double> losses;
    for (std::size_t t = 0; t < trials; ++t) {
      // Variance reduction: every epsilon reuses the same per-pair noise
      // stream (common random numbers), and odd trials flip the sign of the
      // perturbation (antithetic pairing), so the averaged curve loses its
      // first-order noise term and compares cleanly across epsilons.
      Rng rng = Rng::derive(seed, "perturb/" + std::to_string(t / 2));
      const double signed_eps = (t % 2 == 0) ? eps : -eps;
      double loss;
      try {
        loss = loss_fn(signed_eps, rng);
      } catch (const NumericError&) {
        pt.saturated = true;
        continue;
      }
      if (!std::isfinite(loss)) {
        pt.saturated = true;
        continue;
      }
      losses.push_back(loss);
    }
    if (!losses.empty()) {
      double mean = std::accumulate(losses.begin(), losses.end(), 0.0) /
                    static_cast<double>(losses.size());
      pt.mean_loss = mean;
      if (losses.size() > 1) {
        double var = 0.0;
        for (double v : losses) var += (v - mean) * (v - mean);
        var /= static_cast<double>(losses.size() - 1);
        pt.stderr_est = std::sqrt(var / static_cast<double>(losses.size()));
      }
    } else {
      pt.saturated = true;
    }
    out.push_back(pt);
  }
  return out;
}

}  // namespace pdeformer
