#include "pdeformer/ib.hpp"

#include <algorithm>
#include <cmath>

namespace pdeformer {

namespace {

// I(bin(v); Y) from a count table, plug-in estimate in nats.
double plugin_mi(const std::vector<std::size_t>& bin_of, const std::vector<std::size_t>& labels,
                 std::size_t bins, std::size_t classes) {
  const std::size_t n = labels.size();
  std::vector<double> joint(bins * classes, 0.0), pb(bins, 0.0), py(classes, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    joint[bin_of[i] * classes + labels[i]] += 1.0;
    pb[bin_of[i]] += 1.0;
    py[labels[i]] += 1.0;
  }
  const double inv = 1.0 / static_cast<double>(n);
  double mi = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    for (std::size_t y = 0; y < classes; ++y) {
      const double pxy = joint[b * classes + y] * inv;
      if (pxy <= 0.0) continue;
      mi += pxy * std::log(pxy / (pb[b] * inv * py[y] * inv));
    }
  }
  return std::max(0.0, mi);
}

}  // namespace

MIEstimate binned_mi(const Tensor& features, const std::vector<std::size_t>& labels,
                     std::size_t bins) {
  if (features.rank() != 2) throw ShapeError("binned_mi expects n x d features");
  const std::size_t n = features.rows(), d = features.cols();
  if (bins < 2) throw ShapeError("binned_mi needs bins >= 2");
  if (n < bins) throw ShapeError("binned_mi needs at least `bins` samples");
  if (labels.size() != n) throw ShapeError("binned_mi label count mismatch");
  std::size_t classes = 0;
  for (std::size_t y : labels) classes = std::max(classes, y + 1);

  double total = 0.0;
  std::vector<double> col(n), sorted(n);
  std::vector<std::size_t> bin_of(n);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < n; ++i) col[i] = features(i, j);
    sorted = col;
    std::sort(sorted.begin(), sorted.end());
    if (sorted.front() == sorted.back()) continue;  // constant dimension: 0
    // Equal-mass edges; equal values always land in the same bin, so the
    // estimate is invariant under strictly increasing transforms.
    std::vector<double> edges(bins - 1);
    for (std::size_t b = 1; b < bins; ++b) edges[b - 1] = sorted[b * n / bins];
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t b = 0;
      while (b < edges.size() && col[i] >= edges[b]) ++b;
      bin_of[i] = b;
    }
    total += plugin_mi(bin_of, labels, bins, classes);
  }
  return {total / static_cast<double>(d), "binned", bins};
}

ParamMap init_vib_params(std::size_t in_dim, std::size_t width, std::uint64_t seed) {
  ParamMap p;
  p["vib.wm"] = init_uniform(seed, "vib.wm", {in_dim, width}, in_dim);
  p["vib.bm"] = Tensor({width});
  p["vib.wv"] = init_uniform(seed, "vib.wv", {in_dim, width}, in_dim);
  p["vib.bv"] = Tensor({width});
  return p;
}

NodeId vib_bound(DiffGraph& g, NodeId features, const TapedParams& tp) {
  const std::size_t batch = g.value(features).rows();
  const NodeId mu = g.add_row(g.matmul(features, tp.at("vib.wm")), tp.at("vib.bm"));
  const NodeId lv =
      g.clamp(g.add_row(g.matmul(features, tp.at("vib.wv")), tp.at("vib.bv")), -10.0, 10.0);
  // KL(N(mu, e^lv) || N(0, 1)) = 0.5 * sum(mu^2 + e^lv - lv - 1)
  const NodeId inner = g.shift(g.sub(g.add(g.mul(mu, mu), g.exp(lv)), lv), -1.0);
  return g.scale(g.sum(inner), 0.5 / static_cast<double>(batch));
}

void ib_update(ParamMap& params, const GradMap& task_grads, const GradMap& vib_grads,
               const TrainSettings& s, OptState& opt) {
  if (s.adam) ++opt.t;
  for (auto& [name, theta] : params) {
    auto it = task_grads.find(name);
    if (it == task_grads.end() || !it->second.same_shape(theta)) {
      throw ShapeError("gradient map misaligned with parameter '" + name + "'");
    }
    const Tensor& gt = it->second;
    const Tensor* gv = nullptr;
    if (!vib_grads.empty()) {
      auto vit = vib_grads.find(name);
      if (vit == vib_grads.end() || !vit->second.same_shape(theta)) {
        throw ShapeError("compression gradient misaligned with parameter '" + name + "'");
      }
      gv = &vit->second;
    }

    Tensor dir(theta.shape());
    for (std::size_t i = 0; i < theta.size(); ++i) {
      dir[i] = gt[i] + s.l2_sign * s.l2 * theta[i] + (gv ? s.beta * (*gv)[i] : 0.0);
    }

    if (!s.adam) {
      for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= s.lr * dir[i];
      continue;
    }
    Tensor& m = opt.m.try_emplace(name, Tensor(theta.shape())).first->second;
    Tensor& v = opt.v.try_emplace(name, Tensor(theta.shape())).first->second;
    const double c1 = 1.0 - std::pow(s.adam_beta1, static_cast<double>(opt.t));
    const double c2 = 1.0 - std::pow(s.adam_beta2, static_cast<double>(opt.t));
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = s.adam_beta1 * m[i] + (1.0 - s.adam_beta1) * dir[i];
      v[i] = s.adam_beta2 * v[i] + (1.0 - s.adam_beta2) * dir[i] * dir[i];
      theta[i] -= s.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + s.adam_eps);
    }
  }
}

}  // namespace pdeformer
