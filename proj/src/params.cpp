#include "pdeformer/params.hpp"

#include <cmath>

namespace pdeformer {

TapedParams TapedParams::bind(DiffGraph& g, const ParamMap& params) {
  TapedParams tp;
  tp.graph = &g;
  for (const auto& [name, tensor] : params) {
    tp.ids.emplace(name, g.leaf(tensor));
  }
  return tp;
}

NodeId TapedParams::at(const std::string& name) const {
  auto it = ids.find(name);
  if (it == ids.end()) throw ShapeError("no parameter named '" + name + "'");
  return it->second;
}

GradMap collect_grads(const DiffGraph& g, const TapedParams& tp) {
  GradMap out;
  for (const auto& [name, id] : tp.ids) {
    // Parameters the root does not reach stay at zero gradient.
    Tensor grad = g.has_grad(id) ? g.grad(id) : Tensor(g.value(id).shape());
    out.emplace(name, std::move(grad));
  }
  return out;
}

std::map<std::string, double> group_mean_abs(const GradMap& grads) {
  std::map<std::string, double> sum;
  std::map<std::string, std::size_t> count;
  for (const auto& [name, g] : grads) {
    const std::string group = name.substr(0, name.find('.'));
    double s = 0.0;
    for (double v : g.data()) s += std::abs(v);
    sum[group] += s;
    count[group] += g.size();
  }
  std::map<std::string, double> out;
  for (const auto& [group, s] : sum) out[group] = s / static_cast<double>(count[group]);
  return out;
}

Tensor init_uniform(std::uint64_t seed, const std::string& name, Shape shape,
                    std::size_t fan_in) {
  Rng rng = Rng::derive(seed, name);
  const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-scale, scale);
  return t;
}

}  // namespace pdeformer
