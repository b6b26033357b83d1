#include "pdeformer/pde_flow.hpp"

#include <cmath>
#include <string>

namespace pdeformer {

double PDEConfig::diffusion_at(std::size_t l) const {
  return diffusion.size() == 1 ? diffusion[0] : diffusion.at(l);
}

double PDEConfig::alpha_at(std::size_t l) const {
  return alpha.size() == 1 ? alpha[0] : alpha.at(l);
}

void PDEConfig::validate() const {
  if (layers < 1) throw ConfigError("pde stack needs at least one layer");
  if (!(dt >= 0.0)) throw ConfigError("dt must be nonnegative");
  if (!(dx > 0.0)) throw ConfigError("dx must be positive");
  if (dim < 2 || heads < 1 || dim % heads != 0) {
    throw ConfigError("heads must divide the field width");
  }
  if (diffusion.size() != 1 && diffusion.size() != layers) {
    throw ConfigError("diffusion must have one entry or one per layer");
  }
  if (alpha.size() != 1 && alpha.size() != layers) {
    throw ConfigError("alpha must have one entry or one per layer");
  }
  for (std::size_t l = 0; l < layers; ++l) {
    if (diffusion_at(l) < 0.0 || alpha_at(l) < 0.0) {
      throw ConfigError("diffusion and alpha must be nonnegative");
    }
  }
}

namespace {

Tensor identity_plus_noise(std::uint64_t seed, const std::string& name, std::size_t n,
                           double diag, double eps) {
  Rng rng = Rng::derive(seed, name);
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) t(i, j) = rng.uniform(-eps, eps) + (i == j ? diag : 0.0);
  return t;
}

}  // namespace

ParamMap init_pde_params(const PDEConfig& cfg) {
  cfg.validate();
  ParamMap p;
  const std::size_t d = cfg.dim;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    p[pre + "wq"] = init_uniform(cfg.seed, pre + "wq", {d, d}, d);
    p[pre + "wk"] = init_uniform(cfg.seed, pre + "wk", {d, d}, d);
    p[pre + "wv"] = init_uniform(cfg.seed, pre + "wv", {d, d}, d);
    p[pre + "wo"] = init_uniform(cfg.seed, pre + "wo", {d, d}, d);
    p[pre + "ffn_w1"] = init_uniform(cfg.seed, pre + "ffn_w1", {d, cfg.ffn}, d);
    p[pre + "ffn_b1"] = Tensor({cfg.ffn});
    p[pre + "ffn_w2"] = init_uniform(cfg.seed, pre + "ffn_w2", {cfg.ffn, d}, cfg.ffn);
    p[pre + "ffn_b2"] = Tensor({d});
    // Couplings model residual connections: near-identity inflow, weaker
    // decay outflow.
    if (l > 0) {
      p[pre + "cin_w"] = identity_plus_noise(cfg.seed, pre + "cin_w", d, 1.0, 0.02);
      p[pre + "cin_b"] = Tensor({d});
    }
    if (l + 1 < cfg.layers) {
      p[pre + "cout_w"] = identity_plus_noise(cfg.seed, pre + "cout_w", d, 0.5, 0.02);
      p[pre + "cout_b"] = Tensor({d});
    }
  }
  return p;
}

ParamMap init_pde_model_params(const TransformerConfig& tcfg, const PDEConfig& pcfg,
                               InputKind kind) {
  tcfg.validate();
  ParamMap p = init_pde_params(pcfg);
  const std::size_t d = pcfg.dim;
  if (kind == InputKind::Image) {
    p["embed.w"] = init_uniform(tcfg.seed, "embed.w", {tcfg.image_cols, d}, tcfg.image_cols);
    p["embed.b"] = Tensor({d});
  } else {
    p["embed.table"] = init_uniform(tcfg.seed, "embed.table", {tcfg.vocab, d}, d);
  }
  p["head.w"] = init_uniform(tcfg.seed, "head.w", {d, tcfg.classes}, d);
  p["head.b"] = Tensor({tcfg.classes});
  return p;
}

AttentionResult pde_attention(DiffGraph& g, NodeId u, const TapedParams& tp,
                              std::size_t layer, std::size_t heads, bool prenorm) {
  const std::string pre = "layer" + std::to_string(layer);
  NodeId x = u;
  if (prenorm) x = g.layer_norm(u, tp.at(pre + ".ln1_g"), tp.at(pre + ".ln1_b"));
  return multi_head_attention(g, x, tp, pre, heads);
}

NodeId pde_residual_term(DiffGraph& g, NodeId u, const TapedParams& tp, std::size_t layer) {
  const std::string pre = "layer" + std::to_string(layer);
  const NodeId h1 =
      g.relu(g.add_row(g.matmul(u, tp.at(pre + ".ffn_w1")), tp.at(pre + ".ffn_b1")));
  return g.add_row(g.matmul(h1, tp.at(pre + ".ffn_w2")), tp.at(pre + ".ffn_b2"));
}

NodeId pde_step_layer(DiffGraph& g, NodeId u, std::optional<NodeId> u_prev,
                      const TapedParams& tp, const PDEConfig& cfg, std::size_t layer,
                      Tensor* attn_out, bool weight_shared) {
  const std::string pre = "layer" + std::to_string(layer);
  const double D = cfg.diffusion_at(layer);
  const double a = cfg.alpha_at(layer);
  std::string terms;  // magnitudes seen so far, for the abort report
  try {
    std::optional<NodeId> rhs;
    auto add_term = [&](NodeId t, const char* name) {
      terms += std::string(terms.empty() ? "" : ", ") + name + "=" +
               std::to_string(max_abs(g.value(t)));
      rhs = rhs ? g.add(*rhs, t) : t;
    };
    if (D != 0.0) add_term(g.scale(g.laplacian(u, cfg.dx), D), "|D lap|");
    const bool dynamics = cfg.mode == PDEConfig::Mode::Full || weight_shared;
    if (dynamics && a != 0.0) {
      AttentionResult ar = pde_attention(g, u, tp, layer, cfg.heads, weight_shared);
      if (attn_out) *attn_out = std::move(ar.attn);
      add_term(g.scale(ar.out, a), "|alpha A|");
    }
    if (cfg.mode == PDEConfig::Mode::Full && !weight_shared) {
      add_term(pde_residual_term(g, u, tp, layer), "|R|");
    }
    if (!weight_shared) {
      if (u_prev && tp.has(pre + ".cin_w")) {
        add_term(g.add_row(g.matmul(*u_prev, tp.at(pre + ".cin_w")), tp.at(pre + ".cin_b")),
                 "|C_in|");
      }
      if (layer + 1 < cfg.layers && tp.has(pre + ".cout_w")) {
        add_term(g.scale(g.add_row(g.matmul(u, tp.at(pre + ".cout_w")), tp.at(pre + ".cout_b")),
                         -1.0),
                 "|C_out|");
      }
    }
    if (!rhs) return u;  // all terms vanish
    return g.add(u, g.scale(*rhs, cfg.dt));
  } catch (const NumericError& e) {
    throw NumericError("pde step aborted at layer " + std::to_string(layer) + " (" + terms +
                       "): " + e.what());
  }
}

PDERunOut pde_run(DiffGraph& g, NodeId u0, const PDEConfig& cfg, const TapedParams& tp,
                  bool weight_shared) {
  cfg.validate();
  PDERunOut out;
  out.trace.activations.push_back(g.value(u0));
  const Shape field_shape = g.value(u0).shape();
  std::optional<NodeId> below;
  NodeId field = u0;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    if (!weight_shared && l > 0) {
      below = field;
      field = g.leaf(Tensor(field_shape));  // deeper layers start at rest
    }
    Tensor attn;
    for (std::size_t n = 0; n < cfg.steps; ++n) {
      try {
        // Attention, like the transformer's, is reported as a function of the
        // layer's incoming field: capture the first refinement step only.
        field = pde_step_layer(g, field, below, tp, cfg, l, n == 0 ? &attn : nullptr,
                               weight_shared);
      } catch (const NumericError& e) {
        throw NumericError("pde run aborted at step " + std::to_string(n) + ": " + e.what());
      }
    }
    out.layer_final.push_back(field);
    out.trace.activations.push_back(g.value(field));
    if (!attn.empty()) out.trace.attentions.push_back(std::move(attn));
  }
  return out;
}

LayerTrace pde_run_tensors(const Tensor& u0, const PDEConfig& cfg, const ParamMap& params,
                           bool weight_shared) {
  DiffGraph g;
  TapedParams tp = TapedParams::bind(g, params);
  return pde_run(g, g.leaf(u0), cfg, tp, weight_shared).trace;
}

ForwardFn pde_forward_fn(const TransformerConfig& tcfg, const PDEConfig& pcfg) {
  return [tcfg, pcfg](DiffGraph& g, const TapedParams& tp, const Sample& s) {
    ForwardOut out;
    const NodeId u0 = embed_input(g, s, tp, tcfg);
    PDERunOut run = pde_run(g, u0, pcfg, tp, false);
    out.trace = std::move(run.trace);
    out.pooled = g.mean_rows(run.layer_final.back());
    out.logits = g.add_row(g.matmul(out.pooled, tp.at("head.w")), tp.at("head.b"));
    return out;
  };
}

StabilityReport check_stability(const PDEConfig& cfg, const ParamMap& params) {
  cfg.validate();
  StabilityReport rep;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string key = "layer" + std::to_string(l) + ".wo";
    double wo_norm = 0.0;
    if (auto it = params.find(key); it != params.end()) {
      wo_norm = spectral_norm(it->second, cfg.seed);
    }
    const double lhs = 2.0 * cfg.diffusion_at(l) * cfg.dt / (cfg.dx * cfg.dx) +
                       cfg.alpha_at(l) * cfg.dt * wo_norm;
    rep.lhs.push_back(lhs);
    rep.margin.push_back(1.0 - lhs);
    if (lhs > 1.0) rep.stable = false;
  }
  return rep;
}

ConvergenceReport estimate_convergence_order(const Tensor& u0, const PDEConfig& cfg,
                                             const ParamMap& params, int refinements) {
  if (refinements < 2) throw ShapeError("estimate_convergence_order needs refinements >= 2");
  std::vector<std::vector<double>> solutions;
  for (int k = 0; k <= refinements; ++k) {
    PDEConfig c = cfg;
    c.dt = cfg.dt / std::pow(2.0, k);
    c.steps = cfg.steps << k;  // same final time steps*dt
    LayerTrace trace = pde_run_tensors(u0, c, params);
    std::vector<double> flat;
    for (std::size_t l = 1; l < trace.activations.size(); ++l) {
      const auto& d = trace.activations[l].data();
      flat.insert(flat.end(), d.begin(), d.end());
    }
    solutions.push_back(std::move(flat));
  }
  std::vector<double> gaps;
  for (std::size_t k = 0; k + 1 < solutions.size(); ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < solutions[k].size(); ++i) {
      const double d = solutions[k][i] - solutions[k + 1][i];
      s += d * d;
    }
    gaps.push_back(std::sqrt(s));
  }
  ConvergenceReport rep;
  for (double gap : gaps) {
    if (gap < 1e-13) {
      rep.below_floor = true;  // converged below measurement floor
      return rep;
    }
  }
  double p = 0.0;
  for (std::size_t k = 0; k + 1 < gaps.size(); ++k) p += std::log2(gaps[k] / gaps[k + 1]);
  rep.order = p / static_cast<double>(gaps.size() - 1);
  return rep;
}

double jacobian_check(const Tensor& u, const PDEConfig& cfg, const ParamMap& params,
                      std::size_t layer, const Tensor& probe) {
  if (!u.same_shape(probe)) throw ShapeError("probe must match the field shape");
  const std::size_t m = u.size();

  // Rows of the Jacobian via one reverse pass per output component.
  DiffGraph g;
  TapedParams tp = TapedParams::bind(g, params);
  const NodeId uin = g.leaf(u);
  const NodeId out = pde_step_layer(g, uin, std::nullopt, tp, cfg, layer);
  std::vector<NodeId> selectors;
  for (std::size_t i = 0; i < m; ++i) {
    Tensor mask(u.shape());
    mask[i] = 1.0;
    selectors.push_back(g.sum(g.mul(out, g.leaf(mask))));
  }
  std::vector<double> jvp(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    g.clear_grads();
    g.backward(selectors[i]);
    const Tensor& row = g.grad(uin);
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) acc += row[j] * probe[j];
    jvp[i] = acc;
  }

  const double h = 1e-5;
  auto eval = [&](double sign) {
    Tensor up = u;
    for (std::size_t i = 0; i < m; ++i) up[i] += sign * h * probe[i];
    DiffGraph gg;
    TapedParams tpp = TapedParams::bind(gg, params);
    return gg.value(pde_step_layer(gg, gg.leaf(up), std::nullopt, tpp, cfg, layer));
  };
  const Tensor plus = eval(+1.0), minus = eval(-1.0);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double fd = (plus[i] - minus[i]) / (2.0 * h);
    const double d = jvp[i] - fd;
    num += d * d;
    den += fd * fd;
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

}  // namespace pdeformer
