#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "pdeformer/transformer.hpp"

namespace pdeformer {

// Discretization of the layered information-flow equation: explicit Euler
// over sequence positions with diffusion, attention, a nonlinear residual,
// and affine inter-layer coupling.
struct PDEConfig {
  enum class Mode { Full, DiffusionOnly };

  std::size_t layers = 4;
  std::size_t steps = 4;  // time steps refining each layer's field
  double dt = 0.25;
  double dx = 1.0;
  std::vector<double> diffusion{0.05};  // D_l; broadcast when size 1
  std::vector<double> alpha{0.5};       // alpha_l; broadcast when size 1
  Mode mode = Mode::Full;
  std::size_t dim = 32;
  std::size_t heads = 4;
  std::size_t ffn = 64;
  std::uint64_t seed = 42;

  double diffusion_at(std::size_t l) const;
  double alpha_at(std::size_t l) const;
  std::size_t head_dim() const { return dim / heads; }
  void validate() const;
};

// Dynamics parameters only (attention, FFN, couplings), names "layerL.*".
ParamMap init_pde_params(const PDEConfig& cfg);

// Full classifier: embedding + dynamics + classification head, mirroring the
// transformer's embedding/head naming so checkpoints and training share code.
ParamMap init_pde_model_params(const TransformerConfig& tcfg, const PDEConfig& pcfg,
                               InputKind kind);

// Attention contribution: the transformer's multi-head attention on the raw
// field (or on the layer-normalized field in weight-shared mode).
AttentionResult pde_attention(DiffGraph& g, NodeId u, const TapedParams& tp,
                              std::size_t layer, std::size_t heads,
                              bool prenorm = false);

// FFN(u) + g(x, t); the forcing g is identically zero.
NodeId pde_residual_term(DiffGraph& g, NodeId u, const TapedParams& tp, std::size_t layer);

// One explicit Euler step of layer l. `u_prev` is the settled field of the
// layer below (ignored for l = 0). The outgoing coupling vanishes at the top
// layer. `attn_out`, when given, receives the attention used in this step.
NodeId pde_step_layer(DiffGraph& g, NodeId u, std::optional<NodeId> u_prev,
                      const TapedParams& tp, const PDEConfig& cfg, std::size_t layer,
                      Tensor* attn_out = nullptr, bool weight_shared = false);

struct PDERunOut {
  std::vector<NodeId> layer_final;  // u_l after its refinement steps
  LayerTrace trace;                 // activations: [u0, u_1 .. u_L]
};

// Layer 1 starts from u0; deeper layers start at zero and are driven by the
// coupling term. Each layer runs `steps` Euler steps against the settled
// field below it. In weight-shared mode the transformer's projections and
// pre-attention layer norm are reused, couplings are replaced by an identity
// hand-off, and the FFN term is dropped.
PDERunOut pde_run(DiffGraph& g, NodeId u0, const PDEConfig& cfg, const TapedParams& tp,
                  bool weight_shared = false);

// Untaped convenience wrapper.
LayerTrace pde_run_tensors(const Tensor& u0, const PDEConfig& cfg, const ParamMap& params,
                           bool weight_shared = false);

// The PDE classifier's ForwardFn: embed -> pde_run -> mean-pool -> head.
ForwardFn pde_forward_fn(const TransformerConfig& tcfg, const PDEConfig& pcfg);

struct StabilityReport {
  bool stable = true;
  std::vector<double> lhs;     // 2 D dt / dx^2 + alpha dt ||W^O||_2 per layer
  std::vector<double> margin;  // 1 - lhs
};

StabilityReport check_stability(const PDEConfig& cfg, const ParamMap& params);

struct ConvergenceReport {
  bool below_floor = false;
  double order = 0.0;  // Richardson estimate of the temporal order p
};

// Runs to the fixed final time steps*dt at dt, dt/2, ..., halving
// `refinements` times, and estimates p from consecutive solution gaps.
ConvergenceReport estimate_convergence_order(const Tensor& u0, const PDEConfig& cfg,
                                             const ParamMap& params, int refinements = 2);

// Relative error between the autodiff Jacobian-vector product of one
// pde_step_layer and a central finite-difference directional derivative.
double jacobian_check(const Tensor& u, const PDEConfig& cfg, const ParamMap& params,
                      std::size_t layer, const Tensor& probe);

}  // namespace pdeformer
