#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "pdeformer/datasets.hpp"
#include "pdeformer/params.hpp"

namespace pdeformer {

struct TransformerConfig {
  std::size_t layers = 4;
  std::size_t dim = 32;
  std::size_t heads = 4;
  std::size_t ffn = 64;
  std::size_t classes = 4;
  std::size_t vocab = 2000;    // text inputs
  std::size_t seq_cap = 64;    // text inputs
  std::size_t image_rows = 28;
  std::size_t image_cols = 28;
  std::uint64_t seed = 42;

  std::size_t head_dim() const { return dim / heads; }
  void validate() const;
};

// Per-layer capture of one forward (and optionally backward) pass.
// activations[0] is the embedding; activations[l] the output of layer l.
struct LayerTrace {
  std::vector<Tensor> activations;          // length layers + 1
  std::vector<Tensor> attentions;           // per layer, shape {h, seq, seq}
  std::map<std::string, double> grad_groups;  // mean |g| per parameter group
};

ParamMap init_transformer_params(const TransformerConfig& cfg, InputKind kind);

Tensor sinusoidal_positions(std::size_t seq, std::size_t dim);

// Images: each pixel row becomes one token via a learned 28->d projection.
// Text: embedding lookup plus sinusoidal position encoding.
NodeId embed_input(DiffGraph& g, const Sample& sample, const TapedParams& tp,
                   const TransformerConfig& cfg);

struct AttentionResult {
  NodeId out;   // seq x d
  Tensor attn;  // h x seq x seq, captured values
};

// Softmax(Q_i K_i^T / sqrt(d_k)) V_i per head, concatenated, times W^O.
// `prefix` names the parameter group, e.g. "layer0".
AttentionResult multi_head_attention(DiffGraph& g, NodeId x, const TapedParams& tp,
                                     const std::string& prefix, std::size_t heads);

struct EncoderLayerOut {
  NodeId u;     // seq x d
  Tensor attn;  // h x seq x seq
};

// Pre-norm residual layer: z = u + MHA(LN1(u)); u' = z + FFN(LN2(z)).
EncoderLayerOut encoder_layer_forward(DiffGraph& g, NodeId u, const TapedParams& tp,
                                      std::size_t layer, std::size_t heads);

struct ForwardOut {
  NodeId logits;  // 1 x C
  NodeId pooled;  // 1 x d mean-pooled final activations
  LayerTrace trace;
};

ForwardOut forward_with_trace(DiffGraph& g, const Sample& sample, const TapedParams& tp,
                              const TransformerConfig& cfg);

// Builds logits/pooled/trace for one sample; shared by the transformer and
// the PDE classifier so the training loop is model-agnostic.
using ForwardFn =
    std::function<ForwardOut(DiffGraph&, const TapedParams&, const Sample&)>;

struct TrainSettings {
  double lr = 1e-2;
  double l2 = 0.0;    // lambda
  double beta = 0.0;  // information-compression weight
  int l2_sign = +1;   // +1: weight decay (appendix sign); -1: main-text variant
  bool adam = false;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

struct OptState {
  std::map<std::string, Tensor> m, v;
  std::size_t t = 0;
};

struct StepResult {
  double loss;       // task loss (cross-entropy)
  double vib = 0.0;  // variational bound, when beta > 0
  LayerTrace trace;  // first sample's trace plus per-group gradient stats
};

// One optimization step: cross-entropy (+ beta * variational MI bound when
// params carry a "vib." head), update via ib_update. Throws NumericError
// without touching params if any primitive goes non-finite.
StepResult train_step(const std::vector<Sample>& batch, ParamMap& params, OptState& opt,
                      const TrainSettings& settings, const ForwardFn& fwd);

double accuracy(const ParamMap& params, const std::vector<Sample>& samples,
                const ForwardFn& fwd);
double mean_loss(const ParamMap& params, const std::vector<Sample>& samples,
                 const ForwardFn& fwd);

// The transformer's ForwardFn.
ForwardFn transformer_forward_fn(const TransformerConfig& cfg);

}  // namespace pdeformer
