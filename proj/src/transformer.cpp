#include "pdeformer/transformer.hpp"

#include <cmath>

#include "pdeformer/ib.hpp"

namespace pdeformer {

void TransformerConfig::validate() const {
  if (layers < 1) throw ConfigError("transformer needs at least one layer");
  if (dim < 2) throw ConfigError("model width must be >= 2");
  if (heads < 1 || dim % heads != 0) {
    throw ConfigError("heads must divide the model width (dim " + std::to_string(dim) +
                      ", heads " + std::to_string(heads) + ")");
  }
  if (ffn < 1 || classes < 1 || vocab < 1) {
    throw ConfigError("ffn width, class count, and vocab must be positive");
  }
}

ParamMap init_transformer_params(const TransformerConfig& cfg, InputKind kind) {
  cfg.validate();
  ParamMap p;
  const std::size_t d = cfg.dim;
  if (kind == InputKind::Image) {
    p["embed.w"] = init_uniform(cfg.seed, "embed.w", {cfg.image_cols, d}, cfg.image_cols);
    p["embed.b"] = Tensor({d});
  } else {
    p["embed.table"] = init_uniform(cfg.seed, "embed.table", {cfg.vocab, d}, d);
  }
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
    p[pre + "ln1_g"] = Tensor::full({d}, 1.0);
    p[pre + "ln1_b"] = Tensor({d});
    p[pre + "ln2_g"] = Tensor::full({d}, 1.0);
    p[pre + "ln2_b"] = Tensor({d});
  }
  p["head.w"] = init_uniform(cfg.seed, "head.w", {d, cfg.classes}, d);
  p["head.b"] = Tensor({cfg.classes});
  return p;
}

Tensor sinusoidal_positions(std::size_t seq, std::size_t dim) {
  Tensor pe({seq, dim});
  for (std::size_t pos = 0; pos < seq; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double rate =
          std::pow(10000.0, -static_cast<double>(i - (i % 2)) / static_cast<double>(dim));
      const double angle = static_cast<double>(pos) * rate;
      pe(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

NodeId embed_input(DiffGraph& g, const Sample& sample, const TapedParams& tp,
                   const TransformerConfig& cfg) {
  if (sample.kind == InputKind::Image) {
    const Tensor& img = sample.image;
    if (img.rank() != 2 || img.rows() != cfg.image_rows || img.cols() != cfg.image_cols) {
      throw ShapeError("expected " + std::to_string(cfg.image_rows) + "x" +
                       std::to_string(cfg.image_cols) + " image, got " +
                       shape_str(img.shape()));
    }
    for (double v : img.data()) {
      if (v < 0.0 || v > 1.0) throw ShapeError("image values must lie in [0, 1]");
    }
    const NodeId x = g.leaf(img);
    return g.add_row(g.matmul(x, tp.at("embed.w")), tp.at("embed.b"));
  }
  if (sample.tokens.empty()) throw ShapeError("token sequence is empty");
  for (std::size_t t : sample.tokens) {
    if (t >= cfg.vocab) {
      throw ShapeError("token id " + std::to_string(t) + " out of range [0, " +
                       std::to_string(cfg.vocab) + ")");
    }
  }
  const NodeId looked = g.embed_rows(tp.at("embed.table"), sample.tokens);
  return g.add_const(looked, sinusoidal_positions(sample.tokens.size(), cfg.dim));
}

AttentionResult multi_head_attention(DiffGraph& g, NodeId x, const TapedParams& tp,
                                     const std::string& prefix, std::size_t heads) {
  const std::size_t d = g.value(x).cols();
  const std::size_t seq = g.value(x).rows();
  const std::size_t dk = d / heads;
  const NodeId q = g.matmul(x, tp.at(prefix + ".wq"));
  const NodeId k = g.matmul(x, tp.at(prefix + ".wk"));
  const NodeId v = g.matmul(x, tp.at(prefix + ".wv"));
  Tensor attn({heads, seq, seq});
  std::vector<NodeId> head_outs;
  for (std::size_t h = 0; h < heads; ++h) {
    const NodeId qh = g.slice_cols(q, h * dk, dk);
    const NodeId kh = g.slice_cols(k, h * dk, dk);
    const NodeId vh = g.slice_cols(v, h * dk, dk);
    const NodeId scores =
        g.scale(g.matmul(qh, g.transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dk)));
    const NodeId a = g.softmax_rows(scores);
    const Tensor& av = g.value(a);
    for (std::size_t i = 0; i < seq; ++i)
      for (std::size_t j = 0; j < seq; ++j) attn(h, i, j) = av(i, j);
    head_outs.push_back(g.matmul(a, vh));
  }
  const NodeId concat = heads == 1 ? head_outs[0] : g.concat_cols(head_outs);
  return {g.matmul(concat, tp.at(prefix + ".wo")), std::move(attn)};
}

EncoderLayerOut encoder_layer_forward(DiffGraph& g, NodeId u, const TapedParams& tp,
                                      std::size_t layer, std::size_t heads) {
  const std::string pre = "layer" + std::to_string(layer);
  const NodeId ln1 = g.layer_norm(u, tp.at(pre + ".ln1_g"), tp.at(pre + ".ln1_b"));
  AttentionResult mha = multi_head_attention(g, ln1, tp, pre, heads);
  const NodeId z = g.add(u, mha.out);
  const NodeId ln2 = g.layer_norm(z, tp.at(pre + ".ln2_g"), tp.at(pre + ".ln2_b"));
  const NodeId h1 = g.relu(g.add_row(g.matmul(ln2, tp.at(pre + ".ffn_w1")),
                                     tp.at(pre + ".ffn_b1")));
  const NodeId ffn = g.add_row(g.matmul(h1, tp.at(pre + ".ffn_w2")), tp.at(pre + ".ffn_b2"));
  return {g.add(z, ffn), std::move(mha.attn)};
}

ForwardOut forward_with_trace(DiffGraph& g, const Sample& sample, const TapedParams& tp,
                              const TransformerConfig& cfg) {
  ForwardOut out;
  NodeId u = embed_input(g, sample, tp, cfg);
  out.trace.activations.push_back(g.value(u));
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    EncoderLayerOut lo = encoder_layer_forward(g, u, tp, l, cfg.heads);
    u = lo.u;
    out.trace.activations.push_back(g.value(u));
    out.trace.attentions.push_back(std::move(lo.attn));
  }
  out.pooled = g.mean_rows(u);
  out.logits = g.add_row(g.matmul(out.pooled, tp.at("head.w")), tp.at("head.b"));
  return out;
}

ForwardFn transformer_forward_fn(const TransformerConfig& cfg) {
  return [cfg](DiffGraph& g, const TapedParams& tp, const Sample& s) {
    return forward_with_trace(g, s, tp, cfg);
  };
}

StepResult train_step(const std::vector<Sample>& batch, ParamMap& params, OptState& opt,
                      const TrainSettings& settings, const ForwardFn& fwd) {
  if (batch.empty()) throw ShapeError("train_step needs a nonempty batch");
  const bool use_vib = settings.beta > 0.0 && params.count("vib.wm") != 0;

  DiffGraph g;
  TapedParams tp = TapedParams::bind(g, params);

  StepResult result;
  NodeId loss_sum = 0;
  NodeId vib_sum = 0;
  bool first = true;
  for (const Sample& s : batch) {
    ForwardOut fo = fwd(g, tp, s);
    const NodeId ce = g.cross_entropy(fo.logits, {s.label});
    loss_sum = first ? ce : g.add(loss_sum, ce);
    if (use_vib) {
      const NodeId kl = vib_bound(g, fo.pooled, tp);
      vib_sum = first ? kl : g.add(vib_sum, kl);
    }
    if (first) result.trace = std::move(fo.trace);
    first = false;
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const NodeId loss = g.scale(loss_sum, inv_b);
  result.loss = g.value(loss).scalar_value();

  g.backward(loss);
  GradMap task_grads = collect_grads(g, tp);

  GradMap vib_grads;
  if (use_vib) {
    const NodeId vib = g.scale(vib_sum, inv_b);
    result.vib = g.value(vib).scalar_value();
    g.clear_grads();
    g.backward(vib);
    vib_grads = collect_grads(g, tp);
  }

  // Per-group stats use the loss gradient that drives the update (task plus
  // beta-weighted compression term), before any decay.
  GradMap drive = task_grads;
  if (use_vib) {
    for (auto& [name, t] : drive) {
      const Tensor& vg = vib_grads.at(name);
      for (std::size_t i = 0; i < t.size(); ++i) t[i] += settings.beta * vg[i];
    }
  }
  result.trace.grad_groups = group_mean_abs(drive);

  ib_update(params, task_grads, vib_grads, settings, opt);
  return result;
}

double accuracy(const ParamMap& params, const std::vector<Sample>& samples,
                const ForwardFn& fwd) {
  std::size_t hits = 0;
  for (const Sample& s : samples) {
    DiffGraph g;
    TapedParams tp = TapedParams::bind(g, params);
    ForwardOut fo = fwd(g, tp, s);
    const Tensor& logits = g.value(fo.logits);
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols(); ++j)
      if (logits(0, j) > logits(0, best)) best = j;
    if (best == s.label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

double mean_loss(const ParamMap& params, const std::vector<Sample>& samples,
                 const ForwardFn& fwd) {
  double total = 0.0;
  for (const Sample& s : samples) {
    DiffGraph g;
    TapedParams tp = TapedParams::bind(g, params);
    ForwardOut fo = fwd(g, tp, s);
    total += g.value(g.cross_entropy(fo.logits, {s.label})).scalar_value();
  }
  return total / static_cast<double>(samples.size());
}

}  // namespace pdeformer
