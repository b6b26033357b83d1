#include "pdeformer/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "pdeformer/checkpoint.hpp"
#include "pdeformer/csv.hpp"
#include "pdeformer/ib.hpp"
#include "pdeformer/metrics.hpp"

namespace pdeformer {

namespace fs = std::filesystem;
using nlohmann::json;

DataBundle make_dataset(const ExperimentConfig& cfg) {
  DataBundle out;
  const std::string kind = cfg.get_string("data.kind");
  const auto n = static_cast<std::size_t>(cfg.get_int("data.n"));
  const auto classes = static_cast<std::size_t>(cfg.get_int("data.classes"));
  if (kind == "blobs") {
    ImageSet set = synth_blobs(cfg.seed(), n, classes, cfg.get_double("data.noise"));
    out.samples = to_samples(set);
    out.classes = set.classes;
    out.kind = InputKind::Image;
  } else if (kind == "motifs") {
    TextSet set = synth_motifs(cfg.seed(), n, classes,
                               static_cast<std::size_t>(cfg.get_int("data.vocab")),
                               static_cast<std::size_t>(cfg.get_int("data.seq_len")));
    out.samples = to_samples(set);
    out.classes = set.classes;
    out.vocab_size = set.vocab_size;
    out.kind = InputKind::Text;
  } else if (kind == "mnist") {
    const std::string images = cfg.get_string("data.images");
    const std::string labels = cfg.get_string("data.labels");
    if (images.empty() || labels.empty()) {
      throw ConfigError("data.kind = mnist needs data.images and data.labels");
    }
    ImageSet set = load_mnist_idx(images, labels);
    if (set.images.size() > n) {
      set.images.resize(n);
      set.labels.resize(n);
    }
    out.samples = to_samples(set);
    out.classes = set.classes;
    out.kind = InputKind::Image;
  } else {  // "text"
    const std::string path = cfg.get_string("data.text");
    if (path.empty()) throw ConfigError("data.kind = text needs data.text");
    TextSet set = load_labeled_text(path, static_cast<std::size_t>(cfg.get_int("data.vocab")),
                                    static_cast<std::size_t>(cfg.get_int("data.seq_len")));
    out.samples = to_samples(set);
    out.classes = set.classes;
    out.vocab_size = set.vocab_size;
    out.kind = InputKind::Text;
  }
  return out;
}

TransformerConfig transformer_config_from(const ExperimentConfig& cfg, const DataBundle& data) {
  TransformerConfig t;
  t.layers = static_cast<std::size_t>(cfg.get_int("model.layers"));
  t.dim = static_cast<std::size_t>(cfg.get_int("model.dim"));
  t.heads = static_cast<std::size_t>(cfg.get_int("model.heads"));
  t.ffn = static_cast<std::size_t>(cfg.get_int("model.ffn"));
  t.classes = data.classes;
  if (data.kind == InputKind::Text) t.vocab = data.vocab_size;
  t.seq_cap = static_cast<std::size_t>(cfg.get_int("data.seq_len"));
  t.seed = cfg.seed();
  t.validate();
  return t;
}

PDEConfig pde_config_from(const ExperimentConfig& cfg) {
  PDEConfig p;
  p.layers = static_cast<std::size_t>(cfg.get_int("model.layers"));
  p.dim = static_cast<std::size_t>(cfg.get_int("model.dim"));
  p.heads = static_cast<std::size_t>(cfg.get_int("model.heads"));
  p.ffn = static_cast<std::size_t>(cfg.get_int("model.ffn"));
  p.steps = static_cast<std::size_t>(cfg.get_int("pde.steps"));
  p.dt = cfg.get_double("pde.dt");
  p.dx = cfg.get_double("pde.dx");
  p.diffusion = {cfg.get_double("pde.diffusion")};
  p.alpha = {cfg.get_double("pde.alpha")};
  p.mode = cfg.get_string("pde.mode") == "diffusion" ? PDEConfig::Mode::DiffusionOnly
                                                     : PDEConfig::Mode::Full;
  p.seed = cfg.seed();
  p.validate();
  return p;
}

TrainSettings train_settings_from(const ExperimentConfig& cfg) {
  TrainSettings s;
  s.lr = cfg.get_double("train.lr");
  s.l2 = cfg.get_double("train.l2");
  s.beta = cfg.get_double("train.beta");
  s.l2_sign = cfg.get_string("train.l2_sign") == "-1" ? -1 : +1;
  s.adam = cfg.get_string("train.optimizer") == "adam";
  return s;
}

std::vector<std::map<std::string, double>> run_training(ParamMap& params,
                                                        const std::vector<Sample>& samples,
                                                        const TrainSettings& settings,
                                                        const ForwardFn& fwd,
                                                        std::size_t steps, std::size_t batch,
                                                        std::uint64_t seed) {
  if (samples.empty()) throw ShapeError("run_training needs samples");
  batch = std::min(batch, samples.size());
  OptState opt;
  std::vector<std::map<std::string, double>> grad_log;
  grad_log.reserve(steps);
  for (std::size_t step = 0; step < steps; ++step) {
    Rng rng = Rng::derive(seed, "train/step/" + std::to_string(step));
    std::vector<Sample> mb;
    mb.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) mb.push_back(samples[rng.below(samples.size())]);
    StepResult res = train_step(mb, params, opt, settings, fwd);
    grad_log.push_back(std::move(res.trace.grad_groups));
  }
  return grad_log;
}

std::vector<Tensor> layer_features(const ParamMap& params, const std::vector<Sample>& samples,
                                   const ForwardFn& fwd) {
  if (samples.empty()) throw ShapeError("layer_features needs samples");
  std::vector<Tensor> feats;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    DiffGraph g;
    TapedParams tp = TapedParams::bind(g, params);
    ForwardOut fo = fwd(g, tp, samples[i]);
    const auto& acts = fo.trace.activations;
    if (feats.empty()) {
      for (const Tensor& a : acts) feats.emplace_back(Shape{samples.size(), a.cols()});
    }
    for (std::size_t l = 0; l < acts.size(); ++l) {
      const Tensor& a = acts[l];
      for (std::size_t j = 0; j < a.cols(); ++j) {
        double s = 0.0;
        for (std::size_t r = 0; r < a.rows(); ++r) s += a(r, j);
        feats[l](i, j) = s / static_cast<double>(a.rows());
      }
    }
  }
  return feats;
}

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::string git_describe() {
  FILE* pipe = ::popen("git describe --always --dirty 2>/dev/null", "r");
  if (!pipe) return "unknown";
  char buf[128];
  std::string out;
  while (std::fgets(buf, sizeof buf, pipe)) out += buf;
  ::pclose(pipe);
  while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
  return out.empty() ? "unknown" : out;
}

// Accumulates artifact paths so the manifest can flag partial runs.
struct Emitter {
  fs::path dir;
  std::vector<std::string> artifacts;

  std::string path(const std::string& name) {
    artifacts.push_back(name);
    return (dir / name).string();
  }
};

void write_trace_matrices(Emitter& em, const std::string& model, const LayerTrace& trace) {
  for (std::size_t l = 0; l < trace.activations.size(); ++l) {
    const Tensor& a = trace.activations[l];
    std::vector<std::string> header;
    for (std::size_t j = 0; j < a.cols(); ++j) header.push_back("d" + std::to_string(j));
    std::vector<std::vector<double>> rows(a.rows(), std::vector<double>(a.cols()));
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = 0; j < a.cols(); ++j) rows[i][j] = a(i, j);
    const std::string stem = model + "_layer" + std::to_string(l);
    write_csv(em.path(stem + ".csv"), header, rows);
    write_pgm(em.path(stem + ".pgm"), a);
  }
}

Tensor head_mean(const Tensor& attn) {
  const std::size_t h = attn.extent(0), s = attn.extent(1);
  Tensor m({s, s});
  for (std::size_t k = 0; k < h; ++k)
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < s; ++j) m(i, j) += attn(k, i, j) / static_cast<double>(h);
  return m;
}

void write_grad_log(Emitter& em, const std::string& model,
                    const std::vector<std::map<std::string, double>>& log) {
  if (log.empty()) throw ShapeError("empty gradient log");
  std::vector<std::string> header{"step"};
  for (const auto& [name, v] : log.front()) header.push_back(name);
  std::vector<std::vector<double>> rows;
  for (std::size_t s = 0; s < log.size(); ++s) {
    std::vector<double> row{static_cast<double>(s)};
    for (std::size_t c = 1; c < header.size(); ++c) {
      auto it = log[s].find(header[c]);
      row.push_back(it == log[s].end() ? kNan : it->second);
    }
    rows.push_back(std::move(row));
  }
  write_csv(em.path(model + "_gradients.csv"), header, rows);
}

std::vector<double> parse_grid(const std::string& spec) {
  std::vector<double> grid;
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    const std::size_t comma = spec.find(',', pos);
    const std::string tok = spec.substr(pos, comma == std::string::npos ? spec.size() - pos
                                                                        : comma - pos);
    if (!tok.empty()) {
      char* end = nullptr;
      const double v = std::strtod(tok.c_str(), &end);
      if (end == tok.c_str() || *end != '\0') {
        throw ConfigError("key 'perturb.grid': '" + tok + "' is not a number");
      }
      grid.push_back(v);
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (grid.empty()) throw ConfigError("key 'perturb.grid': empty grid");
  return grid;
}

// Mean cross-entropy with eps-scaled Gaussian noise added to the embedding
// (noise lives in the continuous representation space, not on raw inputs).
// A null PDE config selects the transformer path.
double noisy_mean_loss(const ParamMap& params, const std::vector<Sample>& samples,
                       const TransformerConfig& tcfg, const PDEConfig* pcfg, double eps,
                       Rng& rng) {
  double total = 0.0;
  for (const Sample& s : samples) {
    DiffGraph g;
    TapedParams tp = TapedParams::bind(g, params);
    const NodeId u0 = embed_input(g, s, tp, tcfg);
    Tensor noise(g.value(u0).shape());
    for (std::size_t k = 0; k < noise.size(); ++k) noise[k] = eps * rng.gaussian();
    NodeId u = g.add_const(u0, noise);
    if (pcfg) {
      PDERunOut run = pde_run(g, u, *pcfg, tp, false);
      u = run.layer_final.back();
    } else {
      for (std::size_t l = 0; l < tcfg.layers; ++l) {
        u = encoder_layer_forward(g, u, tp, l, tcfg.heads).u;
      }
    }
    const NodeId pooled = g.mean_rows(u);
    const NodeId logits = g.add_row(g.matmul(pooled, tp.at("head.w")), tp.at("head.b"));
    total += g.value(g.cross_entropy(logits, {s.label})).scalar_value();
  }
  return total / static_cast<double>(samples.size());
}

struct Bench {
  ExperimentConfig cfg;
  DataBundle data;
  TransformerConfig tcfg;
  PDEConfig pcfg;
  TrainSettings train;
  std::size_t steps, batch;

  explicit Bench(const ExperimentConfig& c)
      : cfg(c),
        data(make_dataset(c)),
        tcfg(transformer_config_from(c, data)),
        pcfg(pde_config_from(c)),
        train(train_settings_from(c)),
        steps(static_cast<std::size_t>(c.get_int("train.steps"))),
        batch(static_cast<std::size_t>(c.get_int("train.batch"))) {}

  ParamMap trained_transformer(std::vector<std::map<std::string, double>>* log = nullptr) const {
    ParamMap p = init_transformer_params(tcfg, data.kind);
    auto l = run_training(p, data.samples, train, transformer_forward_fn(tcfg), steps, batch,
                          cfg.seed());
    if (log) *log = std::move(l);
    return p;
  }

  ParamMap trained_pde(std::vector<std::map<std::string, double>>* log = nullptr) const {
    ParamMap p = init_pde_model_params(tcfg, pcfg, data.kind);
    auto l = run_training(p, data.samples, train, pde_forward_fn(tcfg, pcfg), steps, batch,
                          cfg.seed());
    if (log) *log = std::move(l);
    return p;
  }
};

LayerTrace trace_of(const ParamMap& params, const Sample& s, const ForwardFn& fwd) {
  DiffGraph g;
  TapedParams tp = TapedParams::bind(g, params);
  return fwd(g, tp, s).trace;
}

void run_flow(Emitter& em, const Bench& b) {
  ParamMap tparams = b.trained_transformer();
  ParamMap pparams = b.trained_pde();
  save_checkpoint(tparams, em.path("transformer.pdef"));
  save_checkpoint(pparams, em.path("pde.pdef"));

  const Sample& probe = b.data.samples.front();
  const LayerTrace tt = trace_of(tparams, probe, transformer_forward_fn(b.tcfg));
  const LayerTrace pt = trace_of(pparams, probe, pde_forward_fn(b.tcfg, b.pcfg));
  write_trace_matrices(em, "transformer", tt);
  write_trace_matrices(em, "pde", pt);

  const auto tcorr = interlayer_correlations(tt);
  const auto pcorr = interlayer_correlations(pt);
  std::vector<std::pair<std::string, std::vector<double>>> inter;
  for (std::size_t i = 0; i < tcorr.size(); ++i) {
    inter.emplace_back("transformer", std::vector<double>{static_cast<double>(i + 1),
                                                          tcorr[i].value_or(kNan)});
  }
  for (std::size_t i = 0; i < pcorr.size(); ++i) {
    inter.emplace_back("pde", std::vector<double>{static_cast<double>(i + 1),
                                                  pcorr[i].value_or(kNan)});
  }
  write_csv_labeled(em.path("interlayer.csv"), {"model", "pair", "pearson"}, inter);

  const auto cross = crosslayer_similarity(tt, pt);
  std::vector<std::vector<double>> rows;
  for (std::size_t l = 0; l < cross.size(); ++l) {
    rows.push_back({static_cast<double>(l), cross[l].pearson.value_or(kNan),
                    cross[l].spearman.value_or(kNan)});
  }
  write_csv(em.path("crosslayer.csv"), {"layer", "pearson", "spearman"}, rows);
}

void run_attention(Emitter& em, const Bench& b) {
  ParamMap tparams = b.trained_transformer();
  const Sample& probe = b.data.samples.front();

  const LayerTrace tt = trace_of(tparams, probe, transformer_forward_fn(b.tcfg));

  DiffGraph g;
  TapedParams tp = TapedParams::bind(g, tparams);
  const NodeId u0 = embed_input(g, probe, tp, b.tcfg);
  PDERunOut run = pde_run(g, u0, b.pcfg, tp, /*weight_shared=*/true);

  for (std::size_t l = 0; l < tt.attentions.size(); ++l) {
    const Tensor ta = head_mean(tt.attentions[l]);
    const Tensor pa = head_mean(run.trace.attentions[l]);
    std::vector<std::string> header;
    for (std::size_t j = 0; j < ta.cols(); ++j) header.push_back("k" + std::to_string(j));
    auto dump = [&](const std::string& stem, const Tensor& m) {
      std::vector<std::vector<double>> rows(m.rows(), std::vector<double>(m.cols()));
      for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) rows[i][j] = m(i, j);
      write_csv(em.path(stem + ".csv"), header, rows);
      write_pgm(em.path(stem + ".pgm"), m);
    };
    dump("transformer_attention_layer" + std::to_string(l), ta);
    dump("pde_attention_layer" + std::to_string(l), pa);
  }

  const AttentionSimilarity sim = attention_similarity(tt.attentions, run.trace.attentions);
  std::vector<std::vector<double>> rows;
  for (std::size_t l = 0; l < sim.cosine.size(); ++l) {
    rows.push_back({static_cast<double>(l), sim.cosine[l], sim.mean_kl[l]});
  }
  rows.push_back({-1.0, sim.overall_cosine, sim.overall_kl});  // layer -1 = overall
  write_csv(em.path("attention_similarity.csv"), {"layer", "cosine", "mean_kl"}, rows);
}

void run_ib(Emitter& em, const Bench& b) {
  ParamMap params = init_pde_model_params(b.tcfg, b.pcfg, b.data.kind);
  if (b.train.beta > 0.0) {
    ParamMap vib = init_vib_params(b.tcfg.dim,
                                   static_cast<std::size_t>(b.cfg.get_int("ib.bottleneck")),
                                   b.cfg.seed());
    params.insert(vib.begin(), vib.end());
  }
  const ForwardFn fwd = pde_forward_fn(b.tcfg, b.pcfg);
  const auto bins = static_cast<std::size_t>(b.cfg.get_int("ib.bins"));
  const auto epochs = static_cast<std::size_t>(b.cfg.get_int("train.epochs"));
  const std::size_t steps_per_epoch =
      (b.data.samples.size() + b.batch - 1) / b.batch;

  std::vector<std::size_t> labels;
  for (const Sample& s : b.data.samples) labels.push_back(s.label);

  std::vector<std::vector<double>> rows;
  auto measure = [&](std::size_t epoch) {
    const std::vector<Tensor> feats = layer_features(params, b.data.samples, fwd);
    for (std::size_t l = 0; l < feats.size(); ++l) {
      rows.push_back({static_cast<double>(epoch), static_cast<double>(l),
                      binned_mi(feats[l], labels, bins).value});
    }
  };

  measure(0);  // untrained baseline
  for (std::size_t e = 1; e <= epochs; ++e) {
    run_training(params, b.data.samples, b.train, fwd, steps_per_epoch, b.batch,
                 b.cfg.seed() + 0x9e3779b97f4a7c15ull * e);
    measure(e);
  }
  write_csv(em.path("mutual_information.csv"), {"epoch", "layer", "mi"}, rows);
}

void run_gradients(Emitter& em, const Bench& b) {
  std::vector<std::map<std::string, double>> tlog, plog;
  b.trained_transformer(&tlog);
  b.trained_pde(&plog);
  write_grad_log(em, "transformer", tlog);
  write_grad_log(em, "pde", plog);
}

void run_perturbation(Emitter& em, const Bench& b) {
  ParamMap tparams = b.trained_transformer();
  ParamMap pparams = b.trained_pde();

  const std::vector<double> grid = parse_grid(b.cfg.get_string("perturb.grid"));
  const auto trials = static_cast<std::size_t>(b.cfg.get_int("perturb.trials"));
  std::vector<Sample> eval(b.data.samples.begin(),
                           b.data.samples.begin() +
                               std::min<std::size_t>(40, b.data.samples.size()));

  auto sweep = [&](const ParamMap& params, const PDEConfig* pcfg) {
    return perturbation_sweep(
        [&](double eps, Rng& rng) {
          return noisy_mean_loss(params, eval, b.tcfg, pcfg, eps, rng);
        },
        grid, trials, b.cfg.seed());
  };
  const auto tpts = sweep(tparams, nullptr);
  const auto ppts = sweep(pparams, &b.pcfg);

  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    rows.push_back({grid[i], tpts[i].mean_loss, tpts[i].stderr_est,
                    tpts[i].saturated ? 1.0 : 0.0, ppts[i].mean_loss, ppts[i].stderr_est,
                    ppts[i].saturated ? 1.0 : 0.0});
  }
  write_csv(em.path("perturbation.csv"),
            {"eps", "transformer_loss", "transformer_stderr", "transformer_saturated",
             "pde_loss", "pde_stderr", "pde_saturated"},
            rows);
}

void write_manifest(const Emitter& em, const std::string& experiment,
                    const ExperimentConfig& cfg, double wall_seconds, bool complete,
                    const std::string& error) {
  json m;
  m["experiment"] = experiment;
  m["seed"] = cfg.seed();
  m["git"] = git_describe();
  m["wall_seconds"] = wall_seconds;
  m["complete"] = complete;
  if (!error.empty()) m["error"] = error;
  m["artifacts"] = em.artifacts;
  json conf = json::object();
  for (const auto& [k, v] : cfg.values) conf[k] = v;
  m["config"] = conf;
  std::ofstream out(em.dir / "manifest.json");
  if (!out) throw IOError("cannot write manifest under '" + em.dir.string() + "'");
  out << m.dump(2) << '\n';
}

}  // namespace

int run_experiment(const std::string& experiment, const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  Emitter em;
  em.dir = cfg.get_string("out");
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  int code = 0;
  std::string error;
  try {
    std::error_code ec;
    fs::create_directories(em.dir, ec);
    if (ec) throw IOError("cannot create output directory '" + em.dir.string() + "'");
    {
      std::ofstream echo(em.dir / "config.txt");
      if (!echo) throw IOError("cannot write config echo under '" + em.dir.string() + "'");
      echo << cfg.echo();
      em.artifacts.push_back("config.txt");
    }

    Bench bench(cfg);
    if (experiment == "flow") {
      run_flow(em, bench);
    } else if (experiment == "attention") {
      run_attention(em, bench);
    } else if (experiment == "ib") {
      run_ib(em, bench);
    } else if (experiment == "gradients") {
      run_gradients(em, bench);
    } else if (experiment == "perturbation") {
      run_perturbation(em, bench);
    } else {
      throw ConfigError("unknown experiment '" + experiment +
                        "' (expected flow, attention, ib, gradients, or perturbation)");
    }
  } catch (const ConfigError& e) {
    code = 2;
    error = e.what();
  } catch (const ShapeError& e) {
    code = 2;
    error = e.what();
  } catch (const NumericError& e) {
    code = 3;
    error = e.what();
  } catch (const IOError& e) {
    code = 4;
    error = e.what();
  }

  try {
    write_manifest(em, experiment, cfg, elapsed(), code == 0, error);
  } catch (const IOError& e) {
    if (code == 0) code = 4;
    if (error.empty()) error = e.what();
  }
  if (!error.empty()) std::fprintf(stderr, "error: %s\n", error.c_str());
  return code;
}

}  // namespace pdeformer
