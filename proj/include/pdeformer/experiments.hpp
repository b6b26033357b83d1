#pragma once

#include <map>
#include <string>
#include <vector>

#include "pdeformer/config.hpp"
#include "pdeformer/datasets.hpp"
#include "pdeformer/pde_flow.hpp"

namespace pdeformer {

struct DataBundle {
  std::vector<Sample> samples;
  std::size_t classes = 0;
  std::size_t vocab_size = 0;  // text kinds only
  InputKind kind = InputKind::Image;
};

// Materializes the configured dataset (synthetic kinds are generated from
// the seed; mnist/text kinds load the configured files).
DataBundle make_dataset(const ExperimentConfig& cfg);

TransformerConfig transformer_config_from(const ExperimentConfig& cfg, const DataBundle& data);
PDEConfig pde_config_from(const ExperimentConfig& cfg);
TrainSettings train_settings_from(const ExperimentConfig& cfg);

// Minibatch training; batches are drawn by seeded sampling so runs are
// reproducible. Returns the per-step parameter-group gradient magnitudes.
std::vector<std::map<std::string, double>> run_training(ParamMap& params,
                                                        const std::vector<Sample>& samples,
                                                        const TrainSettings& settings,
                                                        const ForwardFn& fwd,
                                                        std::size_t steps, std::size_t batch,
                                                        std::uint64_t seed);

// Mean-pooled activations of every trace level over a sample set; entry l is
// an n x d matrix, ready for mutual-information estimation.
std::vector<Tensor> layer_features(const ParamMap& params, const std::vector<Sample>& samples,
                                   const ForwardFn& fwd);

// Runs one named experiment (flow, attention, ib, gradients, perturbation),
// writing CSV/PGM artifacts, checkpoints, and a manifest under the output
// directory. Returns the exit-code contract: 0 success, 2 config error,
// 3 numeric abort, 4 I/O error.
int run_experiment(const std::string& experiment, const ExperimentConfig& cfg);

}  // namespace pdeformer
