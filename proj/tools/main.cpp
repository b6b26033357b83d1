#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "pdeformer/experiments.hpp"

namespace {

void usage() {
  std::fprintf(stderr,
               "usage: pdeformer <experiment> --config <path> [--section.key value]...\n"
               "experiments: flow, attention, ib, gradients, perturbation\n"
               "output directory: key 'out', falling back to $PDEFORMER_OUT, then ./out\n");
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    usage();
    return 2;
  }
  const std::string experiment = argv[1];
  if (experiment == "-h" || experiment == "--help") {
    usage();
    return 0;
  }

  std::string config_path;
  std::vector<std::pair<std::string, std::string>> overrides;
  for (int i = 2; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg.rfind("--", 0) != 0) {
      std::fprintf(stderr, "error: unexpected argument '%s'\n", arg.c_str());
      return 2;
    }
    if (i + 1 >= argc) {
      std::fprintf(stderr, "error: flag '%s' needs a value\n", arg.c_str());
      return 2;
    }
    const std::string value = argv[++i];
    if (arg == "--config") {
      config_path = value;
    } else {
      overrides.emplace_back(arg.substr(2), value);
    }
  }

  try {
    const pdeformer::ExperimentConfig cfg = pdeformer::parse_config(config_path, overrides);
    return pdeformer::run_experiment(experiment, cfg);
  } catch (const pdeformer::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const pdeformer::NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const pdeformer::IOError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  }
}
