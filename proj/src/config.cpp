#include "pdeformer/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "pdeformer/errors.hpp"

namespace pdeformer {

const std::vector<FieldSpec>& config_schema() {
  using T = FieldSpec::Type;
  static const std::vector<FieldSpec> schema = {
      {"seed", T::Int, "42", 0.0, true, {}},
      {"out", T::String, "", 0.0, false, {}},  // empty: PDEFORMER_OUT, then "out"

      {"data.kind", T::Choice, "blobs", 0.0, false, {"blobs", "motifs", "mnist", "text"}},
      {"data.n", T::Int, "120", 1.0, true, {}},
      {"data.classes", T::Int, "4", 1.0, true, {}},
      {"data.noise", T::Double, "0.05", 0.0, true, {}},
      {"data.vocab", T::Int, "64", 4.0, true, {}},
      {"data.seq_len", T::Int, "16", 1.0, true, {}},
      {"data.images", T::String, "", 0.0, false, {}},  // mnist IDX image file
      {"data.labels", T::String, "", 0.0, false, {}},  // mnist IDX label file
      {"data.text", T::String, "", 0.0, false, {}},    // labeled-text corpus

      {"model.layers", T::Int, "4", 1.0, true, {}},
      {"model.dim", T::Int, "32", 1.0, true, {}},
      {"model.heads", T::Int, "4", 1.0, true, {}},
      {"model.ffn", T::Int, "64", 1.0, true, {}},

      {"pde.steps", T::Int, "4", 1.0, true, {}},
      {"pde.dt", T::Double, "0.25", 1e-12, true, {}},
      {"pde.dx", T::Double, "1.0", 1e-12, true, {}},
      {"pde.diffusion", T::Double, "0.05", 0.0, true, {}},
      {"pde.alpha", T::Double, "0.5", 0.0, true, {}},
      {"pde.mode", T::Choice, "full", 0.0, false, {"full", "diffusion"}},

      {"train.steps", T::Int, "200", 1.0, true, {}},
      {"train.epochs", T::Int, "5", 1.0, true, {}},
      {"train.batch", T::Int, "8", 1.0, true, {}},
      {"train.lr", T::Double, "0.01", 0.0, true, {}},
      {"train.l2", T::Double, "0.0", 0.0, true, {}},
      {"train.beta", T::Double, "0.0", 0.0, true, {}},
      {"train.l2_sign", T::Choice, "+1", 0.0, false, {"+1", "-1"}},
      {"train.optimizer", T::Choice, "adam", 0.0, false, {"sgd", "adam"}},

      {"ib.bins", T::Int, "10", 2.0, true, {}},
      {"ib.bottleneck", T::Int, "16", 1.0, true, {}},

      {"perturb.grid", T::String, "1e-4,1e-3,1e-2,1e-1", 0.0, false, {}},
      {"perturb.trials", T::Int, "5", 1.0, true, {}},
  };
  return schema;
}

namespace {

const FieldSpec* find_spec(const std::string& key) {
  for (const FieldSpec& f : config_schema()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

long long parse_int_checked(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const long long x = std::strtoll(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0') {
    throw ConfigError("key '" + key + "': '" + v + "' is not an integer");
  }
  return x;
}

double parse_double_checked(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0') {
    throw ConfigError("key '" + key + "': '" + v + "' is not a number");
  }
  return x;
}

void validate_value(const FieldSpec& f, const std::string& v) {
  switch (f.type) {
    case FieldSpec::Type::Int: {
      const long long x = parse_int_checked(f.key, v);
      if (f.has_min && static_cast<double>(x) < f.min) {
        throw ConfigError("key '" + f.key + "': " + v + " is below the minimum " +
                          std::to_string(static_cast<long long>(f.min)));
      }
      break;
    }
    case FieldSpec::Type::Double: {
      const double x = parse_double_checked(f.key, v);
      if (f.has_min && x < f.min) {
        throw ConfigError("key '" + f.key + "': " + v + " is out of range (must be >= " +
                          std::to_string(f.min) + ")");
      }
      break;
    }
    case FieldSpec::Type::String:
      break;
    case FieldSpec::Type::Choice: {
      if (std::find(f.choices.begin(), f.choices.end(), v) == f.choices.end()) {
        std::string opts;
        for (const auto& c : f.choices) opts += (opts.empty() ? "" : ", ") + c;
        throw ConfigError("key '" + f.key + "': '" + v + "' is not one of {" + opts + "}");
      }
      break;
    }
  }
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

}  // namespace

const std::string& ExperimentConfig::get_string(const std::string& key) const {
  auto it = values.find(key);
  if (it == values.end()) throw ConfigError("key '" + key + "' is not in the schema");
  return it->second;
}

long long ExperimentConfig::get_int(const std::string& key) const {
  return parse_int_checked(key, get_string(key));
}

double ExperimentConfig::get_double(const std::string& key) const {
  return parse_double_checked(key, get_string(key));
}

std::string ExperimentConfig::echo() const {
  std::ostringstream out;
  for (const auto& [k, v] : values) out << k << " = " << v << '\n';
  return out.str();
}

ExperimentConfig parse_config(
    const std::string& path,
    const std::vector<std::pair<std::string, std::string>>& overrides) {
  ExperimentConfig cfg;
  for (const FieldSpec& f : config_schema()) cfg.values[f.key] = f.def;

  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IOError("cannot open config '" + path + "'");
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config '" + path + "' line " + std::to_string(lineno) +
                          ": expected 'section.key = value'");
      }
      const std::string key = trim(line.substr(0, eq));
      const std::string val = trim(line.substr(eq + 1));
      const FieldSpec* spec = find_spec(key);
      if (!spec) {
        throw ConfigError("config '" + path + "' line " + std::to_string(lineno) +
                          ": unknown key '" + key + "'");
      }
      validate_value(*spec, val);
      cfg.values[key] = val;
    }
  }

  for (const auto& [key, val] : overrides) {
    const FieldSpec* spec = find_spec(key);
    if (!spec) throw ConfigError("override: unknown key '" + key + "'");
    validate_value(*spec, val);
    cfg.values[key] = val;
  }

  if (cfg.values["out"].empty()) {
    const char* env = std::getenv("PDEFORMER_OUT");
    cfg.values["out"] = env && *env ? env : "out";
  }
  return cfg;
}

}  // namespace pdeformer
