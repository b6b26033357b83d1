#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace pdeformer {

// Fully resolved experiment configuration: every schema key present, either
// from the file, a CLI override, or its default. Accessors assume the key
// exists in the schema (programming error otherwise).
struct ExperimentConfig {
  std::map<std::string, std::string> values;

  const std::string& get_string(const std::string& key) const;
  long long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::uint64_t seed() const { return static_cast<std::uint64_t>(get_int("seed")); }

  // Resolved "key = value" lines, for the provenance echo.
  std::string echo() const;
};

struct FieldSpec {
  enum class Type { Int, Double, String, Choice };
  std::string key;
  Type type;
  std::string def;
  double min = 0.0;
  bool has_min = false;
  std::vector<std::string> choices;  // Choice only
};

// The documented key set with defaults and validity ranges.
const std::vector<FieldSpec>& config_schema();

// Parses a line-based "section.key = value" file ('#' starts a comment,
// blank lines ignored), applies CLI overrides of the same dotted names, and
// validates everything against the schema. Unknown keys, type mismatches,
// and range violations raise ConfigError naming the key path. The path may
// be empty (no file: defaults plus overrides).
ExperimentConfig parse_config(const std::string& path,
                              const std::vector<std::pair<std::string, std::string>>& overrides);

}  // namespace pdeformer
