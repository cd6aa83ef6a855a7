#pragma once

// Configuration of a command-line run: one JSON document with a section per
// pipeline stage, dotted key=value overrides and an optional global seed.
//
// {
//   "seed": 7,                       optional; copied into every section seed
//   "synthetic": SyntheticConfig,    "model": ModelConfig,
//   "gan": TrainConfig,              "inversion": TrainConfig,
//   "eval": EvalConfig,              "grid": GridConfig,
//   "privacy": PrivacyConfig,        "bench": BenchConfig
// }

#include "thermosynth/evaluation.hpp"

#include <nlohmann/json.hpp>

namespace thermosynth {

struct EvalConfig {
  double test_fraction = 0.0;  // 0 compares against the whole dataset
  int draws = 4;               // generated images per heatmap
  std::uint64_t seed = 0;
  std::uint64_t extractor_seed = 2048;
  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct GridConfig {
  int codes = 4;
  int heatmaps = 5;
  std::uint64_t seed = 0;
  friend bool operator==(const GridConfig&, const GridConfig&) = default;
};

struct PrivacyConfig {
  PrivacySceneConfig scenes;
  std::vector<std::string> resolutions{"160x120", "80x60", "40x30", "16x12", "8x5"};
  std::string detector = "blob";  // "blob" or an external command line
  double delta_c = 4.0;
  int min_cells = 12;
  double iou = 0.3;
};

struct BenchConfig {
  std::vector<int> batch_sizes{1, 8, 32};
  int warmup = 1;
  int iterations = 3;
};

struct RunConfig {
  std::optional<std::uint64_t> seed;
  SyntheticConfig synthetic;
  ModelConfig model;
  TrainConfig gan = TrainConfig::defaults(Phase::gan);
  TrainConfig inversion = TrainConfig::defaults(Phase::inversion);
  EvalConfig eval;
  GridConfig grid;
  PrivacyConfig privacy;
  BenchConfig bench;

  /// Parses a full document; unknown sections or keys throw ConfigError.
  static RunConfig from_json(const nlohmann::json& j);
  [[nodiscard]] nlohmann::json to_json() const;
};

/// Applies "a.b.c=value" to `doc`; the value is read as JSON when it parses,
/// otherwise as a string. Intermediate objects are created as needed.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Reads a config file. A run manifest written by the CLI is accepted too:
/// its "resolved_config" member is used.
nlohmann::json load_config_file(const std::filesystem::path& path);

/// File (optional) + overrides + seed -> validated configuration.
RunConfig resolve_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides,
                         std::optional<std::uint64_t> seed);

Resolution parse_resolution(const std::string& s);

}  // namespace thermosynth
