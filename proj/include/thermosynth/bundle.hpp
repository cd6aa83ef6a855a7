#pragma once

// Single-file container for every network of a training run.
//
// Layout (all integers little-endian):
//   8 bytes   magic "TSBUNDLE"
//   u32       format version
//   u64       header length in bytes
//   header    UTF-8 JSON: {"format_version", "model", "meta",
//             "tensors": [{"name", "shape", "offset", "count"}]}
//   blobs     float32 little-endian tensor data; offsets relative to blob start

#include "thermosynth/model.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>

namespace thermosynth {

inline constexpr std::uint32_t kBundleVersion = 1;

class BundleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelBundle {
  ModelConfig config;
  Generator<float> generator;
  Generator<float> generator_ema;
  Discriminator<float> discriminator;
  Encoder<float> encoder;
  Encoder<float> encoder_ema;
  /// Optimizer moments and any other named state, e.g. "adam/gan/generator/m/dense.w".
  std::map<std::string, TensorF> state;
  /// Free-form training metadata (step counters, resolved configs).
  nlohmann::json meta = nlohmann::json::object();

  /// Fresh networks; EMA shadows start as copies of the raw parameters.
  static ModelBundle create(const ModelConfig& config, std::uint64_t seed);

  void save(const std::filesystem::path& path) const;
  /// When `expected` is set, a bundle built for another architecture is rejected.
  static ModelBundle load(const std::filesystem::path& path,
                          const std::optional<ModelConfig>& expected = std::nullopt);

  [[nodiscard]] std::vector<char> serialize() const;
  static ModelBundle deserialize(const std::vector<char>& bytes,
                                 const std::optional<ModelConfig>& expected = std::nullopt);
};

}  // namespace thermosynth
