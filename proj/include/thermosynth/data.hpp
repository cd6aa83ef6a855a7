#pragma once

// Paired thermal/RGB data: preprocessing, on-disk datasets, minibatching and
// the procedural stand-in dataset used for desk-scale experiments.

#include "thermosynth/tensor.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace thermosynth {

using Plane = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class DatasetError : public std::runtime_error {
 public:
  DatasetError(const std::string& sample_id, const std::string& what)
      : std::runtime_error(sample_id.empty() ? what : "sample " + sample_id + ": " + what),
        sample_id_(sample_id) {}
  [[nodiscard]] const std::string& sample_id() const { return sample_id_; }

 private:
  std::string sample_id_;
};

/// Normalized RGB image, (1, 3, Hx, Wx) in [-1, 1].
struct RgbImage {
  TensorF values;
};
/// Normalized heatmap, (1, 1, Hh, Wh) in [-1, 1].
struct Heatmap {
  TensorF values;
};

struct SampleMeta {
  int person_id = 0;
  std::string clothing;
  std::string environment;
  friend bool operator==(const SampleMeta&, const SampleMeta&) = default;
};
void to_json(nlohmann::json& j, const SampleMeta& m);
void from_json(const nlohmann::json& j, SampleMeta& m);

struct PairedSample {
  std::string sample_id;
  RgbImage rgb;
  Heatmap heatmap;
  std::optional<Plane> mask;  // (Hx, Wx) person mask
  Plane mask_reduced;         // (Hh, Wh); all ones when no mask is available
  SampleMeta meta;
};

struct PreprocessConfig {
  int heatmap_height = 12;
  int heatmap_width = 16;
  double thermal_min = 15.0;  // degrees C mapped to -1
  double thermal_max = 40.0;  // degrees C mapped to +1
  int blur_kernel = 3;
  double noise_std = 1.25;    // 0.05 * (thermal_max - thermal_min)
  std::uint64_t noise_seed = 0;
  double mask_threshold = 0.5;
  double frame_rate = 8.7;

  [[nodiscard]] int rgb_height() const { return 8 * heatmap_height; }
  [[nodiscard]] int rgb_width() const { return 8 * heatmap_width; }
  void validate() const;
  friend bool operator==(const PreprocessConfig&, const PreprocessConfig&) = default;
};
void to_json(nlohmann::json& j, const PreprocessConfig& c);
void from_json(const nlohmann::json& j, PreprocessConfig& c);

/// Block means over integer factors. Throws DimensionError on non-integer ratios.
Plane pixel_average(const Plane& raw, int target_h, int target_w);

/// Separable Gaussian blur, reflect-101 borders. sigma follows the common
/// kernel-size rule 0.3 * ((k - 1) / 2 - 1) + 0.8.
Plane gaussian_blur(const Plane& raw, int kernel_size);

/// Affine map of [lo, hi] onto [-1, 1] (values outside are clamped first).
Plane normalize_range(const Plane& v, double lo, double hi);
Plane denormalize_range(const Plane& v, double lo, double hi);

/// raw: (1, 3, H, W) with values in [0, 255].
RgbImage preprocess_rgb(const TensorF& raw, int target_h, int target_w);

/// blur -> additive noise -> pixel-average downsample -> clamp -> map to [-1, 1].
Heatmap preprocess_thermal(const Plane& raw, int blur_kernel, double noise_std, int target_h,
                           int target_w, double t_min, double t_max, std::uint64_t noise_seed);
Heatmap preprocess_thermal(const Plane& raw, const PreprocessConfig& cfg, std::uint64_t noise_seed);

/// Mean of each 8x8 block compared against `threshold`; output is binary.
Plane resize_mask(const Plane& mask, int heatmap_h, int heatmap_w, double threshold = 0.5);

// ---- raw tensor files ----

/// Little-endian float32, row-major; `shape` is the logical extent.
void write_f32(const std::filesystem::path& path, const float* data, std::size_t count);
std::vector<float> read_f32(const std::filesystem::path& path, std::size_t expected_count);

// ---- manifest ----

struct TensorRef {
  std::string path;
  std::vector<int> shape;
};

void to_json(nlohmann::json& j, const TensorRef& r);
void from_json(const nlohmann::json& j, TensorRef& r);

struct ManifestEntry {
  std::string sample_id;
  TensorRef rgb;
  TensorRef thermal;
  std::optional<TensorRef> mask;
  SampleMeta meta;
};

enum class DatasetStage { raw, preprocessed };

struct DatasetManifest {
  DatasetStage stage = DatasetStage::raw;
  PreprocessConfig config;
  std::vector<ManifestEntry> entries;
  std::filesystem::path root;  // directory holding manifest.json (not serialized)

  static DatasetManifest load(const std::filesystem::path& dir);
  void save(const std::filesystem::path& dir) const;
  /// Shapes agree with the config and every file exists with the right size.
  void validate() const;
};
void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

/// Loads and (for raw datasets) preprocesses every sample. Thermal noise for
/// sample i is seeded from (config.noise_seed, i), so loading is reproducible.
std::vector<PairedSample> load_dataset(const DatasetManifest& manifest);

/// Writes a preprocessed copy of `manifest` into `out_dir`.
DatasetManifest write_preprocessed(const DatasetManifest& manifest, const std::filesystem::path& out_dir);

// ---- minibatches ----

struct Batch {
  std::vector<int> indices;
  TensorF rgb;           // (B, 3, Hx, Wx)
  TensorF heatmap;       // (B, 1, Hh, Wh)
  TensorF mask_reduced;  // (B, 1, Hh, Wh)
};

Batch make_batch(const std::vector<PairedSample>& samples, const std::vector<int>& indices);

/// Shuffled single-epoch minibatches; the short final batch is kept.
class MinibatchLoader {
 public:
  MinibatchLoader(const std::vector<PairedSample>& samples, int batch_size, std::uint64_t seed);

  /// Index order of every batch in `epoch`; deterministic in (seed, epoch).
  [[nodiscard]] std::vector<std::vector<int>> epoch_plan(int epoch) const;
  [[nodiscard]] std::vector<Batch> epoch(int epoch) const;
  [[nodiscard]] int batches_per_epoch() const;

 private:
  const std::vector<PairedSample>* samples_;
  int batch_size_;
  std::uint64_t seed_;
};

// ---- procedural dataset ----

/// Upper-body person proxy in normalized frame coordinates (x, y in [0, 1]).
struct PersonPose {
  double center_x = 0.5;
  double head_y = 0.35;
  double head_radius = 0.1;  // fraction of frame height
  double shoulder_half_width = 0.18;  // fraction of frame width
  int arm = 0;                // 0 none, -1 left raised, +1 right raised
};

/// Per-pixel coverage of the person silhouette on an h x w grid; values in {0,1}.
/// `part` receives 1 for head pixels, 2 for torso/arm pixels, 0 elsewhere.
Plane render_silhouette(const PersonPose& pose, int h, int w, Plane* part = nullptr);

struct SyntheticConfig {
  int count = 64;
  std::uint64_t seed = 7;
  int heatmap_height = 6;
  int heatmap_width = 8;
  int thermal_scale = 10;  // raw thermal = scale x heatmap extent
  int rgb_scale = 2;       // raw RGB = scale x model RGB extent
  PreprocessConfig preprocess;  // heatmap extent overwritten from the fields above

  void validate() const;
};
void to_json(nlohmann::json& j, const SyntheticConfig& c);
void from_json(const nlohmann::json& j, SyntheticConfig& c);

PersonPose random_pose(std::mt19937_64& rng);

struct RenderedPair {
  TensorF rgb_raw;   // (1, 3, Hr, Wr) in [0, 255]
  Plane thermal_raw; // degrees C
  Plane mask;        // (Hx, Wx)
};

/// Renders one pair for the given pose and attributes.
RenderedPair render_pair(const SyntheticConfig& cfg, const PersonPose& pose, const SampleMeta& meta,
                         double ambient_c, double lighting);

/// Raw thermal frame alone (degrees C) with the person at `pose`.
Plane render_thermal(const PersonPose& pose, int h, int w, double ambient_c);

const std::vector<std::string>& clothing_palette();
const std::vector<std::string>& environment_palette();
std::array<float, 3> environment_color(const std::string& environment);

/// Writes `cfg.count` raw pairs plus manifest.json under `dir`. Deterministic in cfg.seed.
DatasetManifest generate_synthetic_dataset(const SyntheticConfig& cfg, const std::filesystem::path& dir);

}  // namespace thermosynth
