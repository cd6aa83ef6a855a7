#pragma once

// FID, disentanglement grids, the privacy-vs-resolution harness and the
// generator throughput benchmark.

#include "thermosynth/data.hpp"
#include "thermosynth/model.hpp"
#include "thermosynth/training.hpp"

#include <Eigen/Core>

#include <functional>
#include <optional>

namespace thermosynth {

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- FID ----

struct GaussianStats {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;

  /// Mean and unbiased covariance of the rows of `features` (N x d).
  template <typename Derived>
  static GaussianStats from_features(const Eigen::MatrixBase<Derived>& features) {
    if (features.rows() < 2) throw std::invalid_argument("GaussianStats: need at least two samples");
    const Eigen::MatrixXd f = features.template cast<double>();
    GaussianStats s;
    s.mu = f.colwise().mean().transpose();
    const Eigen::MatrixXd centered = f.rowwise() - s.mu.transpose();
    s.sigma = (centered.transpose() * centered) / static_cast<double>(f.rows() - 1);
    s.sigma = 0.5 * (s.sigma + s.sigma.transpose());
    return s;
  }

  [[nodiscard]] Eigen::Index dim() const { return mu.size(); }
};

/// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}); the trace of the root is
/// taken from the eigenvalues of S2^{1/2} S1 S2^{1/2}.
double fid(const GaussianStats& a, const GaussianStats& b);

/// Maps a batch of images (n, 3, H, W) in [-1, 1] to an n x d feature matrix.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  [[nodiscard]] virtual int dim() const = 0;
  [[nodiscard]] virtual Eigen::MatrixXd embed(const TensorF& images) const = 0;
};

/// Untrained convolutional embedder with fixed Gaussian weights: three strided
/// 3x3 conv + leaky-ReLU stages, then average pooling onto a 2x2 grid.
/// Not an Inception network; values are only comparable with each other.
class RandomConvExtractor final : public FeatureExtractor {
 public:
  explicit RandomConvExtractor(std::uint64_t seed = 2048, std::array<int, 3> channels = {16, 32, 16});
  [[nodiscard]] int dim() const override { return 4 * channels_[2]; }
  [[nodiscard]] Eigen::MatrixXd embed(const TensorF& images) const override;

 private:
  std::array<int, 3> channels_;
  std::vector<TensorD> weights_;
};

struct FidReport {
  double value = 0.0;
  int dim = 0;
  int real_count = 0;
  int generated_count = 0;
  bool rank_deficient = false;  // either covariance estimated from fewer than d + 1 samples
};

FidReport dataset_fid(const TensorF& real, const TensorF& generated, const FeatureExtractor& extractor,
                      const std::function<void(const std::string&)>& warn = {});

/// Deterministic split of sample indices into (train, test) by `test_fraction`.
std::pair<std::vector<int>, std::vector<int>> train_test_split(int count, double test_fraction, std::uint64_t seed);

/// Generated counterpart of `samples`: G(z, h_i) for `draws` latents z ~ N(0, I)
/// per sample, drawn from `seed`. Output is sample-major, (n * draws, 3, H, W).
TensorF generate_for_heatmaps(const Generator<float>& g, const std::vector<PairedSample>& samples,
                              std::uint64_t seed, int draws = 1);

/// Stack the normalized RGB images of `samples` into (n, 3, H, W).
TensorF stack_images(const std::vector<PairedSample>& samples);

// ---- disentanglement ----

struct GridResult {
  std::vector<std::vector<TensorF>> cells;  // [code][heatmap], each (1, 3, H, W)
  Plane image_r, image_g, image_b;           // composited (k + 1) x (n + 1) tiles, values in [0, 1]
  int rows = 0;                              // k + 1
  int cols = 0;                              // n + 1
};

/// Row i uses code i, column j heatmap j. Row 0 shows the heatmaps (upsampled,
/// grey), column 0 the code source images when given.
GridResult disentanglement_grid(const Generator<float>& g, const std::vector<TensorF>& codes,
                                const std::vector<TensorF>& heatmaps,
                                const std::vector<TensorF>& code_sources = {});

void write_grid_png(const GridResult& grid, const std::filesystem::path& path);

/// Silhouette centroid of an image (1, 3, H, W) in pixel units: pixels whose
/// colour differs from the border median by more than `threshold` (max-abs over
/// channels, normalized units) and by at least half the largest difference in
/// the image count as foreground. The relative cut keeps generated background
/// texture out of the silhouette.
std::optional<std::array<double, 2>> foreground_centroid(const TensorF& image, double threshold = 0.25);

/// Median colour over the one-pixel image border.
std::array<float, 3> border_color(const TensorF& image);

struct ProbeResult {
  int probes = 0;
  int centroid_follows = 0;      // generated centroid moved the same way as the heatmap
  int background_follows_code = 0;  // border colour closer to the code's own rendering than to the heatmap donor's
  [[nodiscard]] double centroid_rate() const { return probes ? double(centroid_follows) / probes : 0.0; }
  [[nodiscard]] double background_rate() const { return probes ? double(background_follows_code) / probes : 0.0; }
};

/// For each probe: pick a code and a heatmap, shift the heatmap horizontally
/// by `shift` cells towards the side with more room (the warm blob stays in
/// frame), and compare generated centroids; also checks that
/// swapping in another sample's heatmap keeps the code's background colour.
ProbeResult disentanglement_probes(const Generator<float>& g, const LatentCodeSet& codes,
                                   const std::vector<PairedSample>& samples, int probes, int shift,
                                   std::uint64_t seed);

/// Shift a heatmap (1, 1, H, W) horizontally by `dx` cells, filling with the edge column.
TensorF shift_heatmap(const TensorF& heatmap, int dx);

// ---- privacy harness ----

struct Detection {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // fractions of frame width/height
  double confidence = 0;
};

/// Detector over a thermal frame in degrees Celsius (row-major H x W).
class Detector {
 public:
  virtual ~Detector() = default;
  [[nodiscard]] virtual std::string name() const = 0;
  [[nodiscard]] virtual bool available() const { return true; }
  [[nodiscard]] virtual std::vector<Detection> detect(const Plane& thermal_celsius) const = 0;
};

/// Threshold-and-connected-components detector: cells warmer than the frame
/// median by `delta_c` are grouped 4-connected; components smaller than
/// `min_cells` are rejected.
class BlobDetector final : public Detector {
 public:
  explicit BlobDetector(double delta_c = 4.0, int min_cells = 12);
  [[nodiscard]] std::string name() const override { return "blob"; }
  [[nodiscard]] std::vector<Detection> detect(const Plane& thermal_celsius) const override;

 private:
  double delta_c_;
  int min_cells_;
};

/// Runs an external program: writes the frame as a CSV file, reads lines
/// "x0 y0 x1 y1 confidence" from its stdout. Unavailable when the program is missing.
class ExternalDetector final : public Detector {
 public:
  explicit ExternalDetector(std::string command);
  [[nodiscard]] std::string name() const override { return "external:" + command_; }
  [[nodiscard]] bool available() const override;
  [[nodiscard]] std::vector<Detection> detect(const Plane& thermal_celsius) const override;

 private:
  std::string command_;
};

struct LabeledFrame {
  Plane thermal_celsius;           // native resolution
  std::vector<Detection> persons;  // ground truth boxes
};

struct Resolution {
  int width = 0;
  int height = 0;
  [[nodiscard]] std::string str() const { return std::to_string(width) + "x" + std::to_string(height); }
};

struct PrivacyRow {
  Resolution resolution;
  std::optional<double> accuracy;  // nullopt when skipped
  std::string degree;              // Low | Medium | High | skipped
};

/// Intersection over union of two boxes.
double box_iou(const Detection& a, const Detection& b);

/// Detection accuracy >= 50% -> "Low" protection, >= 10% -> "Medium", else "High".
std::string privacy_degree(double accuracy);

/// Fraction of ground-truth persons matched by a detection with IoU >= `iou`,
/// after pixel-averaging every frame to each resolution.
std::vector<PrivacyRow> privacy_harness(const std::vector<LabeledFrame>& frames,
                                        const std::vector<Resolution>& resolutions, const Detector& detector,
                                        double iou = 0.3);

void write_privacy_csv(const std::vector<PrivacyRow>& rows, std::ostream& out);

struct PrivacySceneConfig {
  int count = 40;
  int width = 160;
  int height = 120;
  double person_min_px = 8;   // person height range in native pixels
  double person_max_px = 20;
  std::uint64_t seed = 11;
};

/// Synthetic thermal frames with labelled people.
std::vector<LabeledFrame> synthetic_privacy_scenes(const PrivacySceneConfig& cfg);

// ---- throughput ----

struct ThroughputRow {
  int batch = 0;
  double seconds_per_batch = 0;
  double fps = 0;  // images per second
};

std::vector<ThroughputRow> throughput_bench(const Generator<float>& g, const std::vector<int>& batch_sizes,
                                            int warmup = 1, int iterations = 3);

/// Short description of the host CPU for benchmark reports.
std::string hardware_description();

}  // namespace thermosynth
