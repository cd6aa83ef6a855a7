#include "thermosynth/evaluation.hpp"

#include "thermosynth/ops.hpp"
#include "thermosynth/random.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace thermosynth {
namespace {

/// Eigenvalues of a symmetric matrix with round-off negatives clamped to zero.
Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> clamped_eigen(const Eigen::MatrixXd& m, const char* what,
                                                            Eigen::VectorXd& values) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success) throw NumericalError(std::string(what) + ": eigendecomposition failed");
  values = es.eigenvalues();
  const double tol = 1e-6 * std::max(1.0, values.cwiseAbs().maxCoeff());
  if (values.minCoeff() < -tol) {
    throw NumericalError(std::string(what) + ": matrix is not positive semidefinite (eigenvalue " +
                         std::to_string(values.minCoeff()) + ")");
  }
  values = values.cwiseMax(0.0);
  return es;
}

}  // namespace

double fid(const GaussianStats& a, const GaussianStats& b) {
  const Eigen::Index d = a.dim();
  if (b.dim() != d || a.sigma.rows() != d || a.sigma.cols() != d || b.sigma.rows() != d || b.sigma.cols() != d) {
    throw DimensionError("fid: statistics have different dimensions (" + std::to_string(a.dim()) + " vs " +
                         std::to_string(b.dim()) + ")");
  }
  if (!a.mu.allFinite() || !b.mu.allFinite() || !a.sigma.allFinite() || !b.sigma.allFinite()) {
    throw NumericalError("fid: non-finite statistics");
  }

  Eigen::VectorXd l2;
  const auto es2 = clamped_eigen(b.sigma, "fid: sigma2", l2);
  const Eigen::MatrixXd root2 = es2.eigenvectors() * l2.cwiseSqrt().asDiagonal() * es2.eigenvectors().transpose();
  Eigen::VectorXd lm;
  clamped_eigen(root2 * a.sigma * root2, "fid: sigma2^1/2 sigma1 sigma2^1/2", lm);

  const double value =
      (a.mu - b.mu).squaredNorm() + a.sigma.trace() + b.sigma.trace() - 2.0 * lm.cwiseSqrt().sum();
  const double scale = std::max(1.0, a.sigma.trace() + b.sigma.trace());
  if (value < -1e-6 * scale) throw NumericalError("fid: negative result " + std::to_string(value));
  return std::max(0.0, value);
}

RandomConvExtractor::RandomConvExtractor(std::uint64_t seed, std::array<int, 3> channels) : channels_(channels) {
  std::mt19937_64 rng(derive_seed(seed, {0xfe47}));
  int in = 3;
  for (int out : channels_) {
    if (out < 1) throw ConfigError("feature extractor channels must be >= 1");
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / (9.0 * in)));
    TensorD w(Shape{out, in, 3, 3});
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = normal(rng);
    weights_.push_back(std::move(w));
    in = out;
  }
}

Eigen::MatrixXd RandomConvExtractor::embed(const TensorF& images) const {
  const Shape s = images.shape();
  if (s.c != 3) throw ShapeError("feature extractor expects (N, 3, H, W), got " + s.str());
  Tape<double> t;
  auto x = t.constant(images.cast<double>());
  for (const auto& w : weights_) {
    auto wv = t.constant(w);
    auto bv = t.constant(TensorD(Shape{1, w.shape().n, 1, 1}));
    x = ops::leaky_relu(t, ops::conv2d(t, x, wv, bv, 2, 1));
  }
  const TensorD& f = t.value(x);
  const Shape fs = f.shape();
  if (fs.h < 2 || fs.w < 2) throw ShapeError("feature extractor: images too small (" + s.str() + ")");
  Eigen::MatrixXd out(fs.n, dim());
  for (int n = 0; n < fs.n; ++n) {
    for (int c = 0; c < fs.c; ++c) {
      for (int qy = 0; qy < 2; ++qy) {
        for (int qx = 0; qx < 2; ++qx) {
          const int y0 = qy * fs.h / 2, y1 = (qy + 1) * fs.h / 2;
          const int x0 = qx * fs.w / 2, x1 = (qx + 1) * fs.w / 2;
          double sum = 0.0;
          for (int y = y0; y < y1; ++y) {
            for (int xx = x0; xx < x1; ++xx) sum += f(n, c, y, xx);
          }
          out(n, c * 4 + qy * 2 + qx) = sum / ((y1 - y0) * (x1 - x0));
        }
      }
    }
  }
  return out;
}

FidReport dataset_fid(const TensorF& real, const TensorF& generated, const FeatureExtractor& extractor,
                      const std::function<void(const std::string&)>& warn) {
  if (real.shape().n < 2 || generated.shape().n < 2) throw std::invalid_argument("dataset_fid: need at least two images per set");
  const Eigen::MatrixXd fr = extractor.embed(real);
  const Eigen::MatrixXd fg = extractor.embed(generated);
  FidReport r;
  r.dim = extractor.dim();
  r.real_count = real.shape().n;
  r.generated_count = generated.shape().n;
  r.rank_deficient = r.real_count <= r.dim || r.generated_count <= r.dim;
  if (r.rank_deficient && warn) {
    warn("covariance is rank-deficient: " + std::to_string(std::min(r.real_count, r.generated_count)) +
         " samples for " + std::to_string(r.dim) + " feature dimensions");
  }
  r.value = fid(GaussianStats::from_features(fr), GaussianStats::from_features(fg));
  return r;
}

std::pair<std::vector<int>, std::vector<int>> train_test_split(int count, double test_fraction, std::uint64_t seed) {
  if (count < 2) throw std::invalid_argument("train_test_split: need at least two samples");
  if (test_fraction <= 0.0 || test_fraction >= 1.0) throw std::invalid_argument("test_fraction must be in (0, 1)");
  std::vector<int> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, {0x5b117}));
  std::shuffle(order.begin(), order.end(), rng);
  const int test = std::clamp(static_cast<int>(std::lround(count * test_fraction)), 1, count - 1);
  std::vector<int> te(order.begin(), order.begin() + test);
  std::vector<int> tr(order.begin() + test, order.end());
  std::sort(te.begin(), te.end());
  std::sort(tr.begin(), tr.end());
  return {tr, te};
}

TensorF stack_images(const std::vector<PairedSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("stack_images: empty sample list");
  std::vector<int> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  return make_batch(samples, idx).rgb;
}

TensorF generate_for_heatmaps(const Generator<float>& g, const std::vector<PairedSample>& samples,
                              std::uint64_t seed, int draws) {
  if (samples.empty()) throw std::invalid_argument("generate_for_heatmaps: empty sample list");
  if (draws < 1) throw std::invalid_argument("generate_for_heatmaps: draws must be >= 1");
  std::vector<int> idx;
  for (int i = 0; i < static_cast<int>(samples.size()); ++i) idx.insert(idx.end(), draws, i);
  const Batch b = make_batch(samples, idx);
  std::mt19937_64 rng(derive_seed(seed, {0x9e4}));
  return g(sample_latents<float>(b.heatmap.shape().n, rng), b.heatmap);
}

}  // namespace thermosynth
