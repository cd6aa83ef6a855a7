#include "thermosynth/evaluation.hpp"
#include "thermosynth/image_io.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <Eigen/QR>

#include <fstream>
#include <set>
#include <sstream>

using namespace thermosynth;

namespace {

GaussianStats stats(Eigen::VectorXd mu, Eigen::MatrixXd sigma) {
  GaussianStats s;
  s.mu = std::move(mu);
  s.sigma = std::move(sigma);
  return s;
}

Eigen::MatrixXd random_spd(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd a(d, d + 3);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = n(rng);
  return a * a.transpose() / d;
}

Eigen::VectorXd random_vec(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::VectorXd v(d);
  for (auto& x : v) x = n(rng);
  return v;
}

ModelConfig small_config() {
  ModelConfig c;
  c.heatmap_height = 6;
  c.heatmap_width = 8;
  c.generator_channels = {16, 8, 8, 4};
  c.semantic_channels = 4;
  c.discriminator_channels = {4, 8, 8, 8};
  c.encoder_channels = {4, 8, 8, 8};
  return c;
}

}  // namespace

TEST(Fid, IdenticalStatisticsGiveZero) {
  std::mt19937_64 rng(1);
  const auto s = stats(random_vec(16, rng), random_spd(16, rng));
  EXPECT_LT(fid(s, s), 1e-4);
}

TEST(Fid, OneDimensionalClosedForm) {
  const auto a = stats(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Ones(1, 1));
  const auto b = stats(Eigen::VectorXd::Ones(1), Eigen::MatrixXd::Ones(1, 1));
  EXPECT_NEAR(fid(a, b), 1.0, 1e-6);
  // (m1 - m2)^2 + (s1 - s2)^2 with standard deviations s.
  const auto c = stats(Eigen::VectorXd::Constant(1, 2.0), Eigen::MatrixXd::Constant(1, 1, 9.0));
  const auto e = stats(Eigen::VectorXd::Constant(1, -1.0), Eigen::MatrixXd::Constant(1, 1, 4.0));
  EXPECT_NEAR(fid(c, e), 9.0 + 1.0, 1e-9);
}

TEST(Fid, DiagonalGaussianOracle) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.01, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 1 + trial % 12;
    Eigen::VectorXd v1(d), v2(d);
    for (int i = 0; i < d; ++i) v1[i] = u(rng), v2[i] = u(rng);
    const auto a = stats(random_vec(d, rng), v1.asDiagonal().toDenseMatrix());
    const auto b = stats(random_vec(d, rng), v2.asDiagonal().toDenseMatrix());
    double expected = (a.mu - b.mu).squaredNorm();
    for (int i = 0; i < d; ++i) expected += std::pow(std::sqrt(v1[i]) - std::sqrt(v2[i]), 2);
    EXPECT_NEAR(fid(a, b), expected, 1e-4);
  }
}

TEST(Fid, CommutingCovariancesInRotatedBasis) {
  std::mt19937_64 rng(3);
  const int d = 6;
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(random_spd(d, rng)).householderQ();
  Eigen::VectorXd l1(d), l2(d);
  std::uniform_real_distribution<double> u(0.1, 2.0);
  for (int i = 0; i < d; ++i) l1[i] = u(rng), l2[i] = u(rng);
  const auto a = stats(Eigen::VectorXd::Zero(d), q * l1.asDiagonal() * q.transpose());
  const auto b = stats(Eigen::VectorXd::Zero(d), q * l2.asDiagonal() * q.transpose());
  EXPECT_NEAR(fid(a, b), (l1.cwiseSqrt() - l2.cwiseSqrt()).squaredNorm(), 1e-8);
}

TEST(Fid, SymmetricAndTranslationInvariant) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 2 + trial;
    const auto a = stats(random_vec(d, rng), random_spd(d, rng));
    const auto b = stats(random_vec(d, rng), random_spd(d, rng));
    EXPECT_NEAR(fid(a, b), fid(b, a), 1e-6 * std::max(1.0, fid(a, b)));
    const Eigen::VectorXd v = random_vec(d, rng);
    EXPECT_NEAR(fid(stats(a.mu + v, a.sigma), stats(b.mu + v, b.sigma)), fid(a, b), 1e-8 * std::max(1.0, fid(a, b)));
    EXPECT_NEAR(fid(stats(a.mu + v, a.sigma), a), v.squaredNorm(), 1e-6 * std::max(1.0, v.squaredNorm()));
  }
}

TEST(Fid, RejectsBadInput) {
  const auto a = stats(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2));
  const auto b = stats(Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3));
  EXPECT_THROW(fid(a, b), DimensionError);
  auto indefinite = a;
  indefinite.sigma(1, 1) = -1.0;
  EXPECT_THROW(fid(a, indefinite), NumericalError);
  auto nan = a;
  nan.mu[0] = std::nan("");
  EXPECT_THROW(fid(nan, a), NumericalError);
}

TEST(Fid, StatisticsFromFeaturesAreUnbiased) {
  Eigen::MatrixXd f(3, 2);
  f << 1, 2, 3, 4, 5, 0;
  const auto s = GaussianStats::from_features(f);
  EXPECT_NEAR(s.mu[0], 3.0, 1e-12);
  EXPECT_NEAR(s.mu[1], 2.0, 1e-12);
  EXPECT_NEAR(s.sigma(0, 0), 4.0, 1e-12);
  EXPECT_NEAR(s.sigma(1, 1), 4.0, 1e-12);
  EXPECT_NEAR(s.sigma(0, 1), -2.0, 1e-12);
  EXPECT_THROW(GaussianStats::from_features(Eigen::MatrixXd::Zero(1, 2)), std::invalid_argument);
}

TEST(Extractor, DeterministicBatchIndependentAndSized) {
  std::mt19937_64 rng(5);
  const TensorF images = testutil::random_tensor<float>(Shape{5, 3, 48, 64}, rng);
  const RandomConvExtractor ex;
  EXPECT_EQ(ex.dim(), 64);
  const Eigen::MatrixXd f = ex.embed(images);
  ASSERT_EQ(f.rows(), 5);
  ASSERT_EQ(f.cols(), 64);
  EXPECT_EQ(f, RandomConvExtractor().embed(images));
  EXPECT_EQ(f.row(3), ex.embed(images.slice(3, 1)).row(0));
  EXPECT_NE(f, RandomConvExtractor(9).embed(images));
}

TEST(DatasetFid, SelfDistanceIsZeroAndWarnsWhenRankDeficient) {
  std::mt19937_64 rng(6);
  const TensorF images = testutil::random_tensor<float>(Shape{20, 3, 24, 32}, rng);
  std::vector<std::string> warnings;
  const auto r = dataset_fid(images, images, RandomConvExtractor(), [&](const std::string& w) { warnings.push_back(w); });
  EXPECT_LT(r.value, 1e-4);
  EXPECT_TRUE(r.rank_deficient);
  EXPECT_EQ(warnings.size(), 1u);
  EXPECT_EQ(r.real_count, 20);
  const TensorF other = testutil::random_tensor<float>(Shape{20, 3, 24, 32}, rng, -1.0, 0.0);
  EXPECT_GT(dataset_fid(images, other, RandomConvExtractor()).value, 1e-3);
}

TEST(TrainTestSplit, DisjointCompleteDeterministic) {
  const auto [tr, te] = train_test_split(64, 0.1, 3);
  EXPECT_EQ(te.size(), 6u);
  EXPECT_EQ(tr.size(), 58u);
  std::set<int> all(tr.begin(), tr.end());
  all.insert(te.begin(), te.end());
  EXPECT_EQ(all.size(), 64u);
  EXPECT_EQ(train_test_split(64, 0.1, 3), std::make_pair(tr, te));
  EXPECT_THROW(train_test_split(64, 1.0, 3), std::invalid_argument);
}

class Grid : public ::testing::Test {
 protected:
  Generator<float> g{small_config(), 1};
  std::mt19937_64 rng{7};
};

TEST_F(Grid, CellsMatchIsolatedGeneration) {
  const auto codes = std::vector<TensorF>{sample_latents<float>(1, rng), sample_latents<float>(1, rng)};
  std::vector<TensorF> heatmaps;
  for (int j = 0; j < 3; ++j) heatmaps.push_back(testutil::random_tensor<float>(small_config().heatmap_shape(), rng));
  const auto grid = disentanglement_grid(g, codes, heatmaps);
  EXPECT_EQ(grid.rows, 3);
  EXPECT_EQ(grid.cols, 4);
  EXPECT_EQ(grid.image_r.rows(), 3 * 48);
  EXPECT_EQ(grid.image_r.cols(), 4 * 64);
  ASSERT_EQ(grid.cells.size(), 2u);
  for (int i = 0; i < 2; ++i) {
    ASSERT_EQ(grid.cells[i].size(), 3u);
    for (int j = 0; j < 3; ++j) EXPECT_EQ(grid.cells[i][j].vec(), g(codes[i], heatmaps[j]).vec());
  }
  EXPECT_NE(grid.cells[0][0].vec(), grid.cells[1][0].vec());
  EXPECT_NE(grid.cells[0][0].vec(), grid.cells[0][1].vec());
  EXPECT_EQ(grid.image_r(0, 0), 1.0f);

  testutil::TempDir dir("grid");
  write_grid_png(grid, dir / "grid.png");
  std::ifstream in(dir / "grid.png", std::ios::binary);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), {});
  const Rgb8 decoded = decode_png(bytes);
  EXPECT_EQ(decoded.width, 4 * 64);
  EXPECT_EQ(decoded.height, 3 * 48);
}

TEST_F(Grid, RejectsMismatchedInputs) {
  const auto code = sample_latents<float>(1, rng);
  const TensorF wrong = testutil::random_tensor<float>(Shape{1, 1, 3, 4}, rng);
  EXPECT_THROW(disentanglement_grid(g, {code}, {wrong}), ShapeError);
  EXPECT_THROW(disentanglement_grid(g, {}, {wrong}), std::invalid_argument);
  const TensorF h = testutil::random_tensor<float>(small_config().heatmap_shape(), rng);
  EXPECT_THROW(disentanglement_grid(g, {code}, {h}, {h, h}), std::invalid_argument);
}

TEST(Silhouette, CentroidAndBorderOfPaintedSquare) {
  TensorF img(Shape{1, 3, 20, 30}, -0.5f);
  for (int c = 0; c < 3; ++c) {
    for (int y = 4; y < 8; ++y) {
      for (int x = 10; x < 16; ++x) img(0, c, y, x) = 0.9f;
    }
  }
  const auto bg = border_color(img);
  EXPECT_EQ(bg[0], -0.5f);
  const auto c = foreground_centroid(img);
  ASSERT_TRUE(c.has_value());
  EXPECT_DOUBLE_EQ((*c)[0], 12.5);
  EXPECT_DOUBLE_EQ((*c)[1], 5.5);
  EXPECT_FALSE(foreground_centroid(TensorF(Shape{1, 3, 5, 5}, 0.3f)).has_value());
}

TEST(Silhouette, ShiftHeatmapMovesColumnsWithEdgeFill) {
  TensorF h(Shape{1, 1, 2, 4});
  for (int x = 0; x < 4; ++x) h(0, 0, 0, x) = h(0, 0, 1, x) = static_cast<float>(x);
  const TensorF r = shift_heatmap(h, 1);
  EXPECT_EQ(r(0, 0, 0, 0), 0.0f);
  EXPECT_EQ(r(0, 0, 0, 1), 0.0f);
  EXPECT_EQ(r(0, 0, 1, 3), 2.0f);
  const TensorF l = shift_heatmap(h, -2);
  EXPECT_EQ(l(0, 0, 0, 0), 2.0f);
  EXPECT_EQ(l(0, 0, 0, 3), 3.0f);
  EXPECT_EQ(shift_heatmap(h, 0).vec(), h.vec());
}

TEST(Privacy, IouAndDegreeThresholds) {
  EXPECT_DOUBLE_EQ(box_iou({0, 0, 1, 1, 1}, {0, 0, 1, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(box_iou({0, 0, 0.5, 1, 1}, {0.5, 0, 1, 1, 1}), 0.0);
  EXPECT_NEAR(box_iou({0, 0, 0.5, 0.5, 1}, {0.25, 0, 0.75, 0.5, 1}), 1.0 / 3.0, 1e-12);
  EXPECT_EQ(privacy_degree(0.807), "Low");
  EXPECT_EQ(privacy_degree(0.5), "Low");
  EXPECT_EQ(privacy_degree(0.3), "Medium");
  EXPECT_EQ(privacy_degree(0.1), "Medium");
  EXPECT_EQ(privacy_degree(0.05), "High");
  EXPECT_EQ(privacy_degree(0.0), "High");
}

TEST(Privacy, BlobDetectorFindsWarmRectangle) {
  Plane t = Plane::Constant(30, 40, 22.0f);
  t.block(10, 20, 8, 4) = 33.0f;
  t(2, 2) = 40.0f;  // single hot cell, below the size floor
  const auto dets = BlobDetector().detect(t);
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_DOUBLE_EQ(dets[0].x0, 20.0 / 40);
  EXPECT_DOUBLE_EQ(dets[0].x1, 24.0 / 40);
  EXPECT_DOUBLE_EQ(dets[0].y0, 10.0 / 30);
  EXPECT_DOUBLE_EQ(dets[0].y1, 18.0 / 30);
  EXPECT_THROW(BlobDetector(0.0), ConfigError);
}

namespace {

/// Returns the ground-truth boxes of each frame in turn.
class OracleDetector final : public Detector {
 public:
  explicit OracleDetector(const std::vector<LabeledFrame>& frames) : frames_(frames) {}
  [[nodiscard]] std::string name() const override { return "oracle"; }
  [[nodiscard]] std::vector<Detection> detect(const Plane&) const override {
    return frames_[next_++ % frames_.size()].persons;
  }

 private:
  const std::vector<LabeledFrame>& frames_;
  mutable std::size_t next_ = 0;
};

const std::vector<Resolution> kResolutions{{160, 120}, {80, 60}, {40, 30}, {16, 12}, {8, 5}};

}  // namespace

TEST(Privacy, SyntheticScenesAreDeterministicAndLabelled) {
  const auto a = synthetic_privacy_scenes({});
  const auto b = synthetic_privacy_scenes({});
  ASSERT_EQ(a.size(), 40u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE((a[i].thermal_celsius == b[i].thermal_celsius).all());
    ASSERT_FALSE(a[i].persons.empty());
    for (const auto& p : a[i].persons) {
      EXPECT_LE((p.x1 - p.x0) * 160, 10.0);
      EXPECT_LE((p.y1 - p.y0) * 120, 21.0);
    }
  }
}

TEST(Privacy, AccuracyFallsWithResolutionToZero) {
  const auto frames = synthetic_privacy_scenes({});
  const auto rows = privacy_harness(frames, kResolutions, BlobDetector());
  ASSERT_EQ(rows.size(), kResolutions.size());
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_LE(*rows[i].accuracy, *rows[i - 1].accuracy);
  EXPECT_GT(*rows[0].accuracy, 0.5);
  EXPECT_EQ(rows[0].degree, "Low");
  EXPECT_EQ(*rows[3].accuracy, 0.0);
  EXPECT_EQ(rows[3].degree, "High");
}

TEST(Privacy, OracleDetectorScoresFullAccuracy) {
  const auto frames = synthetic_privacy_scenes({.count = 8});
  const auto rows = privacy_harness(frames, {{160, 120}, {16, 12}}, OracleDetector(frames));
  for (const auto& r : rows) EXPECT_EQ(*r.accuracy, 1.0);
}

TEST(Privacy, CsvMatchesTableColumns) {
  std::ostringstream out;
  write_privacy_csv({{{160, 120}, 0.807, "Low"}, {{16, 12}, 0.0, "High"}, {{8, 5}, std::nullopt, "skipped"}}, out);
  EXPECT_EQ(out.str(), "resolution,accuracy,degree\n160x120,80.7%,Low\n16x12,0.0%,High\n8x5,skipped,skipped\n");
}

TEST(Privacy, MissingExternalDetectorSkipsRows) {
  const ExternalDetector missing("/nonexistent/detector-binary");
  EXPECT_FALSE(missing.available());
  const auto rows = privacy_harness(synthetic_privacy_scenes({.count = 2}), kResolutions, missing);
  for (const auto& r : rows) {
    EXPECT_FALSE(r.accuracy.has_value());
    EXPECT_EQ(r.degree, "skipped");
  }
}

TEST(Privacy, ExternalDetectorReadsBoxesFromStdout) {
  testutil::TempDir dir("detector");
  const auto script = dir / "det.sh";
  {
    std::ofstream out(script);
    out << "#!/bin/sh\ntest -s \"$1\" && echo '0.1 0.2 0.3 0.4 0.9'\n";
  }
  std::filesystem::permissions(script, std::filesystem::perms::owner_all);
  const ExternalDetector det(script.string());
  ASSERT_TRUE(det.available());
  const auto dets = det.detect(Plane::Constant(4, 4, 20.0f));
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_DOUBLE_EQ(dets[0].y1, 0.4);
  EXPECT_DOUBLE_EQ(dets[0].confidence, 0.9);
}

TEST(Throughput, ReportsPositiveRates) {
  const Generator<float> g(small_config(), 1);
  const auto rows = throughput_bench(g, {1, 4}, 0, 1);
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) {
    EXPECT_GT(r.seconds_per_batch, 0.0);
    EXPECT_NEAR(r.fps, r.batch / r.seconds_per_batch, 1e-9 * r.fps);
  }
  EXPECT_FALSE(hardware_description().empty());
}

TEST(Probes, CountsEveryProbe) {
  testutil::TempDir dir("probe_ds");
  SyntheticConfig sc;
  sc.count = 6;
  const auto samples = load_dataset(generate_synthetic_dataset(sc, dir.path()));
  auto b = ModelBundle::create(small_config(), 1);
  LatentCodeSet codes;
  std::mt19937_64 rng(8);
  for (const auto& s : samples) {
    const TensorF z = sample_latents<float>(1, rng);
    codes.entries.push_back({s.sample_id, s.meta, std::vector<float>(z.vec().data(), z.vec().data() + z.size())});
  }
  const auto r = disentanglement_probes(b.generator_ema, codes, samples, 5, 2, 1);
  EXPECT_EQ(r.probes, 5);
  EXPECT_LE(r.centroid_follows, 5);
  EXPECT_LE(r.background_follows_code, 5);
}
