#include "thermosynth/data.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <set>

using namespace thermosynth;

namespace {

Plane random_plane(int h, int w, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Plane p(h, w);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = static_cast<float>(u(rng));
  return p;
}

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(PixelAverage, BlockMeanOfTwoByTwo) {
  Plane p(2, 2);
  p << 0, 2, 4, 6;
  EXPECT_FLOAT_EQ(pixel_average(p, 1, 1)(0, 0), 3.0f);
}

TEST(PixelAverage, MatchesBruteForceBlockMeans) {
  std::mt19937_64 rng(1);
  const Plane p = random_plane(24, 32, rng, 0, 100);
  const Plane out = pixel_average(p, 6, 4);
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 4; ++x) {
      double s = 0;
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 8; ++j) s += p(y * 4 + i, x * 8 + j);
      EXPECT_NEAR(out(y, x), s / 32.0, 1e-4);
    }
  }
}

TEST(PixelAverage, PreservesGlobalMean) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Plane p = random_plane(120, 160, rng, 0, 1);
    const double before = p.cast<double>().mean();
    const double after = pixel_average(p, 12, 16).cast<double>().mean();
    EXPECT_NEAR(before, after, 1e-6);
  }
}

TEST(PixelAverage, RejectsNonIntegerRatio) {
  EXPECT_THROW(pixel_average(Plane::Zero(10, 10), 3, 5), DimensionError);
}

TEST(Normalize, EndpointsAndRoundTrip) {
  std::mt19937_64 rng(3);
  const Plane v = random_plane(10, 10, rng, 15, 40);
  const Plane n = normalize_range(v, 15, 40);
  EXPECT_LE(n.maxCoeff(), 1.0f);
  EXPECT_GE(n.minCoeff(), -1.0f);
  EXPECT_LT((denormalize_range(n, 15, 40) - v).abs().maxCoeff() / 40.0f, 1e-6f);
  Plane ends(1, 2);
  ends << 15, 40;
  const Plane e = normalize_range(ends, 15, 40);
  EXPECT_EQ(e(0, 0), -1.0f);
  EXPECT_EQ(e(0, 1), 1.0f);
}

TEST(PreprocessRgb, UniformWhiteMapsToOne) {
  TensorF raw(Shape{1, 3, 192, 256}, 255.0f);
  const RgbImage img = preprocess_rgb(raw, 96, 128);
  EXPECT_EQ(img.values.shape(), (Shape{1, 3, 96, 128}));
  EXPECT_TRUE((img.values.vec().array() == 1.0f).all());
}

TEST(PreprocessRgb, RandomInputStaysInRange) {
  std::mt19937_64 rng(4);
  const TensorF raw = testutil::random_tensor<float>(Shape{1, 3, 192, 256}, rng, 0, 255);
  const RgbImage img = preprocess_rgb(raw, 96, 128);
  EXPECT_LE(img.values.vec().maxCoeff(), 1.0f);
  EXPECT_GE(img.values.vec().minCoeff(), -1.0f);
}

TEST(PreprocessThermal, EndpointAndMidpoint) {
  const Heatmap lo = preprocess_thermal(Plane::Constant(120, 160, 15.0f), 1, 0.0, 12, 16, 15, 40, 0);
  EXPECT_TRUE((lo.values.vec().array() == -1.0f).all());
  const Heatmap mid = preprocess_thermal(Plane::Constant(120, 160, 27.5f), 1, 0.0, 12, 16, 15, 40, 0);
  EXPECT_TRUE((mid.values.vec().array().abs() < 1e-6f).all());
}

TEST(PreprocessThermal, ShapeRangeAndDeterminism) {
  std::mt19937_64 rng(5);
  const Plane raw = random_plane(120, 160, rng, 10, 45);
  PreprocessConfig cfg;
  const Heatmap a = preprocess_thermal(raw, cfg, 42);
  const Heatmap b = preprocess_thermal(raw, cfg, 42);
  EXPECT_EQ(a.values.shape(), (Shape{1, 1, 12, 16}));
  EXPECT_LE(a.values.vec().maxCoeff(), 1.0f);
  EXPECT_GE(a.values.vec().minCoeff(), -1.0f);
  EXPECT_EQ(a.values.vec(), b.values.vec());
  const Heatmap c = preprocess_thermal(raw, cfg, 43);
  EXPECT_NE(a.values.vec(), c.values.vec());
}

TEST(PreprocessThermal, InvalidRangeIsConfigError) {
  EXPECT_THROW(preprocess_thermal(Plane::Zero(12, 16), 1, 0.0, 12, 16, 40, 15, 0), ConfigError);
}

TEST(GaussianBlur, PreservesConstantsAndMatchesKernel) {
  const Plane c = Plane::Constant(9, 9, 3.5f);
  EXPECT_LT((gaussian_blur(c, 5) - c).abs().maxCoeff(), 1e-5f);
  Plane impulse = Plane::Zero(7, 7);
  impulse(3, 3) = 1.0f;
  const Plane out = gaussian_blur(impulse, 3);
  // sigma = 0.3 * ((3 - 1) / 2 - 1) + 0.8 = 0.8
  const double w1 = std::exp(-1.0 / (2 * 0.64));
  const double k0 = 1.0 / (1.0 + 2 * w1), k1 = w1 / (1.0 + 2 * w1);
  EXPECT_NEAR(out(3, 3), k0 * k0, 1e-6);
  EXPECT_NEAR(out(3, 4), k0 * k1, 1e-6);
  EXPECT_NEAR(out(2, 4), k1 * k1, 1e-6);
  EXPECT_NEAR(out.cast<double>().sum(), 1.0, 1e-6);
  EXPECT_EQ(gaussian_blur(impulse, 1)(3, 3), 1.0f);
}

TEST(ResizeMask, Basics) {
  EXPECT_TRUE((resize_mask(Plane::Ones(96, 128), 12, 16) == 1.0f).all());
  EXPECT_TRUE((resize_mask(Plane::Zero(96, 128), 12, 16) == 0.0f).all());
  Plane m = Plane::Zero(96, 128);
  m.block(16, 40, 8, 8).setOnes();
  const Plane r = resize_mask(m, 12, 16);
  EXPECT_EQ(r.sum(), 1.0f);
  EXPECT_EQ(r(2, 5), 1.0f);
  EXPECT_THROW(resize_mask(Plane::Zero(90, 128), 12, 16), DimensionError);
}

TEST(ResizeMask, MonotoneInMask) {
  std::mt19937_64 rng(6);
  std::bernoulli_distribution coin(0.5);
  for (int trial = 0; trial < 50; ++trial) {
    Plane m(48, 64);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = coin(rng) ? 1.0f : 0.0f;
    Plane more = m;
    for (Eigen::Index i = 0; i < more.size(); ++i) {
      if (coin(rng)) more.data()[i] = 1.0f;
    }
    const Plane a = resize_mask(m, 6, 8);
    const Plane b = resize_mask(more, 6, 8);
    EXPECT_TRUE((b >= a).all());
  }
}

TEST(F32Files, RoundTripAndSizeCheck) {
  testutil::TempDir dir("f32");
  const std::vector<float> v{1.5f, -2.25f, 3.0f};
  write_f32(dir / "a.f32", v.data(), v.size());
  EXPECT_EQ(read_f32(dir / "a.f32", 3), v);
  EXPECT_THROW(read_f32(dir / "a.f32", 4), std::runtime_error);
  const auto bytes = slurp(dir / "a.f32");
  ASSERT_EQ(bytes.size(), 12u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[3]), 0x3f);  // 1.5f = 0x3fc00000, little-endian
}

TEST(Minibatches, CountsAndShortBatch) {
  std::vector<PairedSample> samples(256);
  EXPECT_EQ(MinibatchLoader(samples, 128, 1).batches_per_epoch(), 2);
  samples.resize(100);
  MinibatchLoader loader(samples, 128, 1);
  const auto plan = loader.epoch_plan(0);
  ASSERT_EQ(plan.size(), 1u);
  EXPECT_EQ(plan[0].size(), 100u);
}

TEST(Minibatches, DeterministicExhaustiveShuffle) {
  std::vector<PairedSample> samples(50);
  MinibatchLoader a(samples, 8, 9), b(samples, 8, 9);
  EXPECT_EQ(a.epoch_plan(3), b.epoch_plan(3));
  EXPECT_NE(a.epoch_plan(0), a.epoch_plan(1));
  std::set<int> seen;
  for (const auto& batch : a.epoch_plan(2)) seen.insert(batch.begin(), batch.end());
  EXPECT_EQ(seen.size(), 50u);
}

class SyntheticDataset : public ::testing::Test {
 protected:
  SyntheticConfig cfg() const {
    SyntheticConfig c;
    c.count = 16;
    return c;
  }
};

TEST_F(SyntheticDataset, ByteIdenticalPerSeed) {
  testutil::TempDir a("syn_a"), b("syn_b");
  const auto ma = generate_synthetic_dataset(cfg(), a.path());
  generate_synthetic_dataset(cfg(), b.path());
  EXPECT_EQ(slurp(a / "manifest.json"), slurp(b / "manifest.json"));
  for (const auto& e : ma.entries) {
    EXPECT_EQ(slurp(a / e.rgb.path), slurp(b / e.rgb.path));
    EXPECT_EQ(slurp(a / e.thermal.path), slurp(b / e.thermal.path));
  }
}

TEST_F(SyntheticDataset, SamplesSatisfyInvariantsAndBlobMatchesSilhouette) {
  testutil::TempDir dir("syn");
  const auto manifest = generate_synthetic_dataset(cfg(), dir.path());
  manifest.validate();
  const auto samples = load_dataset(manifest);
  ASSERT_EQ(samples.size(), 16u);
  for (const auto& s : samples) {
    const Shape hs = s.heatmap.values.shape();
    const Shape rs = s.rgb.values.shape();
    EXPECT_EQ(rs.h, 8 * hs.h);
    EXPECT_EQ(rs.w, 8 * hs.w);
    EXPECT_LE(s.heatmap.values.vec().cwiseAbs().maxCoeff(), 1.0f);
    EXPECT_LE(s.rgb.values.vec().cwiseAbs().maxCoeff(), 1.0f);
    ASSERT_TRUE(s.mask.has_value());
    EXPECT_TRUE((s.mask->array() == 0.0f || s.mask->array() == 1.0f).all());

    // Warm-blob centroid (cells above the frame mean) vs mask centroid, in heatmap cells.
    const float mean = s.heatmap.values.vec().mean();
    double hx = 0, hy = 0, hn = 0, mx = 0, my = 0, mn = 0;
    for (int y = 0; y < hs.h; ++y)
      for (int x = 0; x < hs.w; ++x) {
        const float v = s.heatmap.values(0, 0, y, x) - mean;
        if (v > 0) hx += v * (x + 0.5), hy += v * (y + 0.5), hn += v;
      }
    for (int y = 0; y < rs.h; ++y)
      for (int x = 0; x < rs.w; ++x)
        if ((*s.mask)(y, x) > 0) mx += (x + 0.5) / 8.0, my += (y + 0.5) / 8.0, ++mn;
    ASSERT_GT(hn, 0);
    ASSERT_GT(mn, 0);
    EXPECT_LT(std::hypot(hx / hn - mx / mn, hy / hn - my / mn), 1.0) << s.sample_id;
  }
}

TEST_F(SyntheticDataset, PreprocessedCopyLoadsIdentically) {
  testutil::TempDir raw("raw"), pre("pre");
  const auto manifest = generate_synthetic_dataset(cfg(), raw.path());
  const auto copy = write_preprocessed(manifest, pre.path());
  const auto a = load_dataset(manifest);
  const auto b = load_dataset(DatasetManifest::load(pre.path()));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].sample_id, b[i].sample_id);
    EXPECT_EQ(a[i].rgb.values.vec(), b[i].rgb.values.vec());
    EXPECT_EQ(a[i].heatmap.values.vec(), b[i].heatmap.values.vec());
    EXPECT_EQ(a[i].meta, b[i].meta);
  }
}

TEST_F(SyntheticDataset, CorruptFileNamesTheSample) {
  testutil::TempDir dir("corrupt");
  const auto manifest = generate_synthetic_dataset(cfg(), dir.path());
  const auto& victim = manifest.entries[3];
  std::filesystem::resize_file(dir / victim.thermal.path, 10);
  try {
    load_dataset(manifest);
    FAIL() << "expected DatasetError";
  } catch (const DatasetError& e) {
    EXPECT_EQ(e.sample_id(), victim.sample_id);
  }
}

TEST_F(SyntheticDataset, MissingMaskMeansAllOnes) {
  testutil::TempDir dir("nomask");
  auto manifest = generate_synthetic_dataset(cfg(), dir.path());
  manifest.entries[0].mask.reset();
  const auto samples = load_dataset(manifest);
  EXPECT_FALSE(samples[0].mask.has_value());
  EXPECT_TRUE((samples[0].mask_reduced == 1.0f).all());
}

TEST(SyntheticConfigJson, RejectsUnknownKeys) {
  EXPECT_THROW(nlohmann::json({{"count", 4}, {"colour", 1}}).get<SyntheticConfig>(), std::invalid_argument);
}
