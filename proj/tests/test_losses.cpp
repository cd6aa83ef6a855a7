#include "thermosynth/losses.hpp"
#include "thermosynth/model.hpp"
#include "thermosynth/ops.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace thermosynth;

namespace {

using ArrayD = Eigen::ArrayXXd;

/// Elementwise reference for the masked hinge loss.
double hinge_oracle(const ArrayD& h, const ArrayD& hh, const ArrayD& m, double eps) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    for (Eigen::Index j = 0; j < h.cols(); ++j) {
      if (m(i, j) == 1.0) total += std::max(0.0, std::abs(h(i, j) - hh(i, j)) - eps);
    }
  }
  return total;
}

ArrayD random_array(int r, int c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ArrayD a(r, c);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = u(rng);
  return a;
}

ArrayD random_mask(int r, int c, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  ArrayD a(r, c);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = coin(rng) ? 1.0 : 0.0;
  return a;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

}  // namespace

TEST(MaskedHinge, WorkedExample) {
  ArrayD h(2, 2), hh(2, 2), m(2, 2);
  h << 1.0, -0.5, 0.2, 0.0;
  hh << 0.7, -0.5, 0.9, 0.3;
  m << 1, 0, 1, 1;
  EXPECT_NEAR(masked_hinge_l1(h, hh, m, 0.1), 1.0, 1e-12);
}

TEST(MaskedHinge, TrivialCases) {
  std::mt19937_64 rng(1);
  const ArrayD h = random_array(12, 16, rng);
  EXPECT_EQ(masked_hinge_l1(h, h, random_mask(12, 16, rng), 0.0), 0.0);
  EXPECT_EQ(masked_hinge_l1(h, random_array(12, 16, rng), ArrayD::Zero(12, 16), 0.1), 0.0);
  EXPECT_THROW(masked_hinge_l1(h, ArrayD::Zero(12, 15), ArrayD::Zero(12, 16), 0.1), ShapeError);
}

TEST(MaskedHinge, MatchesOracleOnRandomInstances) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> ue(0.0, 0.5);
  for (int trial = 0; trial < 200; ++trial) {
    const ArrayD h = random_array(12, 16, rng), hh = random_array(12, 16, rng), m = random_mask(12, 16, rng);
    const double eps = ue(rng);
    EXPECT_NEAR(masked_hinge_l1(h, hh, m, eps), hinge_oracle(h, hh, m, eps), 1e-9);
  }
}

TEST(MaskedHinge, MaskedCellsAreIgnoredExactly) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const ArrayD h = random_array(12, 16, rng), m = random_mask(12, 16, rng);
    ArrayD hh = random_array(12, 16, rng);
    const double before = masked_hinge_l1(h, hh, m, 0.1);
    const ArrayD noise = random_array(12, 16, rng) * 5.0;
    hh = (m == 0.0).select(hh + noise, hh);
    EXPECT_EQ(masked_hinge_l1(h, hh, m, 0.1), before);
  }
}

TEST(MaskedHinge, MonotoneInDeviation) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const ArrayD h = random_array(4, 4, rng), m = ArrayD::Ones(4, 4);
    ArrayD hh = random_array(4, 4, rng);
    double prev = masked_hinge_l1(h, hh, m, 0.1);
    for (int k = 0; k < 5; ++k) {
      hh(1, 2) += (hh(1, 2) >= h(1, 2) ? 0.1 : -0.1);
      const double now = masked_hinge_l1(h, hh, m, 0.1);
      EXPECT_GE(now, prev);
      prev = now;
    }
  }
}

TEST(MaskedHinge, GradientMatchesFiniteDifferencesAwayFromKinks) {
  std::mt19937_64 rng(5);
  const double eps = 0.1, step = 1e-6;
  for (int trial = 0; trial < 20; ++trial) {
    const ArrayD h = random_array(12, 16, rng), m = random_mask(12, 16, rng);
    ArrayD hh = random_array(12, 16, rng);
    // Keep every |h - hh| at least 1e-3 away from the kinks at 0 and eps.
    for (Eigen::Index i = 0; i < hh.size(); ++i) {
      const double d = std::abs(h.data()[i] - hh.data()[i]);
      if (std::abs(d - eps) < 1e-3 || d < 1e-3) hh.data()[i] += 0.01;
    }
    const ArrayD g = masked_hinge_l1_gradient(h, hh, m, eps);
    for (Eigen::Index i = 0; i < hh.size(); ++i) {
      ArrayD p = hh, q = hh;
      p.data()[i] += step;
      q.data()[i] -= step;
      const double fd = (masked_hinge_l1(h, p, m, eps) - masked_hinge_l1(h, q, m, eps)) / (2 * step);
      if (fd == 0.0 && g.data()[i] == 0.0) continue;
      EXPECT_LT(rel_err(g.data()[i], fd), 1e-4);
    }
  }
}

TEST(MaskedHinge, TapeOpIsBatchMeanOfSums) {
  std::mt19937_64 rng(6);
  const TensorD h = testutil::random_tensor<double>(Shape{3, 1, 6, 8}, rng);
  const TensorD hh = testutil::random_tensor<double>(Shape{3, 1, 6, 8}, rng);
  TensorD m(Shape{3, 1, 6, 8});
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = (i % 3 == 0) ? 0.0 : 1.0;
  Tape<double> t;
  const auto v = t.input(hh);
  const auto loss = loss_ops::masked_hinge_l1(t, v, h, m, 0.1);
  double expected = 0.0;
  for (int n = 0; n < 3; ++n) {
    auto map = [&](const TensorD& x) { return Eigen::Map<const ArrayD>(x.data() + n * 48, 8, 6); };
    expected += masked_hinge_l1(map(h), map(hh), map(m), 0.1);
  }
  EXPECT_NEAR(t.value(loss)[0], expected / 3.0, 1e-12);
  t.backward(loss);
  for (int n = 0; n < 3; ++n) {
    auto map = [&](const TensorD& x) { return Eigen::Map<const ArrayD>(x.data() + n * 48, 8, 6); };
    const ArrayD g = masked_hinge_l1_gradient(map(h), map(hh), map(m), 0.1) / 3.0;
    EXPECT_LT((map(t.grad(v)) - g).abs().maxCoeff(), 1e-12);
  }
}

TEST(Adversarial, WorkedExamples) {
  Eigen::ArrayXd one(1), neg(1), half(1), zero(1);
  one << 1.0;
  neg << -1.0;
  half << 0.5;
  zero << 0.0;
  EXPECT_EQ(adversarial_losses(one, neg).discriminator, 0.0);
  EXPECT_EQ(adversarial_losses(one, zero).generator, 0.0);
  EXPECT_DOUBLE_EQ(adversarial_losses(half, half).discriminator, 2.0);
}

TEST(Adversarial, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  const double step = 1e-6;
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::ArrayXd sr(5), sf(5);
    for (int i = 0; i < 5; ++i) {
      sr[i] = u(rng);
      sf[i] = u(rng);
      if (std::abs(sr[i] - 1.0) < 1e-3) sr[i] += 0.01;
      if (std::abs(sf[i] + 1.0) < 1e-3) sf[i] += 0.01;
    }
    const auto [gr, gf] = discriminator_hinge_gradient(sr, sf);
    for (int i = 0; i < 5; ++i) {
      Eigen::ArrayXd p = sr, q = sr;
      p[i] += step;
      q[i] -= step;
      const double fd_r = (adversarial_losses(p, sf).discriminator - adversarial_losses(q, sf).discriminator) / (2 * step);
      EXPECT_NEAR(gr[i], fd_r, 1e-4 * std::max(1.0, std::abs(fd_r)));
      p = sf, q = sf;
      p[i] += step;
      q[i] -= step;
      const double fd_f = (adversarial_losses(sr, p).discriminator - adversarial_losses(sr, q).discriminator) / (2 * step);
      EXPECT_NEAR(gf[i], fd_f, 1e-4 * std::max(1.0, std::abs(fd_f)));
      const double fd_g = (adversarial_losses(sr, p).generator - adversarial_losses(sr, q).generator) / (2 * step);
      EXPECT_LT(rel_err(-1.0 / 5.0, fd_g), 1e-4);
    }
  }
}

TEST(Adversarial, TapeOpsAgreeWithEigenForms) {
  std::mt19937_64 rng(8);
  const TensorD sr = testutil::random_tensor<double>(Shape{4, 1, 1, 1}, rng, -2, 2);
  const TensorD sf = testutil::random_tensor<double>(Shape{4, 1, 1, 1}, rng, -2, 2);
  Tape<double> t;
  const auto vr = t.input(sr), vf = t.input(sf);
  const auto d = loss_ops::discriminator_hinge(t, vr, vf);
  const auto ref = adversarial_losses(sr.vec().array(), sf.vec().array());
  EXPECT_NEAR(t.value(d)[0], ref.discriminator, 1e-12);
  t.backward(d);
  const auto [gr, gf] = discriminator_hinge_gradient(sr.vec().array(), sf.vec().array());
  EXPECT_LT((t.grad(vr).vec().array() - gr).abs().maxCoeff(), 1e-12);
  EXPECT_LT((t.grad(vf).vec().array() - gf).abs().maxCoeff(), 1e-12);

  Tape<double> t2;
  const auto g = loss_ops::generator_adversarial(t2, t2.constant(sf));
  EXPECT_NEAR(t2.value(g)[0], ref.generator, 1e-12);
}

TEST(InversionL1, ExamplesAndOracle) {
  std::mt19937_64 rng(9);
  const ArrayD x = random_array(8, 8, rng);
  EXPECT_EQ(l1_reconstruction(x, x), 0.0);
  EXPECT_NEAR(l1_reconstruction(x, x + 0.2), 0.2, 1e-12);
  const ArrayD y = random_array(8, 8, rng);
  double brute = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) brute += std::abs(x.data()[i] - y.data()[i]);
  EXPECT_NEAR(l1_reconstruction(x, y), brute / 64.0, 1e-12);
  EXPECT_THROW(l1_reconstruction(x, ArrayD::Zero(8, 7)), ShapeError);
}

TEST(InversionL1, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  const ArrayD x = random_array(6, 6, rng);
  ArrayD y = random_array(6, 6, rng);
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (std::abs(y.data()[i] - x.data()[i]) < 1e-3) y.data()[i] += 0.01;
  }
  const ArrayD g = l1_reconstruction_gradient(x, y);
  const double step = 1e-6;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    ArrayD p = y, q = y;
    p.data()[i] += step;
    q.data()[i] -= step;
    EXPECT_LT(rel_err(g.data()[i], (l1_reconstruction(x, p) - l1_reconstruction(x, q)) / (2 * step)), 1e-4);
  }
}

TEST(R1, ConstantScorerGivesZero) {
  std::mt19937_64 rng(11);
  const TensorD x = testutil::random_tensor<double>(Shape{3, 3, 4, 4}, rng);
  const Scorer<double> constant = [](Tape<double>& t, Var<double> in) {
    return t.constant(TensorD(Shape{t.shape(in).n, 1, 1, 1}, 0.7));
  };
  EXPECT_EQ(r1_penalty(constant, x, 10.0), 0.0);
}

TEST(R1, LinearScorerGivesHalfLambdaNormSquared) {
  std::mt19937_64 rng(12);
  const Shape s{4, 3, 4, 5};
  const TensorD x = testutil::random_tensor<double>(s, rng);
  Parameter<double> w{testutil::random_tensor<double>(Shape{1, 60, 1, 1}, rng), TensorD(Shape{1, 60, 1, 1})};
  Parameter<double> b{TensorD(Shape{1, 1, 1, 1}, 0.3), TensorD(Shape{1, 1, 1, 1})};
  const Scorer<double> linear = [&](Tape<double>& t, Var<double> in) {
    return ops::linear(t, in, t.parameter(w), t.parameter(b));
  };
  const double lambda = 10.0;
  EXPECT_NEAR(r1_penalty(linear, x, lambda), lambda / 2 * w.value.vec().squaredNorm(), 1e-10);
  // A linear scorer has no mixed second derivative, so its R1 parameter gradient is the
  // derivative of (lambda/2)||w||^2: lambda * w.
  w.grad.set_zero();
  const double v = r1_penalty_backward(linear, x, lambda, 1e-3);
  EXPECT_NEAR(v, lambda / 2 * w.value.vec().squaredNorm(), 1e-10);
  EXPECT_LT((w.grad.vec() - lambda * w.value.vec()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(R1, ParameterGradientMatchesFiniteDifferences) {
  ModelConfig cfg;
  cfg.heatmap_height = 1;
  cfg.heatmap_width = 2;
  cfg.discriminator_channels = {2, 3, 3, 4};
  Discriminator<double> d(cfg, 41);
  std::mt19937_64 rng(42);
  const TensorD x = testutil::random_tensor<double>(cfg.rgb_shape(2), rng);
  const Scorer<double> scorer = [&](Tape<double>& t, Var<double> in) { return d.forward(t, in).score; };
  const double lambda = 10.0;

  d.params().zero_grad();
  r1_penalty_backward(scorer, x, lambda, 1e-5);
  const double step = 1e-6;
  for (auto& [name, p] : d.params()) {
    for (std::size_t i = 0; i < p.value.size(); i += std::max<std::size_t>(1, p.value.size() / 2)) {
      const double saved = p.value[i];
      p.value[i] = saved + step;
      const double fp = r1_penalty(scorer, x, lambda);
      p.value[i] = saved - step;
      const double fm = r1_penalty(scorer, x, lambda);
      p.value[i] = saved;
      const double fd = (fp - fm) / (2 * step);
      EXPECT_NEAR(p.grad[i], fd, 1e-3 * std::max(1e-2, std::abs(fd))) << name << "[" << i << "]";
    }
  }
}

TEST(R1, PenaltyIsNonNegative) {
  ModelConfig cfg;
  cfg.heatmap_height = 1;
  cfg.heatmap_width = 1;
  cfg.discriminator_channels = {2, 2, 2, 2};
  std::mt19937_64 rng(43);
  for (int seed = 0; seed < 5; ++seed) {
    Discriminator<double> d(cfg, static_cast<std::uint64_t>(seed));
    const Scorer<double> scorer = [&](Tape<double>& t, Var<double> in) { return d.forward(t, in).score; };
    EXPECT_GE(r1_penalty(scorer, testutil::random_tensor<double>(cfg.rgb_shape(2), rng), 10.0), 0.0);
  }
}

TEST(LossConfigJson, DefaultsAndValidation) {
  const LossConfig d;
  EXPECT_EQ(d.epsilon, 0.1);
  EXPECT_EQ(d.lambda_rec, 1.0);
  EXPECT_EQ(d.lambda_gp, 10.0);
  EXPECT_FALSE(d.feature_matching);
  EXPECT_EQ(nlohmann::json(d).get<LossConfig>(), d);
  EXPECT_THROW(nlohmann::json({{"epsilon", -1.0}}).get<LossConfig>(), std::invalid_argument);
  EXPECT_THROW(nlohmann::json({{"lambda", 1.0}}).get<LossConfig>(), std::invalid_argument);
}
