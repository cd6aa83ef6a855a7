#include "thermosynth/losses.hpp"

#include "thermosynth/ops.hpp"

#include <cmath>
#include <stdexcept>

namespace thermosynth {

void LossConfig::validate() const {
  if (!(epsilon >= 0)) throw std::invalid_argument("loss config: epsilon must be >= 0");
  for (double w : {lambda_rec, lambda_gp, lambda_inv, lambda_fm}) {
    if (!(w >= 0)) throw std::invalid_argument("loss config: weights must be >= 0");
  }
}

void to_json(nlohmann::json& j, const LossConfig& c) {
  j = nlohmann::json{{"epsilon", c.epsilon},       {"lambda_rec", c.lambda_rec},
                     {"lambda_gp", c.lambda_gp},   {"lambda_inv", c.lambda_inv},
                     {"feature_matching", c.feature_matching}, {"lambda_fm", c.lambda_fm}};
}

void from_json(const nlohmann::json& j, LossConfig& c) {
  for (const auto& [key, value] : j.items()) {
    if (key != "epsilon" && key != "lambda_rec" && key != "lambda_gp" && key != "lambda_inv" &&
        key != "feature_matching" && key != "lambda_fm") {
      throw std::invalid_argument("loss config: unknown key '" + key + "'");
    }
  }
  LossConfig d;
  c.epsilon = j.value("epsilon", d.epsilon);
  c.lambda_rec = j.value("lambda_rec", d.lambda_rec);
  c.lambda_gp = j.value("lambda_gp", d.lambda_gp);
  c.lambda_inv = j.value("lambda_inv", d.lambda_inv);
  c.feature_matching = j.value("feature_matching", d.feature_matching);
  c.lambda_fm = j.value("lambda_fm", d.lambda_fm);
  c.validate();
}

namespace loss_ops {
namespace {

template <typename Scalar>
using PlaneMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename Scalar>
using ColumnMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;

template <typename Scalar>
PlaneMap<Scalar> plane(const Tensor<Scalar>& t, int n) {
  return PlaneMap<Scalar>(t.data() + n * t.shape().sample_size(), t.shape().h, t.shape().w);
}

}  // namespace

template <typename Scalar>
V<Scalar> masked_hinge_l1(Tape<Scalar>& t, V<Scalar> h_hat, const Tensor<Scalar>& h,
                          const Tensor<Scalar>& mask, Scalar eps) {
  const Shape s = t.shape(h_hat);
  if (s.c != 1) throw ShapeError("masked_hinge_l1: expected single-channel heatmaps");
  require_shape(h.shape(), s, "masked_hinge_l1 target");
  require_shape(mask.shape(), s, "masked_hinge_l1 mask");
  Scalar total = 0;
  for (int n = 0; n < s.n; ++n) {
    total += thermosynth::masked_hinge_l1(plane(h, n), plane(t.value(h_hat), n), plane(mask, n), eps);
  }
  Tensor<Scalar> out(Shape{1, 1, 1, 1}, total / static_cast<Scalar>(s.n));
  return t.record(std::move(out), {h_hat}, [h_hat, h, mask, eps](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    const Shape s = tp.shape(h_hat);
    const Scalar w = g[0] / static_cast<Scalar>(s.n);
    auto& dh = tp.grad(h_hat);
    for (int n = 0; n < s.n; ++n) {
      auto grad = thermosynth::masked_hinge_l1_gradient(plane(h, n), plane(tp.value(h_hat), n),
                                                       plane(mask, n), eps);
      Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> dst(
          dh.data() + n * s.sample_size(), s.h, s.w);
      dst += w * grad;
    }
  });
}

template <typename Scalar>
V<Scalar> discriminator_hinge(Tape<Scalar>& t, V<Scalar> s_real, V<Scalar> s_fake) {
  ColumnMap<Scalar> r(t.value(s_real).data(), t.value(s_real).size());
  ColumnMap<Scalar> f(t.value(s_fake).data(), t.value(s_fake).size());
  Tensor<Scalar> out(Shape{1, 1, 1, 1}, adversarial_losses(r, f).discriminator);
  return t.record(std::move(out), {s_real, s_fake}, [s_real, s_fake](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    ColumnMap<Scalar> r(tp.value(s_real).data(), tp.value(s_real).size());
    ColumnMap<Scalar> f(tp.value(s_fake).data(), tp.value(s_fake).size());
    auto [gr, gf] = discriminator_hinge_gradient(r, f);
    if (tp.requires_grad(s_real)) tp.grad(s_real).vec().array() += g[0] * gr;
    if (tp.requires_grad(s_fake)) tp.grad(s_fake).vec().array() += g[0] * gf;
  });
}

template <typename Scalar>
V<Scalar> generator_adversarial(Tape<Scalar>& t, V<Scalar> s_fake) {
  return ops::scale(t, ops::mean_all(t, s_fake), Scalar(-1));
}

template <typename Scalar>
V<Scalar> l1_reconstruction(Tape<Scalar>& t, V<Scalar> x_hat, const Tensor<Scalar>& x) {
  require_shape(x.shape(), t.shape(x_hat), "l1_reconstruction");
  ColumnMap<Scalar> xv(x.data(), x.size());
  ColumnMap<Scalar> xh(t.value(x_hat).data(), x.size());
  Tensor<Scalar> out(Shape{1, 1, 1, 1}, thermosynth::l1_reconstruction(xv, xh));
  return t.record(std::move(out), {x_hat}, [x_hat, x](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    ColumnMap<Scalar> xv(x.data(), x.size());
    ColumnMap<Scalar> xh(tp.value(x_hat).data(), x.size());
    tp.grad(x_hat).vec().array() += g[0] * l1_reconstruction_gradient(xv, xh).col(0);
  });
}

}  // namespace loss_ops

namespace {

// Per-sample input gradients of the scores; parameter gradients untouched.
template <typename Scalar>
Tensor<Scalar> score_input_gradient(const Scorer<Scalar>& scorer, const Tensor<Scalar>& x) {
  Tape<Scalar> t;
  t.set_parameter_gradients(false);
  auto xv = t.input(x);
  auto s = scorer(t, xv);
  require_shape(t.shape(s), Shape{x.shape().n, 1, 1, 1}, "r1 scorer output");
  if (!t.requires_grad(s)) return Tensor<Scalar>(x.shape());
  t.backward(s);
  return t.grad(xv);
}

}  // namespace

template <typename Scalar>
Scalar r1_penalty(const Scorer<Scalar>& scorer, const Tensor<Scalar>& x_real, Scalar lambda) {
  if (x_real.shape().n < 1) throw std::invalid_argument("r1_penalty: empty batch");
  Tensor<Scalar> g = score_input_gradient(scorer, x_real);
  Scalar total = 0;
  for (int n = 0; n < x_real.shape().n; ++n) total += g.sample(n).squaredNorm();
  return lambda / Scalar(2) * total / static_cast<Scalar>(x_real.shape().n);
}

template <typename Scalar>
Scalar r1_penalty_backward(const Scorer<Scalar>& scorer, const Tensor<Scalar>& x_real,
                           Scalar lambda, Scalar delta) {
  const int batch = x_real.shape().n;
  if (batch < 1) throw std::invalid_argument("r1_penalty: empty batch");
  Tensor<Scalar> g = score_input_gradient(scorer, x_real);

  Tensor<Scalar> plus = x_real;
  Tensor<Scalar> minus = x_real;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> weights(2 * batch);
  Scalar total = 0;
  for (int n = 0; n < batch; ++n) {
    const Scalar norm = g.sample(n).norm();
    total += norm * norm;
    const Scalar c = norm > Scalar(0) ? lambda * norm / (Scalar(2) * delta * batch) : Scalar(0);
    weights[n] = c;
    weights[batch + n] = -c;
    if (norm > Scalar(0)) {
      plus.sample(n) += (delta / norm) * g.sample(n);
      minus.sample(n) -= (delta / norm) * g.sample(n);
    }
  }
  Tape<Scalar> t;
  auto s = scorer(t, t.constant(concat_batch(plus, minus)));
  t.backward(ops::weighted_sum(t, s, weights));
  return lambda / Scalar(2) * total / static_cast<Scalar>(batch);
}

#define THERMOSYNTH_INSTANTIATE_LOSSES(S)                                                     \
  template loss_ops::V<S> loss_ops::masked_hinge_l1(Tape<S>&, loss_ops::V<S>, const Tensor<S>&, \
                                                    const Tensor<S>&, S);                     \
  template loss_ops::V<S> loss_ops::discriminator_hinge(Tape<S>&, loss_ops::V<S>, loss_ops::V<S>); \
  template loss_ops::V<S> loss_ops::generator_adversarial(Tape<S>&, loss_ops::V<S>);          \
  template loss_ops::V<S> loss_ops::l1_reconstruction(Tape<S>&, loss_ops::V<S>, const Tensor<S>&); \
  template S r1_penalty<S>(const Scorer<S>&, const Tensor<S>&, S);                            \
  template S r1_penalty_backward<S>(const Scorer<S>&, const Tensor<S>&, S, S);

THERMOSYNTH_INSTANTIATE_LOSSES(float)
THERMOSYNTH_INSTANTIATE_LOSSES(double)

}  // namespace thermosynth
