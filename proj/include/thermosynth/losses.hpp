#pragma once

// Training objectives. Each loss has a plain Eigen form (value and analytic
// gradient) and a tape op built on it for use inside training graphs.

#include "thermosynth/tape.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/Core>

#include <functional>

namespace thermosynth {

struct LossConfig {
  double epsilon = 0.1;      // hinge tolerance, normalized heatmap units
  double lambda_rec = 1.0;   // heatmap reconstruction weight
  double lambda_gp = 10.0;   // R1 weight
  double lambda_inv = 1.0;   // inversion L1 weight
  bool feature_matching = false;
  double lambda_fm = 1.0;

  void validate() const;
  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);

namespace detail {
template <typename A, typename B>
void require_same_extent(const Eigen::ArrayBase<A>& a, const Eigen::ArrayBase<B>& b,
                         const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": operand extents differ");
  }
}
}  // namespace detail

/// sum over cells with mask == 1 of max(0, |h - h_hat| - eps).
template <typename DH, typename DR, typename DM>
typename DH::Scalar masked_hinge_l1(const Eigen::ArrayBase<DH>& h, const Eigen::ArrayBase<DR>& h_hat,
                                    const Eigen::ArrayBase<DM>& mask, typename DH::Scalar eps) {
  using Scalar = typename DH::Scalar;
  detail::require_same_extent(h, h_hat, "masked_hinge_l1");
  detail::require_same_extent(h, mask, "masked_hinge_l1");
  return ((mask == Scalar(1)).template cast<Scalar>() *
          ((h - h_hat).abs() - eps).max(Scalar(0)))
      .sum();
}

/// d/d(h_hat) of masked_hinge_l1; zero inside the tolerance band and off-mask.
template <typename DH, typename DR, typename DM>
Eigen::Array<typename DH::Scalar, Eigen::Dynamic, Eigen::Dynamic> masked_hinge_l1_gradient(
    const Eigen::ArrayBase<DH>& h, const Eigen::ArrayBase<DR>& h_hat,
    const Eigen::ArrayBase<DM>& mask, typename DH::Scalar eps) {
  using Scalar = typename DH::Scalar;
  detail::require_same_extent(h, h_hat, "masked_hinge_l1_gradient");
  detail::require_same_extent(h, mask, "masked_hinge_l1_gradient");
  const auto diff = (h_hat - h).eval();
  const auto active = ((mask == Scalar(1)) && (diff.abs() > eps)).template cast<Scalar>();
  return active * diff.sign();
}

template <typename Scalar>
struct AdversarialLosses {
  Scalar discriminator;  // mean(max(0, 1 - s_real)) + mean(max(0, 1 + s_fake))
  Scalar generator;      // -mean(s_fake)
};

template <typename DR, typename DF>
AdversarialLosses<typename DR::Scalar> adversarial_losses(const Eigen::ArrayBase<DR>& s_real,
                                                          const Eigen::ArrayBase<DF>& s_fake) {
  using Scalar = typename DR::Scalar;
  return {(Scalar(1) - s_real).max(Scalar(0)).mean() + (Scalar(1) + s_fake).max(Scalar(0)).mean(),
          -s_fake.mean()};
}

/// Gradients of the discriminator hinge loss w.r.t. s_real and s_fake.
template <typename DR, typename DF>
std::pair<Eigen::Array<typename DR::Scalar, Eigen::Dynamic, 1>,
          Eigen::Array<typename DR::Scalar, Eigen::Dynamic, 1>>
discriminator_hinge_gradient(const Eigen::ArrayBase<DR>& s_real, const Eigen::ArrayBase<DF>& s_fake) {
  using Scalar = typename DR::Scalar;
  const Scalar nr = static_cast<Scalar>(s_real.size());
  const Scalar nf = static_cast<Scalar>(s_fake.size());
  return {-(s_real < Scalar(1)).template cast<Scalar>() / nr,
          (s_fake > Scalar(-1)).template cast<Scalar>() / nf};
}

/// Mean absolute error.
template <typename DA, typename DB>
typename DA::Scalar l1_reconstruction(const Eigen::ArrayBase<DA>& x, const Eigen::ArrayBase<DB>& x_hat) {
  detail::require_same_extent(x, x_hat, "l1_reconstruction");
  return (x - x_hat).abs().mean();
}

template <typename DA, typename DB>
Eigen::Array<typename DA::Scalar, Eigen::Dynamic, Eigen::Dynamic> l1_reconstruction_gradient(
    const Eigen::ArrayBase<DA>& x, const Eigen::ArrayBase<DB>& x_hat) {
  detail::require_same_extent(x, x_hat, "l1_reconstruction_gradient");
  return (x_hat - x).sign() / static_cast<typename DA::Scalar>(x.size());
}

// ---- tape ops ----

namespace loss_ops {

template <typename Scalar>
using V = typename Tape<Scalar>::Var;

/// Batch mean of per-sample masked hinge sums. h_hat: (n,1,H,W).
template <typename Scalar>
V<Scalar> masked_hinge_l1(Tape<Scalar>& t, V<Scalar> h_hat, const Tensor<Scalar>& h,
                          const Tensor<Scalar>& mask, Scalar eps);

template <typename Scalar>
V<Scalar> discriminator_hinge(Tape<Scalar>& t, V<Scalar> s_real, V<Scalar> s_fake);

template <typename Scalar>
V<Scalar> generator_adversarial(Tape<Scalar>& t, V<Scalar> s_fake);

template <typename Scalar>
V<Scalar> l1_reconstruction(Tape<Scalar>& t, V<Scalar> x_hat, const Tensor<Scalar>& x);

}  // namespace loss_ops

/// Scores a batch of images: (n,3,H,W) -> (n,1,1,1).
template <typename Scalar>
using Scorer = std::function<typename Tape<Scalar>::Var(Tape<Scalar>&, typename Tape<Scalar>::Var)>;

/// R1 penalty (lambda/2) * mean_b ||d s_b / d x_b||^2 on real images. Value only.
template <typename Scalar>
Scalar r1_penalty(const Scorer<Scalar>& scorer, const Tensor<Scalar>& x_real, Scalar lambda);

/// Returns the R1 penalty and accumulates its parameter gradient into every
/// parameter the scorer binds with requires_grad. The mixed second derivative
/// is taken as a central difference of first-order parameter gradients along
/// the normalized input gradient, with step `delta` in input units.
template <typename Scalar>
Scalar r1_penalty_backward(const Scorer<Scalar>& scorer, const Tensor<Scalar>& x_real,
                           Scalar lambda, Scalar delta);

}  // namespace thermosynth
