#pragma once

// Differentiable tensor operations recorded on a Tape. Every op treats the
// batch axis independently and runs the same per-sample arithmetic regardless
// of batch size, so a batched forward is bit-identical to per-sample calls.

#include "thermosynth/tape.hpp"

namespace thermosynth::ops {

template <typename Scalar>
using V = typename Tape<Scalar>::Var;

template <typename Scalar>
V<Scalar> add(Tape<Scalar>& t, V<Scalar> a, V<Scalar> b);
template <typename Scalar>
V<Scalar> sub(Tape<Scalar>& t, V<Scalar> a, V<Scalar> b);
template <typename Scalar>
V<Scalar> mul(Tape<Scalar>& t, V<Scalar> a, V<Scalar> b);
template <typename Scalar>
V<Scalar> scale(Tape<Scalar>& t, V<Scalar> a, Scalar factor);
template <typename Scalar>
V<Scalar> add_scalar(Tape<Scalar>& t, V<Scalar> a, Scalar offset);

template <typename Scalar>
V<Scalar> leaky_relu(Tape<Scalar>& t, V<Scalar> x, Scalar slope = Scalar(0.2));
template <typename Scalar>
V<Scalar> tanh(Tape<Scalar>& t, V<Scalar> x);

template <typename Scalar>
V<Scalar> reshape(Tape<Scalar>& t, V<Scalar> x, const Shape& shape);

/// y_n = W x_n + b with W of shape (out, in, 1, 1); x is flattened per sample.
template <typename Scalar>
V<Scalar> linear(Tape<Scalar>& t, V<Scalar> x, V<Scalar> weight, V<Scalar> bias);

/// 2-D cross-correlation. weight: (Cout, Cin, k, k); bias: (1, Cout, 1, 1).
template <typename Scalar>
V<Scalar> conv2d(Tape<Scalar>& t, V<Scalar> x, V<Scalar> weight, V<Scalar> bias, int stride,
                 int pad);

/// Parameter-free per-sample, per-channel standardization.
template <typename Scalar>
V<Scalar> instance_norm(Tape<Scalar>& t, V<Scalar> x, Scalar eps = Scalar(1e-5));

template <typename Scalar>
V<Scalar> upsample_nearest2x(Tape<Scalar>& t, V<Scalar> x);

/// Non-overlapping average pooling by an integer factor.
template <typename Scalar>
V<Scalar> avg_pool(Tape<Scalar>& t, V<Scalar> x, int factor);

/// Mean over spatial positions: (n, c, h, w) -> (n, c, 1, 1).
template <typename Scalar>
V<Scalar> spatial_mean(Tape<Scalar>& t, V<Scalar> x);

/// Mean over every element: -> (1, 1, 1, 1).
template <typename Scalar>
V<Scalar> mean_all(Tape<Scalar>& t, V<Scalar> x);
template <typename Scalar>
V<Scalar> sum_all(Tape<Scalar>& t, V<Scalar> x);

/// Weighted sum over the batch of scalar-per-sample values (n,1,1,1) -> (1,1,1,1).
template <typename Scalar>
V<Scalar> weighted_sum(Tape<Scalar>& t, V<Scalar> x, const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& weights);

}  // namespace thermosynth::ops
