#include "thermosynth/ops.hpp"

#include <algorithm>
#include <cmath>

namespace thermosynth::ops {
namespace {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require_same(const Shape& a, const Shape& b, const char* what) { require_shape(b, a, what); }

struct ConvGeometry {
  int in_c, in_h, in_w, k, stride, pad, out_h, out_w;
};

ConvGeometry geometry(const Shape& x, const Shape& w, int stride, int pad) {
  if (x.c != w.c || w.h != w.w) {
    throw ShapeError("conv2d: input " + x.str() + " incompatible with weight " + w.str());
  }
  ConvGeometry g{x.c, x.h, x.w, w.h, stride, pad, 0, 0};
  g.out_h = (x.h + 2 * pad - w.h) / stride + 1;
  g.out_w = (x.w + 2 * pad - w.w) / stride + 1;
  if (g.out_h <= 0 || g.out_w <= 0) throw ShapeError("conv2d: empty output for " + x.str());
  return g;
}

// Valid output columns [lo, hi) for kernel offset `k` along one axis.
inline void valid_range(int k, const ConvGeometry& g, int in_extent, int out_extent, int& lo,
                        int& hi) {
  // ix = ox * stride - pad + k must lie in [0, in_extent)
  lo = std::max(0, (g.pad - k + g.stride - 1) / g.stride);
  hi = std::min(out_extent, (in_extent - 1 + g.pad - k) / g.stride + 1);
  if (hi < lo) hi = lo;
}

template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, Mat<Scalar>& cols) {
  cols.resize(static_cast<Eigen::Index>(g.in_c) * g.k * g.k, g.out_h * g.out_w);
  Eigen::Index row = 0;
  for (int c = 0; c < g.in_c; ++c) {
    const Scalar* plane = x + static_cast<std::size_t>(c) * g.in_h * g.in_w;
    for (int ky = 0; ky < g.k; ++ky) {
      int ylo, yhi;
      valid_range(ky, g, g.in_h, g.out_h, ylo, yhi);
      for (int kx = 0; kx < g.k; ++kx, ++row) {
        int xlo, xhi;
        valid_range(kx, g, g.in_w, g.out_w, xlo, xhi);
        Scalar* dst = cols.row(row).data();
        std::fill(dst, dst + ylo * g.out_w, Scalar(0));
        std::fill(dst + yhi * g.out_w, dst + g.out_h * g.out_w, Scalar(0));
        for (int oy = ylo; oy < yhi; ++oy) {
          Scalar* d = dst + oy * g.out_w;
          const Scalar* s = plane + (oy * g.stride - g.pad + ky) * g.in_w - g.pad + kx;
          std::fill(d, d + xlo, Scalar(0));
          std::fill(d + xhi, d + g.out_w, Scalar(0));
          if (g.stride == 1) {
            std::copy(s + xlo, s + xhi, d + xlo);
          } else {
            for (int ox = xlo; ox < xhi; ++ox) d[ox] = s[ox * g.stride];
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const Mat<Scalar>& cols, const ConvGeometry& g, Scalar* dx) {
  Eigen::Index row = 0;
  for (int c = 0; c < g.in_c; ++c) {
    Scalar* plane = dx + static_cast<std::size_t>(c) * g.in_h * g.in_w;
    for (int ky = 0; ky < g.k; ++ky) {
      int ylo, yhi;
      valid_range(ky, g, g.in_h, g.out_h, ylo, yhi);
      for (int kx = 0; kx < g.k; ++kx, ++row) {
        int xlo, xhi;
        valid_range(kx, g, g.in_w, g.out_w, xlo, xhi);
        const Scalar* src = cols.row(row).data();
        for (int oy = ylo; oy < yhi; ++oy) {
          const Scalar* s = src + oy * g.out_w;
          Scalar* d = plane + (oy * g.stride - g.pad + ky) * g.in_w - g.pad + kx;
          if (g.stride == 1) {
            for (int ox = xlo; ox < xhi; ++ox) d[ox] += s[ox];
          } else {
            for (int ox = xlo; ox < xhi; ++ox) d[ox * g.stride] += s[ox];
          }
        }
      }
    }
  }
}

template <typename Scalar, typename Fn, typename Df>
V<Scalar> unary(Tape<Scalar>& t, V<Scalar> x, Fn fn, Df dfn) {
  Tensor<Scalar> out(t.shape(x));
  out.vec() = t.value(x).vec().unaryExpr(fn);
  return t.record(std::move(out), {x}, [x, dfn](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    const auto& xv = tp.value(x).vec();
    tp.grad(x).vec().array() += g.vec().array() * xv.unaryExpr(dfn).array();
  });
}

}  // namespace

template <typename Scalar>
V<Scalar> add(Tape<Scalar>& t, V<Scalar> a, V<Scalar> b) {
  require_same(t.shape(a), t.shape(b), "add");
  Tensor<Scalar> out(t.shape(a), t.value(a).vec() + t.value(b).vec());
  return t.record(std::move(out), {a, b}, [a, b](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    if (tp.requires_grad(a)) tp.grad(a).vec() += g.vec();
    if (tp.requires_grad(b)) tp.grad(b).vec() += g.vec();
  });
}

template <typename Scalar>
V<Scalar> sub(Tape<Scalar>& t, V<Scalar> a, V<Scalar> b) {
  require_same(t.shape(a), t.shape(b), "sub");
  Tensor<Scalar> out(t.shape(a), t.value(a).vec() - t.value(b).vec());
  return t.record(std::move(out), {a, b}, [a, b](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    if (tp.requires_grad(a)) tp.grad(a).vec() += g.vec();
    if (tp.requires_grad(b)) tp.grad(b).vec() -= g.vec();
  });
}

template <typename Scalar>
V<Scalar> mul(Tape<Scalar>& t, V<Scalar> a, V<Scalar> b) {
  require_same(t.shape(a), t.shape(b), "mul");
  Tensor<Scalar> out(t.shape(a));
  out.vec() = t.value(a).vec().cwiseProduct(t.value(b).vec());
  return t.record(std::move(out), {a, b}, [a, b](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    if (tp.requires_grad(a)) tp.grad(a).vec() += g.vec().cwiseProduct(tp.value(b).vec());
    if (tp.requires_grad(b)) tp.grad(b).vec() += g.vec().cwiseProduct(tp.value(a).vec());
  });
}

template <typename Scalar>
V<Scalar> scale(Tape<Scalar>& t, V<Scalar> a, Scalar factor) {
  Tensor<Scalar> out(t.shape(a), t.value(a).vec() * factor);
  return t.record(std::move(out), {a}, [a, factor](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    tp.grad(a).vec() += g.vec() * factor;
  });
}

template <typename Scalar>
V<Scalar> add_scalar(Tape<Scalar>& t, V<Scalar> a, Scalar offset) {
  Tensor<Scalar> out(t.shape(a));
  out.vec() = t.value(a).vec().array() + offset;
  return t.record(std::move(out), {a}, [a](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    tp.grad(a).vec() += g.vec();
  });
}

template <typename Scalar>
V<Scalar> leaky_relu(Tape<Scalar>& t, V<Scalar> x, Scalar slope) {
  return unary(
      t, x, [slope](Scalar v) { return v > Scalar(0) ? v : slope * v; },
      [slope](Scalar v) { return v > Scalar(0) ? Scalar(1) : slope; });
}

template <typename Scalar>
V<Scalar> tanh(Tape<Scalar>& t, V<Scalar> x) {
  Tensor<Scalar> out(t.shape(x));
  out.vec() = t.value(x).vec().array().tanh();
  auto y = out;
  return t.record(std::move(out), {x}, [x, y](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    tp.grad(x).vec().array() += g.vec().array() * (Scalar(1) - y.vec().array().square());
  });
}

template <typename Scalar>
V<Scalar> reshape(Tape<Scalar>& t, V<Scalar> x, const Shape& shape) {
  Tensor<Scalar> out = t.value(x).reshaped(shape);
  return t.record(std::move(out), {x}, [x](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    tp.grad(x).vec() += g.vec();
  });
}

template <typename Scalar>
V<Scalar> linear(Tape<Scalar>& t, V<Scalar> x, V<Scalar> weight, V<Scalar> bias) {
  const Shape xs = t.shape(x);
  const Shape ws = t.shape(weight);
  const int in = static_cast<int>(xs.sample_size());
  if (ws.c != in || ws.h != 1 || ws.w != 1) {
    throw ShapeError("linear: input " + xs.str() + " incompatible with weight " + ws.str());
  }
  require_shape(t.shape(bias), Shape{1, ws.n, 1, 1}, "linear bias");
  using CMap = Eigen::Map<const Mat<Scalar>>;
  CMap W(t.value(weight).data(), ws.n, in);
  Tensor<Scalar> out(Shape{xs.n, ws.n, 1, 1});
  for (int n = 0; n < xs.n; ++n) {
    Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> xn(
        t.value(x).data() + static_cast<std::size_t>(n) * in, in);
    out.vec().segment(static_cast<Eigen::Index>(n) * ws.n, ws.n) = W * xn + t.value(bias).vec();
  }
  return t.record(std::move(out), {x, weight, bias},
                  [x, weight, bias, in](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
                    const Shape xs = tp.shape(x);
                    const int outf = tp.shape(weight).n;
                    CMap W(tp.value(weight).data(), outf, in);
                    for (int n = 0; n < xs.n; ++n) {
                      auto gn = g.vec().segment(static_cast<Eigen::Index>(n) * outf, outf);
                      Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> xn(
                          tp.value(x).data() + static_cast<std::size_t>(n) * in, in);
                      if (tp.requires_grad(x)) {
                        tp.grad(x).vec().segment(static_cast<Eigen::Index>(n) * in, in) +=
                            W.transpose() * gn;
                      }
                      if (tp.requires_grad(weight)) {
                        Eigen::Map<Mat<Scalar>> dW(tp.grad(weight).data(), outf, in);
                        dW.noalias() += gn * xn.transpose();
                      }
                      if (tp.requires_grad(bias)) tp.grad(bias).vec() += gn;
                    }
                  });
}

template <typename Scalar>
V<Scalar> conv2d(Tape<Scalar>& t, V<Scalar> x, V<Scalar> weight, V<Scalar> bias, int stride,
                 int pad) {
  const Shape xs = t.shape(x);
  const Shape ws = t.shape(weight);
  const ConvGeometry geo = geometry(xs, ws, stride, pad);
  require_shape(t.shape(bias), Shape{1, ws.n, 1, 1}, "conv2d bias");
  const bool pointwise = geo.k == 1 && stride == 1 && pad == 0;
  const Eigen::Index kdim = static_cast<Eigen::Index>(geo.in_c) * geo.k * geo.k;

  using CMap = Eigen::Map<const Mat<Scalar>>;
  CMap W(t.value(weight).data(), ws.n, kdim);
  Tensor<Scalar> out(Shape{xs.n, ws.n, geo.out_h, geo.out_w});
  Mat<Scalar> cols;
  for (int n = 0; n < xs.n; ++n) {
    auto on = out.sample(n);
    if (pointwise) {
      on.noalias() = W * t.value(x).sample(n);
    } else {
      im2col(t.value(x).data() + n * xs.sample_size(), geo, cols);
      on.noalias() = W * cols;
    }
    on.colwise() += t.value(bias).vec();
  }

  return t.record(
      std::move(out), {x, weight, bias},
      [x, weight, bias, geo, pointwise, kdim](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
        const Shape xs = tp.shape(x);
        const int cout = tp.shape(weight).n;
        CMap W(tp.value(weight).data(), cout, kdim);
        Mat<Scalar> cols;
        Mat<Scalar> dcols;
        for (int n = 0; n < xs.n; ++n) {
          auto gn = g.sample(n);
          if (tp.requires_grad(weight)) {
            Eigen::Map<Mat<Scalar>> dW(tp.grad(weight).data(), cout, kdim);
            if (pointwise) {
              dW.noalias() += gn * tp.value(x).sample(n).transpose();
            } else {
              im2col(tp.value(x).data() + n * xs.sample_size(), geo, cols);
              dW.noalias() += gn * cols.transpose();
            }
          }
          if (tp.requires_grad(bias)) tp.grad(bias).vec() += gn.rowwise().sum();
          if (tp.requires_grad(x)) {
            if (pointwise) {
              tp.grad(x).sample(n).noalias() += W.transpose() * gn;
            } else {
              dcols.noalias() = W.transpose() * gn;
              col2im(dcols, geo, tp.grad(x).data() + n * xs.sample_size());
            }
          }
        }
      });
}

template <typename Scalar>
V<Scalar> instance_norm(Tape<Scalar>& t, V<Scalar> x, Scalar eps) {
  const Shape xs = t.shape(x);
  const Scalar count = static_cast<Scalar>(xs.plane());
  Tensor<Scalar> out(xs);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std(static_cast<Eigen::Index>(xs.n) * xs.c);
  for (int n = 0; n < xs.n; ++n) {
    auto xn = t.value(x).sample(n);
    auto on = out.sample(n);
    for (int c = 0; c < xs.c; ++c) {
      const Scalar mean = xn.row(c).sum() / count;
      const Scalar var = (xn.row(c).array() - mean).square().sum() / count;
      const Scalar is = Scalar(1) / std::sqrt(var + eps);
      inv_std[n * xs.c + c] = is;
      on.row(c) = (xn.row(c).array() - mean) * is;
    }
  }
  auto y = out;
  return t.record(std::move(out), {x}, [x, y, inv_std, count](Tape<Scalar>& tp,
                                                              const Tensor<Scalar>& g) {
    const Shape xs = tp.shape(x);
    for (int n = 0; n < xs.n; ++n) {
      auto gn = g.sample(n);
      auto yn = y.sample(n);
      auto dx = tp.grad(x).sample(n);
      for (int c = 0; c < xs.c; ++c) {
        const Scalar mg = gn.row(c).sum() / count;
        const Scalar mgy = gn.row(c).cwiseProduct(yn.row(c)).sum() / count;
        dx.row(c).array() +=
            inv_std[n * xs.c + c] * (gn.row(c).array() - mg - yn.row(c).array() * mgy);
      }
    }
  });
}

template <typename Scalar>
V<Scalar> upsample_nearest2x(Tape<Scalar>& t, V<Scalar> x) {
  const Shape xs = t.shape(x);
  Tensor<Scalar> out(Shape{xs.n, xs.c, xs.h * 2, xs.w * 2});
  const Tensor<Scalar>& xv = t.value(x);
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c)
      for (int y = 0; y < xs.h * 2; ++y)
        for (int xx = 0; xx < xs.w * 2; ++xx) out(n, c, y, xx) = xv(n, c, y / 2, xx / 2);
  return t.record(std::move(out), {x}, [x](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    const Shape xs = tp.shape(x);
    auto& dx = tp.grad(x);
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < xs.c; ++c)
        for (int y = 0; y < xs.h * 2; ++y)
          for (int xx = 0; xx < xs.w * 2; ++xx) dx(n, c, y / 2, xx / 2) += g(n, c, y, xx);
  });
}

template <typename Scalar>
V<Scalar> avg_pool(Tape<Scalar>& t, V<Scalar> x, int factor) {
  const Shape xs = t.shape(x);
  if (factor < 1 || xs.h % factor != 0 || xs.w % factor != 0) {
    throw ShapeError("avg_pool: " + xs.str() + " not divisible by " + std::to_string(factor));
  }
  const Shape os{xs.n, xs.c, xs.h / factor, xs.w / factor};
  const Scalar inv = Scalar(1) / static_cast<Scalar>(factor * factor);
  Tensor<Scalar> out(os);
  const Tensor<Scalar>& xv = t.value(x);
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c)
      for (int y = 0; y < xs.h; ++y)
        for (int xx = 0; xx < xs.w; ++xx) out(n, c, y / factor, xx / factor) += xv(n, c, y, xx);
  out.vec() *= inv;
  return t.record(std::move(out), {x}, [x, factor, inv](Tape<Scalar>& tp,
                                                        const Tensor<Scalar>& g) {
    const Shape xs = tp.shape(x);
    auto& dx = tp.grad(x);
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < xs.c; ++c)
        for (int y = 0; y < xs.h; ++y)
          for (int xx = 0; xx < xs.w; ++xx)
            dx(n, c, y, xx) += inv * g(n, c, y / factor, xx / factor);
  });
}

template <typename Scalar>
V<Scalar> spatial_mean(Tape<Scalar>& t, V<Scalar> x) {
  const Shape xs = t.shape(x);
  const Scalar inv = Scalar(1) / static_cast<Scalar>(xs.plane());
  Tensor<Scalar> out(Shape{xs.n, xs.c, 1, 1});
  for (int n = 0; n < xs.n; ++n) {
    out.vec().segment(static_cast<Eigen::Index>(n) * xs.c, xs.c) =
        t.value(x).sample(n).rowwise().sum() * inv;
  }
  return t.record(std::move(out), {x}, [x, inv](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    const Shape xs = tp.shape(x);
    for (int n = 0; n < xs.n; ++n) {
      auto gn = g.vec().segment(static_cast<Eigen::Index>(n) * xs.c, xs.c);
      tp.grad(x).sample(n).colwise() += gn * inv;
    }
  });
}

template <typename Scalar>
V<Scalar> sum_all(Tape<Scalar>& t, V<Scalar> x) {
  Tensor<Scalar> out(Shape{1, 1, 1, 1}, t.value(x).vec().sum());
  return t.record(std::move(out), {x}, [x](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    tp.grad(x).vec().array() += g[0];
  });
}

template <typename Scalar>
V<Scalar> mean_all(Tape<Scalar>& t, V<Scalar> x) {
  return scale(t, sum_all(t, x), Scalar(1) / static_cast<Scalar>(t.value(x).size()));
}

template <typename Scalar>
V<Scalar> weighted_sum(Tape<Scalar>& t, V<Scalar> x,
                       const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& weights) {
  require_shape(t.shape(x), Shape{static_cast<int>(weights.size()), 1, 1, 1}, "weighted_sum");
  Tensor<Scalar> out(Shape{1, 1, 1, 1}, t.value(x).vec().dot(weights));
  return t.record(std::move(out), {x}, [x, weights](Tape<Scalar>& tp, const Tensor<Scalar>& g) {
    tp.grad(x).vec() += weights * g[0];
  });
}

#define THERMOSYNTH_INSTANTIATE_OPS(S)                                                   \
  template V<S> add(Tape<S>&, V<S>, V<S>);                                               \
  template V<S> sub(Tape<S>&, V<S>, V<S>);                                               \
  template V<S> mul(Tape<S>&, V<S>, V<S>);                                               \
  template V<S> scale(Tape<S>&, V<S>, S);                                                \
  template V<S> add_scalar(Tape<S>&, V<S>, S);                                           \
  template V<S> leaky_relu(Tape<S>&, V<S>, S);                                           \
  template V<S> tanh(Tape<S>&, V<S>);                                                    \
  template V<S> reshape(Tape<S>&, V<S>, const Shape&);                                   \
  template V<S> linear(Tape<S>&, V<S>, V<S>, V<S>);                                      \
  template V<S> conv2d(Tape<S>&, V<S>, V<S>, V<S>, int, int);                            \
  template V<S> instance_norm(Tape<S>&, V<S>, S);                                        \
  template V<S> upsample_nearest2x(Tape<S>&, V<S>);                                      \
  template V<S> avg_pool(Tape<S>&, V<S>, int);                                           \
  template V<S> spatial_mean(Tape<S>&, V<S>);                                            \
  template V<S> mean_all(Tape<S>&, V<S>);                                                \
  template V<S> sum_all(Tape<S>&, V<S>);                                                 \
  template V<S> weighted_sum(Tape<S>&, V<S>, const Eigen::Matrix<S, Eigen::Dynamic, 1>&);

THERMOSYNTH_INSTANTIATE_OPS(float)
THERMOSYNTH_INSTANTIATE_OPS(double)

}  // namespace thermosynth::ops
