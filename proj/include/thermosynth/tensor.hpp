#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace thermosynth {

/// NCHW extent of a dense tensor. Vectors use (n, features, 1, 1).
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  [[nodiscard]] std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  [[nodiscard]] std::size_t sample_size() const {
    return static_cast<std::size_t>(c) * h * w;
  }
  [[nodiscard]] int plane() const { return h * w; }
  friend bool operator==(const Shape&, const Shape&) = default;

  [[nodiscard]] std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) +
           "," + std::to_string(w) + ")";
  }
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void require_shape(const Shape& got, const Shape& want, const char* what) {
  if (!(got == want)) {
    throw ShapeError(std::string(what) + ": expected " + want.str() + ", got " + got.str());
  }
}

/// Dense contiguous NCHW tensor backed by an Eigen vector.
template <typename Scalar>
class Tensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using SampleMap = Eigen::Map<RowMatrix>;
  using ConstSampleMap = Eigen::Map<const RowMatrix>;

  Tensor() = default;
  explicit Tensor(const Shape& shape) : shape_(shape), data_(Vector::Zero(shape.size())) {}
  Tensor(const Shape& shape, Scalar fill)
      : shape_(shape), data_(Vector::Constant(shape.size(), fill)) {}
  Tensor(const Shape& shape, Vector data) : shape_(shape), data_(std::move(data)) {
    if (static_cast<std::size_t>(data_.size()) != shape_.size()) {
      throw ShapeError("tensor data length does not match shape " + shape_.str());
    }
  }

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] std::size_t size() const { return shape_.size(); }
  [[nodiscard]] bool empty() const { return data_.size() == 0; }

  Vector& vec() { return data_; }
  [[nodiscard]] const Vector& vec() const { return data_; }
  Scalar* data() { return data_.data(); }
  [[nodiscard]] const Scalar* data() const { return data_.data(); }

  Scalar& operator()(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
  Scalar operator()(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }
  Scalar& operator[](std::size_t i) { return data_[static_cast<Eigen::Index>(i)]; }
  Scalar operator[](std::size_t i) const { return data_[static_cast<Eigen::Index>(i)]; }

  /// Sample `n` viewed as a (channels x pixels) row-major matrix.
  SampleMap sample(int n) {
    return SampleMap(data_.data() + n * shape_.sample_size(), shape_.c, shape_.plane());
  }
  [[nodiscard]] ConstSampleMap sample(int n) const {
    return ConstSampleMap(data_.data() + n * shape_.sample_size(), shape_.c, shape_.plane());
  }

  /// Copy of samples [first, first + count).
  [[nodiscard]] Tensor slice(int first, int count) const {
    Shape s = shape_;
    s.n = count;
    Tensor out(s);
    out.data_ = data_.segment(first * shape_.sample_size(), s.size());
    return out;
  }

  [[nodiscard]] Tensor reshaped(const Shape& s) const {
    if (s.size() != shape_.size()) {
      throw ShapeError("cannot reshape " + shape_.str() + " to " + s.str());
    }
    return Tensor(s, data_);
  }

  template <typename Other>
  [[nodiscard]] Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  void set_zero() { data_.setZero(); }

 private:
  [[nodiscard]] Eigen::Index index(int n, int c, int h, int w) const {
    return ((static_cast<Eigen::Index>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }

  Shape shape_{0, 0, 0, 0};
  Vector data_;
};

/// Concatenate along the batch axis; all inputs share (c, h, w).
template <typename Scalar>
Tensor<Scalar> concat_batch(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.empty()) return b;
  Shape s = a.shape();
  Shape sb = b.shape();
  sb.n = s.n;
  require_shape(sb, s, "concat_batch");
  s.n = a.shape().n + b.shape().n;
  typename Tensor<Scalar>::Vector v(s.size());
  v << a.vec(), b.vec();
  return Tensor<Scalar>(s, std::move(v));
}

template <typename Scalar>
Tensor<Scalar> concat_batch(const std::vector<Tensor<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("concat_batch: no tensors");
  Shape s = parts.front().shape();
  int n = 0;
  for (const auto& p : parts) {
    Shape ps = p.shape();
    ps.n = s.n;
    require_shape(ps, s, "concat_batch");
    n += p.shape().n;
  }
  const auto per = static_cast<Eigen::Index>(s.sample_size());
  s.n = n;
  typename Tensor<Scalar>::Vector v(s.size());
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    v.segment(offset, p.shape().n * per) = p.vec();
    offset += p.shape().n * per;
  }
  return Tensor<Scalar>(s, std::move(v));
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace thermosynth
