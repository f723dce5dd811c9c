#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dosgan {

/// Every recoverable failure in the library surfaces as this exception type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// Batch, channel, height, width.
struct Shape4 {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::int64_t size() const { return std::int64_t(n) * c * h * w; }
  int plane() const { return h * w; }
  std::int64_t image_size() const { return std::int64_t(c) * h * w; }
  friend bool operator==(const Shape4&, const Shape4&) = default;
};

inline std::string to_string(const Shape4& s) {
  return "[" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," +
         std::to_string(s.w) + "]";
}

/// Dense NCHW tensor. Image n is stored as a column-major [H*W, C] block, so
/// each channel plane is a contiguous column.
template <typename Scalar>
class Tensor {
 public:
  using MatrixMap = Eigen::Map<Matrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const Matrix<Scalar>>;

  Tensor() = default;
  explicit Tensor(Shape4 shape) : shape_(shape), data_(Vector<Scalar>::Zero(shape.size())) {}
  Tensor(Shape4 shape, Scalar fill) : shape_(shape), data_(Vector<Scalar>::Constant(shape.size(), fill)) {}

  const Shape4& shape() const { return shape_; }
  int batch() const { return shape_.n; }
  std::int64_t size() const { return shape_.size(); }

  Vector<Scalar>& data() { return data_; }
  const Vector<Scalar>& data() const { return data_; }
  Scalar* ptr() { return data_.data(); }
  const Scalar* ptr() const { return data_.data(); }

  Scalar* image_ptr(int n) { return data_.data() + n * shape_.image_size(); }
  const Scalar* image_ptr(int n) const { return data_.data() + n * shape_.image_size(); }

  MatrixMap image(int n) { return MatrixMap(image_ptr(n), shape_.plane(), shape_.c); }
  ConstMatrixMap image(int n) const { return ConstMatrixMap(image_ptr(n), shape_.plane(), shape_.c); }

  Scalar& operator()(int n, int c, int y, int x) {
    return data_[((std::int64_t(n) * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }
  Scalar operator()(int n, int c, int y, int x) const {
    return data_[((std::int64_t(n) * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(shape_);
    out.data() = data_.template cast<Other>();
    return out;
  }

  /// Images [first, first + count) as a new tensor.
  Tensor slice(int first, int count) const {
    if (first < 0 || count < 0 || first + count > shape_.n) throw Error("tensor slice out of range");
    Shape4 s = shape_;
    s.n = count;
    Tensor out(s);
    out.data() = data_.segment(first * shape_.image_size(), s.size());
    return out;
  }

  bool all_finite() const { return data_.allFinite(); }

 private:
  Shape4 shape_;
  Vector<Scalar> data_;
};

/// Stacks tensors with equal per-image shape along the batch axis.
template <typename Scalar>
Tensor<Scalar> concat_batch(const std::vector<const Tensor<Scalar>*>& parts) {
  if (parts.empty()) throw Error("concat_batch of nothing");
  Shape4 s = parts.front()->shape();
  s.n = 0;
  for (const auto* p : parts) {
    const Shape4& ps = p->shape();
    if (ps.c != s.c || ps.h != s.h || ps.w != s.w) throw Error("concat_batch shape mismatch");
    s.n += ps.n;
  }
  Tensor<Scalar> out(s);
  std::int64_t offset = 0;
  for (const auto* p : parts) {
    out.data().segment(offset, p->size()) = p->data();
    offset += p->size();
  }
  return out;
}

/// Row-gather of a per-sample matrix (row i of the result is rows[index[i]]).
template <typename Scalar>
Matrix<Scalar> gather_rows(const Matrix<Scalar>& rows, const std::vector<int>& index) {
  Matrix<Scalar> out(static_cast<Eigen::Index>(index.size()), rows.cols());
  for (std::size_t i = 0; i < index.size(); ++i) out.row(Eigen::Index(i)) = rows.row(index[i]);
  return out;
}

}  // namespace dosgan
