#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fmtk/error.hpp"
#include "fmtk/memory.hpp"

namespace fmtk {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape);

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense row-major tensor. Storage is counted by AllocationTracker. Rank-0
// tensors hold exactly one element and serve as scalars.
template <typename Scalar>
class BasicTensor {
 public:
  using value_type = Scalar;
  using Storage = std::vector<Scalar, TrackingAllocator<Scalar>>;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  BasicTensor() : data_(1, Scalar(0)) {}

  explicit BasicTensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)), data_(numel(shape_), fill) {}

  BasicTensor(Shape shape, std::initializer_list<Scalar> values)
      : BasicTensor(std::move(shape), std::span<const Scalar>(values.begin(), values.size())) {}

  BasicTensor(Shape shape, std::span<const Scalar> values) : shape_(std::move(shape)) {
    if (numel(shape_) != values.size()) {
      throw ShapeError("tensor of shape " + to_string(shape_) + " needs " +
                       std::to_string(numel(shape_)) + " values, got " +
                       std::to_string(values.size()));
    }
    data_.assign(values.begin(), values.end());
  }

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }
  static BasicTensor scalar(Scalar v) {
    BasicTensor t;
    t.data_[0] = v;
    return t;
  }
  static BasicTensor from_matrix(const RowMatrix<Scalar>& m) {
    BasicTensor t(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
    t.matrix() = m;
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t bytes() const noexcept { return data_.size() * sizeof(Scalar); }

  // Matrix view: the last axis is the column axis, everything before it is
  // folded into rows.
  std::size_t cols() const noexcept { return shape_.empty() ? 1 : shape_.back(); }
  std::size_t rows() const noexcept { return cols() == 0 ? 0 : data_.size() / cols(); }

  Scalar* data() noexcept { return data_.data(); }
  const Scalar* data() const noexcept { return data_.data(); }
  std::span<Scalar> values() noexcept { return data_; }
  std::span<const Scalar> values() const noexcept { return data_; }

  Scalar& operator[](std::size_t i) noexcept { return data_[i]; }
  const Scalar& operator[](std::size_t i) const noexcept { return data_[i]; }

  template <typename... Index>
  Scalar& operator()(Index... idx) {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }
  template <typename... Index>
  const Scalar& operator()(Index... idx) const {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }

  Scalar item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
    return data_[0];
  }

  MatrixMap matrix() noexcept {
    return MatrixMap(data_.data(), static_cast<Eigen::Index>(rows()),
                     static_cast<Eigen::Index>(cols()));
  }
  ConstMatrixMap matrix() const noexcept {
    return ConstMatrixMap(data_.data(), static_cast<Eigen::Index>(rows()),
                          static_cast<Eigen::Index>(cols()));
  }
  // All elements as one row vector, for row-broadcast arithmetic.
  auto row_vector() noexcept {
    return Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(
        data_.data(), static_cast<Eigen::Index>(data_.size()));
  }
  auto row_vector() const noexcept {
    return Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(
        data_.data(), static_cast<Eigen::Index>(data_.size()));
  }
  auto array() noexcept {
    return Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>(
        data_.data(), static_cast<Eigen::Index>(data_.size()));
  }
  auto array() const noexcept {
    return Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(
        data_.data(), static_cast<Eigen::Index>(data_.size()));
  }

  BasicTensor reshaped(Shape shape) const {
    if (numel(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    BasicTensor out(*this);
    out.shape_ = std::move(shape);
    return out;
  }

  void reshape_in_place(Shape shape) {
    if (numel(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    shape_ = std::move(shape);
  }

  template <typename To>
  BasicTensor<To> cast() const {
    BasicTensor<To> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(),
                   [](Scalar v) { return static_cast<To>(v); });
    return out;
  }

  bool all_finite() const noexcept { return array().isFinite().all(); }

  void fill(Scalar v) noexcept { std::fill(data_.begin(), data_.end(), v); }

 private:
  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size()) {
      throw ShapeError("index rank " + std::to_string(idx.size()) + " on tensor of shape " +
                       to_string(shape_));
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) {
      flat = flat * shape_[axis] + i;
      ++axis;
    }
    return flat;
  }

  Shape shape_;
  Storage data_;
};

using Tensor = BasicTensor<double>;
using TensorF = BasicTensor<float>;

// Same shape and identical bytes (distinguishes -0.0 from 0.0 and NaN payloads).
template <typename Scalar>
bool bitwise_equal(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(Scalar)) == 0;
}

template <typename Scalar>
Scalar max_abs_diff(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  if (a.size() == 0) return Scalar(0);
  return (a.array() - b.array()).abs().maxCoeff();
}

}  // namespace fmtk
