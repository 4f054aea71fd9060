#pragma once

#include <cmath>
#include <numbers>

#include "fmtk/tensor.hpp"

// Forward kernels shared by the differentiable ops and the closed-form
// solvers. Templated on the scalar so checkpoint tooling can run them at
// 32-bit; training always uses double.
namespace fmtk::kernels {

template <typename Scalar>
BasicTensor<Scalar> matmul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  BasicTensor<Scalar> out(Shape{a.dim(0), b.dim(1)});
  out.matrix().noalias() = a.matrix() * b.matrix();
  return out;
}

// y = x Wᵀ + bias over the last axis of x; W is [out, in].
template <typename Scalar>
BasicTensor<Scalar> linear(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& weight,
                           const BasicTensor<Scalar>* bias) {
  if (weight.rank() != 2 || x.cols() != weight.dim(1)) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " vs weight " +
                     to_string(weight.shape()));
  }
  Shape shape = x.shape();
  shape.back() = weight.dim(0);
  BasicTensor<Scalar> out(std::move(shape));
  out.matrix().noalias() = x.matrix() * weight.matrix().transpose();
  if (bias) {
    if (bias->size() != weight.dim(0)) {
      throw ShapeError("linear: bias " + to_string(bias->shape()) + " vs weight " +
                       to_string(weight.shape()));
    }
    out.matrix().rowwise() += bias->row_vector();
  }
  return out;
}

// Max-subtracted softmax over the last axis.
template <typename Scalar>
BasicTensor<Scalar> softmax_rows(const BasicTensor<Scalar>& x) {
  BasicTensor<Scalar> out(x.shape());
  auto in = x.matrix();
  auto y = out.matrix();
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    const Scalar m = in.row(r).maxCoeff();
    y.row(r) = (in.row(r).array() - m).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  return out;
}

template <typename Scalar>
struct LayerNormResult {
  BasicTensor<Scalar> out;
  BasicTensor<Scalar> normalized;  // pre-affine
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std;
};

template <typename Scalar>
LayerNormResult<Scalar> layernorm_rows(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& gain,
                                       const BasicTensor<Scalar>& shift, Scalar eps) {
  const auto width = static_cast<Eigen::Index>(x.cols());
  if (gain.size() != x.cols() || shift.size() != x.cols()) {
    throw ShapeError("layernorm: input " + to_string(x.shape()) + " vs gain " +
                     to_string(gain.shape()) + " / shift " + to_string(shift.shape()));
  }
  LayerNormResult<Scalar> r{BasicTensor<Scalar>(x.shape()), BasicTensor<Scalar>(x.shape()), {}};
  r.inv_std.resize(static_cast<Eigen::Index>(x.rows()));
  auto in = x.matrix();
  auto xhat = r.normalized.matrix();
  auto y = r.out.matrix();
  const auto g = gain.row_vector();
  const auto s = shift.row_vector();
  for (Eigen::Index row = 0; row < in.rows(); ++row) {
    const Scalar mean = in.row(row).mean();
    const auto centered = (in.row(row).array() - mean).matrix();
    const Scalar var = centered.squaredNorm() / static_cast<Scalar>(width);
    const Scalar inv = Scalar(1) / std::sqrt(var + eps);
    r.inv_std(row) = inv;
    xhat.row(row) = centered * inv;
    y.row(row) = (xhat.row(row).array() * g.array() + s.array()).matrix();
  }
  return r;
}

template <typename Scalar>
Scalar gelu(Scalar v) {
  return Scalar(0.5) * v * (Scalar(1) + std::erf(v / std::numbers::sqrt2_v<Scalar>));
}

template <typename Scalar>
Scalar gelu_derivative(Scalar v) {
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(v / std::numbers::sqrt2_v<Scalar>));
  const Scalar pdf = std::exp(Scalar(-0.5) * v * v) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
  return cdf + v * pdf;
}

// Means of consecutive row blocks: [G * group, cols] -> [G, cols].
template <typename Scalar>
BasicTensor<Scalar> mean_row_groups(const BasicTensor<Scalar>& x, std::size_t group) {
  if (group == 0 || x.rows() % group != 0) {
    throw ShapeError("mean_row_groups: " + std::to_string(x.rows()) + " rows not divisible by " +
                     std::to_string(group));
  }
  const std::size_t groups = x.rows() / group;
  BasicTensor<Scalar> out(Shape{groups, x.cols()});
  auto in = x.matrix();
  auto y = out.matrix();
  const Scalar inv = Scalar(1) / static_cast<Scalar>(group);
  for (std::size_t g = 0; g < groups; ++g) {
    y.row(static_cast<Eigen::Index>(g)) =
        in.middleRows(static_cast<Eigen::Index>(g * group), static_cast<Eigen::Index>(group))
            .colwise()
            .sum() *
        inv;
  }
  return out;
}

}  // namespace fmtk::kernels
