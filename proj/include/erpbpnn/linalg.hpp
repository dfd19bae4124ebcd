#pragma once

#include <Eigen/Core>

#include <cmath>
#include <optional>
#include <string>

#include "erpbpnn/error.hpp"

namespace erpbpnn {

using Index = Eigen::Index;

template <typename Scalar>
using MatT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using VecT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Mat = MatT<double>;
using Vec = VecT<double>;

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.derived().array().isFinite().all();
}

/// Dense matrix-vector product with an explicit shape check.
template <typename DerivedM, typename DerivedV>
VecT<typename DerivedM::Scalar> matvec(const Eigen::MatrixBase<DerivedM>& m,
                                       const Eigen::MatrixBase<DerivedV>& v) {
  if (m.cols() != v.size()) {
    throw ConfigError("matvec: matrix has " + std::to_string(m.cols()) +
                      " columns but vector has length " + std::to_string(v.size()));
  }
  return m * v;
}

template <typename Derived>
VecT<typename Derived::Scalar> tanh_vec(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  return v.unaryExpr([](Scalar x) { return std::tanh(x); });
}

/// Closed-form least-squares slope of ys against xs.
///
/// Returns nullopt when the slope is undefined: fewer than two points,
/// mismatched lengths, or all xs equal.
template <typename DerivedX, typename DerivedY>
std::optional<typename DerivedX::Scalar> lsq_slope(const Eigen::MatrixBase<DerivedX>& xs,
                                                   const Eigen::MatrixBase<DerivedY>& ys) {
  using Scalar = typename DerivedX::Scalar;
  const Index n = xs.size();
  if (n < 2 || ys.size() != n) return std::nullopt;
  // Centered form of (n Sxy - Sx Sy) / (n Sxx - Sx^2); x is an iteration
  // index that grows into the thousands, where the raw sums cancel badly.
  const auto dx = (xs.array() - xs.mean()).eval();
  const auto dy = (ys.array() - ys.mean()).eval();
  const Scalar denom = dx.square().sum();
  if (denom == Scalar(0)) return std::nullopt;
  return (dx * dy).sum() / denom;
}

}  // namespace erpbpnn
