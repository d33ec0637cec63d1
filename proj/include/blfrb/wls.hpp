#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>

#include "blfrb/dataset.hpp"
#include "blfrb/errors.hpp"

namespace blfrb {

/// Relative pivot threshold below which a weighted Gram matrix is treated as
/// singular.
inline constexpr double kGramRcondFloor = 1e-13;

/// Weighted least squares through the normal equations:
///   theta = (Z' diag(w) Z)^{-1} Z' diag(w) y.
/// Returns nullopt when the weighted Gram matrix is numerically singular.
inline std::optional<Vector> try_solve_wls(const Matrix& Z, const Vector& y, const Vector& w) {
  const Index p = Z.cols();
  Matrix G = Matrix::Zero(p, p);
  Vector c = Vector::Zero(p);
  // Accumulate the lower triangle row by row; selfadjointView fills the rest.
  G.selfadjointView<Eigen::Lower>().rankUpdate(Z.transpose() * w.cwiseSqrt().asDiagonal(), 1.0);
  c.noalias() = Z.transpose() * (w.cwiseProduct(y));
  Matrix Gs = G.selfadjointView<Eigen::Lower>();

  Eigen::LDLT<Matrix> ldlt(Gs);
  if (ldlt.info() != Eigen::Success) return std::nullopt;
  const Vector d = ldlt.vectorD();
  const double dmax = d.cwiseAbs().maxCoeff();
  if (!(dmax > 0.0) || d.cwiseAbs().minCoeff() < kGramRcondFloor * dmax) return std::nullopt;
  if (!ldlt.isPositive()) return std::nullopt;
  Vector theta = ldlt.solve(c);
  if (!theta.allFinite()) return std::nullopt;
  return theta;
}

/// As try_solve_wls but throwing on singular designs.
inline Vector solve_wls(const Matrix& Z, const Vector& y, const Vector& w) {
  auto theta = try_solve_wls(Z, y, w);
  if (!theta) throw SingularDesignError("weighted Gram matrix is singular");
  return *theta;
}

}  // namespace blfrb
