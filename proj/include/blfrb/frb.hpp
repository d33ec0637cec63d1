#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>

#include "blfrb/dataset.hpp"
#include "blfrb/errors.hpp"
#include "blfrb/losses.hpp"
#include "blfrb/robust_fit.hpp"
#include "blfrb/wls.hpp"

namespace blfrb {

/// One-step replica of the joint (theta, sigma) estimate under multiplicity
/// weights: theta from the reweighted normal equations at the initial fit,
/// sigma from the rescaled rho0 sum at the fixed S-stage residuals.
struct OneStep {
  Vector theta_1;
  double sigma_1 = 0.0;
};

enum class CorrectionMode {
  kJoint,      // correct (theta, sigma) jointly through the (p+1)-square map
  kThetaOnly,  // correct theta alone; sigma replicas pass through uncorrected
  kIdentity    // no correction (diagnostic)
};

struct CorrectionOptions {
  CorrectionMode mode = CorrectionMode::kJoint;
  double condition_cap = 1e8;
};

/// [I - grad Q]^{-1} over the joint (theta, sigma) parameter, evaluated at a
/// bag's initial fit with unit multiplicities.
struct CorrectionOperator {
  Matrix matrix;  // (p+1) x (p+1)
  double condition_estimate = 0.0;
  CorrectionMode mode = CorrectionMode::kJoint;
};

struct FRBReplica {
  Vector theta_star;
  double sigma_star = 0.0;
  std::uint64_t weight_seed = 0;  // reproducibility token for the count draw
};

/// Evaluate the weighted one-step map at an arbitrary point (theta, sigma).
/// theta_s supplies the fixed residuals of the scale component. Returns
/// nullopt when the reweighted Gram matrix is singular (replica skipped).
inline std::optional<OneStep> one_step_map(const Dataset& data, const Vector& weights,
                                           const Vector& theta, double sigma,
                                           const Vector& theta_s, const FitConfig& cfg = {}) {
  const Index n = data.n();
  const TukeyLoss loss0 = cfg.loss0(), loss1 = cfg.loss1();
  const double m = cfg.m().value();
  const double W = weights.sum();

  Vector w(n);
  const Vector r = data.y - data.Z * theta;
  for (Index i = 0; i < n; ++i) w[i] = weights[i] * loss1.weight(r[i] / sigma);
  auto theta_1 = try_solve_wls(data.Z, data.y, w);
  if (!theta_1) return std::nullopt;

  const Vector rs = data.y - data.Z * theta_s;
  double acc = 0.0;
  for (Index i = 0; i < n; ++i) acc += weights[i] * loss0.rho(rs[i] / sigma);
  return OneStep{std::move(*theta_1), sigma * acc / (W * m)};
}

/// One-step replica under bootstrap counts, evaluated at the bag's fit.
inline std::optional<OneStep> one_step(const RobustFit& fit, const Dataset& bag_data,
                                       const Vector& counts, const FitConfig& cfg = {}) {
  return one_step_map(bag_data, counts, fit.theta_mm, fit.sigma, fit.theta_s, cfg);
}

/// Analytic Jacobian of the one-step map with respect to (theta, sigma).
///
/// Writing u_i = r_i/sigma and W1 = psi1(u)/u, the theta component is
/// theta_new = A^{-1} c with A = sum w W1(u) z z'. Differentiating through the
/// residual arguments at an arbitrary point gives
///   d theta_new / d theta = I - A^{-1} B + A^{-1} (grad-of-c residual terms),
/// which at a stationary point collapses to I - A^{-1} B with
/// B = sum w psi1'(u) z z'. The sigma component depends on sigma alone.
/// The stationary form below is exact where the operator is used (the bag's
/// converged fit); finite-difference checks in the test suite validate it.
inline Matrix one_step_jacobian(const Dataset& data, const Vector& weights, const Vector& theta,
                                double sigma, const Vector& theta_s, const FitConfig& cfg = {}) {
  const Index n = data.n(), p = data.p();
  const TukeyLoss loss0 = cfg.loss0(), loss1 = cfg.loss1();
  const double m = cfg.m().value();
  const double W = weights.sum();

  const Vector r = data.y - data.Z * theta;
  Matrix A = Matrix::Zero(p, p);
  Matrix B = Matrix::Zero(p, p);
  Vector k = Vector::Zero(p);
  for (Index i = 0; i < n; ++i) {
    const double u = r[i] / sigma;
    const double w1 = loss1.weight(u);
    const double dps = loss1.psi_prime(u);
    const auto z = data.Z.row(i).transpose();
    A.selfadjointView<Eigen::Lower>().rankUpdate(z, weights[i] * w1);
    B.selfadjointView<Eigen::Lower>().rankUpdate(z, weights[i] * dps);
    k += weights[i] * (dps * u - loss1.psi(u)) * z;
  }
  const Matrix As = A.selfadjointView<Eigen::Lower>();
  const Matrix Bs = B.selfadjointView<Eigen::Lower>();

  Eigen::LDLT<Matrix> ldlt(As);
  if (ldlt.info() != Eigen::Success)
    throw SingularDesignError("one_step_jacobian: weight matrix A singular");

  Matrix J = Matrix::Zero(p + 1, p + 1);
  J.topLeftCorner(p, p) = Matrix::Identity(p, p) - ldlt.solve(Bs);
  J.topRightCorner(p, 1) = -ldlt.solve(k);

  const Vector rs = data.y - data.Z * theta_s;
  double acc = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double v = rs[i] / sigma;
    acc += weights[i] * (loss0.rho(v) - loss0.psi(v) * v);
  }
  J(p, p) = acc / (W * m);
  return J;
}

/// Build [I - J]^{-1} at the bag's fit (unit multiplicities). Throws
/// CorrectionConditionError past the condition cap: the linear correction is
/// numerically meaningless there and the bag must be dropped.
inline CorrectionOperator correction_operator(const RobustFit& fit, const Dataset& bag_data,
                                              const FitConfig& cfg = {},
                                              const CorrectionOptions& opt = {}) {
  const Index p = bag_data.p();
  CorrectionOperator corr;
  corr.mode = opt.mode;
  if (opt.mode == CorrectionMode::kIdentity) {
    corr.matrix = Matrix::Identity(p + 1, p + 1);
    corr.condition_estimate = 1.0;
    return corr;
  }

  const Vector ones = unit_weights(bag_data.n());
  Matrix J = one_step_jacobian(bag_data, ones, fit.theta_mm, fit.sigma, fit.theta_s, cfg);
  if (opt.mode == CorrectionMode::kThetaOnly) {
    J.topRightCorner(p, 1).setZero();
    J(p, p) = 0.0;
  }
  const Matrix ImJ = Matrix::Identity(p + 1, p + 1) - J;
  Eigen::PartialPivLU<Matrix> lu(ImJ);
  const double rcond = lu.rcond();
  corr.condition_estimate = rcond > 0.0 ? 1.0 / rcond : std::numeric_limits<double>::infinity();
  if (!(corr.condition_estimate < opt.condition_cap))
    throw CorrectionConditionError("correction_operator: cond(I - J) estimate " +
                                   std::to_string(corr.condition_estimate) + " exceeds cap");
  corr.matrix = lu.inverse();
  if (!corr.matrix.allFinite())
    throw CorrectionConditionError("correction_operator: non-finite correction matrix");
  return corr;
}

/// Closed-form FRB replica: initial fit plus the corrected one-step increment.
inline FRBReplica frb_replica(const RobustFit& fit, const OneStep& step,
                              const CorrectionOperator& corr, std::uint64_t weight_seed = 0) {
  const Index p = fit.theta_mm.size();
  Vector d(p + 1);
  d.head(p) = step.theta_1 - fit.theta_mm;
  d[p] = step.sigma_1 - fit.sigma;
  const Vector corrected = corr.matrix * d;
  FRBReplica rep;
  rep.theta_star = fit.theta_mm + corrected.head(p);
  rep.sigma_star = fit.sigma + corrected[p];
  rep.weight_seed = weight_seed;
  return rep;
}

}  // namespace blfrb
