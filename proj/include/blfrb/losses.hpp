#pragma once

#include <cmath>
#include <stdexcept>

namespace blfrb {

/// Tukey's biweight (bisquare) loss family.
///
///   rho(u)  = u^2/2 - u^4/(2 c^2) + u^6/(6 c^4)   for |u| <= c,  c^2/6 beyond
///   psi(u)  = rho'(u) = u (1 - u^2/c^2)^2          for |u| <= c,  0 beyond
///   weight(u) = psi(u)/u = (1 - u^2/c^2)^2, with weight(0) = 1
///
/// rho is symmetric, bounded and twice continuously differentiable, including
/// at |u| = c. The inverse powers of c are precomputed: these evaluations sit
/// in the innermost loops of scale solving, IRLS and replica generation.
class TukeyLoss {
 public:
  explicit TukeyLoss(double c) : c_(c), inv_c2_(1.0 / (c * c)) {
    if (!(c > 0.0)) throw std::invalid_argument("TukeyLoss: tuning constant must be positive");
  }

  double c() const { return c_; }

  /// Supremum of rho, reached at |u| >= c.
  double rho_max() const { return c_ * c_ / 6.0; }

  double rho(double u) const {
    const double a = u * u;
    const double t = a * inv_c2_;
    if (t >= 1.0) return rho_max();
    return 0.5 * a * (1.0 - t + t * t / 3.0);
  }

  double psi(double u) const {
    const double t = u * u * inv_c2_;
    if (t >= 1.0) return 0.0;
    const double s = 1.0 - t;
    return u * s * s;
  }

  /// psi(u)/u with the removable singularity at u = 0 filled by the limit 1.
  double weight(double u) const {
    const double t = u * u * inv_c2_;
    if (t >= 1.0) return 0.0;
    const double s = 1.0 - t;
    return s * s;
  }

  double psi_prime(double u) const {
    const double t = u * u * inv_c2_;
    if (t >= 1.0) return 0.0;
    return (1.0 - t) * (1.0 - 5.0 * t);
  }

 private:
  double c_;
  double inv_c2_;
};

/// Target constant of the M-scale equation, m = rho0(inf)/2 = c0^2/12.
/// Fixing m at half the supremum of rho0 puts the S-stage breakdown point at 50%.
class MScaleConstant {
 public:
  explicit MScaleConstant(const TukeyLoss& loss0) : m_(loss0.rho_max() / 2.0) {}
  explicit MScaleConstant(double m) : m_(m) {
    if (!(m > 0.0)) throw std::invalid_argument("MScaleConstant: m must be positive");
  }
  double value() const { return m_; }

 private:
  double m_;
};

// 50% breakdown point / 95% Gaussian efficiency tunings for the S and MM stages.
inline constexpr double kTukeyC0 = 1.547;
inline constexpr double kTukeyC1 = 4.685;
// Asymptotic Gaussian efficiency of the MM stage under kTukeyC1.
inline constexpr double kMmEfficiency = 0.95;

}  // namespace blfrb
