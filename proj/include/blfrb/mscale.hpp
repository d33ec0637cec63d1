#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "blfrb/dataset.hpp"
#include "blfrb/errors.hpp"
#include "blfrb/losses.hpp"

namespace blfrb {

struct MScaleOptions {
  double rel_tol = 1e-10;  // on |mean rho / m - 1|
  int max_iter = 200;
};

namespace detail {

/// Weighted median of |values|; weights assumed nonnegative with positive sum.
inline double weighted_median_abs(const Vector& values, const Vector* weights) {
  const Index n = values.size();
  std::vector<std::pair<double, double>> a;
  a.reserve(static_cast<std::size_t>(n));
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double w = weights ? (*weights)[i] : 1.0;
    if (w <= 0.0) continue;
    a.emplace_back(std::abs(values[i]), w);
    total += w;
  }
  std::sort(a.begin(), a.end());
  double acc = 0.0;
  for (const auto& [v, w] : a) {
    acc += w;
    if (acc >= 0.5 * total) return v;
  }
  return a.empty() ? 0.0 : a.back().first;
}

}  // namespace detail

/// Weighted mean of rho0(r_i / s), normalized by the total weight.
inline double mean_rho(const Vector& residuals, const Vector* weights, const TukeyLoss& loss0,
                       double s) {
  double acc = 0.0, total = 0.0;
  const Index n = residuals.size();
  for (Index i = 0; i < n; ++i) {
    const double w = weights ? (*weights)[i] : 1.0;
    if (w <= 0.0) continue;
    acc += w * loss0.rho(residuals[i] / s);
    total += w;
  }
  return acc / total;
}

/// M-estimate of scale: the s > 0 solving  (1/W) sum w_i rho0(r_i/s) = m.
///
/// Solved by the fixed point s <- s sqrt(mean_rho(s)/m) with a bisection
/// fallback. Throws DegenerateScaleError when at least half the weight mass
/// sits on zero residuals (the equation then has no positive root), and
/// NonConvergenceError with the last iterate if the budget runs out.
inline double solve_mscale(const Vector& residuals, const TukeyLoss& loss0,
                           const MScaleConstant& m, const Vector* weights = nullptr,
                           const MScaleOptions& opt = {}) {
  const Index n = residuals.size();
  if (n == 0) throw ConfigError("solve_mscale: empty residual vector");

  double total = 0.0, zero_mass = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double w = weights ? (*weights)[i] : 1.0;
    if (w <= 0.0) continue;
    total += w;
    if (residuals[i] == 0.0) zero_mass += w;
  }
  if (total <= 0.0) throw ConfigError("solve_mscale: no positive weights");
  // sup_s mean rho = rho_max * (1 - zero fraction); solvable iff that exceeds m.
  if ((1.0 - zero_mass / total) * loss0.rho_max() <= m.value())
    throw DegenerateScaleError("solve_mscale: at least half the residual mass is zero");

  double s = detail::weighted_median_abs(residuals, weights) / 0.6745;
  if (s <= 0.0) {
    double acc = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double w = weights ? (*weights)[i] : 1.0;
      if (w > 0.0) acc += w * std::abs(residuals[i]);
    }
    s = acc / total / 0.8;
  }

  const double mv = m.value();
  for (int it = 0; it < opt.max_iter; ++it) {
    const double f = mean_rho(residuals, weights, loss0, s) / mv;
    if (std::abs(f - 1.0) <= opt.rel_tol) return s;
    s *= std::sqrt(f);
  }

  // Bisection fallback on g(s) = mean_rho(s) - m, which is decreasing in s.
  double lo = s, hi = s;
  int guard = 0;
  while (mean_rho(residuals, weights, loss0, lo) < mv && ++guard < 2000) lo *= 0.5;
  guard = 0;
  while (mean_rho(residuals, weights, loss0, hi) > mv && ++guard < 2000) hi *= 2.0;
  for (int it = 0; it < 400; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double f = mean_rho(residuals, weights, loss0, mid) / mv;
    if (std::abs(f - 1.0) <= opt.rel_tol || (hi - lo) <= opt.rel_tol * mid) return mid;
    (f > 1.0 ? lo : hi) = mid;
  }
  throw NonConvergenceError("solve_mscale: no convergence, last iterate s = " +
                            std::to_string(0.5 * (lo + hi)));
}

}  // namespace blfrb
