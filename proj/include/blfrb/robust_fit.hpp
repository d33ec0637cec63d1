#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <unordered_set>
#include <vector>

#include "blfrb/dataset.hpp"
#include "blfrb/errors.hpp"
#include "blfrb/losses.hpp"
#include "blfrb/mscale.hpp"
#include "blfrb/rng.hpp"
#include "blfrb/wls.hpp"

namespace blfrb {

/// Estimator tunings shared by the S stage, the MM stage and the replica
/// machinery. Multiplicity weights are nonnegative reals so the same solvers
/// serve plain fits (all-ones) and bootstrap-weighted ones (multinomial
/// counts).
struct FitConfig {
  double c0 = kTukeyC0;  // S stage / scale tuning (50% breakdown)
  double c1 = kTukeyC1;  // MM stage tuning (95% efficiency)

  // FastS-style search over random p-point elemental candidates.
  int s_candidates = 500;
  int s_refine_steps = 2;  // improvement steps per candidate during the search
  int s_best = 5;          // candidates kept for full refinement
  int s_max_refine_iter = 300;
  double s_rel_tol = 1e-10;
  int candidate_redraw_factor = 50;  // redraw budget = factor * s_candidates

  MScaleOptions mscale;

  double irls_rel_tol = 1e-11;
  int irls_max_iter = 300;

  // Exact-fit floor: sigma is clamped at this multiple of the response scale.
  double zero_scale_floor = 1e-12;

  std::uint64_t seed = 1;

  TukeyLoss loss0() const { return TukeyLoss(c0); }
  TukeyLoss loss1() const { return TukeyLoss(c1); }
  MScaleConstant m() const { return MScaleConstant(TukeyLoss(c0)); }
};

/// Joint MM solution: regression estimate at fixed robust scale, plus the
/// S-stage estimate the scale came from.
struct RobustFit {
  Vector theta_mm;
  Vector theta_s;
  double sigma = 0.0;
  int s_iterations = 0;
  int irls_iterations = 0;
  bool converged = false;
  bool exact_fit = false;
  double score_residual_norm = 0.0;
  std::vector<double> irls_objective;  // per-iteration (1/W) sum w rho1(r/sigma)
};

struct SFit {
  Vector theta_s;
  double sigma = 0.0;
  int iterations = 0;
  bool exact_fit = false;
};

inline Vector unit_weights(Index n) { return Vector::Ones(n); }

namespace detail {

inline std::vector<Index> active_rows(const Vector& weights) {
  std::vector<Index> idx;
  idx.reserve(static_cast<std::size_t>(weights.size()));
  for (Index i = 0; i < weights.size(); ++i)
    if (weights[i] > 0.0) idx.push_back(i);
  return idx;
}

/// Floyd's algorithm: p distinct values from {0, ..., m-1}.
inline std::vector<Index> sample_distinct(Rng& rng, Index m, Index p) {
  std::unordered_set<Index> chosen;
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(p));
  for (Index j = m - p; j < m; ++j) {
    const Index t = static_cast<Index>(rng.next_below(static_cast<std::uint64_t>(j) + 1));
    if (chosen.insert(t).second) {
      out.push_back(t);
    } else {
      chosen.insert(j);
      out.push_back(j);
    }
  }
  return out;
}

inline double response_scale(const Dataset& data, const std::vector<Index>& active) {
  double s = 0.0;
  for (Index i : active) s = std::max(s, std::abs(data.y[i]));
  return s > 0.0 ? s : 1.0;
}

}  // namespace detail

/// Weighted least squares fit (the original BLB primitive).
inline Vector fit_ls(const Dataset& data, const Vector& weights) {
  data.validate();
  if (weights.size() != data.n()) throw ConfigError("fit_ls: weight length mismatch");
  return solve_wls(data.Z, data.y, weights);
}

/// Weighted S-estimate of regression: minimizes the weighted M-scale of the
/// residuals over theta. Random elemental candidates, short improvement steps,
/// full refinement of the best few; deterministic given cfg.seed. Ties on the
/// refined scale break toward the lowest candidate index.
inline SFit fit_s(const Dataset& data, const Vector& weights, const FitConfig& cfg = {}) {
  data.validate();
  const Index n = data.n(), p = data.p();
  if (weights.size() != n) throw ConfigError("fit_s: weight length mismatch");
  const auto active = detail::active_rows(weights);
  if (static_cast<Index>(active.size()) <= p)
    throw ConfigError("fit_s: effective sample size (positive-weight rows) must exceed p");

  const TukeyLoss loss0 = cfg.loss0();
  const MScaleConstant m = cfg.m();
  const double y_scale = detail::response_scale(data, active);
  const double sigma_floor = cfg.zero_scale_floor * y_scale;

  Rng rng(cfg.seed);
  MScaleOptions loose = cfg.mscale;
  loose.rel_tol = std::max(cfg.mscale.rel_tol, 1e-4);
  loose.max_iter = 40;

  struct Candidate {
    double scale;
    Vector theta;
    int index;
  };
  std::vector<Candidate> best;
  std::optional<SFit> exact;

  auto residuals_of = [&](const Vector& theta) -> Vector { return data.y - data.Z * theta; };

  // On an exact interpolation of more than half the weight mass the M-scale
  // equation degenerates; that candidate is the minimizer outright.
  auto note_exact = [&](const Vector& theta, int iters) {
    if (!exact) exact = SFit{theta, sigma_floor, iters, true};
  };

  Matrix Zsub(p, p);
  Vector ysub(p);
  int redraws = 0;
  const int redraw_budget = cfg.candidate_redraw_factor * cfg.s_candidates;

  for (int cand = 0; cand < cfg.s_candidates && !exact; ++cand) {
    // Draw a p-point subset in general position; redraw rank-deficient ones.
    Vector theta;
    while (true) {
      const auto pick = detail::sample_distinct(rng, static_cast<Index>(active.size()), p);
      for (Index j = 0; j < p; ++j) {
        Zsub.row(j) = data.Z.row(active[static_cast<std::size_t>(pick[static_cast<std::size_t>(j)])]);
        ysub[j] = data.y[active[static_cast<std::size_t>(pick[static_cast<std::size_t>(j)])]];
      }
      Eigen::FullPivLU<Matrix> lu(Zsub);
      if (lu.isInvertible()) {
        theta = lu.solve(ysub);
        break;
      }
      if (++redraws > redraw_budget)
        throw SingularDesignError("fit_s: candidate redraw budget exhausted (design not in general position)");
    }

    Vector r = residuals_of(theta);
    double s;
    try {
      s = solve_mscale(r, loss0, m, &weights, loose);
    } catch (const DegenerateScaleError&) {
      note_exact(theta, 0);
      break;
    }

    // Short improvement steps: reweighted LS at the current scale, then a
    // couple of scale fixed-point updates. Each step lowers the M-scale.
    for (int step = 0; step < cfg.s_refine_steps; ++step) {
      Vector w = weights;
      for (Index i = 0; i < n; ++i) w[i] *= loss0.weight(r[i] / s);
      auto next = try_solve_wls(data.Z, data.y, w);
      if (!next) break;
      theta = *next;
      r = residuals_of(theta);
      for (int k = 0; k < 3; ++k) s *= std::sqrt(mean_rho(r, &weights, loss0, s) / m.value());
    }

    Candidate c{s, theta, cand};
    best.push_back(std::move(c));
    std::sort(best.begin(), best.end(), [](const Candidate& a, const Candidate& b) {
      return a.scale != b.scale ? a.scale < b.scale : a.index < b.index;
    });
    if (static_cast<int>(best.size()) > cfg.s_best) best.pop_back();
  }

  if (exact) return *exact;
  if (best.empty()) throw SingularDesignError("fit_s: no usable candidate");

  // Full refinement of the surviving candidates.
  SFit out;
  out.sigma = std::numeric_limits<double>::infinity();
  int out_index = -1;
  for (const auto& c : best) {
    Vector theta = c.theta;
    Vector r = residuals_of(theta);
    double s;
    try {
      s = solve_mscale(r, loss0, m, &weights, cfg.mscale);
    } catch (const DegenerateScaleError&) {
      note_exact(theta, 0);
      break;
    }
    int it = 0;
    for (; it < cfg.s_max_refine_iter; ++it) {
      Vector w = weights;
      for (Index i = 0; i < n; ++i) w[i] *= loss0.weight(r[i] / s);
      auto next = try_solve_wls(data.Z, data.y, w);
      if (!next) break;
      const double theta_change = (*next - theta).norm() / std::max(1.0, theta.norm());
      theta = *next;
      r = residuals_of(theta);
      double s_next;
      try {
        s_next = solve_mscale(r, loss0, m, &weights, cfg.mscale);
      } catch (const DegenerateScaleError&) {
        note_exact(theta, it + 1);
        break;
      }
      const double s_change = std::abs(s_next - s) / s;
      s = s_next;
      if (theta_change <= cfg.s_rel_tol && s_change <= cfg.s_rel_tol) break;
    }
    if (exact) break;
    if (s < out.sigma || (s == out.sigma && (out_index < 0 || c.index < out_index))) {
      out.sigma = s;
      out.theta_s = theta;
      out.iterations = it;
      out_index = c.index;
    }
  }
  if (exact) return *exact;

  if (!out.theta_s.size()) throw SingularDesignError("fit_s: refinement failed on all candidates");
  if (out.sigma < sigma_floor) {
    out.sigma = sigma_floor;
    out.exact_fit = true;
  }
  return out;
}

/// MM regression estimate via IRLS at the fixed S scale, started from a
/// supplied (theta0, sigma). The rho1 objective is recorded per iteration;
/// it is non-increasing along the reweighting steps.
inline RobustFit fit_mm_with_scale(const Dataset& data, const Vector& weights, const Vector& theta0,
                                   double sigma, const FitConfig& cfg = {}) {
  data.validate();
  const Index n = data.n();
  if (weights.size() != n) throw ConfigError("fit_mm_with_scale: weight length mismatch");
  if (!(sigma > 0.0)) throw ConfigError("fit_mm_with_scale: sigma must be positive");

  const TukeyLoss loss1 = cfg.loss1();
  const double W = weights.sum();

  RobustFit fit;
  fit.theta_s = theta0;
  fit.sigma = sigma;

  Vector theta = theta0;
  Vector r = data.y - data.Z * theta;

  auto objective = [&](const Vector& res) {
    double acc = 0.0;
    for (Index i = 0; i < n; ++i) acc += weights[i] * loss1.rho(res[i] / sigma);
    return acc / W;
  };

  fit.irls_objective.push_back(objective(r));
  int it = 0;
  for (; it < cfg.irls_max_iter; ++it) {
    Vector w = weights;
    for (Index i = 0; i < n; ++i) w[i] *= loss1.weight(r[i] / sigma);
    auto next = try_solve_wls(data.Z, data.y, w);
    if (!next) throw SingularDesignError("fit_mm: weighted Gram singular during IRLS");
    const double change = (*next - theta).norm() / std::max(1.0, theta.norm());
    theta = *next;
    r = data.y - data.Z * theta;
    fit.irls_objective.push_back(objective(r));
    if (change <= cfg.irls_rel_tol) {
      fit.converged = true;
      ++it;
      break;
    }
  }
  fit.irls_iterations = it;
  fit.theta_mm = theta;

  Vector score = Vector::Zero(data.p());
  for (Index i = 0; i < n; ++i) score += weights[i] * loss1.psi(r[i] / sigma) * data.Z.row(i).transpose();
  fit.score_residual_norm = score.norm() / W;
  if (!fit.converged)
    throw NonConvergenceError("fit_mm: IRLS did not converge, score residual norm = " +
                              std::to_string(fit.score_residual_norm));
  return fit;
}

/// Full weighted MM fit: S stage for (theta_s, sigma), then IRLS for theta_mm.
inline RobustFit fit_mm(const Dataset& data, const Vector& weights, const FitConfig& cfg = {}) {
  const SFit sfit = fit_s(data, weights, cfg);
  RobustFit fit = fit_mm_with_scale(data, weights, sfit.theta_s, sfit.sigma, cfg);
  fit.theta_s = sfit.theta_s;
  fit.s_iterations = sfit.iterations;
  fit.exact_fit = sfit.exact_fit;
  return fit;
}

}  // namespace blfrb
