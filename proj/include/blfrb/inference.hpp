#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "blfrb/dataset.hpp"
#include "blfrb/errors.hpp"

namespace blfrb {

/// Per-coordinate uncertainty estimates computed from a replica cloud.
/// Quantiles follow the upper-t convention: q_t is the value the replicas
/// exceed with frequency t, i.e. the order statistic of rank ceil((1-t) r).
/// The CI at level 1-alpha is [q_{1-alpha/2}, q_{alpha/2}] in that
/// convention, which coincides with the usual lower-quantile interval
/// [Q(alpha/2), Q(1-alpha/2)].
struct UncertaintySummary {
  Vector sd;
  std::vector<double> quantile_ts;  // upper-quantile levels t
  Matrix quantiles;                 // p x |quantile_ts|
  Vector ci_lower;
  Vector ci_upper;
  double alpha = 0.05;
  int r_used = 0;
};

/// Sample standard deviation about the replica mean, divisor r-1.
/// Single-pass Welford update; the test suite checks it against an
/// independent two-pass computation.
inline double sd_estimate(const Vector& replicas) {
  const Index r = replicas.size();
  if (r < 2) throw ConfigError("sd_estimate: need at least two replicas");
  double mean = 0.0, m2 = 0.0;
  for (Index j = 0; j < r; ++j) {
    const double delta = replicas[j] - mean;
    mean += delta / static_cast<double>(j + 1);
    m2 += delta * (replicas[j] - mean);
  }
  return std::sqrt(m2 / static_cast<double>(r - 1));
}

/// Empirical upper-t quantile: order statistic of rank ceil((1-t) r),
/// no interpolation.
inline double quantile_estimate(const Vector& replicas, double t) {
  const Index r = replicas.size();
  if (r < 1) throw ConfigError("quantile_estimate: empty replica cloud");
  if (!(t > 0.0 && t < 1.0)) throw ConfigError("quantile_estimate: t must lie in (0, 1)");
  std::vector<double> v(replicas.data(), replicas.data() + r);
  Index rank = static_cast<Index>(std::ceil((1.0 - t) * static_cast<double>(r)));
  rank = std::clamp<Index>(rank, 1, r);
  std::nth_element(v.begin(), v.begin() + (rank - 1), v.end());
  return v[static_cast<std::size_t>(rank - 1)];
}

/// Build the full summary for a replica cloud (rows = replicas, cols = coordinates).
inline UncertaintySummary summarize(const Matrix& cloud, const std::vector<double>& quantile_ts,
                                    double alpha) {
  const Index r = cloud.rows(), p = cloud.cols();
  UncertaintySummary s;
  s.alpha = alpha;
  s.r_used = static_cast<int>(r);
  s.quantile_ts = quantile_ts;
  s.sd.resize(p);
  s.quantiles.resize(p, static_cast<Index>(quantile_ts.size()));
  s.ci_lower.resize(p);
  s.ci_upper.resize(p);
  for (Index l = 0; l < p; ++l) {
    const Vector col = cloud.col(l);
    s.sd[l] = sd_estimate(col);
    for (std::size_t q = 0; q < quantile_ts.size(); ++q)
      s.quantiles(l, static_cast<Index>(q)) = quantile_estimate(col, quantile_ts[q]);
    s.ci_lower[l] = quantile_estimate(col, 1.0 - alpha / 2.0);
    s.ci_upper[l] = quantile_estimate(col, alpha / 2.0);
  }
  return s;
}

/// Arithmetic mean of per-bag summaries, field by field, in the given order.
inline UncertaintySummary mean_summary(const std::vector<UncertaintySummary>& parts) {
  if (parts.empty()) throw ConfigError("mean_summary: no summaries to aggregate");
  UncertaintySummary agg = parts.front();
  for (std::size_t k = 1; k < parts.size(); ++k) {
    const auto& s = parts[k];
    agg.sd += s.sd;
    agg.quantiles += s.quantiles;
    agg.ci_lower += s.ci_lower;
    agg.ci_upper += s.ci_upper;
  }
  const double inv = 1.0 / static_cast<double>(parts.size());
  agg.sd *= inv;
  agg.quantiles *= inv;
  agg.ci_lower *= inv;
  agg.ci_upper *= inv;
  return agg;
}

/// Per-coordinate test of H0: theta_l = 0. Rejects when the CI excludes zero.
inline std::vector<bool> ci_and_test(const UncertaintySummary& summary) {
  std::vector<bool> reject(static_cast<std::size_t>(summary.ci_lower.size()));
  for (Index l = 0; l < summary.ci_lower.size(); ++l)
    reject[static_cast<std::size_t>(l)] = !(summary.ci_lower[l] <= 0.0 && 0.0 <= summary.ci_upper[l]);
  return reject;
}

/// Relative error of the averaged bootstrap SD against the asymptotic
/// reference sd_o = sigma0 / sqrt(n O):  eps = |mean_l sd_l - sd_o| / sd_o.
inline double relative_error(const Vector& sd_hat, double sigma0, Index n, double efficiency) {
  if (!(n > 0) || !(efficiency > 0.0 && efficiency <= 1.0))
    throw ConfigError("relative_error: need n > 0 and efficiency in (0, 1]");
  const double sd_o = sigma0 / std::sqrt(static_cast<double>(n) * efficiency);
  const double sd_bar = sd_hat.mean();
  return std::abs(sd_bar - sd_o) / sd_o;
}

inline double normal_cdf(double x, double mu = 0.0, double sd = 1.0) {
  return 0.5 * std::erfc(-(x - mu) / (sd * 1.4142135623730950488));
}

inline double normal_pdf(double x, double mu = 0.0, double sd = 1.0) {
  const double z = (x - mu) / sd;
  return std::exp(-0.5 * z * z) / (sd * 2.5066282746310005024);
}

/// Inverse standard normal cdf (Acklam's rational approximation, |err| < 1.2e-9).
inline double normal_quantile(double prob) {
  if (!(prob > 0.0 && prob < 1.0)) throw ConfigError("normal_quantile: p must lie in (0, 1)");
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                             1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                             6.680131188771972e+01,  -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                             -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                             3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1.0 - plow;
  double q, x;
  if (prob < plow) {
    q = std::sqrt(-2.0 * std::log(prob));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (prob <= phigh) {
    q = prob - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    q = std::sqrt(-2.0 * std::log(1.0 - prob));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  return x;
}

/// Kolmogorov-Smirnov distance between a sample and a Gaussian cdf.
inline double ks_distance(std::vector<double> sample, double mu, double sd) {
  if (sample.empty()) throw ConfigError("ks_distance: empty sample");
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = normal_cdf(sample[i], mu, sd);
    d = std::max(d, std::max(static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n));
  }
  return d;
}

/// Asymptotic KS critical value at level alpha for sample size r.
inline double ks_critical(double alpha, Index r) {
  return std::sqrt(-0.5 * std::log(alpha / 2.0)) / std::sqrt(static_cast<double>(r));
}

/// Diagnostic for the bag-level convergence claim: the empirical law of
/// sqrt(n) (theta*_l - theta_hat_l) per coordinate versus N(0, sigma0^2 / O).
struct ConsistencyReport {
  Vector ks;  // per-coordinate KS distance
  double ks_critical_1pct = 0.0;
  Index best_coordinate = 0;
  Index worst_coordinate = 0;
  double averaged_cdf_ks = 0.0;
  std::vector<double> grid;
  std::vector<double> averaged_ecdf;
  std::vector<double> target_cdf;
};

inline ConsistencyReport consistency_diagnostic(const Matrix& replica_thetas, const Vector& theta_fit,
                                                Index n_full, double sigma0, double efficiency,
                                                std::size_t grid_points = 257) {
  const Index r = replica_thetas.rows(), p = replica_thetas.cols();
  if (r < 2) throw ConfigError("consistency_diagnostic: need at least two replicas");
  const double root_n = std::sqrt(static_cast<double>(n_full));
  const double target_sd = sigma0 / std::sqrt(efficiency);

  ConsistencyReport rep;
  rep.ks.resize(p);
  rep.ks_critical_1pct = ks_critical(0.01, r);

  std::vector<std::vector<double>> scaled(static_cast<std::size_t>(p));
  for (Index l = 0; l < p; ++l) {
    auto& s = scaled[static_cast<std::size_t>(l)];
    s.resize(static_cast<std::size_t>(r));
    for (Index j = 0; j < r; ++j) s[static_cast<std::size_t>(j)] = root_n * (replica_thetas(j, l) - theta_fit[l]);
    rep.ks[l] = ks_distance(s, 0.0, target_sd);
    std::sort(s.begin(), s.end());
  }
  rep.ks.minCoeff(&rep.best_coordinate);
  rep.ks.maxCoeff(&rep.worst_coordinate);

  rep.grid.resize(grid_points);
  rep.averaged_ecdf.assign(grid_points, 0.0);
  rep.target_cdf.resize(grid_points);
  const double lo = -4.0 * target_sd, hi = 4.0 * target_sd;
  for (std::size_t g = 0; g < grid_points; ++g) {
    const double x = lo + (hi - lo) * static_cast<double>(g) / static_cast<double>(grid_points - 1);
    rep.grid[g] = x;
    rep.target_cdf[g] = normal_cdf(x, 0.0, target_sd);
    double acc = 0.0;
    for (Index l = 0; l < p; ++l) {
      const auto& s = scaled[static_cast<std::size_t>(l)];
      acc += static_cast<double>(std::upper_bound(s.begin(), s.end(), x) - s.begin()) /
             static_cast<double>(r);
    }
    rep.averaged_ecdf[g] = acc / static_cast<double>(p);
    rep.averaged_cdf_ks = std::max(rep.averaged_cdf_ks, std::abs(rep.averaged_ecdf[g] - rep.target_cdf[g]));
  }
  return rep;
}

}  // namespace blfrb
