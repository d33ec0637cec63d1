#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "blfrb/dataset.hpp"
#include "blfrb/errors.hpp"
#include "blfrb/frb.hpp"
#include "blfrb/inference.hpp"
#include "blfrb/robust_fit.hpp"
#include "blfrb/rng.hpp"

namespace blfrb {

enum class Method {
  kBlfrbMm,     // closed-form FRB replicas inside each bag
  kBlbMmFull,   // full MM re-solve per bootstrap sample (oracle/baseline)
  kBlbLs,       // least-squares replicas (original BLB primitive)
  kClassicalMm  // conventional bootstrap: whole-sample weights, full MM re-solve
};

inline std::string method_name(Method m) {
  switch (m) {
    case Method::kBlfrbMm: return "blfrb-mm";
    case Method::kBlbMmFull: return "blb-mm-full";
    case Method::kBlbLs: return "blb-ls";
    case Method::kClassicalMm: return "classical-bootstrap";
  }
  return "?";
}

inline std::optional<Method> method_from_name(const std::string& s) {
  if (s == "blfrb-mm") return Method::kBlfrbMm;
  if (s == "blb-mm-full") return Method::kBlbMmFull;
  if (s == "blb-ls") return Method::kBlbLs;
  if (s == "classical-bootstrap") return Method::kClassicalMm;
  return std::nullopt;
}

/// Subsample size b = floor(n^gamma), with a 0.1 guard: powers landing within
/// 0.1 of the next integer round up (15849 at n = 1e7, gamma = 0.6; 1946 at
/// n = 50000, gamma = 0.7).
inline Index subsample_size(Index n, double gamma) {
  if (n < 1) throw ConfigError("subsample_size: n must be positive");
  if (!(gamma >= 0.6 && gamma <= 0.9))
    throw ConfigError("subsample_size: gamma must lie in [0.6, 0.9]");
  const double x = std::pow(static_cast<double>(n), gamma);
  auto b = static_cast<Index>(std::floor(x + 0.1));
  return std::clamp<Index>(b, 1, n);
}

struct BlfrbConfig {
  double gamma = 0.7;
  Index b_override = 0;  // explicit subsample size; 0 derives b from gamma
  int bags = 0;          // s; 0 picks floor(n/b) so the bags cover the sample
  int replicas = 100;    // r per bag
  std::uint64_t seed = 1;
  Method method = Method::kBlfrbMm;

  FitConfig fit;
  CorrectionOptions correction;

  std::vector<double> quantile_ts = {0.025, 0.05, 0.25, 0.5, 0.75, 0.95, 0.975};
  double alpha = 0.05;

  int threads = 1;
  double bag_failure_cap = 0.20;          // run fails past this excluded fraction
  double replica_skip_flag = 0.01;        // flag a bag when more replicas skip
  double scale_consensus_factor = 10.0;   // exclude bags whose sigma is this far off median
  bool keep_replicas = true;
  bool force_full_resolve = false;        // BLFRB pipeline with full re-solve replicas
  bool debug_uniform_weights = false;     // diagnostic: every replica gets exact n/b weights
};

struct BagDiagnostics {
  int bag_index = 0;
  bool failed = false;
  std::string failure;
  int replicas_skipped = 0;
  bool skip_flagged = false;
  bool scale_flagged = false;
  double sigma = 0.0;
  double correction_condition = 0.0;
  double fit_seconds = 0.0;
  double replica_seconds = 0.0;
};

struct BagResult {
  std::vector<Index> indices;
  std::uint64_t bag_seed = 0;
  std::optional<RobustFit> fit;
  std::optional<CorrectionOperator> corr;
  Matrix replica_thetas;  // r x p
  Vector replica_sigmas;  // r (robust methods)
  UncertaintySummary summary;
  BagDiagnostics diag;
};

/// One line of the adaptive-run trace: aggregate after each replica batch.
struct TraceRow {
  int r = 0;
  double elapsed_seconds = 0.0;  // cumulative estimation time (fits + replicas)
  UncertaintySummary aggregate;
};

struct RunResult {
  Index n = 0, b = 0;
  int s = 0, r = 0;
  Method method = Method::kBlfrbMm;
  std::vector<BagResult> bags;
  std::vector<int> excluded_bags;
  UncertaintySummary aggregate;
  std::vector<TraceRow> trace;
  double fit_seconds = 0.0;
  double replica_seconds = 0.0;
  double estimation_seconds = 0.0;
};

/// Bag layout of a run: disjoint index sets drawn once from the data.
struct RunPlan {
  Index n = 0, b = 0;
  int s = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<Index>> bag_indices;
};

/// Draw s disjoint bags of size b by sampling s*b indices without replacement
/// (partial Fisher-Yates) and partitioning. Deterministic given the seed.
inline RunPlan make_plan(Index n, const BlfrbConfig& cfg) {
  RunPlan plan;
  plan.n = n;
  plan.seed = cfg.seed;
  if (cfg.method == Method::kClassicalMm) {
    plan.b = n;
    plan.s = 1;
    std::vector<Index> all(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
    plan.bag_indices.push_back(std::move(all));
    return plan;
  }

  plan.b = cfg.b_override > 0 ? cfg.b_override : subsample_size(n, cfg.gamma);
  plan.s = cfg.bags > 0 ? cfg.bags : static_cast<int>(n / plan.b);
  if (plan.s < 1) throw ConfigError("make_plan: no feasible bag count");
  if (static_cast<Index>(plan.s) * plan.b > n)
    throw ConfigError("make_plan: s*b = " + std::to_string(plan.s * plan.b) + " exceeds n = " +
                      std::to_string(n) + " (bags must be disjoint)");

  std::vector<Index> perm(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  Rng rng = Rng(cfg.seed).child(Rng::kTagBag, 0);
  const Index take = static_cast<Index>(plan.s) * plan.b;
  for (Index i = 0; i < take; ++i) {
    const Index j = i + static_cast<Index>(rng.next_below(static_cast<std::uint64_t>(n - i)));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  for (int k = 0; k < plan.s; ++k)
    plan.bag_indices.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(k) * plan.b,
                                  perm.begin() + static_cast<std::ptrdiff_t>(k + 1) * plan.b);
  return plan;
}

/// Multinomial(n, (1/b) 1_b) counts for replica j of bag k. Weight streams are
/// addressed purely by (seed, bag, replica), so every method sees identical
/// draws and any batching schedule reproduces them.
inline Vector draw_weights(Index b, Index n, std::uint64_t seed) {
  Rng rng(seed);
  const auto counts =
      rng.next_multinomial_uniform(static_cast<std::uint64_t>(n), static_cast<std::size_t>(b));
  return Eigen::Map<const Vector>(counts.data(), b);
}

inline std::uint64_t replica_weight_seed(std::uint64_t master, int bag, int replica) {
  return Rng::derive_key(Rng::derive_key(master, Rng::kTagBag, static_cast<std::uint64_t>(bag) + 1),
                         Rng::kTagReplica, static_cast<std::uint64_t>(replica));
}

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Fit the bag's initial estimate and correction operator (method dependent).
inline void prepare_bag(const Dataset& data, const RunPlan& plan, const BlfrbConfig& cfg, int k,
                        BagResult& bag) {
  const auto t0 = std::chrono::steady_clock::now();
  bag.indices = plan.bag_indices[static_cast<std::size_t>(k)];
  bag.bag_seed = Rng::derive_key(cfg.seed, Rng::kTagBag, static_cast<std::uint64_t>(k) + 1);
  bag.diag.bag_index = k;

  const Dataset sub = data.rows(bag.indices);
  const Vector ones = unit_weights(sub.n());

  if (cfg.method == Method::kBlbLs) {
    // LS has no robust fit stage; replicas are direct re-solves.
    bag.diag.fit_seconds = seconds_since(t0);
    return;
  }

  FitConfig fit_cfg = cfg.fit;
  fit_cfg.seed = Rng::derive_key(bag.bag_seed, Rng::kTagFit, 0);
  // Record the S scale before the MM stage: a bag whose scale exploded is
  // diagnosable even when IRLS then fails on the broken landscape.
  const SFit sfit = fit_s(sub, ones, fit_cfg);
  bag.diag.sigma = sfit.sigma;
  RobustFit fit = fit_mm_with_scale(sub, ones, sfit.theta_s, sfit.sigma, fit_cfg);
  fit.theta_s = sfit.theta_s;
  fit.s_iterations = sfit.iterations;
  fit.exact_fit = sfit.exact_fit;
  bag.fit = std::move(fit);

  if (cfg.method == Method::kBlfrbMm && !cfg.force_full_resolve) {
    bag.corr = correction_operator(*bag.fit, sub, cfg.fit, cfg.correction);
    bag.diag.correction_condition = bag.corr->condition_estimate;
  }
  bag.diag.fit_seconds = seconds_since(t0);
}

/// Extend a bag's replica cloud from r_from to r_to.
inline void extend_replicas(const Dataset& data, const RunPlan& plan, const BlfrbConfig& cfg, int k,
                            int r_from, int r_to, BagResult& bag) {
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset sub = data.rows(bag.indices);
  const Index p = data.p();

  bag.replica_thetas.conservativeResize(r_to, p);
  bag.replica_sigmas.conservativeResize(r_to);

  for (int j = r_from; j < r_to; ++j) {
    const std::uint64_t wseed = replica_weight_seed(cfg.seed, k, j);
    Vector counts;
    if (cfg.debug_uniform_weights) {
      counts = Vector::Constant(plan.b, static_cast<double>(plan.n) / static_cast<double>(plan.b));
    } else {
      counts = draw_weights(plan.b, plan.n, wseed);
    }

    bool ok = false;
    switch (cfg.method) {
      case Method::kBlbLs: {
        if (auto theta = try_solve_wls(sub.Z, sub.y, counts)) {
          bag.replica_thetas.row(j) = theta->transpose();
          bag.replica_sigmas[j] = 0.0;
          ok = true;
        }
        break;
      }
      case Method::kBlfrbMm: {
        if (!cfg.force_full_resolve) {
          if (auto step = one_step(*bag.fit, sub, counts, cfg.fit)) {
            const FRBReplica rep = frb_replica(*bag.fit, *step, *bag.corr, wseed);
            bag.replica_thetas.row(j) = rep.theta_star.transpose();
            bag.replica_sigmas[j] = rep.sigma_star;
            ok = true;
          }
          break;
        }
        [[fallthrough]];
      }
      case Method::kBlbMmFull:
      case Method::kClassicalMm: {
        FitConfig fit_cfg = cfg.fit;
        fit_cfg.seed = Rng::derive_key(wseed, Rng::kTagFit, 1);
        try {
          const RobustFit rf = fit_mm(sub, counts, fit_cfg);
          bag.replica_thetas.row(j) = rf.theta_mm.transpose();
          bag.replica_sigmas[j] = rf.sigma;
          ok = true;
        } catch (const std::runtime_error&) {
          ok = false;
        }
        break;
      }
    }
    if (!ok) {
      ++bag.diag.replicas_skipped;
      // NaN marks the row; summaries drop marked rows and the skip is counted.
      bag.replica_thetas.row(j).setConstant(std::numeric_limits<double>::quiet_NaN());
      bag.replica_sigmas[j] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  bag.diag.replica_seconds += seconds_since(t0);
}

inline Matrix drop_skipped_rows(const Matrix& cloud) {
  std::vector<Index> keep;
  keep.reserve(static_cast<std::size_t>(cloud.rows()));
  for (Index j = 0; j < cloud.rows(); ++j)
    if (cloud.row(j).allFinite()) keep.push_back(j);
  Matrix out(static_cast<Index>(keep.size()), cloud.cols());
  for (std::size_t j = 0; j < keep.size(); ++j) out.row(static_cast<Index>(j)) = cloud.row(keep[j]);
  return out;
}

template <typename Fn>
inline void parallel_for_bags(int s, int threads, Fn&& fn) {
  if (threads <= 1 || s <= 1) {
    for (int k = 0; k < s; ++k) fn(k);
    return;
  }
  std::atomic<int> next{0};
  auto worker = [&] {
    while (true) {
      const int k = next.fetch_add(1);
      if (k >= s) return;
      fn(k);
    }
  };
  std::vector<std::thread> pool;
  const int nt = std::min(threads, s);
  pool.reserve(static_cast<std::size_t>(nt));
  for (int t = 0; t < nt; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

}  // namespace detail

/// Run the scheme with incremental replica batches: fits and correction
/// operators are reused across schedule steps, and the trace records the
/// aggregate after each step. run() below is the single-step special case.
/// Results are bit-identical for any thread count: all randomness is
/// addressed by (seed, bag, replica) and aggregation always reduces in bag
/// order.
inline RunResult run_schedule(const Dataset& data, const BlfrbConfig& cfg, const RunPlan& plan,
                              const std::vector<int>& r_schedule,
                              const std::function<void(const TraceRow&)>& trace_sink = {}) {
  data.validate();
  if (r_schedule.empty()) throw ConfigError("run_schedule: empty schedule");
  for (std::size_t i = 1; i < r_schedule.size(); ++i)
    if (r_schedule[i] <= r_schedule[i - 1]) throw ConfigError("run_schedule: schedule must increase");
  if (plan.b <= data.p() && cfg.method != Method::kClassicalMm)
    throw ConfigError("run_schedule: b must exceed p");

  RunResult res;
  res.n = plan.n;
  res.b = plan.b;
  res.s = plan.s;
  res.r = r_schedule.back();
  res.method = cfg.method;
  res.bags.resize(static_cast<std::size_t>(plan.s));

  const auto t0 = std::chrono::steady_clock::now();

  // Stage 1: initial estimates (and corrections) once per bag.
  detail::parallel_for_bags(plan.s, cfg.threads, [&](int k) {
    auto& bag = res.bags[static_cast<std::size_t>(k)];
    try {
      detail::prepare_bag(data, plan, cfg, k, bag);
    } catch (const std::runtime_error& e) {
      bag.diag.failed = true;
      bag.diag.failure = e.what();
    }
  });

  // Stage 2: replica batches, one schedule step at a time.
  int r_done = 0;
  for (const int r_to : r_schedule) {
    detail::parallel_for_bags(plan.s, cfg.threads, [&](int k) {
      auto& bag = res.bags[static_cast<std::size_t>(k)];
      if (bag.diag.failed) return;
      try {
        detail::extend_replicas(data, plan, cfg, k, r_done, r_to, bag);
      } catch (const std::runtime_error& e) {
        bag.diag.failed = true;
        bag.diag.failure = e.what();
      }
    });
    r_done = r_to;

    // Deterministic ordered reduction over included bags.
    std::vector<UncertaintySummary> parts;
    std::vector<int> excluded;
    std::vector<double> sigmas;
    for (auto& bag : res.bags)
      if (!bag.diag.failed && bag.fit) sigmas.push_back(bag.fit->sigma);
    double sigma_median = 0.0;
    if (sigmas.size() >= 3) {
      std::vector<double> tmp = sigmas;
      std::nth_element(tmp.begin(), tmp.begin() + static_cast<std::ptrdiff_t>(tmp.size() / 2), tmp.end());
      sigma_median = tmp[tmp.size() / 2];
    }

    for (int k = 0; k < plan.s; ++k) {
      auto& bag = res.bags[static_cast<std::size_t>(k)];
      if (bag.diag.failed) {
        excluded.push_back(k);
        continue;
      }
      // Cross-bag scale consensus: a robust bag whose S scale sits an order
      // of magnitude above the median carries a broken initial fit.
      if (bag.fit && sigma_median > 0.0 &&
          bag.fit->sigma > cfg.scale_consensus_factor * sigma_median) {
        bag.diag.scale_flagged = true;
        excluded.push_back(k);
        continue;
      }
      const Matrix cloud = detail::drop_skipped_rows(bag.replica_thetas);
      if (cloud.rows() < 2) {
        bag.diag.failed = true;
        bag.diag.failure = "fewer than two usable replicas";
        excluded.push_back(k);
        continue;
      }
      bag.diag.skip_flagged =
          bag.diag.replicas_skipped > cfg.replica_skip_flag * static_cast<double>(r_done);
      bag.summary = summarize(cloud, cfg.quantile_ts, cfg.alpha);
      parts.push_back(bag.summary);
    }

    if (static_cast<double>(excluded.size()) > cfg.bag_failure_cap * static_cast<double>(plan.s)) {
      std::string detail = "run: " + std::to_string(excluded.size()) + " of " +
                           std::to_string(plan.s) + " bags failed";
      for (int k : excluded) {
        const auto& d = res.bags[static_cast<std::size_t>(k)].diag;
        detail += "; bag " + std::to_string(k) + ": " + (d.scale_flagged ? "scale consensus" : d.failure);
      }
      throw RunError(detail);
    }
    res.excluded_bags = excluded;
    res.aggregate = mean_summary(parts);

    TraceRow row;
    row.r = r_done;
    row.elapsed_seconds = detail::seconds_since(t0);
    row.aggregate = res.aggregate;
    res.trace.push_back(row);
    if (trace_sink) trace_sink(res.trace.back());
  }

  for (const auto& bag : res.bags) {
    res.fit_seconds += bag.diag.fit_seconds;
    res.replica_seconds += bag.diag.replica_seconds;
  }
  res.estimation_seconds = detail::seconds_since(t0);

  if (!cfg.keep_replicas) {
    for (auto& bag : res.bags) {
      bag.replica_thetas.resize(0, 0);
      bag.replica_sigmas.resize(0);
    }
  }
  return res;
}

inline RunResult run(const Dataset& data, const BlfrbConfig& cfg) {
  const RunPlan plan = make_plan(data.n(), cfg);
  return run_schedule(data, cfg, plan, {cfg.replicas});
}

}  // namespace blfrb
