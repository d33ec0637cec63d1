#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "blfrb/blb.hpp"
#include "blfrb/dataset.hpp"
#include "blfrb/errors.hpp"
#include "blfrb/rng.hpp"

namespace blfrb {

/// Finite-sample breakdown point of the S stage on b points in dimension p:
///   delta_b = (floor(b/2) - p + 2) / b.
/// Every bag quantile estimate inherits this bound.
inline double s_breakdown(Index b, Index p) {
  if (!(b > p)) throw ConfigError("s_breakdown: need b > p");
  const Index numer = b / 2 - p + 2;
  if (numer <= 0) throw ConfigError("s_breakdown: infeasible (floor(b/2) - p + 2 <= 0)");
  return static_cast<double>(numer) / static_cast<double>(b);
}

/// Probability that a given subsample point never enters a bootstrap sample
/// of size n: (1 - 1/b)^n with b = subsample_size(n, gamma). Log-space
/// evaluation keeps tiny values exact.
inline double lemma1_probability(Index n, double gamma) {
  if (n < 2) throw ConfigError("lemma1_probability: need n >= 2");
  const Index b = subsample_size(n, gamma);
  if (b <= 1) return 0.0;
  return std::exp(static_cast<double>(n) * std::log1p(-1.0 / static_cast<double>(b)));
}

struct BreakdownRow {
  Index p = 0;
  Index n = 0;
  double gamma = 0.0;
  Index b = 0;
  double delta_b = 0.0;
  bool feasible = true;
  bool degenerate = false;  // delta_b at the 1/b floor (b near 2p - 2)
};

struct BreakdownReport {
  std::vector<BreakdownRow> rows;
};

/// Full cross-product of the upper breakdown points over (p, n, gamma).
/// Infeasible cells are marked, not fatal.
inline BreakdownReport breakdown_table(const std::vector<Index>& p_list,
                                       const std::vector<Index>& n_list,
                                       const std::vector<double>& gamma_list) {
  BreakdownReport rep;
  for (Index p : p_list)
    for (Index n : n_list)
      for (double g : gamma_list) {
        BreakdownRow row;
        row.p = p;
        row.n = n;
        row.gamma = g;
        row.b = subsample_size(n, g);
        try {
          row.delta_b = s_breakdown(row.b, p);
          row.degenerate = row.delta_b <= 1.5 / static_cast<double>(row.b);
        } catch (const ConfigError&) {
          row.feasible = false;
        }
        rep.rows.push_back(row);
      }
  return rep;
}

enum class ContaminationMode {
  kRow,       // multiply the whole record (response and regressors)
  kResponse,  // multiply the response field only
};

inline std::string contamination_mode_name(ContaminationMode m) {
  return m == ContaminationMode::kRow ? "row" : "response";
}

struct ContaminationSpec {
  double fraction = 0.0;  // used when count < 0
  long count = -1;        // exact number of rows; wins over fraction when >= 0
  double alpha = 1000.0;
  ContaminationMode mode = ContaminationMode::kRow;
  std::uint64_t seed = 1;
};

struct ContaminationManifest {
  std::vector<Index> rows;
  double alpha = 0.0;
  ContaminationMode mode = ContaminationMode::kRow;
};

/// Corrupt a copy of the dataset: selected rows are multiplied by alpha,
/// either the whole record or the response alone. The pool defaults to all
/// rows; passing a bag's index set targets that bag. The input is untouched
/// and the manifest lists exactly what changed.
inline std::pair<Dataset, ContaminationManifest> contaminate(
    const Dataset& data, const ContaminationSpec& spec,
    const std::vector<Index>* pool = nullptr) {
  if (!(spec.alpha == spec.alpha) || std::isinf(spec.alpha))
    throw ConfigError("contaminate: alpha must be finite");
  std::vector<Index> candidates;
  if (pool) {
    candidates = *pool;
  } else {
    candidates.resize(static_cast<std::size_t>(data.n()));
    for (Index i = 0; i < data.n(); ++i) candidates[static_cast<std::size_t>(i)] = i;
  }

  long count = spec.count >= 0
                   ? spec.count
                   : static_cast<long>(std::floor(spec.fraction * static_cast<double>(candidates.size())));
  if (count < 0 || count > static_cast<long>(candidates.size()))
    throw ConfigError("contaminate: row count out of range");

  Rng rng = Rng(spec.seed).child(Rng::kTagContam, 0);
  for (long i = 0; i < count; ++i) {
    const auto j = static_cast<std::size_t>(i) +
                   static_cast<std::size_t>(rng.next_below(candidates.size() - static_cast<std::size_t>(i)));
    std::swap(candidates[static_cast<std::size_t>(i)], candidates[j]);
  }
  candidates.resize(static_cast<std::size_t>(count));
  std::sort(candidates.begin(), candidates.end());

  Dataset out = data;
  for (Index row : candidates) {
    out.y[row] *= spec.alpha;
    if (spec.mode == ContaminationMode::kRow) out.Z.row(row) *= spec.alpha;
  }
  ContaminationManifest man;
  man.rows = std::move(candidates);
  man.alpha = spec.alpha;
  man.mode = spec.mode;
  return {std::move(out), std::move(man)};
}

}  // namespace blfrb
