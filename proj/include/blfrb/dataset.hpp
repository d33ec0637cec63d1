#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "blfrb/errors.hpp"

namespace blfrb {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Regression sample: response y and design matrix Z (rows = observations).
struct Dataset {
  Vector y;
  Matrix Z;
  bool has_intercept = false;  // true when a ones column was materialized

  Index n() const { return y.size(); }
  Index p() const { return Z.cols(); }

  void validate() const {
    if (Z.rows() != y.size()) throw ConfigError("Dataset: row count of Z must equal length of y");
    if (Z.cols() < 1) throw ConfigError("Dataset: p must be >= 1");
    if (!y.allFinite() || !Z.allFinite()) throw ConfigError("Dataset: non-finite entries");
  }

  /// Sub-dataset restricted to the given rows (bag extraction).
  Dataset rows(const std::vector<Index>& idx) const {
    Dataset out;
    out.has_intercept = has_intercept;
    out.y.resize(static_cast<Index>(idx.size()));
    out.Z.resize(static_cast<Index>(idx.size()), Z.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out.y[static_cast<Index>(i)] = y[idx[i]];
      out.Z.row(static_cast<Index>(i)) = Z.row(idx[i]);
    }
    return out;
  }
};

/// FNV-1a over the raw bytes of (n, p, y, Z). Used to fingerprint inputs in
/// run manifests so a recorded run can be tied to its exact data.
inline std::uint64_t dataset_fingerprint(const Dataset& d) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto eat = [&h](const void* ptr, std::size_t len) {
    const auto* b = static_cast<const unsigned char*>(ptr);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  const std::int64_t n = d.n(), p = d.p();
  eat(&n, sizeof n);
  eat(&p, sizeof p);
  eat(d.y.data(), sizeof(double) * static_cast<std::size_t>(d.y.size()));
  eat(d.Z.data(), sizeof(double) * static_cast<std::size_t>(d.Z.size()));
  return h;
}

}  // namespace blfrb
