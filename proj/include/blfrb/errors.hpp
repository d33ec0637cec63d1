#pragma once

#include <stdexcept>
#include <string>

namespace blfrb {

/// Invalid or infeasible configuration (bad gamma, s*b > n, b <= p, ...).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Design matrix (or a weighted Gram built from it) is numerically singular.
class SingularDesignError : public std::runtime_error {
 public:
  explicit SingularDesignError(const std::string& what) : std::runtime_error(what) {}
};

/// M-scale equation has no positive solution (too much of the residual mass is zero).
class DegenerateScaleError : public std::runtime_error {
 public:
  explicit DegenerateScaleError(const std::string& what) : std::runtime_error(what) {}
};

/// Iterative solver exhausted its budget; message carries the last iterate diagnostics.
class NonConvergenceError : public std::runtime_error {
 public:
  explicit NonConvergenceError(const std::string& what) : std::runtime_error(what) {}
};

/// Correction matrix (I - J) too ill-conditioned to be meaningful; the bag is dropped.
class CorrectionConditionError : public std::runtime_error {
 public:
  explicit CorrectionConditionError(const std::string& what) : std::runtime_error(what) {}
};

/// Too many bags failed for the aggregate to be trustworthy.
class RunError : public std::runtime_error {
 public:
  explicit RunError(const std::string& what) : std::runtime_error(what) {}
};

/// File parsing / serialization problems.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// Results file carries an unsupported schema version.
class VersionError : public IoError {
 public:
  explicit VersionError(const std::string& what) : IoError(what) {}
};

}  // namespace blfrb
