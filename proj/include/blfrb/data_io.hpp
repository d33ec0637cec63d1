#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "blfrb/blb.hpp"
#include "blfrb/dataset.hpp"
#include "blfrb/errors.hpp"
#include "blfrb/rng.hpp"

namespace blfrb {

inline constexpr int kResultsSchemaVersion = 1;

struct CsvOptions {
  char delimiter = ',';
  bool has_header = false;
  Index response_col = 0;  // MSD convention: response first
  bool add_intercept = false;
};

namespace detail {

inline double parse_number(const std::string& field, std::size_t row, std::size_t col) {
  double v = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  while (first != last && (*first == ' ' || *first == '\t')) ++first;
  while (last != first && (*(last - 1) == ' ' || *(last - 1) == '\t' || *(last - 1) == '\r')) --last;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last)
    throw IoError("non-numeric cell at row " + std::to_string(row) + ", column " +
                  std::to_string(col) + ": '" + field + "'");
  return v;
}

inline std::string shortest_repr(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

}  // namespace detail

/// Streaming delimited-text reader. One pass, constant memory per row; the
/// declared response column is split out and the remaining columns form Z.
inline Dataset load_csv(const std::string& path, const CsvOptions& opt = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");

  std::vector<double> ys;
  std::vector<double> zs;  // row-major staging
  std::size_t cols = 0;
  std::size_t row = 0;
  std::string line;
  bool skip_header = opt.has_header;

  while (std::getline(in, line)) {
    ++row;
    if (skip_header) {
      skip_header = false;
      continue;
    }
    if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;

    std::size_t col = 0, start = 0;
    std::vector<double> fields;
    while (start <= line.size()) {
      const std::size_t end = line.find(opt.delimiter, start);
      const std::string field =
          line.substr(start, (end == std::string::npos ? line.size() : end) - start);
      ++col;
      fields.push_back(detail::parse_number(field, row, col));
      if (end == std::string::npos) break;
      start = end + 1;
    }
    if (cols == 0) {
      cols = fields.size();
      if (cols < 2) throw IoError("row " + std::to_string(row) + ": need at least two columns");
      if (opt.response_col < 0 || static_cast<std::size_t>(opt.response_col) >= cols)
        throw IoError("response column " + std::to_string(opt.response_col) + " out of range");
    } else if (fields.size() != cols) {
      throw IoError("ragged row " + std::to_string(row) + ": " + std::to_string(fields.size()) +
                    " fields, expected " + std::to_string(cols));
    }
    ys.push_back(fields[static_cast<std::size_t>(opt.response_col)]);
    for (std::size_t c = 0; c < cols; ++c)
      if (c != static_cast<std::size_t>(opt.response_col)) zs.push_back(fields[c]);
  }
  if (ys.empty()) throw IoError("'" + path + "' contains no data rows");

  Dataset d;
  const auto n = static_cast<Index>(ys.size());
  const auto p0 = static_cast<Index>(cols - 1);
  d.y = Eigen::Map<const Vector>(ys.data(), n);
  d.Z.resize(n, p0 + (opt.add_intercept ? 1 : 0));
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < p0; ++j)
      d.Z(i, j) = zs[static_cast<std::size_t>(i) * static_cast<std::size_t>(p0) +
                     static_cast<std::size_t>(j)];
  if (opt.add_intercept) {
    d.Z.col(p0).setOnes();
    d.has_intercept = true;
  }
  d.validate();
  return d;
}

/// Shortest round-trip representation per cell; response written first.
inline void write_csv(const Dataset& data, const std::string& path, char delimiter = ',') {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  for (Index i = 0; i < data.n(); ++i) {
    out << detail::shortest_repr(data.y[i]);
    for (Index j = 0; j < data.p(); ++j) out << delimiter << detail::shortest_repr(data.Z(i, j));
    out << '\n';
  }
}

/// Linear-model sample: Z rows i.i.d. N_p(0, I), y = Z theta + sigma0 e with
/// standard normal e. Pure function of its arguments; the draw order (row by
/// row, regressors then noise) is part of the contract.
inline Dataset generate_synthetic(Index n, Index p, const Vector& theta, double sigma0,
                                  std::uint64_t seed) {
  if (n <= p) throw ConfigError("generate_synthetic: need n > p");
  if (theta.size() != p) throw ConfigError("generate_synthetic: theta must have length p");
  Rng rng = Rng(seed).child(Rng::kTagData, 0);
  Dataset d;
  d.Z.resize(n, p);
  d.y.resize(n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < p; ++j) d.Z(i, j) = rng.next_gaussian();
    d.y[i] = d.Z.row(i).dot(theta) + sigma0 * rng.next_gaussian();
  }
  return d;
}

// ---------------------------------------------------------------------------
// Results and manifest persistence (versioned JSON).

inline nlohmann::json to_json(const UncertaintySummary& s) {
  nlohmann::json j;
  j["sd"] = std::vector<double>(s.sd.data(), s.sd.data() + s.sd.size());
  j["quantile_ts"] = s.quantile_ts;
  std::vector<std::vector<double>> q;
  for (Index l = 0; l < s.quantiles.rows(); ++l) {
    q.emplace_back(static_cast<std::size_t>(s.quantiles.cols()));
    for (Index c = 0; c < s.quantiles.cols(); ++c) q.back()[static_cast<std::size_t>(c)] = s.quantiles(l, c);
  }
  j["quantiles"] = q;
  j["ci_lower"] = std::vector<double>(s.ci_lower.data(), s.ci_lower.data() + s.ci_lower.size());
  j["ci_upper"] = std::vector<double>(s.ci_upper.data(), s.ci_upper.data() + s.ci_upper.size());
  j["alpha"] = s.alpha;
  j["r_used"] = s.r_used;
  return j;
}

inline UncertaintySummary summary_from_json(const nlohmann::json& j) {
  UncertaintySummary s;
  const auto sd = j.at("sd").get<std::vector<double>>();
  s.sd = Eigen::Map<const Vector>(sd.data(), static_cast<Index>(sd.size()));
  s.quantile_ts = j.at("quantile_ts").get<std::vector<double>>();
  const auto q = j.at("quantiles").get<std::vector<std::vector<double>>>();
  s.quantiles.resize(static_cast<Index>(q.size()), static_cast<Index>(s.quantile_ts.size()));
  for (std::size_t l = 0; l < q.size(); ++l)
    for (std::size_t c = 0; c < q[l].size(); ++c)
      s.quantiles(static_cast<Index>(l), static_cast<Index>(c)) = q[l][c];
  const auto lo = j.at("ci_lower").get<std::vector<double>>();
  const auto hi = j.at("ci_upper").get<std::vector<double>>();
  s.ci_lower = Eigen::Map<const Vector>(lo.data(), static_cast<Index>(lo.size()));
  s.ci_upper = Eigen::Map<const Vector>(hi.data(), static_cast<Index>(hi.size()));
  s.alpha = j.at("alpha").get<double>();
  s.r_used = j.at("r_used").get<int>();
  return s;
}

inline nlohmann::json to_json(const BagDiagnostics& d) {
  return nlohmann::json{{"bag_index", d.bag_index},
                        {"failed", d.failed},
                        {"failure", d.failure},
                        {"replicas_skipped", d.replicas_skipped},
                        {"skip_flagged", d.skip_flagged},
                        {"scale_flagged", d.scale_flagged},
                        {"sigma", d.sigma},
                        {"correction_condition", d.correction_condition},
                        {"fit_seconds", d.fit_seconds},
                        {"replica_seconds", d.replica_seconds}};
}

inline BagDiagnostics diagnostics_from_json(const nlohmann::json& j) {
  BagDiagnostics d;
  d.bag_index = j.at("bag_index").get<int>();
  d.failed = j.at("failed").get<bool>();
  d.failure = j.at("failure").get<std::string>();
  d.replicas_skipped = j.at("replicas_skipped").get<int>();
  d.skip_flagged = j.at("skip_flagged").get<bool>();
  d.scale_flagged = j.at("scale_flagged").get<bool>();
  d.sigma = j.at("sigma").get<double>();
  d.correction_condition = j.at("correction_condition").get<double>();
  d.fit_seconds = j.at("fit_seconds").get<double>();
  d.replica_seconds = j.at("replica_seconds").get<double>();
  return d;
}

/// Serializable view of a finished run: aggregate, per-bag summaries and
/// diagnostics, enough settings to interpret them.
struct SavedResults {
  int schema_version = kResultsSchemaVersion;
  std::string method;
  Index n = 0, b = 0;
  int s = 0, r = 0;
  double alpha = 0.05;
  UncertaintySummary aggregate;
  std::vector<UncertaintySummary> bag_summaries;
  std::vector<BagDiagnostics> bag_diagnostics;
  std::vector<int> excluded_bags;
  double fit_seconds = 0.0, replica_seconds = 0.0, estimation_seconds = 0.0;

  bool operator==(const SavedResults& o) const {
    auto eq = [](const UncertaintySummary& a, const UncertaintySummary& b) {
      return a.sd == b.sd && a.quantile_ts == b.quantile_ts && a.quantiles == b.quantiles &&
             a.ci_lower == b.ci_lower && a.ci_upper == b.ci_upper && a.alpha == b.alpha &&
             a.r_used == b.r_used;
    };
    if (!(schema_version == o.schema_version && method == o.method && n == o.n && b == o.b &&
          s == o.s && r == o.r && alpha == o.alpha && excluded_bags == o.excluded_bags &&
          fit_seconds == o.fit_seconds && replica_seconds == o.replica_seconds &&
          estimation_seconds == o.estimation_seconds && eq(aggregate, o.aggregate) &&
          bag_summaries.size() == o.bag_summaries.size() &&
          bag_diagnostics.size() == o.bag_diagnostics.size()))
      return false;
    for (std::size_t i = 0; i < bag_summaries.size(); ++i)
      if (!eq(bag_summaries[i], o.bag_summaries[i])) return false;
    for (std::size_t i = 0; i < bag_diagnostics.size(); ++i) {
      const auto& a = bag_diagnostics[i];
      const auto& bdg = o.bag_diagnostics[i];
      if (!(a.bag_index == bdg.bag_index && a.failed == bdg.failed && a.failure == bdg.failure &&
            a.replicas_skipped == bdg.replicas_skipped && a.skip_flagged == bdg.skip_flagged &&
            a.scale_flagged == bdg.scale_flagged && a.sigma == bdg.sigma &&
            a.correction_condition == bdg.correction_condition &&
            a.fit_seconds == bdg.fit_seconds && a.replica_seconds == bdg.replica_seconds))
        return false;
    }
    return true;
  }
};

inline SavedResults saved_results_from_run(const RunResult& run) {
  SavedResults sv;
  sv.method = method_name(run.method);
  sv.n = run.n;
  sv.b = run.b;
  sv.s = run.s;
  sv.r = run.r;
  sv.alpha = run.aggregate.alpha;
  sv.aggregate = run.aggregate;
  for (const auto& bag : run.bags) {
    sv.bag_summaries.push_back(bag.summary);
    sv.bag_diagnostics.push_back(bag.diag);
  }
  sv.excluded_bags = run.excluded_bags;
  sv.fit_seconds = run.fit_seconds;
  sv.replica_seconds = run.replica_seconds;
  sv.estimation_seconds = run.estimation_seconds;
  return sv;
}

inline void save_results(const SavedResults& sv, const std::string& path) {
  nlohmann::json j;
  j["schema_version"] = sv.schema_version;
  j["method"] = sv.method;
  j["n"] = sv.n;
  j["b"] = sv.b;
  j["s"] = sv.s;
  j["r"] = sv.r;
  j["alpha"] = sv.alpha;
  j["aggregate"] = to_json(sv.aggregate);
  j["bag_summaries"] = nlohmann::json::array();
  for (const auto& s : sv.bag_summaries) j["bag_summaries"].push_back(to_json(s));
  j["bag_diagnostics"] = nlohmann::json::array();
  for (const auto& d : sv.bag_diagnostics) j["bag_diagnostics"].push_back(to_json(d));
  j["excluded_bags"] = sv.excluded_bags;
  j["fit_seconds"] = sv.fit_seconds;
  j["replica_seconds"] = sv.replica_seconds;
  j["estimation_seconds"] = sv.estimation_seconds;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

inline SavedResults load_results(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("cannot parse '" + path + "': " + e.what());
  }
  SavedResults sv;
  if (!j.contains("schema_version") || !j.at("schema_version").is_number_integer())
    throw VersionError("'" + path + "': missing schema_version");
  sv.schema_version = j.at("schema_version").get<int>();
  if (sv.schema_version != kResultsSchemaVersion)
    throw VersionError("'" + path + "': schema version " + std::to_string(sv.schema_version) +
                       ", expected " + std::to_string(kResultsSchemaVersion));
  sv.method = j.at("method").get<std::string>();
  sv.n = j.at("n").get<Index>();
  sv.b = j.at("b").get<Index>();
  sv.s = j.at("s").get<int>();
  sv.r = j.at("r").get<int>();
  sv.alpha = j.at("alpha").get<double>();
  sv.aggregate = summary_from_json(j.at("aggregate"));
  for (const auto& js : j.at("bag_summaries")) sv.bag_summaries.push_back(summary_from_json(js));
  for (const auto& jd : j.at("bag_diagnostics")) sv.bag_diagnostics.push_back(diagnostics_from_json(jd));
  sv.excluded_bags = j.at("excluded_bags").get<std::vector<int>>();
  sv.fit_seconds = j.at("fit_seconds").get<double>();
  sv.replica_seconds = j.at("replica_seconds").get<double>();
  sv.estimation_seconds = j.at("estimation_seconds").get<double>();
  return sv;
}

/// Everything needed to reproduce a run bit-exactly: resolved settings,
/// dataset fingerprint, seeds, per-bag diagnostics and timings.
inline nlohmann::json make_manifest(const std::string& command, const nlohmann::json& settings,
                                    const Dataset& data, const RunResult* run) {
  nlohmann::json j;
  j["schema_version"] = kResultsSchemaVersion;
  j["command"] = command;
  j["settings"] = settings;
  {
    std::ostringstream hex;
    hex << std::hex << dataset_fingerprint(data);
    j["dataset"] = {{"rows", data.n()}, {"cols", data.p()}, {"fingerprint", hex.str()}};
  }
  if (run) {
    j["run"] = {{"b", run->b},
                {"s", run->s},
                {"r", run->r},
                {"method", method_name(run->method)},
                {"fit_seconds", run->fit_seconds},
                {"replica_seconds", run->replica_seconds},
                {"estimation_seconds", run->estimation_seconds},
                {"excluded_bags", run->excluded_bags}};
    j["bag_diagnostics"] = nlohmann::json::array();
    for (const auto& bag : run->bags) j["bag_diagnostics"].push_back(to_json(bag.diag));
  }
  return j;
}

}  // namespace blfrb
