// blfrb: scalable robust bootstrap analysis for linear regression.
//
// Subcommands map one-to-one onto the experiments the library supports:
//   analyze            CI / hypothesis-test table for a delimited dataset
//   simulate           relative-error trace on synthetic data (eps vs r, time)
//   contaminate-study  clean-vs-contaminated relative errors per method
//   breakdown-table    upper breakdown points of the bag quantile estimates
//   consistency        bag-level replica distribution vs the asymptotic law
//   make-synthetic     write a synthetic linear-model CSV
//
// Exit codes: 0 success, 2 configuration/input error, 3 numeric failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "blfrb/blfrb.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace blfrb;

namespace {

struct Settings {
  // data
  std::string data_path;
  Index response_col = 0;
  std::string delimiter = ",";
  bool has_header = false;
  bool add_intercept = false;
  // synthetic model
  Index n = 50000;
  Index p = 50;
  double sigma0 = std::sqrt(0.1);
  double theta_value = 1.0;
  bool msd_style = false;
  std::string out_file;
  // bootstrap setup
  double gamma = 0.7;
  int bags = 0;  // 0: cover the sample
  int replicas = 300;
  std::string r_schedule;  // comma list; empty: doubling up to replicas
  double alpha = 0.05;
  std::string method = "blfrb-mm";
  std::string methods;  // contaminate-study: comma list
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out_dir = "blfrb-out";
  std::string config_path;
  // estimator tunings
  double c0 = kTukeyC0;
  double c1 = kTukeyC1;
  int fast_s_candidates = 500;
  bool theta_only_correction = false;
  // contamination
  std::string alphas = "1000,1000000";
  double fraction = -1.0;
  long count = 1;
  std::string target = "bag0";  // bag0 | whole
  std::string contam_mode = "row";
  // breakdown grid
  std::string p_list = "50,100,200";
  std::string n_list = "50000,200000,1000000";
  std::string gamma_list = "0.6,0.7,0.8";
};

template <typename T>
std::vector<T> parse_list(const std::string& csv) {
  std::vector<T> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::stringstream conv(item);
    T v;
    conv >> v;
    if (conv.fail()) throw ConfigError("cannot parse list item '" + item + "'");
    out.push_back(v);
  }
  return out;
}

std::string fmt(double v) { return detail::shortest_repr(v); }

BlfrbConfig engine_config(const Settings& s) {
  BlfrbConfig cfg;
  cfg.gamma = s.gamma;
  cfg.bags = s.bags;
  cfg.replicas = s.replicas;
  cfg.seed = s.seed;
  cfg.alpha = s.alpha;
  cfg.threads = s.threads;
  const auto m = method_from_name(s.method);
  if (!m) throw ConfigError("unknown method '" + s.method + "'");
  cfg.method = *m;
  cfg.fit.c0 = s.c0;
  cfg.fit.c1 = s.c1;
  cfg.fit.s_candidates = s.fast_s_candidates;
  cfg.correction.mode = s.theta_only_correction ? CorrectionMode::kThetaOnly : CorrectionMode::kJoint;
  return cfg;
}

double method_efficiency(Method m) { return m == Method::kBlbLs ? 1.0 : kMmEfficiency; }

json settings_json(const Settings& s, const std::string& subcommand) {
  return json{{"subcommand", subcommand},
              {"data", s.data_path},
              {"response_col", s.response_col},
              {"delimiter", s.delimiter},
              {"header", s.has_header},
              {"intercept", s.add_intercept},
              {"n", s.n},
              {"p", s.p},
              {"sigma0", s.sigma0},
              {"theta_value", s.theta_value},
              {"gamma", s.gamma},
              {"bags", s.bags},
              {"replicas", s.replicas},
              {"r_schedule", s.r_schedule},
              {"alpha", s.alpha},
              {"method", s.method},
              {"methods", s.methods},
              {"seed", s.seed},
              {"threads", s.threads},
              {"c0", s.c0},
              {"c1", s.c1},
              {"fast_s_candidates", s.fast_s_candidates},
              {"theta_only_correction", s.theta_only_correction},
              {"alphas", s.alphas},
              {"fraction", s.fraction},
              {"count", s.count},
              {"target", s.target},
              {"contam_mode", s.contam_mode}};
}

void write_manifest(const Settings& s, const std::string& subcommand, const Dataset& data,
                    const RunResult* run) {
  const json manifest = make_manifest(subcommand, settings_json(s, subcommand), data, run);
  std::ofstream out(fs::path(s.out_dir) / "manifest.json");
  out << manifest.dump(2) << '\n';
}

std::vector<int> schedule_of(const Settings& s) {
  if (!s.r_schedule.empty()) {
    auto sched = parse_list<int>(s.r_schedule);
    if (sched.empty()) throw ConfigError("empty --r-schedule");
    return sched;
  }
  std::vector<int> sched;
  for (int r = 2; r < s.replicas; r *= 2) sched.push_back(r);
  if (sched.empty() || sched.back() != s.replicas) sched.push_back(s.replicas);
  return sched;
}

Dataset load_or_generate(const Settings& s) {
  if (!s.data_path.empty()) {
    CsvOptions opt;
    opt.delimiter = s.delimiter.empty() ? ',' : s.delimiter[0];
    opt.has_header = s.has_header;
    opt.response_col = s.response_col;
    opt.add_intercept = s.add_intercept;
    return load_csv(s.data_path, opt);
  }
  return generate_synthetic(s.n, s.p, Vector::Constant(s.p, s.theta_value), s.sigma0, s.seed);
}

// ---------------------------------------------------------------------------

int cmd_analyze(const Settings& s) {
  const Dataset data = load_or_generate(s);
  const BlfrbConfig cfg = engine_config(s);
  const RunResult rr = run(data, cfg);
  const auto reject = ci_and_test(rr.aggregate);

  fs::create_directories(s.out_dir);
  {
    std::ofstream out(fs::path(s.out_dir) / "coordinates.tsv");
    // Upper-quantile convention: ci_lower = q_{1-alpha/2}, ci_upper = q_{alpha/2};
    // identical to the lower-quantile interval [Q(alpha/2), Q(1-alpha/2)].
    out << "# ci at level " << fmt(1.0 - s.alpha) << "; reject = 1 iff 0 outside the interval\n";
    out << "coordinate\tsd\tci_lower\tci_upper\treject\n";
    for (Index l = 0; l < rr.aggregate.sd.size(); ++l)
      out << l << '\t' << fmt(rr.aggregate.sd[l]) << '\t' << fmt(rr.aggregate.ci_lower[l]) << '\t'
          << fmt(rr.aggregate.ci_upper[l]) << '\t' << (reject[static_cast<std::size_t>(l)] ? 1 : 0)
          << '\n';
  }
  save_results(saved_results_from_run(rr), (fs::path(s.out_dir) / "results.json").string());
  write_manifest(s, "analyze", data, &rr);

  int rejected = 0;
  std::vector<Index> accepted;
  for (Index l = 0; l < static_cast<Index>(reject.size()); ++l) {
    if (reject[static_cast<std::size_t>(l)])
      ++rejected;
    else
      accepted.push_back(l);
  }
  std::cout << "analyze: n=" << rr.n << " p=" << data.p() << " b=" << rr.b << " s=" << rr.s
            << " r=" << rr.r << "\n";
  std::cout << "rejected H0 (theta_l = 0) for " << rejected << "/" << reject.size()
            << " coordinates at alpha=" << s.alpha << "\n";
  if (!accepted.empty()) {
    std::cout << "accepted coordinates:";
    for (Index l : accepted) std::cout << ' ' << l;
    std::cout << "\n";
  }
  std::cout << "estimation time " << fmt(rr.estimation_seconds) << " s; results in " << s.out_dir
            << "\n";
  return 0;
}

int cmd_simulate(const Settings& s) {
  if (method_from_name(s.method) == Method::kClassicalMm)
    throw ConfigError("simulate supports blfrb-mm, blb-mm-full and blb-ls");
  const Dataset data = load_or_generate(s);
  const BlfrbConfig cfg = engine_config(s);
  const RunPlan plan = make_plan(data.n(), cfg);
  const auto sched = schedule_of(s);
  const double efficiency = method_efficiency(cfg.method);

  fs::create_directories(s.out_dir);
  std::ofstream trace(fs::path(s.out_dir) / "trace.tsv");
  trace << "r\tepsilon\tcumulative_seconds\n";
  const RunResult rr = run_schedule(data, cfg, plan, sched, [&](const TraceRow& row) {
    const double eps = relative_error(row.aggregate.sd, s.sigma0, data.n(), efficiency);
    trace << row.r << '\t' << fmt(eps) << '\t' << fmt(row.elapsed_seconds) << '\n';
    std::cout << "r=" << row.r << " eps=" << fmt(eps) << " t=" << fmt(row.elapsed_seconds) << "s\n";
  });

  save_results(saved_results_from_run(rr), (fs::path(s.out_dir) / "results.json").string());
  write_manifest(s, "simulate", data, &rr);
  std::cout << "simulate: method=" << s.method << " b=" << rr.b << " s=" << rr.s
            << " final eps=" << fmt(relative_error(rr.aggregate.sd, s.sigma0, data.n(), efficiency))
            << "\n";
  return 0;
}

int cmd_contaminate_study(const Settings& s) {
  const Dataset data = load_or_generate(s);
  const auto methods = s.methods.empty() ? std::vector<std::string>{s.method}
                                         : parse_list<std::string>(s.methods);
  const auto alphas = parse_list<double>(s.alphas);

  ContaminationSpec spec;
  spec.alpha = 0.0;
  if (s.fraction >= 0.0) {
    spec.fraction = s.fraction;
    spec.count = -1;
  } else {
    spec.count = s.count;
  }
  spec.seed = s.seed;
  if (s.contam_mode == "row")
    spec.mode = ContaminationMode::kRow;
  else if (s.contam_mode == "response")
    spec.mode = ContaminationMode::kResponse;
  else
    throw ConfigError("contamination mode must be 'row' or 'response'");

  fs::create_directories(s.out_dir);
  std::ofstream report(fs::path(s.out_dir) / "report.tsv");
  report << "method\talpha\tepsilon_clean\tepsilon_contaminated\texcluded_bags\tflagged_bags\n";

  for (const auto& mname : methods) {
    Settings ms = s;
    ms.method = mname;
    const BlfrbConfig cfg = engine_config(ms);
    const RunPlan plan = make_plan(data.n(), cfg);
    const double efficiency = method_efficiency(cfg.method);
    const RunResult clean = run_schedule(data, cfg, plan, {cfg.replicas});
    const double eps_clean = relative_error(clean.aggregate.sd, s.sigma0, data.n(), efficiency);

    for (double a : alphas) {
      ContaminationSpec cs = spec;
      cs.alpha = a;
      const std::vector<Index>* pool = nullptr;
      if (s.target == "bag0")
        pool = &plan.bag_indices[0];
      else if (s.target != "whole")
        throw ConfigError("target must be 'bag0' or 'whole'");
      const Dataset dirty = contaminate(data, cs, pool).first;
      int flagged = 0;
      double eps_cont = std::numeric_limits<double>::quiet_NaN();
      std::size_t excluded = 0;
      try {
        const RunResult rr = run_schedule(dirty, cfg, plan, {cfg.replicas});
        eps_cont = relative_error(rr.aggregate.sd, s.sigma0, data.n(), efficiency);
        excluded = rr.excluded_bags.size();
        for (const auto& bag : rr.bags)
          if (bag.diag.scale_flagged || bag.diag.failed) ++flagged;
      } catch (const RunError&) {
        excluded = static_cast<std::size_t>(plan.s);
        flagged = plan.s;
      }
      report << mname << '\t' << fmt(a) << '\t' << fmt(eps_clean) << '\t' << fmt(eps_cont) << '\t'
             << excluded << '\t' << flagged << '\n';
      std::cout << mname << " alpha=" << fmt(a) << ": eps " << fmt(eps_clean) << " -> "
                << fmt(eps_cont) << " (excluded " << excluded << ")\n";
    }
  }
  write_manifest(s, "contaminate-study", data, nullptr);
  return 0;
}

int cmd_breakdown_table(const Settings& s) {
  const auto rep = breakdown_table(parse_list<Index>(s.p_list), parse_list<Index>(s.n_list),
                                   parse_list<double>(s.gamma_list));
  fs::create_directories(s.out_dir);
  std::ofstream tsv(fs::path(s.out_dir) / "table.tsv");
  tsv << "p\tn\tgamma\tb\tdelta_b\tfeasible\n";
  for (const auto& row : rep.rows)
    tsv << row.p << '\t' << row.n << '\t' << fmt(row.gamma) << '\t' << row.b << '\t'
        << (row.feasible ? fmt(row.delta_b) : "-") << '\t' << (row.feasible ? 1 : 0) << '\n';

  const auto gammas = parse_list<double>(s.gamma_list);
  std::cout << "upper breakdown point of the bag quantile estimates\n";
  std::cout << "    p        n";
  for (double g : gammas) {
    std::ostringstream head;
    head << "gamma=" << g;
    std::cout << '\t' << head.str();
  }
  std::cout << '\n';
  char buf[64];
  for (std::size_t i = 0; i < rep.rows.size(); i += gammas.size()) {
    const auto& first = rep.rows[i];
    std::snprintf(buf, sizeof buf, "%5lld %8lld", static_cast<long long>(first.p),
                  static_cast<long long>(first.n));
    std::cout << buf;
    for (std::size_t g = 0; g < gammas.size(); ++g) {
      const auto& row = rep.rows[i + g];
      if (row.feasible)
        std::snprintf(buf, sizeof buf, "%.3f", row.delta_b);
      else
        std::snprintf(buf, sizeof buf, "-");
      std::cout << '\t' << buf;
    }
    std::cout << '\n';
  }
  const json manifest = {{"schema_version", kResultsSchemaVersion},
                         {"command", "breakdown-table"},
                         {"settings", settings_json(s, "breakdown-table")}};
  std::ofstream out(fs::path(s.out_dir) / "manifest.json");
  out << manifest.dump(2) << '\n';
  return 0;
}

int cmd_consistency(const Settings& s) {
  const Dataset data = load_or_generate(s);
  Settings ss = s;
  ss.bags = 1;
  ss.method = "blfrb-mm";
  BlfrbConfig cfg = engine_config(ss);
  cfg.replicas = s.replicas;
  const RunResult rr = run(data, cfg);
  const auto& bag = rr.bags.front();
  const auto rep = consistency_diagnostic(bag.replica_thetas, bag.fit->theta_mm, data.n(), s.sigma0,
                                          kMmEfficiency);

  fs::create_directories(s.out_dir);
  {
    std::ofstream ks(fs::path(s.out_dir) / "ks.tsv");
    ks << "coordinate\tks\tcritical_1pct\tpass\n";
    for (Index l = 0; l < rep.ks.size(); ++l)
      ks << l << '\t' << fmt(rep.ks[l]) << '\t' << fmt(rep.ks_critical_1pct) << '\t'
         << (rep.ks[l] < rep.ks_critical_1pct ? 1 : 0) << '\n';
  }
  {
    // Empirical cdf of sqrt(n)(theta* - theta_hat): average plus the best and
    // worst coordinates, against the asymptotic target.
    const double root_n = std::sqrt(static_cast<double>(data.n()));
    auto ecdf_of = [&](Index l, double x) {
      int cnt = 0;
      for (Index j = 0; j < bag.replica_thetas.rows(); ++j)
        if (root_n * (bag.replica_thetas(j, l) - bag.fit->theta_mm[l]) <= x) ++cnt;
      return static_cast<double>(cnt) / static_cast<double>(bag.replica_thetas.rows());
    };
    std::ofstream cdf(fs::path(s.out_dir) / "cdf.tsv");
    cdf << "x\taveraged_ecdf\tbest_ecdf\tworst_ecdf\ttarget_cdf\n";
    for (std::size_t g = 0; g < rep.grid.size(); ++g)
      cdf << fmt(rep.grid[g]) << '\t' << fmt(rep.averaged_ecdf[g]) << '\t'
          << fmt(ecdf_of(rep.best_coordinate, rep.grid[g])) << '\t'
          << fmt(ecdf_of(rep.worst_coordinate, rep.grid[g])) << '\t' << fmt(rep.target_cdf[g])
          << '\n';
  }
  write_manifest(s, "consistency", data, &rr);

  int pass = 0;
  for (Index l = 0; l < rep.ks.size(); ++l)
    if (rep.ks[l] < rep.ks_critical_1pct) ++pass;
  std::cout << "consistency: b=" << rr.b << " r=" << rr.r << "\n";
  std::cout << "KS(1%) pass " << pass << "/" << rep.ks.size()
            << "; best coord " << rep.best_coordinate << " (ks=" << fmt(rep.ks[rep.best_coordinate])
            << "), worst coord " << rep.worst_coordinate << " (ks="
            << fmt(rep.ks[rep.worst_coordinate]) << ")\n";
  std::cout << "averaged-cdf ks=" << fmt(rep.averaged_cdf_ks) << " (critical "
            << fmt(rep.ks_critical_1pct) << ")\n";
  return 0;
}

int cmd_make_synthetic(const Settings& s) {
  Dataset d = generate_synthetic(s.n, s.p, Vector::Constant(s.p, s.theta_value), s.sigma0, s.seed);
  if (s.msd_style) d.y = (d.y.array() * 5.0 + 1985.0).round();  // year-like response
  const std::string path = s.out_file.empty() ? "synthetic.csv" : s.out_file;
  fs::create_directories(fs::path(path).parent_path().empty() ? "." : fs::path(path).parent_path());
  write_csv(d, path);
  std::cout << "wrote " << path << " (n=" << s.n << ", p=" << s.p << ")\n";
  return 0;
}

void add_common(CLI::App* sub, Settings& s) {
  sub->add_option("--gamma", s.gamma, "subsample exponent in [0.6, 0.9]");
  sub->add_option("--bags", s.bags, "bag count s (0: cover the sample)");
  sub->add_option("--replicas", s.replicas, "bootstrap samples per bag");
  sub->add_option("--alpha", s.alpha, "test / CI level");
  sub->add_option("--method", s.method, "blfrb-mm | blb-mm-full | blb-ls | classical-bootstrap");
  sub->add_option("--seed", s.seed, "master seed");
  sub->add_option("--threads", s.threads, "worker threads (results identical for any value)");
  sub->add_option("--out-dir", s.out_dir, "output directory");
  sub->add_option("--config", s.config_path, "JSON config overlay (flags win)");
  sub->add_option("--c0", s.c0, "S-stage tuning constant");
  sub->add_option("--c1", s.c1, "MM-stage tuning constant");
  sub->add_option("--fast-s-candidates", s.fast_s_candidates, "elemental candidates in the S search");
  sub->add_flag("--theta-only-correction", s.theta_only_correction,
                "correct theta alone instead of the joint (theta, sigma) map");
}

void add_synthetic(CLI::App* sub, Settings& s) {
  sub->add_option("--n", s.n, "sample size");
  sub->add_option("--p", s.p, "regressor dimension");
  sub->add_option("--sigma0", s.sigma0, "noise scale");
  sub->add_option("--theta-value", s.theta_value, "true coefficient value (all coordinates)");
}

void apply_config_overlay(Settings& s, int argc, char** argv) {
  // Flags always win over the config file, so the overlay loads first and the
  // regular parse afterwards overwrites whatever was given explicitly.
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") {
      std::ifstream in(argv[i + 1]);
      if (!in) throw ConfigError(std::string("cannot open config '") + argv[i + 1] + "'");
      json j;
      try {
        in >> j;
      } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
      }
      auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
      };
      get("gamma", s.gamma);
      get("bags", s.bags);
      get("replicas", s.replicas);
      get("alpha", s.alpha);
      get("method", s.method);
      get("seed", s.seed);
      get("threads", s.threads);
      get("out_dir", s.out_dir);
      get("c0", s.c0);
      get("c1", s.c1);
      get("fast_s_candidates", s.fast_s_candidates);
      get("n", s.n);
      get("p", s.p);
      get("sigma0", s.sigma0);
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bag of little fast-and-robust bootstraps for linear regression"};
  app.require_subcommand(1);
  Settings s;

  auto* analyze = app.add_subcommand("analyze", "CI and hypothesis-test table for a dataset");
  analyze->add_option("--data", s.data_path, "delimited input file")->required();
  analyze->add_option("--response-col", s.response_col, "response column index (default 0)");
  analyze->add_option("--delimiter", s.delimiter, "field delimiter");
  analyze->add_flag("--header", s.has_header, "skip a header row");
  analyze->add_flag("--intercept", s.add_intercept, "append an intercept column");
  add_common(analyze, s);

  auto* simulate = app.add_subcommand("simulate", "relative-error trace on synthetic data");
  add_synthetic(simulate, s);
  simulate->add_option("--r-schedule", s.r_schedule, "comma list of replica checkpoints");
  add_common(simulate, s);

  auto* contam = app.add_subcommand("contaminate-study", "clean vs contaminated relative errors");
  add_synthetic(contam, s);
  contam->add_option("--alphas", s.alphas, "comma list of outlier multipliers");
  contam->add_option("--fraction", s.fraction, "contaminated fraction of the target");
  contam->add_option("--count", s.count, "contaminated row count (ignored if --fraction set)");
  contam->add_option("--target", s.target, "bag0 | whole");
  contam->add_option("--mode", s.contam_mode, "row | response");
  contam->add_option("--methods", s.methods, "comma list of methods to compare");
  add_common(contam, s);

  auto* table = app.add_subcommand("breakdown-table", "upper breakdown points over a grid");
  table->add_option("--p-list", s.p_list, "comma list of dimensions");
  table->add_option("--n-list", s.n_list, "comma list of sample sizes");
  table->add_option("--gamma-list", s.gamma_list, "comma list of exponents");
  table->add_option("--out-dir", s.out_dir, "output directory");
  table->add_option("--config", s.config_path, "JSON config overlay");

  auto* consist = app.add_subcommand("consistency", "replica distribution vs asymptotic law");
  add_synthetic(consist, s);
  add_common(consist, s);

  auto* synth = app.add_subcommand("make-synthetic", "write a synthetic linear-model CSV");
  add_synthetic(synth, s);
  synth->add_option("--out", s.out_file, "output CSV path");
  synth->add_option("--seed", s.seed, "generator seed");
  synth->add_flag("--msd-style", s.msd_style, "year-like integer response");

  try {
    apply_config_overlay(s, argc, argv);
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*analyze) return cmd_analyze(s);
    if (*simulate) return cmd_simulate(s);
    if (*contam) return cmd_contaminate_study(s);
    if (*table) return cmd_breakdown_table(s);
    if (*consist) return cmd_consistency(s);
    if (*synth) return cmd_make_synthetic(s);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const std::runtime_error& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
