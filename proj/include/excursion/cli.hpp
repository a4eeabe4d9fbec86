/**
 * `excursion` command line: fit | simulate | replicate | sweep | oracle.
 *
 * Exit codes: 0 ok, 1 other estimation failure, 2 schema/validation,
 * 3 singular design, 4 config or usage, 5 replicate/sweep/oracle failure.
 */
#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "excursion/json_io.hpp"

namespace excursion {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int failure = 1;
inline constexpr int data = 2;
inline constexpr int singular = 3;
inline constexpr int config = 4;
inline constexpr int batch = 5;
}  // namespace exit_code

namespace detail {

/// Output goes to `path`, or to `fallback` when the path is empty or "-".
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) : to_file_(!path.empty() && path != "-") {
    if (to_file_) {
      file_ = std::make_unique<std::ofstream>(path, std::ios::binary);
      if (!*file_) throw ConfigError("cannot write " + path);
    }
    stream_ = to_file_ ? file_.get() : &fallback;
  }
  std::ostream& out() { return *stream_; }
  bool to_file() const { return to_file_; }

 private:
  bool to_file_;
  std::unique_ptr<std::ofstream> file_;
  std::ostream* stream_;
};

inline unsigned resolve_threads(unsigned flag) {
  if (const char* env = std::getenv("EXCURSION_THREADS"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) throw ConfigError(std::string("EXCURSION_THREADS must be a positive integer, got '") + env + "'");
    return static_cast<unsigned>(v);
  }
  return flag == 0 ? default_threads() : flag;
}

inline ScenarioConfig seeded_scenario(const RunConfig& cfg, const std::optional<std::uint64_t>& seed) {
  if (!cfg.scenario) throw ConfigError("config has no 'scenario' section");
  ScenarioConfig s = *cfg.scenario;
  if (seed) s.seed = *seed;
  else if (!cfg.has_seed) throw ConfigError("a seed is required: set scenario.seed or pass --seed");
  return s;
}

inline std::vector<EstimatorSetup> default_estimators(const ScenarioConfig& s) {
  if (s.scenario == Scenario::IV) return {default_setup(EstimatorKind::cwcls_indirect)};
  return {default_setup(EstimatorKind::cwcls_direct), default_setup(EstimatorKind::wcls)};
}

inline void print_fit_summary(std::ostream& out, const FitResult& f) {
  char line[256];
  std::snprintf(line, sizeof line, "%s  delta=%d  policy=%s  units=%zu  dof=%d  adjusted=%s\n", to_string(f.kind).c_str(),
                f.delta, f.policy.label().c_str(), f.n_units, f.dof, f.adjusted ? "yes" : "no");
  out << line;
  std::snprintf(line, sizeof line, "%-24s %11s %11s %9s %9s %11s %11s\n", "coefficient", "estimate", "se", "t", "p",
                "ci_low", "ci_high");
  out << line;
  for (std::size_t i = 0; i < f.q(); ++i) {
    std::snprintf(line, sizeof line, "%-24s %11.5f %11.5f %9.3f %9.4f %11.5f %11.5f\n", f.beta_names[i].c_str(),
                  f.beta_hat(i), f.se(i), f.t_stat(i), f.p_value(i), f.ci_low(i), f.ci_high(i));
    out << line;
  }
}

inline int cmd_fit(const std::string& data, const std::string& config, const std::string& out_path,
                   std::optional<bool> adjust, std::optional<double> level, std::ostream& out, std::ostream& err) {
  const auto cfg = load_config(config);
  auto opts = cfg.fit.options;
  if (adjust) opts.adjust = *adjust;
  if (level) opts.level = *level;
  const auto ds = load_csv(data, cfg.schema);
  const auto f = fit(cfg.fit.estimator, ds, cfg.model, cfg.weights, cfg.policy, opts);
  Sink sink(out_path, out);
  sink.out() << fit_to_json(f).dump(2) << '\n';
  print_fit_summary(sink.to_file() ? out : err, f);
  return exit_code::ok;
}

inline int cmd_simulate(const std::string& config, const std::string& out_path, std::optional<std::uint64_t> seed,
                        std::ostream& out) {
  const auto cfg = load_config(config);
  const auto scenario = seeded_scenario(cfg, seed);
  const auto ds = generate(scenario);
  Sink sink(out_path, out);
  write_csv(sink.out(), ds);
  return exit_code::ok;
}

inline int cmd_replicate(const std::string& config, const std::string& out_path, std::optional<std::uint64_t> seed,
                         std::optional<std::size_t> n_reps, unsigned threads, std::ostream& out, std::ostream& err) {
  const auto cfg = load_config(config);
  const auto scenario = seeded_scenario(cfg, seed);
  auto estimators = cfg.replicate.estimators.empty() ? default_estimators(scenario) : cfg.replicate.estimators;
  const auto report = run(scenario, n_reps.value_or(cfg.replicate.n_reps), estimators, cfg.policy, threads);
  Sink sink(out_path, out);
  write_report_csv(sink.out(), report);
  write_report_table(sink.to_file() ? out : err, report);
  return exit_code::ok;
}

inline int cmd_sweep(const std::string& config, const std::string& out_path, std::optional<std::uint64_t> seed,
                     std::optional<std::size_t> n_reps, unsigned threads, std::ostream& out) {
  const auto cfg = load_config(config);
  if (!cfg.sweep) throw ConfigError("config has no 'sweep' section");
  const auto scenario = seeded_scenario(cfg, seed);
  auto estimators = cfg.sweep->estimators.empty() ? default_estimators(scenario) : cfg.sweep->estimators;
  const auto rows = sweep(scenario, cfg.sweep->axis, cfg.sweep->grid, n_reps.value_or(cfg.sweep->n_reps), estimators,
                          cfg.policy, threads);
  Sink sink(out_path, out);
  write_sweep_csv(sink.out(), rows);
  return exit_code::ok;
}

inline int cmd_oracle(const std::string& config, const std::string& out_path, std::optional<std::uint64_t> seed,
                      std::optional<std::size_t> n_mc, std::ostream& out) {
  const auto cfg = load_config(config);
  if (!cfg.scenario) throw ConfigError("config has no 'scenario' section");
  ScenarioConfig scenario = *cfg.scenario;
  if (seed) scenario.seed = *seed;
  auto estimands = cfg.oracle.estimands;
  if (estimands.empty()) {
    if (scenario.scenario == Scenario::IV) estimands.push_back({TruthSpec::Estimand::indirect_marginal, cfg.policy});
    else if (is_lag(scenario.scenario)) estimands.push_back({TruthSpec::Estimand::lag_direct, cfg.policy});
    else estimands.push_back({TruthSpec::Estimand::direct_marginal, cfg.policy});
  }
  Sink sink(out_path, out);
  sink.out() << "scenario,estimand,policy,analytic,oracle,mc_se,n_mc,z\n";
  for (const auto& e : estimands) {
    const auto o = oracle_effect(scenario, e, n_mc.value_or(cfg.oracle.n_mc));
    std::string analytic, z;
    try {
      const double a = true_effect(scenario, e).intercept;
      analytic = format_double(a);
      z = format_double(o.mc_se > 0.0 ? (o.estimate - a) / o.mc_se : 0.0);
    } catch (const UnsupportedAnalyticsError&) {
    }
    sink.out() << to_string(scenario.scenario) << ',' << to_string(e.estimand) << ',' << e.policy.label() << ','
               << analytic << ',' << format_double(o.estimate) << ',' << format_double(o.mc_se) << ',' << o.n_mc
               << ',' << z << '\n';
  }
  return exit_code::ok;
}

/// Exit code for an exception raised by subcommand `cmd`.
inline int classify(const std::exception& e, const std::string& cmd) {
  if (dynamic_cast<const ConfigError*>(&e)) return exit_code::config;
  if (cmd == "replicate" || cmd == "sweep" || cmd == "oracle") return exit_code::batch;
  if (dynamic_cast<const SchemaError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
      dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const InsufficientDataError*>(&e)) {
    return exit_code::data;
  }
  if (dynamic_cast<const SingularityError*>(&e)) return exit_code::singular;
  if (dynamic_cast<const SpecError*>(&e) || dynamic_cast<const WeightPlanError*>(&e)) return exit_code::config;
  return exit_code::failure;
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Causal excursion effects for clustered micro-randomized trials", "excursion"};
  app.require_subcommand(1);

  std::string data, config, out_path;
  std::uint64_t seed_value = 0;
  std::size_t reps_value = 0, nmc_value = 0;
  unsigned threads = 0;
  bool no_adjust = false;
  double level_value = 0.95;

  auto* fit_cmd = app.add_subcommand("fit", "fit an estimator to long-format panel data");
  fit_cmd->add_option("data", data, "panel CSV")->required();
  fit_cmd->add_option("config", config, "JSON config")->required();
  fit_cmd->add_option("-o,--out", out_path, "write FitResult JSON here (default: stdout)");
  auto* no_adjust_flag = fit_cmd->add_flag("--no-adjust", no_adjust, "skip the small-sample covariance adjustment");
  auto* level_opt = fit_cmd->add_option("--level", level_value, "confidence level")->check(CLI::Range(0.0, 1.0));

  auto* sim_cmd = app.add_subcommand("simulate", "generate a scenario dataset");
  sim_cmd->add_option("config", config, "JSON config")->required();
  sim_cmd->add_option("-o,--out", out_path, "output CSV (default: stdout)");

  auto* rep_cmd = app.add_subcommand("replicate", "Monte Carlo table for one scenario");
  rep_cmd->add_option("config", config, "JSON config")->required();
  rep_cmd->add_option("-o,--out", out_path, "report CSV (default: stdout)");

  auto* sweep_cmd = app.add_subcommand("sweep", "coverage over a variance-ratio or group-size grid");
  sweep_cmd->add_option("config", config, "JSON config")->required();
  sweep_cmd->add_option("-o,--out", out_path, "sweep CSV (default: stdout)");

  auto* oracle_cmd = app.add_subcommand("oracle", "forced-assignment Monte Carlo truth vs analytic value");
  oracle_cmd->add_option("config", config, "JSON config")->required();
  oracle_cmd->add_option("-o,--out", out_path, "oracle CSV (default: stdout)");

  std::vector<CLI::Option*> seed_opts, reps_opts, thread_opts, nmc_opts;
  for (auto* c : {sim_cmd, rep_cmd, sweep_cmd, oracle_cmd})
    seed_opts.push_back(c->add_option("--seed", seed_value, "master seed (overrides scenario.seed)"));
  for (auto* c : {rep_cmd, sweep_cmd}) {
    reps_opts.push_back(c->add_option("--n-reps", reps_value, "replications")->check(CLI::PositiveNumber));
    thread_opts.push_back(c->add_option("--threads", threads, "worker threads (EXCURSION_THREADS overrides)"));
  }
  nmc_opts.push_back(oracle_cmd->add_option("--n-mc", nmc_value, "oracle draws")->check(CLI::PositiveNumber));

  std::vector<std::string> args;
  for (int i = argc - 1; i >= 1; --i) args.emplace_back(argv[i]);
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, r;
    const int code = app.exit(e, o, r);
    out << o.str();
    err << r.str();
    return code == 0 ? exit_code::ok : exit_code::config;
  }

  auto given = [](const std::vector<CLI::Option*>& opts) {
    for (auto* o : opts)
      if (o->count() > 0) return true;
    return false;
  };
  const std::optional<std::uint64_t> seed = given(seed_opts) ? std::optional(seed_value) : std::nullopt;
  const std::optional<std::size_t> n_reps = given(reps_opts) ? std::optional(reps_value) : std::nullopt;
  const std::optional<std::size_t> n_mc = given(nmc_opts) ? std::optional(nmc_value) : std::nullopt;

  const auto* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  try {
    if (sub == fit_cmd) {
      return detail::cmd_fit(data, config, out_path, no_adjust_flag->count() ? std::optional(false) : std::nullopt,
                             level_opt->count() ? std::optional(level_value) : std::nullopt, out, err);
    }
    if (sub == sim_cmd) return detail::cmd_simulate(config, out_path, seed, out);
    const unsigned workers = detail::resolve_threads(given(thread_opts) ? threads : 0);
    if (sub == rep_cmd) return detail::cmd_replicate(config, out_path, seed, n_reps, workers, out, err);
    if (sub == sweep_cmd) return detail::cmd_sweep(config, out_path, seed, n_reps, workers, out);
    return detail::cmd_oracle(config, out_path, seed, n_mc, out);
  } catch (const std::exception& e) {
    err << "excursion " << name << ": " << e.what() << '\n';
    return detail::classify(e, name);
  }
}

}  // namespace excursion
