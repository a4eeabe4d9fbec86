/**
 * Replication harness: table metrics per (scenario, estimator, M, G) and
 * coverage sweeps over the b_g/e_g variance ratio or the cluster size.
 *
 * Replication r always simulates with derive_seed(cfg.seed, r) and results
 * are aggregated in rep order, so reports do not depend on the number of
 * worker threads.
 */
#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "excursion/estimate.hpp"
#include "excursion/simulate.hpp"

namespace excursion {

/// Runs fn(i) for i in [0, n) on up to `threads` workers. The first
/// exception in index order is rethrown after all workers finish.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned k = 0; k < threads; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline unsigned default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

/// How one estimator is fitted inside a replication.
struct EstimatorSetup {
  EstimatorKind kind = EstimatorKind::cwcls_direct;
  ModelSpec spec;
  WeightPlan plan;
  FitOptions options;
};

/// f = [intercept], g = [intercept, S]; direct plans use p~ = 0.5, the
/// indirect plan uses pooled empirical pair frequencies.
inline EstimatorSetup default_setup(EstimatorKind kind) {
  EstimatorSetup s;
  s.kind = kind;
  s.spec = ModelSpec::from_labels({"intercept"}, {"intercept", "S"});
  if (kind == EstimatorKind::cwcls_indirect) s.plan.numerator = WeightPlan::Numerator::empirical_pair;
  return s;
}

inline TruthSpec truth_for(const ScenarioConfig& cfg, EstimatorKind kind, const ReferencePolicy& policy) {
  if (kind == EstimatorKind::cwcls_indirect) return {TruthSpec::Estimand::indirect_marginal, policy};
  return {is_lag(cfg.scenario) ? TruthSpec::Estimand::lag_direct : TruthSpec::Estimand::direct_marginal, policy};
}

struct ReplicationRow {
  std::string scenario;
  std::string estimator;
  std::string policy;
  int M = 0, G = 0, T = 0;
  std::size_t n_reps = 0;
  double truth = 0.0;
  double mean_estimate = 0.0;
  double mc_sd = 0.0;
  double mean_se = 0.0;
  double rmse = 0.0;
  double coverage = 0.0;
};

struct ReplicationReport {
  std::vector<ReplicationRow> rows;
  double wall_seconds = 0.0;  // not part of the CSV, which must be schedule-independent
};

struct RepOutcome {
  double estimate = 0.0, se = 0.0;
  bool covered = false;
};

namespace detail {

inline ReplicationRow summarize(const ScenarioConfig& cfg, const EstimatorSetup& setup, const ReferencePolicy& policy,
                                double truth, const std::vector<RepOutcome>& reps) {
  ReplicationRow row;
  row.scenario = to_string(cfg.scenario);
  row.estimator = display_name(setup.kind);
  row.policy = policy.label();
  row.M = cfg.M;
  row.G = cfg.G;
  row.T = cfg.T;
  row.n_reps = reps.size();
  row.truth = truth;
  const double n = static_cast<double>(reps.size());
  double sum = 0.0, se = 0.0, sq = 0.0, hits = 0.0;
  for (const auto& r : reps) {
    sum += r.estimate;
    se += r.se;
    sq += (r.estimate - truth) * (r.estimate - truth);
    hits += r.covered ? 1.0 : 0.0;
  }
  row.mean_estimate = sum / n;
  double ss = 0.0;
  for (const auto& r : reps) ss += (r.estimate - row.mean_estimate) * (r.estimate - row.mean_estimate);
  row.mc_sd = std::sqrt(ss / (n - 1.0));
  row.mean_se = se / n;
  row.rmse = std::sqrt(sq / n);
  row.coverage = hits / n;
  return row;
}

}  // namespace detail

/// Simulates `n_reps` datasets, fits every estimator to each, and scores the
/// first beta coefficient against the analytic truth.
inline ReplicationReport run(const ScenarioConfig& cfg, std::size_t n_reps, const std::vector<EstimatorSetup>& estimators,
                             const ReferencePolicy& policy = {}, unsigned threads = default_threads()) {
  if (n_reps < 2) throw ReplicationError("replication needs n_reps >= 2");
  if (estimators.empty()) throw ReplicationError("no estimators requested");
  cfg.check();
  std::vector<double> truths;
  for (const auto& e : estimators) truths.push_back(true_effect(cfg, truth_for(cfg, e.kind, policy)).intercept);

  const auto start = std::chrono::steady_clock::now();
  std::vector<std::vector<RepOutcome>> out(estimators.size(), std::vector<RepOutcome>(n_reps));
  parallel_for(n_reps, threads, [&](std::size_t r) {
    ScenarioConfig rep = cfg;
    rep.seed = derive_seed(cfg.seed, r);
    const auto ds = generate(rep);
    for (std::size_t e = 0; e < estimators.size(); ++e) {
      const auto& setup = estimators[e];
      try {
        const auto f = fit(setup.kind, ds, setup.spec, setup.plan, policy, setup.options);
        if (f.dof <= 0) throw InferenceError("no residual degrees of freedom");
        out[e][r] = {f.beta_hat(0), f.se(0), f.ci_low(0) <= truths[e] && truths[e] <= f.ci_high(0)};
      } catch (const std::exception& ex) {
        throw ReplicationError("replication " + std::to_string(r) + " (seed " + std::to_string(rep.seed) + ", " +
                               display_name(setup.kind) + ") failed: " + ex.what());
      }
    }
  });
  ReplicationReport report;
  for (std::size_t e = 0; e < estimators.size(); ++e) {
    report.rows.push_back(detail::summarize(cfg, estimators[e], policy, truths[e], out[e]));
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

inline ReplicationReport run(const ScenarioConfig& cfg, std::size_t n_reps, const std::vector<EstimatorKind>& kinds,
                             const ReferencePolicy& policy = {}, unsigned threads = default_threads()) {
  std::vector<EstimatorSetup> setups;
  for (auto k : kinds) setups.push_back(default_setup(k));
  return run(cfg, n_reps, setups, policy, threads);
}

enum class SweepAxis { variance_ratio, group_size };

inline std::string to_string(SweepAxis a) { return a == SweepAxis::variance_ratio ? "variance_ratio" : "group_size"; }

inline SweepAxis parse_axis(const std::string& s) {
  if (s == "variance_ratio" || s == "ratio") return SweepAxis::variance_ratio;
  if (s == "group_size" || s == "G") return SweepAxis::group_size;
  throw ConfigError("unknown sweep axis '" + s + "' (expected variance_ratio or group_size)");
}

struct SweepRow {
  SweepAxis axis = SweepAxis::variance_ratio;
  double value = 0.0;
  ReplicationRow result;
};

/// One `run` per grid value: var_bg = value * var_eg, or G = value.
inline std::vector<SweepRow> sweep(const ScenarioConfig& base, SweepAxis axis, const std::vector<double>& grid,
                                   std::size_t n_reps, const std::vector<EstimatorSetup>& estimators,
                                   const ReferencePolicy& policy = {}, unsigned threads = default_threads()) {
  if (grid.empty()) throw ReplicationError("sweep grid is empty");
  std::vector<SweepRow> out;
  for (double v : grid) {
    ScenarioConfig cfg = base;
    if (axis == SweepAxis::variance_ratio) {
      if (!(v >= 0.0)) throw ReplicationError("variance ratio must be >= 0");
      cfg.var_bg = v * base.var_eg;
    } else {
      if (!(v >= 1.0) || v != std::floor(v)) throw ReplicationError("group size must be a positive integer");
      cfg.G = static_cast<int>(v);
    }
    for (auto& row : run(cfg, n_reps, estimators, policy, threads).rows) out.push_back({axis, v, std::move(row)});
  }
  return out;
}

// ---- output ----------------------------------------------------------------

namespace detail {

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace detail

inline void write_report_csv(std::ostream& out, const ReplicationReport& report) {
  out << "scenario,estimator,policy,clusters,size,T,n_reps,truth,estimate,mc_sd,se,rmse,coverage\n";
  for (const auto& r : report.rows) {
    out << r.scenario << ',' << r.estimator << ',' << r.policy << ',' << r.M << ',' << r.G << ',' << r.T << ','
        << r.n_reps << ',' << detail::format_double(r.truth) << ',' << detail::format_double(r.mean_estimate) << ','
        << detail::format_double(r.mc_sd) << ',' << detail::format_double(r.mean_se) << ','
        << detail::format_double(r.rmse) << ',' << detail::format_double(r.coverage) << '\n';
  }
}

/// Aligned text in the column order Scenario, Estimator, #Clusters, Size,
/// Estimate, SE, RMSE, CP (SE is the mean estimated SE; MC-SD follows).
inline void write_report_table(std::ostream& out, const ReplicationReport& report) {
  char line[256];
  std::snprintf(line, sizeof line, "%-9s %-10s %-15s %9s %5s %9s %7s %7s %7s %7s\n", "Scenario", "Estimator", "Policy",
                "#Clusters", "Size", "Estimate", "SE", "RMSE", "CP", "MC-SD");
  out << line;
  for (const auto& r : report.rows) {
    std::snprintf(line, sizeof line, "%-9s %-10s %-15s %9d %5d %9.3f %7.3f %7.3f %7.3f %7.3f\n", r.scenario.c_str(),
                  r.estimator.c_str(), r.policy.c_str(), r.M, r.G, r.mean_estimate, r.mean_se, r.rmse, r.coverage,
                  r.mc_sd);
    out << line;
  }
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "axis,value,scenario,estimator,clusters,size,n_reps,estimate,mc_sd,se,rmse,coverage\n";
  for (const auto& s : rows) {
    const auto& r = s.result;
    out << to_string(s.axis) << ',' << detail::format_double(s.value) << ',' << r.scenario << ',' << r.estimator << ','
        << r.M << ',' << r.G << ',' << r.n_reps << ',' << detail::format_double(r.mean_estimate) << ','
        << detail::format_double(r.mc_sd) << ',' << detail::format_double(r.mean_se) << ','
        << detail::format_double(r.rmse) << ',' << detail::format_double(r.coverage) << '\n';
  }
}

}  // namespace excursion
