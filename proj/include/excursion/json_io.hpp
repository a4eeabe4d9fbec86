/**
 * JSON bindings for run configurations and fit results.
 *
 * A config file holds optional sections
 *   schema, model, weights, policy, fit, scenario, replicate, sweep, oracle
 * and every section rejects unknown keys so typos fail loudly.
 */
#pragma once

#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "excursion/estimate.hpp"
#include "excursion/mc.hpp"
#include "excursion/panel.hpp"
#include "excursion/simulate.hpp"

namespace excursion {

using json = nlohmann::json;

namespace detail {

inline void allow_keys(const json& j, const std::string& section, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  const std::set<std::string> ok(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items()) {
    if (!ok.count(k)) throw ConfigError("unknown key '" + k + "' in config section '" + section + "'");
  }
}

template <class T>
T get(const json& j, const std::string& key, const std::string& section, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + section + "." + key + "' has the wrong type");
  }
}

}  // namespace detail

// ---- config sections -------------------------------------------------------

inline Schema schema_from_json(const json& j) {
  detail::allow_keys(j, "schema", {"cluster_id", "individual_id", "t", "available", "treatment", "rand_prob",
                                   "outcome", "moderators", "controls", "delta"});
  Schema s;
  s.cluster_id = detail::get(j, "cluster_id", "schema", s.cluster_id);
  s.individual_id = detail::get(j, "individual_id", "schema", s.individual_id);
  s.t = detail::get(j, "t", "schema", s.t);
  s.available = detail::get(j, "available", "schema", s.available);
  s.treatment = detail::get(j, "treatment", "schema", s.treatment);
  s.rand_prob = detail::get(j, "rand_prob", "schema", s.rand_prob);
  s.outcome = detail::get(j, "outcome", "schema", s.outcome);
  s.moderators = detail::get(j, "moderators", "schema", s.moderators);
  s.controls = detail::get(j, "controls", "schema", s.controls);
  s.delta = detail::get(j, "delta", "schema", s.delta);
  return s;
}

inline ModelSpec model_from_json(const json& j) {
  detail::allow_keys(j, "model", {"moderators", "controls"});
  return ModelSpec::from_labels(detail::get<std::vector<std::string>>(j, "moderators", "model", {"intercept"}),
                                detail::get<std::vector<std::string>>(j, "controls", "model", {"intercept"}));
}

inline WeightPlan weights_from_json(const json& j) {
  detail::allow_keys(j, "weights", {"numerator", "independent"});
  WeightPlan plan;
  plan.independent = detail::get(j, "independent", "weights", true);
  if (!j.contains("numerator")) return plan;
  const json& n = j.at("numerator");
  if (n.is_number()) {
    plan.constant = n.get<double>();
    return plan;
  }
  detail::allow_keys(n, "weights.numerator", {"kind", "value", "column", "by_time", "stratify_by"});
  const auto kind = detail::get<std::string>(n, "kind", "weights.numerator", "constant");
  if (kind == "constant") {
    plan.numerator = WeightPlan::Numerator::constant;
    plan.constant = detail::get(n, "value", "weights.numerator", plan.constant);
  } else if (kind == "column") {
    plan.numerator = WeightPlan::Numerator::column;
    plan.column = detail::get<std::string>(n, "column", "weights.numerator", "");
    if (plan.column.empty()) throw ConfigError("column numerator needs 'column'");
  } else if (kind == "empirical_pair") {
    plan.numerator = WeightPlan::Numerator::empirical_pair;
    plan.by_time = detail::get(n, "by_time", "weights.numerator", false);
    plan.stratify_by = detail::get<std::vector<std::string>>(n, "stratify_by", "weights.numerator", {});
  } else {
    throw ConfigError("unknown numerator kind '" + kind + "' (expected constant, column or empirical_pair)");
  }
  return plan;
}

inline ReferencePolicy policy_from_json(const json& j) {
  if (j.is_string()) return policy_from_json(json{{"kind", j}});
  detail::allow_keys(j, "policy", {"kind", "probs"});
  const auto kind = detail::get<std::string>(j, "kind", "policy", "observed");
  if (kind == "observed") return ReferencePolicy::observed();
  if (kind == "always_treat" || kind == "sequential") return ReferencePolicy::always_treat();
  if (kind == "always_control") return ReferencePolicy::always_control();
  if (kind == "fixed") {
    auto p = ReferencePolicy::fixed(detail::get<std::vector<double>>(j, "probs", "policy", {}));
    for (double v : p.probs)
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("fixed policy probabilities must lie in [0,1]");
    return p;
  }
  throw ConfigError("unknown policy kind '" + kind + "' (expected observed, always_treat, always_control or fixed)");
}

inline json policy_to_json(const ReferencePolicy& p) {
  json j{{"kind", p.label()}};
  if (p.kind == ReferencePolicy::Kind::fixed) j["probs"] = p.probs;
  return j;
}

struct FitSection {
  EstimatorKind estimator = EstimatorKind::cwcls_direct;
  FitOptions options;
};

inline FitSection fit_from_json(const json& j) {
  detail::allow_keys(j, "fit", {"estimator", "adjust", "level"});
  FitSection f;
  f.estimator = parse_estimator(detail::get<std::string>(j, "estimator", "fit", "cwcls_direct"));
  f.options.adjust = detail::get(j, "adjust", "fit", true);
  f.options.level = detail::get(j, "level", "fit", 0.95);
  if (!(f.options.level > 0.0 && f.options.level < 1.0)) throw ConfigError("fit.level must lie in (0,1)");
  return f;
}

inline ScenarioConfig scenario_from_json(const json& j) {
  detail::allow_keys(j, "scenario", {"scenario", "M", "G", "T", "theta1", "xi", "eta1", "eta2", "beta10", "beta11",
                                     "beta20", "beta21", "betaD0", "betaD1", "var_eg", "var_bg", "cluster_coef",
                                     "ar_rho", "seed"});
  ScenarioConfig c;
  c.scenario = parse_scenario(detail::get<std::string>(j, "scenario", "scenario", "I"));
  c.M = detail::get(j, "M", "scenario", c.M);
  c.G = detail::get(j, "G", "scenario", c.G);
  c.T = detail::get(j, "T", "scenario", c.T);
  c.theta1 = detail::get(j, "theta1", "scenario", c.theta1);
  c.xi = detail::get(j, "xi", "scenario", c.xi);
  c.eta1 = detail::get(j, "eta1", "scenario", c.eta1);
  c.eta2 = detail::get(j, "eta2", "scenario", c.eta2);
  c.beta10 = detail::get(j, "beta10", "scenario", c.beta10);
  c.beta11 = detail::get(j, "beta11", "scenario", c.beta11);
  c.beta20 = detail::get(j, "beta20", "scenario", c.beta20);
  c.beta21 = detail::get(j, "beta21", "scenario", c.beta21);
  c.betaD0 = detail::get(j, "betaD0", "scenario", c.betaD0);
  c.betaD1 = detail::get(j, "betaD1", "scenario", c.betaD1);
  c.var_eg = detail::get(j, "var_eg", "scenario", c.var_eg);
  c.var_bg = detail::get(j, "var_bg", "scenario", c.var_bg);
  c.cluster_coef = detail::get(j, "cluster_coef", "scenario", c.cluster_coef);
  c.ar_rho = detail::get(j, "ar_rho", "scenario", c.ar_rho);
  c.seed = detail::get<std::uint64_t>(j, "seed", "scenario", 0);
  c.check();
  return c;
}

inline json scenario_to_json(const ScenarioConfig& c) {
  return json{{"scenario", to_string(c.scenario)},
              {"M", c.M},
              {"G", c.G},
              {"T", c.T},
              {"theta1", c.theta1},
              {"xi", c.xi},
              {"eta1", c.eta1},
              {"eta2", c.eta2},
              {"beta10", c.beta10},
              {"beta11", c.beta11},
              {"beta20", c.beta20},
              {"beta21", c.beta21},
              {"betaD0", c.betaD0},
              {"betaD1", c.betaD1},
              {"var_eg", c.var_eg},
              {"var_bg", c.var_bg},
              {"cluster_coef", c.cluster_coef},
              {"ar_rho", c.ar_rho},
              {"seed", c.seed}};
}

/// Estimator list entries are names ("wcls") or objects with optional
/// model / weights / adjust overrides of the default setup.
inline std::vector<EstimatorSetup> estimators_from_json(const json& list, const std::string& section) {
  if (!list.is_array() || list.empty()) throw ConfigError(section + ".estimators must be a non-empty array");
  std::vector<EstimatorSetup> out;
  for (const auto& e : list) {
    if (e.is_string()) {
      out.push_back(default_setup(parse_estimator(e.get<std::string>())));
      continue;
    }
    detail::allow_keys(e, section + ".estimators[]", {"estimator", "model", "weights", "adjust"});
    auto s = default_setup(parse_estimator(detail::get<std::string>(e, "estimator", section, "")));
    if (e.contains("model")) s.spec = model_from_json(e.at("model"));
    if (e.contains("weights")) s.plan = weights_from_json(e.at("weights"));
    s.options.adjust = detail::get(e, "adjust", section, true);
    out.push_back(std::move(s));
  }
  return out;
}

struct ReplicateSection {
  std::size_t n_reps = 1000;
  std::vector<EstimatorSetup> estimators;
};

inline ReplicateSection replicate_from_json(const json& j) {
  detail::allow_keys(j, "replicate", {"n_reps", "estimators"});
  ReplicateSection r;
  r.n_reps = detail::get<std::size_t>(j, "n_reps", "replicate", r.n_reps);
  if (j.contains("estimators")) r.estimators = estimators_from_json(j.at("estimators"), "replicate");
  return r;
}

struct SweepSection {
  SweepAxis axis = SweepAxis::variance_ratio;
  std::vector<double> grid;
  std::size_t n_reps = 1000;
  std::vector<EstimatorSetup> estimators;
};

inline SweepSection sweep_from_json(const json& j) {
  detail::allow_keys(j, "sweep", {"axis", "grid", "n_reps", "estimators"});
  SweepSection s;
  s.axis = parse_axis(detail::get<std::string>(j, "axis", "sweep", "variance_ratio"));
  s.grid = detail::get<std::vector<double>>(j, "grid", "sweep", {});
  if (s.grid.empty()) throw ConfigError("sweep.grid must be a non-empty array");
  s.n_reps = detail::get<std::size_t>(j, "n_reps", "sweep", s.n_reps);
  if (j.contains("estimators")) s.estimators = estimators_from_json(j.at("estimators"), "sweep");
  return s;
}

struct OracleSection {
  std::size_t n_mc = 100000;
  std::vector<TruthSpec> estimands;
};

inline OracleSection oracle_from_json(const json& j) {
  detail::allow_keys(j, "oracle", {"n_mc", "estimands"});
  OracleSection o;
  o.n_mc = detail::get<std::size_t>(j, "n_mc", "oracle", o.n_mc);
  if (!j.contains("estimands")) return o;
  for (const auto& e : j.at("estimands")) {
    TruthSpec t;
    if (e.is_string()) {
      t.estimand = parse_estimand(e.get<std::string>());
    } else {
      detail::allow_keys(e, "oracle.estimands[]", {"estimand", "policy"});
      t.estimand = parse_estimand(detail::get<std::string>(e, "estimand", "oracle", "direct"));
      if (e.contains("policy")) t.policy = policy_from_json(e.at("policy"));
    }
    o.estimands.push_back(t);
  }
  return o;
}

/// Whole config file. Missing sections keep their defaults.
struct RunConfig {
  json raw;
  Schema schema;
  ModelSpec model = ModelSpec::from_labels({"intercept"}, {"intercept"});
  WeightPlan weights;
  ReferencePolicy policy;
  FitSection fit;
  std::optional<ScenarioConfig> scenario;
  bool has_seed = false;
  ReplicateSection replicate;
  std::optional<SweepSection> sweep;
  OracleSection oracle;
};

inline RunConfig config_from_json(const json& j) {
  detail::allow_keys(j, "<root>",
                     {"schema", "model", "weights", "policy", "fit", "scenario", "replicate", "sweep", "oracle"});
  RunConfig c;
  c.raw = j;
  try {
    if (j.contains("schema")) c.schema = schema_from_json(j.at("schema"));
    if (j.contains("model")) c.model = model_from_json(j.at("model"));
    if (j.contains("weights")) c.weights = weights_from_json(j.at("weights"));
    if (j.contains("policy")) c.policy = policy_from_json(j.at("policy"));
    if (j.contains("fit")) c.fit = fit_from_json(j.at("fit"));
    if (j.contains("scenario")) {
      c.scenario = scenario_from_json(j.at("scenario"));
      c.has_seed = j.at("scenario").contains("seed");
    }
    if (j.contains("replicate")) c.replicate = replicate_from_json(j.at("replicate"));
    if (j.contains("sweep")) c.sweep = sweep_from_json(j.at("sweep"));
    if (j.contains("oracle")) c.oracle = oracle_from_json(j.at("oracle"));
  } catch (const Error& e) {
    // Scenario/estimand parsers raise their own types; everything here is a config problem.
    if (dynamic_cast<const ConfigError*>(&e)) throw;
    throw ConfigError(e.what());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

// ---- fit results -----------------------------------------------------------

namespace detail {

inline json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace detail

inline json fit_to_json(const FitResult& f) {
  json coefs = json::array();
  for (std::size_t i = 0; i < f.p(); ++i) {
    const double se = std::sqrt(std::max(0.0, f.covariance(i, i)));
    coefs.push_back({{"name", f.alpha_names[i]}, {"role", "alpha"}, {"estimate", f.alpha_hat(i)}, {"se", se}});
  }
  for (std::size_t i = 0; i < f.q(); ++i) {
    coefs.push_back({{"name", f.beta_names[i]},
                     {"role", "beta"},
                     {"estimate", f.beta_hat(i)},
                     {"se", f.se(i)},
                     {"t_stat", f.t_stat(i)},
                     {"p_value", f.p_value(i)},
                     {"ci_low", f.ci_low(i)},
                     {"ci_high", f.ci_high(i)}});
  }
  std::vector<std::string> names = f.alpha_names;
  names.insert(names.end(), f.beta_names.begin(), f.beta_names.end());
  return json{{"estimator", to_string(f.kind)},
              {"delta", f.delta},
              {"policy", policy_to_json(f.policy)},
              {"adjusted", f.adjusted},
              {"level", f.level},
              {"n_units", f.n_units},
              {"n_rows", f.n_rows},
              {"dof", f.dof},
              {"names", names},
              {"coefficients", coefs},
              {"covariance", detail::matrix_to_json(f.covariance)},
              {"covariance_unadjusted", detail::matrix_to_json(f.covariance_unadjusted)},
              {"bread", detail::matrix_to_json(f.bread)},
              {"meat", detail::matrix_to_json(f.meat)}};
}

}  // namespace excursion
