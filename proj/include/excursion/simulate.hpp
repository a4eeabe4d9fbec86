/**
 * Clustered MRT generator, analytic truths, and a forced-assignment oracle.
 *
 * Base model (delta = 1):
 *   Y_t = theta1 (S_t - E[S_t | A_{t-1}]) + (A_t - p_t)(beta10 + beta11 S_t)
 *         + e_g + e_{t+1}
 * with S_t = +-1, P(S_t = 1 | A_{t-1}) = expit(xi A_{t-1}),
 * p_t = expit(eta1 A_{t-1} + eta2 S_t), A_0 = 0, and AR errors with
 * Corr(e_u, e_t) = ar_rho^{|u-t|/2}. Scenario II adds b_g (A_t - p_t),
 * Scenario III also adds c Sbar_t (A_t - p_t). Scenario IV is
 *   Y_t = (beta10 + b_g + c Sbar_t)(A_t - p_t) + theta1 S_t + TE_t + e_g + e_{t+1},
 *   TE_t = sum_{j' != j} (A_{t,j'} - p_{t,j'})(beta20 + beta21 S_{t,j'}).
 * Lag scenarios use
 *   Y_{t,2} = theta1 (S_{t+1} - E[S_{t+1} | A_t]) + (A_t - p_t)(betaD0 + betaD1 S_t [+ b_g + c Sbar_t])
 *             + (A_{t+1} - p_{t+1})(beta10 + beta11 S_{t+1}) + e_g + e_{t+2}.
 */
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "excursion/design.hpp"
#include "excursion/error.hpp"
#include "excursion/panel.hpp"
#include "excursion/rng.hpp"

namespace excursion {

enum class Scenario { I, II, III, IV, LAG_I, LAG_II, LAG_III };

inline std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::I: return "I";
    case Scenario::II: return "II";
    case Scenario::III: return "III";
    case Scenario::IV: return "IV";
    case Scenario::LAG_I: return "LAG_I";
    case Scenario::LAG_II: return "LAG_II";
    case Scenario::LAG_III: return "LAG_III";
  }
  return "I";
}

inline Scenario parse_scenario(const std::string& s) {
  for (auto sc : {Scenario::I, Scenario::II, Scenario::III, Scenario::IV, Scenario::LAG_I, Scenario::LAG_II,
                  Scenario::LAG_III}) {
    if (s == to_string(sc)) return sc;
  }
  throw ConfigError("unknown scenario '" + s + "' (expected I, II, III, IV, LAG_I, LAG_II or LAG_III)");
}

inline bool is_lag(Scenario s) { return s == Scenario::LAG_I || s == Scenario::LAG_II || s == Scenario::LAG_III; }

struct ScenarioConfig {
  Scenario scenario = Scenario::I;
  int M = 50;
  int G = 25;
  int T = 25;
  double theta1 = 0.8;
  double xi = 0.0;
  double eta1 = -0.8;
  double eta2 = 0.8;
  double beta10 = -0.2;
  double beta11 = 0.2;
  double beta20 = -0.1;
  double beta21 = 0.2;
  double betaD0 = -0.1;
  double betaD1 = 0.2;
  double var_eg = 0.5;
  double var_bg = 0.1;
  double cluster_coef = 0.2;  // coefficient of Sbar_t in Scenarios III and IV
  double ar_rho = 0.5;        // Corr(e_u, e_t) = ar_rho^{|u-t|/2}
  std::uint64_t seed = 0;

  bool operator==(const ScenarioConfig&) const = default;

  int delta() const { return is_lag(scenario) ? 2 : 1; }

  void check() const {
    if (M < 1 || G < 1 || T < 1) throw ConfigError("scenario needs M, G, T >= 1");
    if (!(var_eg >= 0.0) || !(var_bg >= 0.0)) throw ConfigError("scenario variances must be >= 0");
    if (!(ar_rho >= 0.0 && ar_rho < 1.0)) throw ConfigError("ar_rho must lie in [0,1)");
    for (double v : {theta1, xi, eta1, eta2, beta10, beta11, beta20, beta21, betaD0, betaD1, cluster_coef}) {
      if (!std::isfinite(v)) throw ConfigError("scenario parameters must be finite");
    }
  }
};

// ---- sample paths ----------------------------------------------------------

namespace detail {

/// One cluster's latent and observed trajectory; vectors are indexed [j][t]
/// with t = 0 holding A_0 = 0.
struct ClusterPath {
  double e_g = 0.0, b_g = 0.0;
  std::vector<std::vector<double>> S, p, e;
  std::vector<std::vector<int>> A;
};

struct Forcing {
  int t = 0;
  int j = -1;
  int a = 0;
};

/// States for t = 1..horizon and errors for t = 1..horizon + delta.
inline ClusterPath simulate_cluster(const ScenarioConfig& cfg, Rng& rng, int horizon,
                                    std::span<const Forcing> forced = {}) {
  const int G = cfg.G, nE = horizon + cfg.delta();
  ClusterPath path;
  path.e_g = std::sqrt(cfg.var_eg) * rng.normal();
  path.b_g = std::sqrt(cfg.var_bg) * rng.normal();
  const double rho = std::sqrt(cfg.ar_rho), innov = std::sqrt(1.0 - cfg.ar_rho);
  path.e.assign(G, std::vector<double>(nE + 1, 0.0));
  for (int j = 0; j < G; ++j) {
    auto& e = path.e[j];
    e[1] = rng.normal();
    for (int t = 2; t <= nE; ++t) e[t] = rho * e[t - 1] + innov * rng.normal();
  }
  path.S.assign(G, std::vector<double>(horizon + 1, 0.0));
  path.p.assign(G, std::vector<double>(horizon + 1, 0.0));
  path.A.assign(G, std::vector<int>(horizon + 1, 0));
  for (int t = 1; t <= horizon; ++t) {
    for (int j = 0; j < G; ++j) {
      const int prev = path.A[j][t - 1];
      path.S[j][t] = rng.uniform() < expit(cfg.xi * prev) ? 1.0 : -1.0;
      path.p[j][t] = expit(cfg.eta1 * prev + cfg.eta2 * path.S[j][t]);
      path.A[j][t] = rng.uniform() < path.p[j][t] ? 1 : 0;
      for (const auto& f : forced)
        if (f.t == t && f.j == j) path.A[j][t] = f.a;
    }
  }
  return path;
}

inline double cluster_mean_state(const ClusterPath& path, int t) {
  double s = 0.0;
  for (const auto& row : path.S) s += row[t];
  return s / static_cast<double>(path.S.size());
}

/// Y_{t, delta} of member j; needs states through t + delta - 1.
inline double outcome(const ScenarioConfig& cfg, const ClusterPath& path, int j, int t) {
  const auto& S = path.S[j];
  const auto& A = path.A[j];
  const auto& p = path.p[j];
  const double centered = A[t] - p[t];
  const bool random_slope = cfg.scenario != Scenario::I && cfg.scenario != Scenario::LAG_I;
  const bool cluster_moderated = cfg.scenario == Scenario::III || cfg.scenario == Scenario::LAG_III;
  const double b = random_slope ? path.b_g : 0.0;
  const double c = cluster_moderated ? cfg.cluster_coef * cluster_mean_state(path, t) : 0.0;
  auto mean_state = [&](int prev) { return 2.0 * expit(cfg.xi * prev) - 1.0; };

  if (cfg.scenario == Scenario::IV) {
    double te = 0.0;
    for (int k = 0; k < cfg.G; ++k) {
      if (k == j) continue;
      te += (path.A[k][t] - path.p[k][t]) * (cfg.beta20 + cfg.beta21 * path.S[k][t]);
    }
    const double sbar = cfg.cluster_coef * cluster_mean_state(path, t);
    return (cfg.beta10 + path.b_g + sbar) * centered + cfg.theta1 * S[t] + te + path.e_g + path.e[j][t + 1];
  }
  if (cfg.delta() == 1) {
    return cfg.theta1 * (S[t] - mean_state(A[t - 1])) + centered * (cfg.beta10 + cfg.beta11 * S[t] + b + c) +
           path.e_g + path.e[j][t + 1];
  }
  return cfg.theta1 * (S[t + 1] - mean_state(A[t])) + centered * (cfg.betaD0 + cfg.betaD1 * S[t] + b + c) +
         (A[t + 1] - p[t + 1]) * (cfg.beta10 + cfg.beta11 * S[t + 1]) + path.e_g + path.e[j][t + 2];
}

}  // namespace detail

/// Simulated dataset with moderator and control column "S". Rows run over
/// t = 1..T + delta - 1; rows past T are marked unavailable and exist only
/// so lag windows at the end of the study are complete.
inline MRTDataset generate(const ScenarioConfig& cfg) {
  cfg.check();
  const int delta = cfg.delta();
  const int rows = cfg.T + delta - 1;
  const int horizon = rows + delta - 1;
  MRTDataset ds;
  ds.moderator_names = {"S"};
  ds.control_names = {"S"};
  ds.delta = delta;
  ds.clusters.reserve(cfg.M);
  for (int m = 0; m < cfg.M; ++m) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(m)));
    const auto path = detail::simulate_cluster(cfg, rng, horizon);
    Cluster cluster{std::to_string(m + 1), {}};
    cluster.members.reserve(cfg.G);
    for (int j = 0; j < cfg.G; ++j) {
      Individual ind{std::to_string(j + 1), {}};
      ind.rows.reserve(rows);
      for (int t = 1; t <= rows; ++t) {
        ObservationRow r;
        r.cluster_id = cluster.id;
        r.individual_id = ind.id;
        r.t = t;
        r.available = t <= cfg.T ? 1 : 0;
        r.treatment = path.A[j][t];
        r.rand_prob = path.p[j][t];
        r.moderators = {path.S[j][t]};
        r.controls = {path.S[j][t]};
        r.outcome = detail::outcome(cfg, path, j, t);
        ind.rows.push_back(std::move(r));
      }
      cluster.members.push_back(std::move(ind));
    }
    ds.clusters.push_back(std::move(cluster));
  }
  return ds;
}

// ---- truths ----------------------------------------------------------------

struct TruthSpec {
  enum class Estimand { direct_marginal, indirect_marginal, lag_direct };
  Estimand estimand = Estimand::direct_marginal;
  ReferencePolicy policy;

  bool operator==(const TruthSpec&) const = default;
};

inline std::string to_string(TruthSpec::Estimand e) {
  switch (e) {
    case TruthSpec::Estimand::direct_marginal: return "direct";
    case TruthSpec::Estimand::indirect_marginal: return "indirect";
    case TruthSpec::Estimand::lag_direct: return "lag_direct";
  }
  return "direct";
}

inline TruthSpec::Estimand parse_estimand(const std::string& s) {
  if (s == "direct" || s == "direct_marginal") return TruthSpec::Estimand::direct_marginal;
  if (s == "indirect" || s == "indirect_marginal") return TruthSpec::Estimand::indirect_marginal;
  if (s == "lag_direct" || s == "lag") return TruthSpec::Estimand::lag_direct;
  throw ConfigError("unknown estimand '" + s + "' (expected direct, indirect or lag_direct)");
}

/// Effect as intercept + slope * S_t; the marginal effect is the intercept
/// because E[S_t] = 0 when xi = 0.
struct AffineEffect {
  double intercept = 0.0;
  double slope = 0.0;
};

inline AffineEffect true_effect(const ScenarioConfig& cfg, const TruthSpec& spec) {
  if (cfg.xi != 0.0) {
    throw UnsupportedAnalyticsError("analytic truths assume xi = 0; use the oracle for xi = " +
                                    detail::format_double(cfg.xi));
  }
  const bool lag = is_lag(cfg.scenario);
  const double G = static_cast<double>(cfg.G);
  // Sbar_t includes S_{t,j}, so the cluster term adds c/G to the S_t slope.
  const bool moderated = cfg.scenario == Scenario::III || cfg.scenario == Scenario::IV || cfg.scenario == Scenario::LAG_III;
  const double self_share = moderated ? cfg.cluster_coef / G : 0.0;
  switch (spec.estimand) {
    case TruthSpec::Estimand::direct_marginal:
      if (lag) throw ConfigError("scenario " + to_string(cfg.scenario) + " has delta = 2; ask for lag_direct");
      if (cfg.scenario == Scenario::IV) return {cfg.beta10, self_share};
      return {cfg.beta10, cfg.beta11 + self_share};
    case TruthSpec::Estimand::indirect_marginal:
      if (lag) throw UnsupportedAnalyticsError("no analytic indirect effect for lag scenarios");
      if (cfg.scenario == Scenario::IV) return {cfg.beta20, 0.0};
      return {0.0, 0.0};
    case TruthSpec::Estimand::lag_direct: {
      if (!lag) throw ConfigError("lag_direct needs a LAG scenario");
      spec.policy.check(2);
      // E[(A_{t+1} - p_{t+1})(beta10 + beta11 S_{t+1}) W | A_t = a] = E_S[(beta10 + beta11 S)(pi_1 - p(a, S))]
      auto future_term = [&](int a) {
        if (spec.policy.kind == ReferencePolicy::Kind::observed) return 0.0;
        double sum = 0.0;
        for (double s : {-1.0, 1.0}) {
          const double p = expit(cfg.eta1 * a + cfg.eta2 * s);
          sum += 0.5 * (cfg.beta10 + cfg.beta11 * s) * (spec.policy.treat_probability(0, p) - p);
        }
        return sum;
      };
      return {cfg.betaD0 + future_term(1) - future_term(0), cfg.betaD1 + self_share};
    }
  }
  return {};
}

struct OracleResult {
  double estimate = 0.0;
  double mc_se = 0.0;
  std::size_t n_mc = 0;
};

/// Monte Carlo value of the marginal estimand: draws a decision point t and
/// focal member(s) uniformly, simulates the cluster with the focal
/// treatment forced to each arm under common random numbers, and averages
/// W_1 Y_1 - W_0 Y_0. Future treatments follow the trial; W carries the
/// reference policy.
inline OracleResult oracle_effect(const ScenarioConfig& cfg, const TruthSpec& spec, std::size_t n_mc) {
  cfg.check();
  if (n_mc < 2) throw ConfigError("oracle needs n_mc >= 2");
  const bool indirect = spec.estimand == TruthSpec::Estimand::indirect_marginal;
  if (indirect && cfg.G < 2) throw ConfigError("indirect oracle needs G >= 2");
  const int delta = cfg.delta();
  if (spec.estimand == TruthSpec::Estimand::lag_direct && delta == 1) throw ConfigError("lag_direct needs a LAG scenario");
  if (spec.estimand == TruthSpec::Estimand::direct_marginal && delta != 1) {
    throw ConfigError("scenario " + to_string(cfg.scenario) + " has delta = 2; ask for lag_direct");
  }
  spec.policy.check(delta);

  auto window_weight = [&](const detail::ClusterPath& path, int j, int t) {
    double w = 1.0;
    if (spec.policy.kind == ReferencePolicy::Kind::observed) return w;
    for (int u = t + 1; u <= t + delta - 1; ++u) {
      const double p = path.p[j][u];
      const double pi1 = spec.policy.treat_probability(static_cast<std::size_t>(u - t - 1), p);
      w *= path.A[j][u] ? pi1 / p : (1.0 - pi1) / (1.0 - p);
    }
    return w;
  };

  double mean = 0.0, m2 = 0.0;
  const std::uint64_t stream = splitmix64(cfg.seed ^ 0x6f7261636c65ULL);
  for (std::size_t i = 0; i < n_mc; ++i) {
    Rng pick(derive_seed(stream, 2 * i));
    const int t = 1 + static_cast<int>(pick.below(static_cast<std::uint64_t>(cfg.T)));
    const int j = static_cast<int>(pick.below(static_cast<std::uint64_t>(cfg.G)));
    int other = -1;
    if (indirect) {
      other = static_cast<int>(pick.below(static_cast<std::uint64_t>(cfg.G - 1)));
      if (other >= j) ++other;
    }
    const std::uint64_t path_seed = derive_seed(stream, 2 * i + 1);
    double arm[2];
    for (int a = 0; a < 2; ++a) {
      Rng rng(path_seed);
      std::vector<detail::Forcing> forced;
      if (indirect) forced = {{t, j, 0}, {t, other, a}};
      else forced = {{t, j, a}};
      const auto path = detail::simulate_cluster(cfg, rng, t + delta - 1, forced);
      double w = window_weight(path, j, t);
      if (indirect) w *= window_weight(path, other, t);
      arm[a] = w * detail::outcome(cfg, path, j, t);
    }
    const double d = arm[1] - arm[0];
    const double dm = d - mean;
    mean += dm / static_cast<double>(i + 1);
    m2 += dm * (d - mean);
  }
  const double var = m2 / static_cast<double>(n_mc - 1);
  return {mean, std::sqrt(var / static_cast<double>(n_mc)), n_mc};
}

}  // namespace excursion
