#include <gtest/gtest.h>

#include <cmath>

#include "excursion/simulate.hpp"

using namespace excursion;

namespace {

ScenarioConfig small(Scenario s, std::uint64_t seed, int M = 20, int G = 10, int T = 25) {
  ScenarioConfig cfg;
  cfg.scenario = s;
  cfg.M = M;
  cfg.G = G;
  cfg.T = T;
  cfg.seed = seed;
  return cfg;
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

TruthSpec truth(TruthSpec::Estimand e, ReferencePolicy pol = {}) { return {e, pol}; }

}  // namespace

TEST(Generate, ShapeAndColumns) {
  const auto ds = generate(small(Scenario::I, 1, 7, 4, 9));
  EXPECT_EQ(ds.M(), 7u);
  EXPECT_EQ(ds.n_rows(), 7u * 4u * 9u);
  EXPECT_EQ(ds.moderator_names, std::vector<std::string>{"S"});
  EXPECT_TRUE(validate(ds).empty());

  const auto lag = generate(small(Scenario::LAG_II, 1, 3, 2, 6));
  EXPECT_EQ(lag.delta, 2);
  for (const auto& c : lag.clusters)
    for (const auto& m : c.members) {
      ASSERT_EQ(m.rows.size(), 7u);
      EXPECT_EQ(m.rows.back().available, 0);
      EXPECT_EQ(m.rows[5].available, 1);
    }
}

TEST(Generate, SameSeedIsBitwiseIdentical) {
  for (auto s : {Scenario::I, Scenario::III, Scenario::IV, Scenario::LAG_III}) {
    EXPECT_EQ(generate(small(s, 42, 4, 3, 5)), generate(small(s, 42, 4, 3, 5)));
    EXPECT_NE(generate(small(s, 42, 4, 3, 5)), generate(small(s, 43, 4, 3, 5)));
  }
}

TEST(Generate, ClusterStreamsDoNotDependOnClusterCount) {
  const auto a = generate(small(Scenario::II, 5, 3, 4, 5));
  const auto b = generate(small(Scenario::II, 5, 6, 4, 5));
  for (std::size_t m = 0; m < 3; ++m) EXPECT_EQ(a.clusters[m], b.clusters[m]);
}

TEST(Generate, RandomizationFollowsHistory) {
  const auto cfg = small(Scenario::II, 7);
  const auto ds = generate(cfg);
  double treated = 0.0, expected = 0.0;
  for (const auto& c : ds.clusters)
    for (const auto& m : c.members) {
      int prev = 0;
      for (const auto& r : m.rows) {
        EXPECT_NEAR(r.rand_prob, logistic(cfg.eta1 * prev + cfg.eta2 * r.moderators[0]), 1e-15);
        EXPECT_TRUE(r.moderators[0] == 1.0 || r.moderators[0] == -1.0);
        treated += r.treatment;
        expected += r.rand_prob;
        prev = r.treatment;
      }
    }
  const double n = static_cast<double>(ds.n_rows());
  EXPECT_NEAR(treated / n, expected / n, 4.0 * 0.5 / std::sqrt(n));
}

TEST(Generate, StateIsCenteredWhenXiIsZero) {
  const auto cfg = small(Scenario::I, 8, 40, 10, 25);
  const auto ds = generate(cfg);
  double sum = 0.0;
  for (const auto& c : ds.clusters)
    for (const auto& m : c.members)
      for (const auto& r : m.rows) sum += r.moderators[0];
  const double n = static_cast<double>(ds.n_rows());
  EXPECT_LE(std::abs(sum / n), 3.0 / std::sqrt(n));
}

TEST(Generate, ErrorsFollowTheArProcess) {
  auto cfg = small(Scenario::I, 9, 100, 20, 25);
  cfg.var_eg = cfg.var_bg = 0.0;
  cfg.theta1 = cfg.beta10 = cfg.beta11 = 0.0;
  const auto ds = generate(cfg);
  // Y_t = e_{t+1}; Corr(e_u, e_t) = 0.5^{|u-t|/2}.
  for (int lag = 1; lag <= 4; ++lag) {
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (const auto& c : ds.clusters)
      for (const auto& m : c.members)
        for (std::size_t t = 0; t + lag < m.rows.size(); ++t) {
          const double x = m.rows[t].outcome, y = m.rows[t + lag].outcome;
          sxy += x * y;
          sxx += x * x;
          syy += y * y;
        }
    EXPECT_NEAR(sxy / std::sqrt(sxx * syy), std::pow(0.5, lag / 2.0), 0.02) << "lag " << lag;
  }
  double var = 0.0;
  for (const auto& c : ds.clusters)
    for (const auto& m : c.members)
      for (const auto& r : m.rows) var += r.outcome * r.outcome;
  EXPECT_NEAR(var / ds.n_rows(), 1.0, 0.05);
}

TEST(Generate, NoSlopeVarianceReducesScenarioTwoToOne) {
  auto one = small(Scenario::I, 11, 5, 4, 6);
  auto two = one;
  two.scenario = Scenario::II;
  two.var_bg = 0.0;
  EXPECT_EQ(generate(one), generate(two));
}

TEST(Generate, RejectsBadConfigs) {
  auto cfg = small(Scenario::I, 1);
  cfg.M = 0;
  EXPECT_THROW(generate(cfg), ConfigError);
  cfg = small(Scenario::I, 1);
  cfg.var_eg = -1.0;
  EXPECT_THROW(generate(cfg), ConfigError);
  cfg = small(Scenario::I, 1);
  cfg.ar_rho = 1.0;
  EXPECT_THROW(generate(cfg), ConfigError);
  EXPECT_THROW(parse_scenario("V"), ConfigError);
  EXPECT_EQ(parse_scenario("LAG_II"), Scenario::LAG_II);
}

// ---- analytic truths -------------------------------------------------------

TEST(Truth, DirectAndIndirectDefaults) {
  ScenarioConfig cfg;
  const auto d = true_effect(cfg, truth(TruthSpec::Estimand::direct_marginal));
  EXPECT_DOUBLE_EQ(d.intercept, -0.2);
  EXPECT_DOUBLE_EQ(d.slope, 0.2);
  cfg.scenario = Scenario::IV;
  EXPECT_DOUBLE_EQ(true_effect(cfg, truth(TruthSpec::Estimand::indirect_marginal)).intercept, -0.1);
  EXPECT_DOUBLE_EQ(true_effect(cfg, truth(TruthSpec::Estimand::direct_marginal)).intercept, -0.2);
  cfg.scenario = Scenario::II;
  EXPECT_DOUBLE_EQ(true_effect(cfg, truth(TruthSpec::Estimand::indirect_marginal)).intercept, 0.0);
  cfg.scenario = Scenario::III;
  EXPECT_NEAR(true_effect(cfg, truth(TruthSpec::Estimand::direct_marginal)).slope, 0.2 + 0.2 / 25.0, 1e-15);
}

TEST(Truth, LagSequentialByHand) {
  // term(a) = 0.5 * (-0.4) * (1 - expit(-0.8 a - 0.8)); s = +1 contributes 0.
  const double e08 = 0.31003, e16 = 0.16798;
  const double hand = -0.1 + (-0.2 * (1 - e16)) - (-0.2 * (1 - e08));
  ScenarioConfig cfg;
  cfg.scenario = Scenario::LAG_I;
  const auto seq = true_effect(cfg, truth(TruthSpec::Estimand::lag_direct, ReferencePolicy::always_treat()));
  EXPECT_NEAR(seq.intercept, hand, 1e-5);
  EXPECT_NEAR(seq.intercept, -0.1284, 5e-5);
  EXPECT_DOUBLE_EQ(true_effect(cfg, truth(TruthSpec::Estimand::lag_direct)).intercept, -0.1);
}

TEST(Truth, ErrorsAndUnsupported) {
  ScenarioConfig cfg;
  cfg.xi = 0.3;
  EXPECT_THROW(true_effect(cfg, truth(TruthSpec::Estimand::direct_marginal)), UnsupportedAnalyticsError);
  cfg.xi = 0.0;
  EXPECT_THROW(true_effect(cfg, truth(TruthSpec::Estimand::lag_direct)), ConfigError);
  cfg.scenario = Scenario::LAG_I;
  EXPECT_THROW(true_effect(cfg, truth(TruthSpec::Estimand::direct_marginal)), ConfigError);
  EXPECT_THROW(true_effect(cfg, truth(TruthSpec::Estimand::indirect_marginal)), UnsupportedAnalyticsError);
  EXPECT_THROW(parse_estimand("total"), ConfigError);
}

// ---- oracle ----------------------------------------------------------------

TEST(Oracle, DirectMarginalAgreesWithTruth) {
  auto cfg = small(Scenario::II, 101, 1, 10, 10);
  const auto r = oracle_effect(cfg, truth(TruthSpec::Estimand::direct_marginal), 20000);
  EXPECT_GT(r.mc_se, 0.0);
  EXPECT_LE(std::abs(r.estimate + 0.2), 4.0 * r.mc_se) << r.estimate << " +- " << r.mc_se;
}

TEST(Oracle, NullModelGivesZero) {
  auto cfg = small(Scenario::I, 102, 1, 5, 8);
  cfg.beta10 = cfg.beta11 = 0.0;
  cfg.var_bg = 0.0;
  const auto r = oracle_effect(cfg, truth(TruthSpec::Estimand::direct_marginal), 20000);
  EXPECT_LE(std::abs(r.estimate), 4.0 * r.mc_se);
}

TEST(Oracle, IndirectAgreesWithTruth) {
  auto cfg = small(Scenario::IV, 103, 1, 6, 8);
  const auto r = oracle_effect(cfg, truth(TruthSpec::Estimand::indirect_marginal), 20000);
  EXPECT_LE(std::abs(r.estimate + 0.1), 4.0 * r.mc_se) << r.estimate << " +- " << r.mc_se;
}

TEST(Oracle, LagObservedAgreesWithTruth) {
  auto cfg = small(Scenario::LAG_I, 104, 1, 5, 8);
  const auto r = oracle_effect(cfg, truth(TruthSpec::Estimand::lag_direct), 20000);
  EXPECT_LE(std::abs(r.estimate + 0.1), 4.0 * r.mc_se) << r.estimate << " +- " << r.mc_se;
}

TEST(Oracle, DeterministicAndValidated) {
  auto cfg = small(Scenario::I, 105, 1, 4, 5);
  const auto a = oracle_effect(cfg, truth(TruthSpec::Estimand::direct_marginal), 500);
  const auto b = oracle_effect(cfg, truth(TruthSpec::Estimand::direct_marginal), 500);
  EXPECT_EQ(a.estimate, b.estimate);
  EXPECT_EQ(a.n_mc, 500u);
  EXPECT_THROW(oracle_effect(cfg, truth(TruthSpec::Estimand::direct_marginal), 1), ConfigError);
  cfg.G = 1;
  EXPECT_THROW(oracle_effect(cfg, truth(TruthSpec::Estimand::indirect_marginal), 100), ConfigError);
  EXPECT_THROW(oracle_effect(cfg, truth(TruthSpec::Estimand::lag_direct), 100), ConfigError);
}
