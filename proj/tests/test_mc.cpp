#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <sstream>

#include "excursion/mc.hpp"

using namespace excursion;

namespace {

ScenarioConfig small(Scenario s, int M, int G, int T, std::uint64_t seed) {
  ScenarioConfig cfg;
  cfg.scenario = s;
  cfg.M = M;
  cfg.G = G;
  cfg.T = T;
  cfg.seed = seed;
  return cfg;
}

std::string csv(const ReplicationReport& r) {
  std::ostringstream out;
  write_report_csv(out, r);
  return out.str();
}

const std::vector<EstimatorKind> kDirect{EstimatorKind::cwcls_direct, EstimatorKind::wcls};

}  // namespace

TEST(ParallelFor, VisitsEveryIndexOnce) {
  std::vector<std::atomic<int>> hits(257);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i]++; });
  for (auto& h : hits) EXPECT_EQ(h.load(), 1);
  parallel_for(0, 4, [&](std::size_t) { FAIL(); });
}

TEST(ParallelFor, RethrowsLowestFailingIndex) {
  try {
    parallel_for(50, 3, [](std::size_t i) {
      if (i == 31 || i == 7) throw std::runtime_error(std::to_string(i));
    });
    FAIL() << "expected an exception";
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "7");
  }
}

TEST(Replicate, TwoRepsGiveFiniteFields) {
  const auto rep = run(small(Scenario::I, 6, 3, 5, 1), 2, kDirect, {}, 1);
  ASSERT_EQ(rep.rows.size(), 2u);
  for (const auto& r : rep.rows) {
    EXPECT_EQ(r.n_reps, 2u);
    for (double v : {r.mean_estimate, r.mc_sd, r.mean_se, r.rmse}) EXPECT_TRUE(std::isfinite(v));
    EXPECT_TRUE(r.coverage == 0.0 || r.coverage == 0.5 || r.coverage == 1.0);
  }
  EXPECT_EQ(rep.rows[0].estimator, "C-WCLS");
  EXPECT_EQ(rep.rows[1].estimator, "WCLS");
}

TEST(Replicate, MatchesRepByRepRecomputation) {
  const auto cfg = small(Scenario::II, 8, 4, 6, 2);
  const std::size_t n = 12;
  const auto rep = run(cfg, n, {EstimatorKind::cwcls_direct}, {}, 2);
  const auto setup = default_setup(EstimatorKind::cwcls_direct);
  double sum = 0.0, sq = 0.0, se = 0.0, hits = 0.0;
  std::vector<double> est;
  for (std::size_t r = 0; r < n; ++r) {
    auto c = cfg;
    c.seed = derive_seed(cfg.seed, r);
    const auto f = fit(setup.kind, generate(c), setup.spec, setup.plan);
    est.push_back(f.beta_hat(0));
    sum += f.beta_hat(0);
    se += f.se(0);
    sq += (f.beta_hat(0) + 0.2) * (f.beta_hat(0) + 0.2);
    hits += (f.ci_low(0) <= -0.2 && -0.2 <= f.ci_high(0)) ? 1.0 : 0.0;
  }
  const auto& row = rep.rows[0];
  const double mean = sum / n;
  double ss = 0.0;
  for (double e : est) ss += (e - mean) * (e - mean);
  EXPECT_EQ(row.truth, -0.2);
  EXPECT_NEAR(row.mean_estimate, mean, 1e-15);
  EXPECT_NEAR(row.mean_se, se / n, 1e-15);
  EXPECT_NEAR(row.rmse, std::sqrt(sq / n), 1e-15);
  EXPECT_NEAR(row.mc_sd, std::sqrt(ss / (n - 1)), 1e-15);
  EXPECT_EQ(row.coverage, hits / n);
  // rmse^2 = bias^2 + (n-1)/n mc_sd^2
  EXPECT_NEAR(row.rmse * row.rmse,
              (row.mean_estimate - row.truth) * (row.mean_estimate - row.truth) +
                  (n - 1.0) / n * row.mc_sd * row.mc_sd,
              1e-14);
}

TEST(Replicate, ReportDoesNotDependOnThreadCount) {
  const auto cfg = small(Scenario::IV, 5, 3, 5, 3);
  const std::vector<EstimatorKind> kinds{EstimatorKind::cwcls_indirect, EstimatorKind::cwcls_direct};
  const auto one = csv(run(cfg, 9, kinds, {}, 1));
  EXPECT_EQ(one, csv(run(cfg, 9, kinds, {}, 3)));
  EXPECT_EQ(one, csv(run(cfg, 9, kinds, {}, 8)));
}

TEST(Replicate, CoverageIsNearNominalOnAWellSpecifiedScenario) {
  const auto rep = run(small(Scenario::I, 30, 5, 10, 4), 200, kDirect);
  for (const auto& r : rep.rows) {
    EXPECT_GE(r.coverage, 0.88) << r.estimator;
    EXPECT_LE(r.coverage, 0.99) << r.estimator;
    EXPECT_NEAR(r.mean_estimate, -0.2, 4.0 * r.mc_sd / std::sqrt(200.0));
  }
}

TEST(Replicate, LagPolicyUsesLagTruth) {
  const auto rep = run(small(Scenario::LAG_I, 6, 3, 6, 5), 3, {EstimatorKind::wcls}, ReferencePolicy::always_treat(), 1);
  EXPECT_NEAR(rep.rows[0].truth, -0.1284, 5e-5);
  EXPECT_EQ(rep.rows[0].policy, "always_treat");
}

TEST(Replicate, Errors) {
  const auto cfg = small(Scenario::I, 4, 1, 4, 6);
  EXPECT_THROW(run(cfg, 1, kDirect, {}, 1), ReplicationError);
  EXPECT_THROW(run(cfg, 3, std::vector<EstimatorKind>{}, {}, 1), ReplicationError);
  try {
    run(cfg, 3, {EstimatorKind::cwcls_indirect}, {}, 1);
    FAIL() << "expected ReplicationError";
  } catch (const ReplicationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("replication 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("seed " + std::to_string(derive_seed(6, 0))), std::string::npos) << msg;
  }
}

TEST(Sweep, ShapeAndAxisValues) {
  const auto base = small(Scenario::II, 6, 3, 5, 7);
  std::vector<EstimatorSetup> setups{default_setup(EstimatorKind::cwcls_direct), default_setup(EstimatorKind::wcls)};
  const auto rows = sweep(base, SweepAxis::variance_ratio, {0.0, 0.2}, 3, setups, {}, 1);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[2].value, 0.2);
  EXPECT_EQ(rows[3].result.estimator, "WCLS");

  const auto g = sweep(base, SweepAxis::group_size, {2, 4}, 3, setups, {}, 1);
  ASSERT_EQ(g.size(), 4u);
  EXPECT_EQ(g[2].result.G, 4);

  std::ostringstream out;
  write_sweep_csv(out, rows);
  std::size_t lines = 0;
  for (char c : out.str()) lines += c == '\n';
  EXPECT_EQ(lines, 5u);
  EXPECT_EQ(out.str().rfind("axis,value,", 0), 0u);

  EXPECT_THROW(sweep(base, SweepAxis::group_size, {2.5}, 3, setups, {}, 1), ReplicationError);
  EXPECT_THROW(sweep(base, SweepAxis::variance_ratio, {}, 3, setups, {}, 1), ReplicationError);
  EXPECT_THROW(parse_axis("width"), ConfigError);
}

TEST(Report, TableHasSummaryColumns) {
  const auto rep = run(small(Scenario::I, 5, 2, 4, 8), 2, kDirect, {}, 1);
  std::ostringstream out;
  write_report_table(out, rep);
  const auto text = out.str();
  for (const char* col : {"Scenario", "Estimator", "#Clusters", "Size", "Estimate", "SE", "RMSE", "CP"}) {
    EXPECT_NE(text.find(col), std::string::npos) << col;
  }
  EXPECT_EQ(csv(rep).rfind("scenario,estimator,policy,clusters,size,T,n_reps,truth,estimate,mc_sd,se,rmse,coverage\n", 0),
            0u);
}
