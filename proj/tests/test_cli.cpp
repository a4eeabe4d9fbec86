#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "excursion/cli.hpp"

using namespace excursion;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result cli(std::vector<std::string> args) {
  args.insert(args.begin(), "excursion");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string sample(const std::string& name) { return std::string(EXCURSION_SAMPLES_DIR) + "/" + name; }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("excursion_cli_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                        "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string write(const std::string& name, const std::string& text) {
    const auto path = (dir_ / name).string();
    std::ofstream(path) << text;
    return path;
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  static std::string read(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
  }

  fs::path dir_;
};

const char* kSmallScenario = R"({"scenario": {"scenario": "I", "M": 3, "G": 2, "T": 4}})";

}  // namespace

TEST_F(Cli, FitToyPanelWritesCoefficients) {
  const auto r = cli({"fit", sample("toy_panel.csv"), sample("fit_direct.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["estimator"], "cwcls_direct");
  EXPECT_EQ(j["coefficients"].size(), 4u);
  EXPECT_EQ(j["n_units"], 2);
  EXPECT_EQ(j["n_rows"], 11);
  EXPECT_EQ(j["covariance"].size(), 4u);
  EXPECT_EQ(j["covariance"][0].size(), 4u);
  EXPECT_NE(r.err.find("beta:S"), std::string::npos);
}

TEST_F(Cli, FitOutputFileAndFlags) {
  const auto out = path("fit.json");
  const auto r = cli({"fit", sample("toy_panel.csv"), sample("fit_direct.json"), "-o", out, "--no-adjust"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(read(out));
  EXPECT_EQ(j["adjusted"], false);
  EXPECT_EQ(j["covariance"], j["covariance_unadjusted"]);
}

TEST_F(Cli, CollinearModeratorExitsThree) {
  const auto r = cli({"fit", sample("toy_panel.csv"), sample("fit_collinear.json")});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("collinear"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("beta:S"), std::string::npos) << r.err;
}

TEST_F(Cli, IndirectOnSingletonClustersExitsTwo) {
  std::string csv = "cluster_id,individual_id,t,available,treatment,rand_prob,S,outcome\n";
  for (int c = 1; c <= 3; ++c)
    for (int t = 1; t <= 3; ++t) csv += std::to_string(c) + ",1," + std::to_string(t) + ",1," + std::to_string(t % 2) + ",0.5,1,0.3\n";
  const auto r = cli({"fit", write("single.csv", csv), sample("fit_indirect.json")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("size >= 2"), std::string::npos) << r.err;
}

TEST_F(Cli, DataErrorsExitTwo) {
  const auto r = cli({"fit", write("bad.csv", "cluster_id,individual_id\n1,1\n"), sample("fit_direct.json")});
  EXPECT_EQ(r.code, 2);
  const auto missing = cli({"fit", path("nope.csv"), sample("fit_direct.json")});
  EXPECT_EQ(missing.code, 2);
}

TEST_F(Cli, ConfigErrorsExitFour) {
  EXPECT_EQ(cli({"fit", sample("toy_panel.csv"), write("c.json", "{\"bogus\": 1}")}).code, 4);
  EXPECT_EQ(cli({"fit", sample("toy_panel.csv"), write("c.json", "{not json")}).code, 4);
  EXPECT_EQ(cli({"fit", sample("toy_panel.csv"), path("absent.json")}).code, 4);
  EXPECT_EQ(cli({"frobnicate"}).code, 4);
  EXPECT_EQ(cli({}).code, 4);
  const auto unresolved = write("m.json", R"({"model": {"moderators": ["Z"], "controls": ["intercept"]}})");
  EXPECT_EQ(cli({"fit", sample("toy_panel.csv"), unresolved}).code, 4);
}

TEST_F(Cli, SimulateNeedsSeed) {
  const auto r = cli({"simulate", write("s.json", kSmallScenario)});
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.err.find("seed"), std::string::npos);
}

TEST_F(Cli, SimulateIsDeterministic) {
  const auto cfg = write("s.json", kSmallScenario);
  const auto a = cli({"simulate", cfg, "--seed", "1"});
  const auto b = cli({"simulate", cfg, "--seed", "1"});
  const auto c = cli({"simulate", cfg, "--seed", "2"});
  const auto d = cli({"simulate", cfg, "--seed", "3", "-o", path("d.csv")});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_NE(a.out, c.out);
  EXPECT_NE(read(path("d.csv")), a.out);
  EXPECT_NE(read(path("d.csv")), c.out);
  std::size_t lines = 0;
  for (char ch : a.out) lines += ch == '\n';
  EXPECT_EQ(lines, 1u + 3u * 2u * 4u);
  EXPECT_EQ(a.out.rfind("cluster_id,individual_id,t,available,treatment,rand_prob,S,outcome\n", 0), 0u);
}

TEST_F(Cli, SimulatedFileFitsWithSampleConfig) {
  const auto cfg = write("s.json", R"({"scenario": {"scenario": "II", "M": 6, "G": 3, "T": 5, "seed": 9}})");
  ASSERT_EQ(cli({"simulate", cfg, "-o", path("d.csv")}).code, 0);
  const auto r = cli({"fit", path("d.csv"), sample("fit_direct.json")});
  EXPECT_EQ(r.code, 0) << r.err;
}

TEST_F(Cli, ReplicateWritesReport) {
  const auto cfg = write("r.json", R"({"scenario": {"scenario": "I", "M": 6, "G": 3, "T": 5, "seed": 4},
                                        "replicate": {"n_reps": 3}})");
  const auto a = cli({"replicate", cfg, "--threads", "1"});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out.rfind("scenario,estimator,policy,clusters,size,T,n_reps,truth,estimate,mc_sd,se,rmse,coverage\n", 0), 0u);
  EXPECT_NE(a.out.find("I,C-WCLS,observed,6,3,5,3,"), std::string::npos) << a.out;
  EXPECT_NE(a.out.find("I,WCLS,observed,6,3,5,3,"), std::string::npos) << a.out;
  EXPECT_NE(a.err.find("#Clusters"), std::string::npos);
  EXPECT_EQ(cli({"replicate", cfg, "--threads", "4"}).out, a.out);
  const auto two = cli({"replicate", cfg, "--n-reps", "2", "--threads", "1"});
  EXPECT_NE(two.out.find(",2,"), std::string::npos);
}

TEST_F(Cli, ReplicateFailuresExitFive) {
  const auto cfg = write("r.json", R"({"scenario": {"scenario": "I", "M": 1, "G": 3, "T": 5, "seed": 4},
                                        "replicate": {"n_reps": 2, "estimators": ["cwcls_direct"]}})");
  const auto r = cli({"replicate", cfg, "--threads", "1"});
  EXPECT_EQ(r.code, 5);
  EXPECT_NE(r.err.find("seed"), std::string::npos) << r.err;
  EXPECT_EQ(cli({"replicate", write("s.json", kSmallScenario)}).code, 4);
}

TEST_F(Cli, SweepShape) {
  const auto cfg = write("w.json", R"({"scenario": {"scenario": "II", "M": 5, "G": 3, "T": 4, "seed": 8},
                                        "sweep": {"axis": "variance_ratio", "grid": [0, 0.1, 0.2, 0.4], "n_reps": 2}})");
  const auto r = cli({"sweep", cfg, "--threads", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t lines = 0;
  for (char ch : r.out) lines += ch == '\n';
  EXPECT_EQ(lines, 1u + 4u * 2u);
  EXPECT_EQ(cli({"sweep", write("s.json", R"({"scenario": {"scenario": "I", "seed": 1}})")}).code, 4);
}

TEST_F(Cli, OracleReport) {
  const auto cfg = write("o.json", R"({"scenario": {"scenario": "LAG_I", "M": 1, "G": 4, "T": 6, "seed": 3},
                                        "policy": "sequential",
                                        "oracle": {"n_mc": 4000}})");
  const auto r = cli({"oracle", cfg});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("scenario,estimand,policy,analytic,oracle,mc_se,n_mc,z\n", 0), 0u);
  EXPECT_NE(r.out.find("LAG_I,lag_direct,always_treat,"), std::string::npos) << r.out;
  const auto bad = write("b.json", R"({"scenario": {"scenario": "I", "G": 1, "seed": 3},
                                       "oracle": {"n_mc": 10, "estimands": ["indirect"]}})");
  EXPECT_EQ(cli({"oracle", bad}).code, 4);
}

TEST_F(Cli, SampleConfigsParse) {
  for (const char* name : {"fit_direct.json", "fit_collinear.json", "fit_indirect.json", "scenario_I.json",
                           "scenario_II.json", "scenario_IV.json", "lag_sequential.json", "sweep_ratio.json",
                           "sweep_group_size.json"}) {
    EXPECT_NO_THROW(load_config(sample(name))) << name;
  }
}
