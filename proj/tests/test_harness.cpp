#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "icrsel/harness.hpp"

using icrsel::ar1_covariance;
using icrsel::BenchConfig;
using icrsel::BenchOutput;
using icrsel::cli_main;
using icrsel::default_beta_true;
using icrsel::load_bench_config;
using icrsel::MetricsRow;
using icrsel::render_detail;
using icrsel::render_summary;
using icrsel::RepDetail;
using icrsel::replication_metrics;
using icrsel::RepMetrics;
using icrsel::run_bench;
using icrsel::true_support;
using icrsel::ValidationError;

namespace {

BenchConfig tiny_bench() {
  std::istringstream in(R"({
    "scenario": {"n": 50, "d_n": 3, "K": 2, "rho": 0.2, "r": [0, 0], "seed": 7},
    "bench": {"reps": 4, "penalties": ["oracle", "none"]}
  })");
  return load_bench_config(in);
}

int run_cli(std::vector<std::string> args) {
  std::vector<char*> argv;
  args.insert(args.begin(), "icrsel-cli");
  for (auto& s : args) argv.push_back(s.data());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("autoregressive covariance is the power ladder") {
  const Eigen::MatrixXd s = ar1_covariance(3, 0.5);
  Eigen::MatrixXd expect(3, 3);
  expect << 1.0, 0.5, 0.25, 0.5, 1.0, 0.5, 0.25, 0.5, 1.0;
  CHECK((s - expect).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("default truth is the mirrored three-signal pattern") {
  const Eigen::MatrixXd beta = default_beta_true(2, 5);
  CHECK(beta(0, 0) == 0.8);
  CHECK(beta(0, 1) == 0.6);
  CHECK(beta(0, 2) == 0.8);
  CHECK(beta(0, 3) == 0.0);
  CHECK(beta.row(1) == -beta.row(0));
  const auto support = true_support(beta);
  CHECK(support == std::vector<std::uint8_t>{1, 1, 1, 0, 0, 1, 1, 1, 0, 0});
}

TEST_CASE("replication metrics by hand") {
  Eigen::MatrixXd truth(2, 3), hat(2, 3);
  truth << 1.0, 0.0, 0.5, 0.0, 2.0, 0.0;
  hat << 0.9, 0.3, 0.0, 0.0, 1.5, 0.0;
  const std::vector<Eigen::MatrixXd> sigma(2, ar1_covariance(3, 0.5));
  const RepMetrics m = replication_metrics(hat, truth, sigma, 1e-5);
  CHECK(m.tp == 2);
  CHECK(m.fp == 1);
  CHECK(m.mcv == 2);  // one live coordinate missed plus one dead one kept
  CHECK(m.mse == doctest::Approx(0.195 + 0.25).epsilon(1e-12));
}

TEST_CASE("config parsing fills defaults and rejects unknown keys") {
  const BenchConfig cfg = tiny_bench();
  CHECK(cfg.scenario.n == 50);
  CHECK(cfg.scenario.d_n == 3);
  CHECK(cfg.reps == 4);
  CHECK(cfg.penalties == std::vector<std::string>{"oracle", "none"});
  CHECK(cfg.tau_grid.empty());
  CHECK(cfg.fit.max_outer == 5000);
  // beta_true defaults to the mirrored pattern truncated to d_n columns.
  CHECK(cfg.scenario.beta_true == default_beta_true(2, 3));

  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return load_bench_config(in);
  };
  CHECK_THROWS_AS(parse(R"({"scenario": {"n": 10, "bogus": 1}})"), ValidationError);
  CHECK_THROWS_AS(parse(R"({"scenario": {"n": 10}, "bench": {"foo": 2}})"),
                  ValidationError);
  CHECK_THROWS_AS(parse(R"({"scenario": {"n": 10}, "extra": {}})"), ValidationError);
  CHECK_THROWS_AS(parse(R"({not json)"), ValidationError);
  CHECK_THROWS_AS(
      parse(R"({"scenario": {"K": 2, "d_n": 3, "beta_true": [[1, 0, 0]]}})"),
      ValidationError);
  // Explicit beta_true lands row-wise.
  const BenchConfig explicit_cfg = parse(
      R"({"scenario": {"K": 2, "d_n": 2, "r": [0, 0],
          "beta_true": [[1.5, 0.0], [0.0, -1.0]]}})");
  CHECK(explicit_cfg.scenario.beta_true(0, 0) == 1.5);
  CHECK(explicit_cfg.scenario.beta_true(1, 1) == -1.0);
}

TEST_CASE("benchmark aggregates reduce its own detail rows") {
  const BenchConfig cfg = tiny_bench();
  const BenchOutput out = run_bench(cfg, 1);
  REQUIRE(out.rows.size() == 2);
  REQUIRE(out.details.size() == 8);  // rep-major, two penalties per rep

  for (int rep = 0; rep < 4; ++rep) {
    CHECK(out.details[2 * rep].rep == rep);
    CHECK(out.details[2 * rep].penalty == "oracle");
    CHECK(out.details[2 * rep + 1].penalty == "none");
  }

  for (std::size_t j = 0; j < out.rows.size(); ++j) {
    const MetricsRow& row = out.rows[j];
    CHECK(row.reps == 4);
    CHECK(row.failures == 0);
    CHECK(row.q == 6);  // all three coordinates per risk are live at d_n = 3
    double tp = 0.0, fp = 0.0;
    std::vector<double> mses;
    for (const auto& dtl : out.details) {
      if (dtl.penalty != row.penalty) continue;
      CHECK(dtl.ok);
      tp += dtl.metrics.tp / 4.0;
      fp += dtl.metrics.fp / 4.0;
      mses.push_back(dtl.metrics.mse);
    }
    CHECK(row.tp == doctest::Approx(tp).epsilon(1e-12));
    CHECK(row.fp == doctest::Approx(fp).epsilon(1e-12));
    std::sort(mses.begin(), mses.end());
    CHECK(row.mmse == doctest::Approx(0.5 * (mses[1] + mses[2])).epsilon(1e-12));
  }

  // The oracle never reports a dead coordinate as live.
  const MetricsRow& oracle = out.rows[0];
  CHECK(oracle.penalty == "oracle");
  CHECK(oracle.fp == 0.0);
  CHECK(oracle.tp == 6.0);

  BenchConfig bad = cfg;
  bad.penalties = {"ridge"};
  CHECK_THROWS_AS(run_bench(bad, 1), ValidationError);
  bad = cfg;
  bad.reps = 0;
  CHECK_THROWS_AS(run_bench(bad, 1), ValidationError);
}

TEST_CASE("benchmark output is byte-identical across thread counts") {
  const BenchConfig cfg = tiny_bench();
  const BenchOutput a = run_bench(cfg, 1);
  const BenchOutput b = run_bench(cfg, 3);
  CHECK(render_summary(a.rows, ',') == render_summary(b.rows, ','));
  CHECK(render_detail(a.details, ',') == render_detail(b.details, ','));
}

TEST_CASE("summary and detail renderers emit fixed formats") {
  MetricsRow row;
  row.penalty = "bar";
  row.n = 200;
  row.p = 28;
  row.q = 6;
  row.rho = 0.2;
  row.r = {0.0, 0.0};
  row.tp = 4.8;
  row.fp = 0.16;
  row.mcv = 1.36;
  row.mmse = 0.843;
  row.mse_sd = 0.306;
  row.reps = 50;
  row.failures = 0;
  CHECK(render_summary({row}, ',') ==
        "penalty,n,p,rho,r1,r2,TP,FP,MCV,MMSE,MSE_SD,reps,failures\n"
        "bar,200,28,0.2,0,0,4.8000,0.1600,1.3600,0.8430,0.3060,50,0\n");

  RepDetail ok;
  ok.rep = 0;
  ok.penalty = "bar";
  ok.ok = true;
  ok.tau_star = 1.5;
  ok.metrics = RepMetrics{6, 1, 1, 0.25};
  ok.iterations = 12;
  ok.converged = true;
  RepDetail failed;
  failed.rep = 1;
  failed.penalty = "bar";
  failed.ok = false;
  failed.tau_star = std::numeric_limits<double>::quiet_NaN();
  failed.metrics.mse = std::numeric_limits<double>::quiet_NaN();
  CHECK(render_detail({ok, failed}, ',') ==
        "rep,penalty,tau_star,tp,fp,mcv,mse,iters,converged\n"
        "0,bar,1.5,6,1,1,0.250000,12,1\n"
        "1,bar,nan,nan,nan,nan,nan,0,0\n");
}

TEST_CASE("command line flows: simulate, fit, and failure codes") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "icrsel_cli_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path config = dir / "config.json";
  {
    std::ofstream out(config);
    out << R"({"scenario": {"n": 40, "d_n": 3, "K": 2, "rho": 0.2, "r": [0, 0],
                            "seed": 5}})";
  }

  CHECK(run_cli({"simulate", "--config", config.string(), "--out",
                 (dir / "sim").string()}) == 0);
  CHECK(fs::exists(dir / "sim" / "dataset.csv"));

  CHECK(run_cli({"fit", "--data", (dir / "sim" / "dataset.csv").string(), "--r1", "0",
                 "--r2", "0"}) == 0);

  // Config errors are runtime failures; bad flags are usage errors.
  CHECK(run_cli({"simulate", "--config", (dir / "missing.json").string(), "--out",
                 (dir / "x").string()}) == 1);
  CHECK(run_cli({"simulate", "--bogus-flag"}) == 2);
  CHECK(run_cli({"no-such-subcommand"}) == 2);

  fs::remove_all(dir);
}
