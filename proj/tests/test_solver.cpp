#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "icrsel/simgen.hpp"
#include "icrsel/solver.hpp"

using icrsel::DegenerateGCV;
using icrsel::FitConfig;
using icrsel::FitResult;
using icrsel::gcv_score;
using icrsel::gen_dataset;
using icrsel::LikelihoodContext;
using icrsel::ModelState;
using icrsel::NoConvergence;
using icrsel::oracle_fit;
using icrsel::PenaltyKind;
using icrsel::Scenario;
using icrsel::scenario_specs;
using icrsel::select_tau;
using icrsel::select_transformation;
using icrsel::stack_beta;
using icrsel::SubjectRecord;
using icrsel::TauSelection;
using icrsel::TransformationSpec;
using icrsel::unstack_beta;
using icrsel::ValidationError;

namespace {

Scenario small_scenario(int n, int d, std::uint64_t seed) {
  Scenario sc;
  sc.n = n;
  sc.d_n = d;
  sc.K = 2;
  sc.rho = 0.2;
  sc.r = {0.0, 0.0};
  sc.beta_true = Eigen::MatrixXd::Zero(2, d);
  sc.beta_true(0, 0) = 0.8;
  sc.beta_true(0, 1) = 0.6;
  sc.beta_true(1, 0) = -0.8;
  sc.beta_true(1, 1) = -0.6;
  sc.seed = seed;
  return sc;
}

}  // namespace

TEST_CASE("coefficient stacking round-trips risk-major") {
  Eigen::MatrixXd beta(2, 3);
  beta << 1, 2, 3, 4, 5, 6;
  const Eigen::VectorXd v = stack_beta(beta);
  CHECK(v[0] == 1);
  CHECK(v[2] == 3);
  CHECK(v[3] == 4);
  CHECK(unstack_beta(v, 2, 3).isApprox(beta));
}

TEST_CASE("config validation rejects bad knobs") {
  FitConfig cfg;
  cfg.tau = -1.0;
  CHECK_THROWS_AS(validate_config(cfg), ValidationError);
  cfg = FitConfig{};
  cfg.outer_tol = 0.0;
  CHECK_THROWS_AS(validate_config(cfg), ValidationError);
  cfg = FitConfig{};
  cfg.max_outer = 0;
  CHECK_THROWS_AS(validate_config(cfg), ValidationError);
  cfg = FitConfig{};
  cfg.zero_threshold = 0.0;
  CHECK_THROWS_AS(validate_config(cfg), ValidationError);
  cfg = FitConfig{};
  cfg.penalty.delta = 0.0;
  CHECK_THROWS_AS(validate_config(cfg), ValidationError);
}

TEST_CASE("maximum-likelihood fit beats its starting point and lands near truth") {
  const Scenario sc = small_scenario(150, 2, 2024);
  const auto data = gen_dataset(sc);
  const LikelihoodContext ctx(data, scenario_specs(sc));

  FitConfig cfg;
  cfg.max_outer = 5000;
  const FitResult fit = fit_unpenalized(ctx, cfg);
  CHECK(fit.converged);
  CHECK(fit.bar_residual != fit.bar_residual);  // NaN: no ridge refresh involved

  const ModelState start = make_initial_state(ctx);
  ModelState started = start;
  e_step(ctx, started);
  CHECK(fit.loglik > observed_loglik(ctx, started));

  // Loose recovery bound: n=150 with four live coordinates.
  for (int k = 0; k < 2; ++k)
    for (int a = 0; a < 2; ++a)
      CHECK(std::abs(fit.beta(k, a) - sc.beta_true(k, a)) < 0.45);
}

TEST_CASE("pinned coordinates never move") {
  const Scenario sc = small_scenario(60, 3, 77);
  const auto data = gen_dataset(sc);
  const LikelihoodContext ctx(data, scenario_specs(sc));
  FitConfig cfg;
  cfg.max_outer = 3000;

  // Free only risk 1's first coordinate; everything else stays at zero.
  std::vector<std::uint8_t> mask(6, 0);
  mask[0] = 1;
  const FitResult fit = fit_unpenalized(ctx, cfg, nullptr, &mask);
  CHECK(fit.beta(0, 0) != 0.0);
  CHECK(fit.beta(0, 1) == 0.0);
  CHECK(fit.beta(0, 2) == 0.0);
  CHECK(fit.beta.row(1).cwiseAbs().maxCoeff() == 0.0);

  // oracle_fit is the same mask semantics by support set.
  const FitResult ora = oracle_fit(ctx, mask, cfg);
  CHECK(ora.beta(0, 0) == doctest::Approx(fit.beta(0, 0)).epsilon(1e-8));
  CHECK(ora.beta.cwiseAbs().sum() == doctest::Approx(std::abs(fit.beta(0, 0))));
}

TEST_CASE("iteration cap raises a typed failure") {
  const Scenario sc = small_scenario(60, 2, 31);
  const auto data = gen_dataset(sc);
  const LikelihoodContext ctx(data, scenario_specs(sc));
  FitConfig cfg;
  cfg.max_outer = 1;
  cfg.outer_tol = 1e-12;
  CHECK_THROWS_AS(fit_unpenalized(ctx, cfg), NoConvergence);
}

TEST_CASE("zero-penalty fit matches the unpenalized estimate") {
  for (std::uint64_t seed : {101ULL, 102ULL}) {
    const Scenario sc = small_scenario(100, 2, seed);
    const auto data = gen_dataset(sc);
    const LikelihoodContext ctx(data, scenario_specs(sc));
    FitConfig cfg;
    cfg.max_outer = 5000;
    const FitResult plain = fit_unpenalized(ctx, cfg);

    for (PenaltyKind kind : {PenaltyKind::bar, PenaltyKind::lasso}) {
      FitConfig pcfg = cfg;
      pcfg.penalty.kind = kind;
      pcfg.tau = 0.0;
      const FitResult pen = fit_penalized(ctx, pcfg, &plain);
      CHECK((stack_beta(pen.beta) - stack_beta(plain.beta)).cwiseAbs().maxCoeff() <
            1e-4);
    }
  }
}

TEST_CASE("overwhelming penalty empties the support") {
  const Scenario sc = small_scenario(80, 3, 55);
  const auto data = gen_dataset(sc);
  const LikelihoodContext ctx(data, scenario_specs(sc));
  FitConfig cfg;
  cfg.max_outer = 3000;
  cfg.penalty.kind = PenaltyKind::bar;
  cfg.tau = 1e6;
  const FitResult fit = fit_penalized(ctx, cfg);
  CHECK(std::count(fit.support.begin(), fit.support.end(), 1) == 0);
  CHECK(fit.bar_residual < 1e-6);
}

TEST_CASE("ridge-refresh fixed point is certified on penalized fits") {
  const Scenario sc = small_scenario(100, 3, 404);
  const auto data = gen_dataset(sc);
  const LikelihoodContext ctx(data, scenario_specs(sc));
  FitConfig cfg;
  cfg.max_outer = 5000;
  cfg.penalty.kind = PenaltyKind::bar;
  for (double tau : {0.5, 2.0, 8.0}) {
    cfg.tau = tau;
    const FitResult fit = fit_penalized(ctx, cfg);
    CHECK(fit.converged);
    CHECK(fit.bar_residual < 1e-6);
  }
}

TEST_CASE("model-fit criterion uses the full parameter count at zero penalty") {
  const Scenario sc = small_scenario(90, 2, 313);
  const auto data = gen_dataset(sc);
  const LikelihoodContext ctx(data, scenario_specs(sc));
  FitConfig cfg;
  cfg.max_outer = 5000;
  const FitResult fit = fit_unpenalized(ctx, cfg);
  const double g = gcv_score(ctx, fit, cfg);
  const double n = ctx.n_subjects();
  const double P = ctx.n_coefficients();
  const double shrink = 1.0 - P / n;
  CHECK(g == doctest::Approx(-fit.loglik / (n * shrink * shrink)).epsilon(1e-12));
}

TEST_CASE("effective parameter count shrinks as the ridge penalty grows") {
  // Same fitted state scored at increasing tau: the dof trace falls, the
  // shrink factor rises, and with a fixed negative log-likelihood the
  // criterion must strictly decrease.
  const Scenario sc = small_scenario(90, 2, 314);
  const auto data = gen_dataset(sc);
  const LikelihoodContext ctx(data, scenario_specs(sc));
  FitConfig cfg;
  cfg.max_outer = 5000;
  FitResult fit = fit_unpenalized(ctx, cfg);
  FitConfig bar = cfg;
  bar.penalty.kind = PenaltyKind::bar;
  double last = std::numeric_limits<double>::infinity();
  for (double tau : {0.1, 1.0, 10.0}) {
    fit.tau = tau;
    const double g = gcv_score(ctx, fit, bar);
    CHECK(g < last);
    last = g;
  }
}

TEST_CASE("degenerate effective parameter count is a typed error") {
  // Two subjects, two coefficients: s = P = n at zero penalty.
  const std::vector<SubjectRecord> data = [] {
    Scenario sc = small_scenario(40, 2, 11);
    auto all = gen_dataset(sc);
    std::vector<SubjectRecord> keep;
    for (const auto& rec : all) {
      if (rec.event_observed && keep.empty()) keep.push_back(rec);
      if (!rec.event_observed && keep.size() == 1) {
        keep.push_back(rec);
        break;
      }
    }
    return keep;
  }();
  REQUIRE(data.size() == 2);
  const LikelihoodContext ctx(data, {TransformationSpec(0.0), TransformationSpec(0.0)});
  FitConfig cfg;
  FitResult fake;
  fake.state = make_initial_state(ctx);
  fake.beta = fake.state.beta;
  fake.support.assign(4, 0);
  fake.loglik = -1.0;
  fake.tau = 0.0;
  CHECK_THROWS_AS(gcv_score(ctx, fake, cfg), DegenerateGCV);
}

TEST_CASE("penalty tuning returns a grid member consistent with its table") {
  const Scenario sc = small_scenario(100, 3, 606);
  const auto data = gen_dataset(sc);
  const LikelihoodContext ctx(data, scenario_specs(sc));
  FitConfig cfg;
  cfg.max_outer = 5000;
  cfg.penalty.kind = PenaltyKind::bar;

  const TauSelection sel = select_tau(ctx, cfg, {0.5, 2.0, 8.0});
  REQUIRE(sel.taus == std::vector<double>{0.5, 2.0, 8.0});
  CHECK(std::find(sel.taus.begin(), sel.taus.end(), sel.tau) != sel.taus.end());
  CHECK(sel.best.tau == sel.tau);

  double best = std::numeric_limits<double>::infinity();
  double arg = -1.0;
  for (std::size_t i = 0; i < sel.taus.size(); ++i) {
    if (sel.gcvs[i] == sel.gcvs[i] && sel.gcvs[i] < best) {
      best = sel.gcvs[i];
      arg = sel.taus[i];
    }
  }
  CHECK(sel.tau == arg);
  CHECK(sel.best.gcv == doctest::Approx(best));

  // Single-element and zero grids.
  const TauSelection one = select_tau(ctx, cfg, {2.0});
  CHECK(one.tau == 2.0);
  FitConfig plain = cfg;
  plain.penalty.kind = PenaltyKind::none;
  const TauSelection zero = select_tau(ctx, plain, {0.0});
  CHECK((stack_beta(zero.best.beta) - stack_beta(zero.unpenalized.beta))
            .cwiseAbs()
            .maxCoeff() < 1e-10);
}

TEST_CASE("adaptive tuning fills its reference from the unpenalized fit") {
  const Scenario sc = small_scenario(100, 2, 707);
  const auto data = gen_dataset(sc);
  const LikelihoodContext ctx(data, scenario_specs(sc));
  FitConfig cfg;
  cfg.max_outer = 5000;
  cfg.penalty.kind = PenaltyKind::alasso;

  const TauSelection implicit = select_tau(ctx, cfg, {0.3, 1.0});
  FitConfig explicit_cfg = cfg;
  explicit_cfg.penalty.reference = stack_beta(implicit.unpenalized.beta);
  const TauSelection explicit_sel = select_tau(ctx, explicit_cfg, {0.3, 1.0});
  CHECK(implicit.tau == explicit_sel.tau);
  CHECK((stack_beta(implicit.best.beta) - stack_beta(explicit_sel.best.beta))
            .cwiseAbs()
            .maxCoeff() < 1e-12);
}

TEST_CASE("transformation search scans lexicographically and maximizes") {
  const Scenario sc = small_scenario(80, 2, 808);
  const auto data = gen_dataset(sc);
  FitConfig cfg;
  cfg.max_outer = 5000;

  const auto sel = select_transformation(data, 2, cfg, 0.4, 0.2);
  REQUIRE(sel.table.size() == 4);  // {0.2, 0.4} x {0.2, 0.4}
  CHECK(sel.table[0].r == std::vector<double>{0.2, 0.2});
  CHECK(sel.table[1].r == std::vector<double>{0.2, 0.4});
  CHECK(sel.table[2].r == std::vector<double>{0.4, 0.2});
  CHECK(sel.table[3].r == std::vector<double>{0.4, 0.4});

  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> arg;
  for (const auto& cell : sel.table) {
    REQUIRE(cell.ok);
    if (cell.loglik > best) {
      best = cell.loglik;
      arg = cell.r;
    }
  }
  CHECK(sel.r == arg);
  CHECK(sel.loglik == doctest::Approx(best));
  CHECK(sel.fit.loglik == doctest::Approx(best));

  // Degenerate single-cell grid.
  const auto single = select_transformation(data, 2, cfg, 0.2, 0.2);
  REQUIRE(single.table.size() == 1);
  CHECK(single.r == std::vector<double>{0.2, 0.2});
}
