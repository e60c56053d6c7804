#include "icrsel/solver.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

#include <Eigen/Cholesky>

namespace icrsel {

namespace {

constexpr double kRidgeFallbackScale = 1.0;  // tau = scale * sqrt(n) for the fallback init

double nan_value() { return std::numeric_limits<double>::quiet_NaN(); }

std::vector<std::uint8_t> full_mask(int p) { return std::vector<std::uint8_t>(p, 1); }

std::vector<int> mask_indices(const std::vector<std::uint8_t>& mask) {
  std::vector<int> idx;
  for (std::size_t a = 0; a < mask.size(); ++a)
    if (mask[a]) idx.push_back(static_cast<int>(a));
  return idx;
}

double lambda_change(const std::vector<Eigen::VectorXd>& a,
                     const std::vector<Eigen::VectorXd>& b) {
  double c = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    c = std::max(c, (a[k] - b[k]).cwiseAbs().maxCoeff());
  return c;
}

// Damped ascent move toward `target` for the free coordinates, accepted only
// when the weighted objective does not drop and no likelihood guard fires.
// Returns the realized coefficient change norm.
double guarded_move(const LikelihoodContext& ctx, ModelState& state,
                    const Eigen::VectorXd& target, const std::vector<int>& free_idx,
                    double base_scale) {
  const int d = ctx.n_covariates();
  const Eigen::VectorXd beta0 = stack_beta(state.beta);
  const double obj0 = profile_objective(ctx, state);

  double scale = base_scale;
  for (int att = 0; att < 40; ++att, scale *= 0.5) {
    Eigen::VectorXd cand = beta0;
    for (int a : free_idx) cand[a] = beta0[a] + scale * (target[a] - beta0[a]);
    state.beta = unstack_beta(cand, ctx.n_risks(), d);
    bool ok = false;
    try {
      ok = profile_objective(ctx, state) >= obj0 - 1e-9 * (1.0 + std::abs(obj0));
    } catch (const Error&) {
      ok = false;
    }
    if (ok) return (cand - beta0).norm();
  }
  state.beta = unstack_beta(beta0, ctx.n_risks(), d);
  return 0.0;
}

}  // namespace

void validate_config(const FitConfig& cfg) {
  if (!(cfg.tau >= 0.0)) throw ValidationError("config: tau must be nonnegative");
  if (!(cfg.outer_tol > 0.0 && cfg.inner_tol > 0.0 && cfg.shooting_tol > 0.0))
    throw ValidationError("config: tolerances must be positive");
  if (cfg.max_outer < 1 || cfg.max_inner < 1 || cfg.max_shooting < 1)
    throw ValidationError("config: iteration caps must be positive");
  if (!(cfg.zero_threshold > 0.0))
    throw ValidationError("config: zero threshold must be positive");
  if (!(cfg.penalty.delta > 0.0)) throw ValidationError("config: delta must be positive");
  if (!(cfg.penalty.psi > 0.0)) throw ValidationError("config: psi must be positive");
}

Eigen::VectorXd stack_beta(const Eigen::MatrixXd& beta) {
  Eigen::VectorXd v(beta.size());
  for (int k = 0; k < beta.rows(); ++k)
    v.segment(k * beta.cols(), beta.cols()) = beta.row(k).transpose();
  return v;
}

Eigen::MatrixXd unstack_beta(const Eigen::VectorXd& v, int n_risks, int d) {
  Eigen::MatrixXd beta(n_risks, d);
  for (int k = 0; k < n_risks; ++k) beta.row(k) = v.segment(k * d, d).transpose();
  return beta;
}

namespace {

std::vector<std::uint8_t> report_support(const Eigen::MatrixXd& beta, double threshold) {
  const Eigen::VectorXd v = stack_beta(beta);
  std::vector<std::uint8_t> s(v.size());
  for (int a = 0; a < v.size(); ++a) s[a] = std::abs(v[a]) > threshold ? 1 : 0;
  return s;
}

void finalize(const LikelihoodContext& ctx, const FitConfig& cfg, FitResult& fit) {
  fit.beta = fit.state.beta;
  fit.support = report_support(fit.beta, cfg.zero_threshold);
  fit.loglik = observed_loglik(ctx, fit.state);
  fit.profile_obj = profile_objective(ctx, fit.state);
}

// Newton target for the free coordinates of the current surrogate-restricted
// quadratic: solve XtX t = XtW on the free block.
Eigen::VectorXd newton_target(const Eigen::MatrixXd& H, const Eigen::VectorXd& u,
                              const Eigen::VectorXd& beta, const std::vector<int>& free_idx) {
  const int f = static_cast<int>(free_idx.size());
  Eigen::MatrixXd Hf(f, f);
  Eigen::VectorXd uf(f), bf(f);
  for (int a = 0; a < f; ++a) {
    uf[a] = u[free_idx[a]];
    bf[a] = beta[free_idx[a]];
    for (int c = 0; c < f; ++c) Hf(a, c) = H(free_idx[a], free_idx[c]);
  }
  const Surrogate surr = build_surrogate(Hf, uf, bf);
  const Eigen::VectorXd tf = surr.X.triangularView<Eigen::Upper>().solve(
      surr.X.transpose().triangularView<Eigen::Lower>().solve(surr.XtW));
  Eigen::VectorXd target = beta;
  for (int a = 0; a < f; ++a) target[free_idx[a]] = tf[a];
  return target;
}

}  // namespace

FitResult fit_unpenalized(const LikelihoodContext& ctx, const FitConfig& cfg,
                          const ModelState* init, const std::vector<std::uint8_t>* free_mask) {
  validate_config(cfg);
  const int P = ctx.n_coefficients();
  const std::vector<std::uint8_t> mask = free_mask ? *free_mask : full_mask(P);
  if (static_cast<int>(mask.size()) != P)
    throw ValidationError("free-coordinate mask has the wrong length");
  const std::vector<int> free_idx = mask_indices(mask);

  FitResult fit;
  fit.tau = 0.0;
  fit.state = init ? *init : make_initial_state(ctx);

  Eigen::VectorXd u;
  Eigen::MatrixXd H;
  double step_scale = 1.0;
  int bad_streak = 0;
  double prev_loglik = -std::numeric_limits<double>::infinity();

  std::vector<Eigen::VectorXd> lam0;
  for (int m = 0; m < cfg.max_outer; ++m) {
    e_step(ctx, fit.state);
    if (free_idx.empty()) lam0 = fit.state.lambda;
    update_lambda(ctx, fit.state);

    double change = 0.0;
    if (!free_idx.empty()) {
      gradient_and_hessian(ctx, fit.state, u, H);
      const Eigen::VectorXd target =
          newton_target(H, u, stack_beta(fit.state.beta), free_idx);
      change = guarded_move(ctx, fit.state, target, free_idx, step_scale);
    }
    fit.trace.push_back(change);
    fit.iterations = m + 1;

    const double ll = observed_loglik(ctx, fit.state);
    if (ll < prev_loglik - 1e-10 * (1.0 + std::abs(prev_loglik))) {
      if (++bad_streak >= 10) {
        step_scale = std::max(step_scale * 0.5, 1e-6);
        bad_streak = 0;
      }
    } else {
      bad_streak = 0;
    }
    prev_loglik = ll;

    const bool stop = free_idx.empty()
                          ? lambda_change(lam0, fit.state.lambda) < cfg.outer_tol
                          : change < cfg.outer_tol;
    if (stop && m > 0) {
      fit.converged = true;
      break;
    }
  }

  if (!fit.converged)
    throw NoConvergence("maximum-likelihood fit did not converge in " +
                            std::to_string(cfg.max_outer) + " iterations",
                        stack_beta(fit.state.beta), fit.trace);
  finalize(ctx, cfg, fit);
  return fit;
}

FitResult oracle_fit(const LikelihoodContext& ctx, const std::vector<std::uint8_t>& keep,
                     const FitConfig& cfg) {
  return fit_unpenalized(ctx, cfg, nullptr, &keep);
}

// Ridge-start fallback: the reweighted ridge refresh with all previous
// coefficients treated as unit-sized, at a moderate fixed tau.
FitResult fit_ridge_start(const LikelihoodContext& ctx, const FitConfig& cfg) {
  const int P = ctx.n_coefficients();
  const double tau = kRidgeFallbackScale * std::sqrt(static_cast<double>(ctx.n_subjects()));
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(P);
  const std::vector<int> free_idx = mask_indices(full_mask(P));

  FitResult fit;
  fit.state = make_initial_state(ctx);
  Eigen::VectorXd u;
  Eigen::MatrixXd H;

  for (int m = 0; m < cfg.max_outer; ++m) {
    e_step(ctx, fit.state);
    update_lambda(ctx, fit.state);
    gradient_and_hessian(ctx, fit.state, u, H);
    const Eigen::VectorXd beta0 = stack_beta(fit.state.beta);
    const Surrogate surr = build_surrogate(H, u, beta0);
    const Eigen::VectorXd target = bar_step(surr, ones, tau, cfg.penalty.delta);
    const double change = guarded_move(ctx, fit.state, target, free_idx, 1.0);
    fit.trace.push_back(change);
    fit.iterations = m + 1;
    if (change < cfg.outer_tol && m > 0) {
      fit.converged = true;
      break;
    }
  }
  if (!fit.converged)
    throw NoConvergence("ridge initializer did not converge",
                        stack_beta(fit.state.beta), fit.trace);
  finalize(ctx, cfg, fit);
  return fit;
}

FitResult fit_initializer(const LikelihoodContext& ctx, const FitConfig& cfg) {
  try {
    return fit_unpenalized(ctx, cfg);
  } catch (const NumericError&) {
    return fit_ridge_start(ctx, cfg);
  }
}

namespace {

// Iterate the reweighted ridge refresh on a fixed surrogate to its fixed
// point; optionally certifies the result with one more refresh, writing
// ||refresh(b) - b|| at the returned iterate.
Eigen::VectorXd bar_fixed_point(const Surrogate& surr, Eigen::VectorXd b, double tau,
                                double delta, double tol, int cap, double* residual) {
  for (int t = 0; t < cap; ++t) {
    const Eigen::VectorXd next = bar_step(surr, b, tau, delta);
    const double res = (next - b).norm();
    b = next;
    if (res < tol) break;
  }
  if (residual) *residual = (bar_step(surr, b, tau, delta) - b).norm();
  return b;
}

}  // namespace

FitResult fit_penalized(const LikelihoodContext& ctx, const FitConfig& cfg,
                        const FitResult* start) {
  validate_config(cfg);
  if (cfg.penalty.kind == PenaltyKind::none) {
    FitResult fit = start ? *start : fit_unpenalized(ctx, cfg);
    fit.tau = cfg.tau;
    return fit;
  }

  FitResult base;
  if (start) {
    base = *start;
  } else {
    base = fit_initializer(ctx, cfg);
  }

  const int P = ctx.n_coefficients();
  const Eigen::VectorXd reference =
      cfg.penalty.reference.size() == P ? cfg.penalty.reference : stack_beta(base.beta);
  Eigen::VectorXd weights;
  if (cfg.penalty.kind == PenaltyKind::alasso) {
    weights.resize(P);
    for (int a = 0; a < P; ++a) {
      if (reference[a] == 0.0)
        throw InfiniteWeight("adaptive weight undefined: reference coefficient " +
                             std::to_string(a) + " is exactly zero");
      weights[a] = 1.0 / std::pow(std::abs(reference[a]), cfg.penalty.psi);
    }
  }

  FitResult fit;
  fit.tau = cfg.tau;
  fit.state = base.state;

  Eigen::VectorXd u;
  Eigen::MatrixXd H;
  Surrogate surr;
  double step_scale = 1.0;
  int bad_streak = 0;
  double prev_loglik = -std::numeric_limits<double>::infinity();

  for (int m = 0; m < cfg.max_outer; ++m) {
    const Eigen::VectorXd beta0 = stack_beta(fit.state.beta);
    gradient_and_hessian(ctx, fit.state, u, H);
    surr = build_surrogate(H, u, beta0);

    Eigen::VectorXd next;
    switch (cfg.penalty.kind) {
      case PenaltyKind::bar:
        next = bar_fixed_point(surr, beta0, cfg.tau, cfg.penalty.delta, cfg.inner_tol,
                               cfg.max_inner, nullptr);
        break;
      case PenaltyKind::lasso:
        next = lasso_shooting(surr, cfg.tau, beta0, cfg.shooting_tol, cfg.max_shooting);
        break;
      case PenaltyKind::alasso:
        next = alasso_shooting(surr, cfg.tau, weights, beta0, cfg.shooting_tol,
                               cfg.max_shooting);
        break;
      default:
        throw ValidationError("unexpected penalty kind");
    }
    if (step_scale < 1.0) next = beta0 + step_scale * (next - beta0);

    // A large coefficient move can land where the stale jump sizes push the
    // censored-subject survival negative; retreat toward the previous iterate
    // until the lambda/weight refresh goes through.
    const std::vector<Eigen::VectorXd> lam_prev = fit.state.lambda;
    const std::vector<std::vector<Eigen::VectorXd>> om_prev = fit.state.omega;
    double ll = 0.0;
    bool accepted = false;
    for (int h = 0; h < 40 && !accepted; ++h) {
      fit.state.beta = unstack_beta(next, ctx.n_risks(), ctx.n_covariates());
      try {
        update_lambda(ctx, fit.state);
        e_step(ctx, fit.state);
        ll = observed_loglik(ctx, fit.state);
        accepted = true;
      } catch (const NumericError&) {
        fit.state.lambda = lam_prev;
        fit.state.omega = om_prev;
        next = beta0 + 0.5 * (next - beta0);
      }
    }
    if (!accepted) {
      fit.state.beta = unstack_beta(beta0, ctx.n_risks(), ctx.n_covariates());
      throw NoConvergence("penalized update rejected at every damping level (tau=" +
                              std::to_string(cfg.tau) + ")",
                          beta0, fit.trace);
    }

    const double change = (next - beta0).norm();
    fit.trace.push_back(change);
    fit.iterations = m + 1;

    // Rescue damping: ten straight drops of the observed log-likelihood halve
    // the coefficient step before the iteration cap declares failure.
    if (ll < prev_loglik - 1e-10 * (1.0 + std::abs(prev_loglik))) {
      if (++bad_streak >= 10) {
        step_scale = std::max(step_scale * 0.5, 1e-6);
        bad_streak = 0;
      }
    } else {
      bad_streak = 0;
    }
    prev_loglik = ll;

    if (change < cfg.outer_tol && m > 0) {
      fit.converged = true;
      break;
    }
  }

  if (!fit.converged)
    throw NoConvergence("penalized fit did not converge in " +
                            std::to_string(cfg.max_outer) + " iterations (tau=" +
                            std::to_string(cfg.tau) + ")",
                        stack_beta(fit.state.beta), fit.trace);

  if (cfg.penalty.kind == PenaltyKind::bar) {
    // Certify the fixed-point equation on the final surrogate.
    const Eigen::VectorXd beta0 = stack_beta(fit.state.beta);
    gradient_and_hessian(ctx, fit.state, u, H);
    surr = build_surrogate(H, u, beta0);
    double residual = 0.0;
    const Eigen::VectorXd polished =
        bar_fixed_point(surr, beta0, cfg.tau, cfg.penalty.delta, cfg.outer_tol / 100.0,
                        cfg.max_inner, &residual);
    fit.state.beta = unstack_beta(polished, ctx.n_risks(), ctx.n_covariates());
    fit.bar_residual = residual;
  }

  finalize(ctx, cfg, fit);
  return fit;
}

double gcv_score(const LikelihoodContext& ctx, const FitResult& fit, const FitConfig& cfg) {
  const int n = ctx.n_subjects();
  const int P = ctx.n_coefficients();
  const Eigen::VectorXd beta = stack_beta(fit.beta);
  const double tau = fit.tau;

  Eigen::VectorXd u;
  Eigen::MatrixXd H;
  gradient_and_hessian(ctx, fit.state, u, H);
  const Eigen::MatrixXd omega = -0.5 * (H + H.transpose());

  double s = 0.0;
  if (cfg.penalty.kind == PenaltyKind::none || tau == 0.0) {
    s = static_cast<double>(P);
  } else if (cfg.penalty.kind == PenaltyKind::bar) {
    Eigen::MatrixXd A = omega;
    for (int a = 0; a < P; ++a)
      A(a, a) += 2.0 * tau * tau / (beta[a] * beta[a] +
                                    cfg.penalty.delta * cfg.penalty.delta);
    s = A.ldlt().solve(omega).trace();
  } else {
    std::vector<int> nz;
    for (int a = 0; a < P; ++a)
      if (fit.support[a]) nz.push_back(a);
    if (!nz.empty()) {
      const int f = static_cast<int>(nz.size());
      Eigen::MatrixXd Of(f, f);
      for (int a = 0; a < f; ++a)
        for (int c = 0; c < f; ++c) Of(a, c) = omega(nz[a], nz[c]);
      Eigen::MatrixXd A = Of;
      for (int a = 0; a < f; ++a) {
        double w = 1.0;
        if (cfg.penalty.kind == PenaltyKind::alasso) {
          const Eigen::VectorXd& ref = cfg.penalty.reference;
          if (ref.size() != P)
            throw ValidationError("adaptive penalty needs a reference for the score");
          if (ref[nz[a]] == 0.0)
            throw InfiniteWeight("adaptive weight undefined at a zero reference");
          w = 1.0 / std::pow(std::abs(ref[nz[a]]), cfg.penalty.psi);
        }
        A(a, a) += tau * tau * w / std::abs(beta[nz[a]]);
      }
      s = A.ldlt().solve(Of).trace();
    }
  }

  if (!std::isfinite(s)) throw DegenerateGCV("effective parameter count is not finite");
  if (s >= static_cast<double>(n))
    throw DegenerateGCV("effective parameter count " + std::to_string(s) +
                        " reached the sample size " + std::to_string(n));
  const double shrink = 1.0 - s / static_cast<double>(n);
  // Score the observed log-likelihood at the fitted jumps: the weighted
  // surrogate objective is re-anchored every refresh, so its values barely
  // separate fits and the degrees-of-freedom factor would dominate.
  return -fit.loglik / (static_cast<double>(n) * shrink * shrink);
}

std::vector<double> default_tau_grid(int n) {
  const double root = std::sqrt(static_cast<double>(n));
  std::vector<double> grid(20);
  for (int i = 0; i < 20; ++i)
    grid[i] = root * std::pow(10.0, -2.0 + 4.0 * static_cast<double>(i) / 19.0);
  return grid;
}

TauSelection select_tau(const LikelihoodContext& ctx, const FitConfig& cfg,
                        std::vector<double> grid, const FitResult* start) {
  validate_config(cfg);
  if (grid.empty()) grid = default_tau_grid(ctx.n_subjects());
  for (double t : grid)
    if (!(t >= 0.0)) throw ValidationError("tau grid entries must be nonnegative");
  std::sort(grid.begin(), grid.end());

  TauSelection sel;
  sel.taus = grid;
  sel.gcvs.assign(grid.size(), nan_value());
  sel.errors.assign(grid.size(), "");

  FitConfig base_cfg = cfg;
  base_cfg.tau = 0.0;
  sel.unpenalized = start ? *start : fit_initializer(ctx, base_cfg);

  // Adaptive weights must come from one reference shared across the whole
  // grid (and reused by the score), not from per-tau refits.
  FitConfig shared_cfg = cfg;
  if (cfg.penalty.kind == PenaltyKind::alasso &&
      shared_cfg.penalty.reference.size() != ctx.n_coefficients())
    shared_cfg.penalty.reference = stack_beta(sel.unpenalized.beta);

  bool any = false;
  double best_gcv = std::numeric_limits<double>::infinity();
  // Ascending warm starts: each tau begins at the previous successful fit, so
  // the path only sheds coefficients as the penalty grows.
  FitResult warm = sel.unpenalized;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    FitConfig fcfg = shared_cfg;
    fcfg.tau = grid[i];
    try {
      FitResult fit = fit_penalized(ctx, fcfg, &warm);
      const double g = gcv_score(ctx, fit, fcfg);
      fit.gcv = g;
      sel.gcvs[i] = g;
      warm = fit;
      if (!any || g < best_gcv) {
        best_gcv = g;
        sel.tau = grid[i];
        sel.best = std::move(fit);
        any = true;
      }
    } catch (const Error& err) {
      sel.errors[i] = err.what();
    }
  }
  if (!any) {
    std::ostringstream msg;
    msg << "every tau in the tuning grid failed:";
    for (std::size_t i = 0; i < grid.size(); ++i)
      msg << "\n  tau=" << grid[i] << ": " << sel.errors[i];
    throw Error(msg.str());
  }
  return sel;
}

TransformationSelection select_transformation(const std::vector<SubjectRecord>& subjects,
                                              int n_risks, const FitConfig& cfg,
                                              double r_max, double r_step) {
  validate_config(cfg);
  if (!(r_step > 0.0) || !(r_max >= r_step))
    throw ValidationError("transformation grid needs 0 < r_step <= r_max");
  std::vector<double> values;
  for (int i = 1; i * r_step <= r_max + 1e-9; ++i) values.push_back(i * r_step);

  const int n_cells = static_cast<int>(std::pow(static_cast<double>(values.size()),
                                                static_cast<double>(n_risks)) +
                                       0.5);
  TransformationSelection out;
  out.table.reserve(n_cells);

  LikelihoodContext ctx(subjects, std::vector<TransformationSpec>(n_risks,
                                                                  TransformationSpec(0.0)));
  bool have_warm = false;
  ModelState warm;
  bool any = false;

  std::vector<int> digit(n_risks, 0);
  for (int cell = 0; cell < n_cells; ++cell) {
    GridCell row;
    row.r.resize(n_risks);
    std::vector<TransformationSpec> specs;
    specs.reserve(n_risks);
    for (int k = 0; k < n_risks; ++k) {
      row.r[k] = values[digit[k]];
      specs.emplace_back(row.r[k]);
    }
    const LikelihoodContext cell_ctx = ctx.with_specs(specs);

    FitResult fit;
    bool ok = false;
    try {
      fit = fit_unpenalized(cell_ctx, cfg, have_warm ? &warm : nullptr);
      ok = true;
    } catch (const Error& e) {
      if (have_warm) {
        try {
          fit = fit_unpenalized(cell_ctx, cfg);
          ok = true;
        } catch (const Error& e2) {
          row.error = e2.what();
        }
      } else {
        row.error = e.what();
      }
    }
    if (ok) {
      row.loglik = fit.loglik;
      row.iterations = fit.iterations;
      row.ok = true;
      warm = fit.state;
      have_warm = true;
      // Strict improvement keeps ties at the lexicographically smaller cell.
      if (!any || fit.loglik > out.loglik) {
        out.loglik = fit.loglik;
        out.r = row.r;
        out.fit = std::move(fit);
        any = true;
      }
    }
    out.table.push_back(std::move(row));

    for (int k = n_risks - 1; k >= 0; --k) {
      if (++digit[k] < static_cast<int>(values.size())) break;
      digit[k] = 0;
    }
  }

  if (!any) throw Error("every transformation grid cell failed to fit");
  return out;
}

}  // namespace icrsel
