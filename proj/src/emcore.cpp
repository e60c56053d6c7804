#include "icrsel/emcore.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace icrsel {

namespace {

// Per-step-row linear predictors and their exponentials for one subject.
void step_dots(const SubjectRecord& rec, const Eigen::MatrixXd& beta, int k,
               std::vector<double>& dots, std::vector<double>& exps) {
  const int S = rec.n_exams();
  dots.resize(S);
  exps.resize(S);
  for (int s = 0; s < S; ++s) {
    dots[s] = beta.row(k).dot(rec.covariate_steps.row(s));
    exps[s] = std::exp(dots[s]);
  }
}

int count_leq(const std::vector<double>& sorted, double t) {
  return static_cast<int>(std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin());
}

}  // namespace

LikelihoodContext::LikelihoodContext(const std::vector<SubjectRecord>& subjects,
                                     std::vector<TransformationSpec> specs)
    : specs_(std::move(specs)) {
  const int K = static_cast<int>(specs_.size());
  if (K < 1) throw ValidationError("need at least one risk");
  auto prep = std::make_shared<Prep>();
  prep->subjects = subjects;
  prep->d = covariate_dim(prep->subjects);
  for (const auto& rec : prep->subjects) {
    validate_record(rec);
    if (rec.cause > K)
      throw ValidationError("subject '" + rec.id + "': cause exceeds the number of risks");
  }

  prep->full_grid = build_jump_grid(prep->subjects, K);
  prep->active_times.resize(K);
  prep->event_terms.resize(K);
  prep->term_of.assign(K, std::vector<int>(prep->subjects.size(), -1));

  const int n = static_cast<int>(prep->subjects.size());
  for (int k = 0; k < K; ++k) {
    const auto& tk = prep->full_grid.times[k];
    std::vector<char> member(tk.size(), 0);
    for (int i = 0; i < n; ++i) {
      const auto& span = prep->full_grid.spans[k][i];
      if (!span.contributes) continue;
      for (int p = span.below_left; p < span.below_right; ++p) member[p] = 1;
    }
    auto& active = prep->active_times[k];
    for (std::size_t p = 0; p < tk.size(); ++p)
      if (member[p]) active.push_back(tk[p]);

    for (int i = 0; i < n; ++i) {
      const auto& rec = prep->subjects[i];
      if (!prep->full_grid.spans[k][i].contributes) continue;
      const CensoringInterval iv = build_interval(rec);
      EventTerm term;
      term.subject = i;
      term.lo = count_leq(active, iv.left);
      term.hi = count_leq(active, iv.right);
      term.step.resize(term.hi);
      for (int p = 0; p < term.hi; ++p) term.step[p] = rec.step_index(active[p]);
      prep->term_of[k][i] = static_cast<int>(prep->event_terms[k].size());
      prep->event_terms[k].push_back(std::move(term));
    }
  }

  for (int i = 0; i < n; ++i) {
    const auto& rec = prep->subjects[i];
    if (rec.event_observed) continue;
    CensorTerm term;
    term.subject = i;
    term.count.resize(K);
    term.step.resize(K);
    const double L = rec.exam_times.back();
    for (int k = 0; k < K; ++k) {
      const auto& active = prep->active_times[k];
      term.count[k] = count_leq(active, L);
      term.step[k].resize(term.count[k]);
      for (int p = 0; p < term.count[k]; ++p) term.step[k][p] = rec.step_index(active[p]);
    }
    prep->censor_terms.push_back(std::move(term));
  }

  prep_ = std::move(prep);
}

LikelihoodContext LikelihoodContext::with_specs(std::vector<TransformationSpec> specs) const {
  if (specs.size() != specs_.size())
    throw ValidationError("with_specs must keep the number of risks");
  return LikelihoodContext(prep_, std::move(specs));
}

ModelState make_initial_state(const LikelihoodContext& ctx) {
  ModelState state;
  state.beta = Eigen::MatrixXd::Zero(ctx.n_risks(), ctx.n_covariates());
  const double init = 1.0 / ctx.n_subjects();
  state.lambda.resize(ctx.n_risks());
  state.omega.resize(ctx.n_risks());
  for (int k = 0; k < ctx.n_risks(); ++k) {
    state.lambda[k] =
        Eigen::VectorXd::Constant(static_cast<int>(ctx.active_times(k).size()), init);
    const auto& terms = ctx.event_terms(k);
    state.omega[k].resize(terms.size());
    for (std::size_t e = 0; e < terms.size(); ++e)
      state.omega[k][e] = Eigen::VectorXd::Zero(terms[e].hi - terms[e].lo);
  }
  return state;
}

double cum_load(const LikelihoodContext& ctx, const ModelState& state, int subject, int k,
                double t) {
  const auto& rec = ctx.subjects()[subject];
  const auto& times = ctx.active_times(k);
  const auto& lam = state.lambda[k];
  double load = 0.0;
  for (std::size_t j = 0; j < times.size() && times[j] <= t; ++j)
    load += lam[static_cast<int>(j)] *
            std::exp(state.beta.row(k).dot(rec.covariate_at(times[j])));
  return load;
}

double subdist_F(const LikelihoodContext& ctx, const ModelState& state, int subject, int k,
                 double t) {
  return -std::expm1(ctx.spec(k).log_survival_factor(cum_load(ctx, state, subject, k, t)));
}

double survival_S(const LikelihoodContext& ctx, const ModelState& state, int subject,
                  double t) {
  const int K = ctx.n_risks();
  double s = 1.0 - K;
  for (int k = 0; k < K; ++k)
    s += ctx.spec(k).survival_factor(cum_load(ctx, state, subject, k, t));
  if (!(s > 1e-12))
    throw NonPositiveSurvival("survival vanished for subject '" +
                              ctx.subjects()[subject].id + "'");
  return s;
}

namespace {

// Prefix loads for one event term: loads[p] = sum_{q <= p} lambda_q e^{beta'Z_q}.
void entry_loads(const LikelihoodContext::EventTerm& term, const Eigen::VectorXd& lam,
                 const std::vector<double>& exps, std::vector<double>& loads) {
  loads.resize(term.hi);
  double a = 0.0;
  for (int p = 0; p < term.hi; ++p) {
    a += lam[p] * exps[term.step[p]];
    loads[p] = a;
  }
}

}  // namespace

double delta_F_exact(const LikelihoodContext& ctx, const ModelState& state, int subject,
                     int k, int j) {
  const int e = ctx.event_term_index(k, subject);
  if (e < 0) throw ValidationError("subject does not contribute to this risk");
  const auto& term = ctx.event_terms(k)[e];
  if (j < 0 || j >= term.hi - term.lo)
    throw ValidationError("in-interval position out of range");
  std::vector<double> dots, exps, loads;
  step_dots(ctx.subjects()[subject], state.beta, k, dots, exps);
  entry_loads(term, state.lambda[k], exps, loads);
  const auto& spec = ctx.spec(k);
  const int p = term.lo + j;
  const double prev = p == 0 ? 0.0 : spec.log_survival_factor(loads[p - 1]);
  const double cur = spec.log_survival_factor(loads[p]);
  return std::exp(prev) * (-std::expm1(cur - prev));
}

double delta_F_approx(const LikelihoodContext& ctx, const ModelState& state, int subject,
                      int k, int j) {
  const int e = ctx.event_term_index(k, subject);
  if (e < 0) throw ValidationError("subject does not contribute to this risk");
  const auto& term = ctx.event_terms(k)[e];
  if (j < 0 || j >= term.hi - term.lo)
    throw ValidationError("in-interval position out of range");
  std::vector<double> dots, exps, loads;
  step_dots(ctx.subjects()[subject], state.beta, k, dots, exps);
  entry_loads(term, state.lambda[k], exps, loads);
  const int p = term.lo + j;
  return ctx.spec(k).jump_slope(loads[p]) * exps[term.step[p]] * state.lambda[k][p];
}

namespace {

// Survival S(L) for one censored subject from prepped steps; also exposes the
// per-risk loads and survival factors.
struct CensorEval {
  double phi = 0.0;
  std::vector<double> load;  // per risk
  std::vector<double> sf;    // per risk
};

CensorEval eval_censor(const LikelihoodContext& ctx, const ModelState& state,
                       const LikelihoodContext::CensorTerm& term,
                       std::vector<double>& dots, std::vector<double>& exps) {
  const int K = ctx.n_risks();
  const auto& rec = ctx.subjects()[term.subject];
  CensorEval ev;
  ev.load.resize(K);
  ev.sf.resize(K);
  ev.phi = 1.0 - K;
  for (int k = 0; k < K; ++k) {
    step_dots(rec, state.beta, k, dots, exps);
    const auto& lam = state.lambda[k];
    double a = 0.0;
    for (int p = 0; p < term.count[k]; ++p) a += lam[p] * exps[term.step[k][p]];
    ev.load[k] = a;
    ev.sf[k] = ctx.spec(k).survival_factor(a);
    ev.phi += ev.sf[k];
  }
  if (!(ev.phi > 1e-12))
    throw NonPositiveSurvival("survival vanished for subject '" + rec.id + "'");
  return ev;
}

}  // namespace

double observed_loglik(const LikelihoodContext& ctx, const ModelState& state) {
  const int K = ctx.n_risks();
  const auto& subs = ctx.subjects();
  std::vector<double> dots, exps, loads;
  double ll = 0.0;

  for (int i = 0; i < ctx.n_subjects(); ++i) {
    const auto& rec = subs[i];
    if (!rec.event_observed) continue;
    double term_value = 0.0;
    for (int k = 0; k < K; ++k) {
      const int e = ctx.event_term_index(k, i);
      if (e < 0) continue;
      const auto& term = ctx.event_terms(k)[e];
      step_dots(rec, state.beta, k, dots, exps);
      entry_loads(term, state.lambda[k], exps, loads);
      const auto& spec = ctx.spec(k);
      const double lsf_left =
          term.lo == 0 ? 0.0 : spec.log_survival_factor(loads[term.lo - 1]);
      const double lsf_right = spec.log_survival_factor(loads[term.hi - 1]);
      term_value += std::exp(lsf_left) * (-std::expm1(lsf_right - lsf_left));
    }
    if (!(term_value > 1e-300))
      throw NonPositiveLikelihoodTerm("likelihood factor vanished for subject '" + rec.id +
                                      "'");
    ll += std::log(term_value);
  }

  for (const auto& cterm : ctx.censor_terms()) {
    const CensorEval ev = eval_censor(ctx, state, cterm, dots, exps);
    ll += std::log(ev.phi);
  }
  return ll;
}

void e_step(const LikelihoodContext& ctx, ModelState& state) {
  const int K = ctx.n_risks();
  std::vector<double> totals(ctx.n_subjects(), 0.0);
  std::vector<double> dots, exps, loads;

  for (int k = 0; k < K; ++k) {
    const auto& terms = ctx.event_terms(k);
    const auto& spec = ctx.spec(k);
    for (std::size_t e = 0; e < terms.size(); ++e) {
      const auto& term = terms[e];
      step_dots(ctx.subjects()[term.subject], state.beta, k, dots, exps);
      Eigen::VectorXd& om = state.omega[k][e];
      om.resize(term.hi - term.lo);
      double a = 0.0;
      double prev_lsf = 0.0;
      for (int p = 0; p < term.hi; ++p) {
        a += state.lambda[k][p] * exps[term.step[p]];
        const double lsf = spec.log_survival_factor(a);
        if (p >= term.lo)
          om[p - term.lo] = std::exp(prev_lsf) * (-std::expm1(lsf - prev_lsf));
        prev_lsf = lsf;
      }
      totals[term.subject] += om.sum();
    }
  }

  for (int k = 0; k < K; ++k) {
    const auto& terms = ctx.event_terms(k);
    for (std::size_t e = 0; e < terms.size(); ++e) {
      const double tot = totals[terms[e].subject];
      if (!(tot > 1e-300))
        throw ZeroDenominator("no interval mass for subject '" +
                              ctx.subjects()[terms[e].subject].id + "'");
      state.omega[k][e] /= tot;
    }
  }
}

void update_lambda(const LikelihoodContext& ctx, ModelState& state) {
  const int K = ctx.n_risks();
  std::vector<double> dots, exps, rho;
  std::vector<Eigen::VectorXd> num(K), den(K);
  for (int k = 0; k < K; ++k) {
    const int m = static_cast<int>(ctx.active_times(k).size());
    num[k] = Eigen::VectorXd::Zero(m);
    den[k] = Eigen::VectorXd::Zero(m);
  }

  // Event-subject part: the weight at position p pulls on every grid point
  // j <= p with strength e^{beta'Z_i(t_j)} * rho(A_ip), where
  // rho = (r+1)/(1 + r A) is the magnitude of the slope log-derivative.
  // Collapsing the sum over p >= j into a per-subject suffix keeps the pass
  // linear; the multiplier stays at the jump point t_j, so step-varying
  // covariate paths are handled exactly.
  for (int k = 0; k < K; ++k) {
    const auto& terms = ctx.event_terms(k);
    const auto& spec = ctx.spec(k);
    for (std::size_t e = 0; e < terms.size(); ++e) {
      const auto& term = terms[e];
      step_dots(ctx.subjects()[term.subject], state.beta, k, dots, exps);
      const Eigen::VectorXd& om = state.omega[k][e];
      rho.assign(term.hi - term.lo, 0.0);
      double a = 0.0;
      for (int p = 0; p < term.hi; ++p) {
        a += state.lambda[k][p] * exps[term.step[p]];
        if (p >= term.lo) {
          const double w = om[p - term.lo];
          num[k][p] += w;
          rho[p - term.lo] = w * (-spec.jump_slope_log_deriv(a));
        }
      }
      double tail = 0.0;
      for (int p = term.hi - 1; p >= term.lo; --p) {
        tail += rho[p - term.lo];
        den[k][p] += tail * exps[term.step[p]];
      }
      for (int p = term.lo - 1; p >= 0; --p) den[k][p] += tail * exps[term.step[p]];
    }
  }

  // Right-censored part: S(L)^{-1} * slope(A_L) * e^{beta'Z(t_j)} for every
  // grid point t_j <= L.
  for (const auto& cterm : ctx.censor_terms()) {
    const CensorEval ev = eval_censor(ctx, state, cterm, dots, exps);
    const auto& rec = ctx.subjects()[cterm.subject];
    for (int k = 0; k < K; ++k) {
      if (cterm.count[k] == 0) continue;
      const double coeff = ctx.spec(k).jump_slope(ev.load[k]) / ev.phi;
      step_dots(rec, state.beta, k, dots, exps);
      for (int p = 0; p < cterm.count[k]; ++p)
        den[k][p] += coeff * exps[cterm.step[k][p]];
    }
  }

  for (int k = 0; k < K; ++k) {
    const int m = static_cast<int>(ctx.active_times(k).size());
    Eigen::VectorXd fresh(m);
    for (int j = 0; j < m; ++j) {
      // Zero posterior mass is a legitimate boundary solution: the jump dies
      // and stays dead (its weights are zero from then on).  Every subject's
      // bracket keeps at least one live jump because its weights sum to one.
      if (!(num[k][j] > 0.0)) {
        fresh[j] = 0.0;
        continue;
      }
      if (!(den[k][j] > 0.0))
        throw ZeroDenominator("zero jump denominator at grid point " + std::to_string(j) +
                              " of risk " + std::to_string(k + 1));
      const double lam = num[k][j] / den[k][j];
      if (!std::isfinite(lam) || lam < 0.0)
        throw NonPositiveLambda("jump update not finite at grid point " +
                                std::to_string(j) + " of risk " + std::to_string(k + 1));
      fresh[j] = lam;
    }
    state.lambda[k] = std::move(fresh);
  }
}

double profile_objective(const LikelihoodContext& ctx, const ModelState& state) {
  const int K = ctx.n_risks();
  std::vector<double> dots, exps;
  double obj = 0.0;

  for (int k = 0; k < K; ++k) {
    const auto& terms = ctx.event_terms(k);
    const auto& spec = ctx.spec(k);
    for (std::size_t e = 0; e < terms.size(); ++e) {
      const auto& term = terms[e];
      step_dots(ctx.subjects()[term.subject], state.beta, k, dots, exps);
      const Eigen::VectorXd& om = state.omega[k][e];
      double a = 0.0;
      for (int p = 0; p < term.hi; ++p) {
        a += state.lambda[k][p] * exps[term.step[p]];
        if (p >= term.lo) {
          const double w = om[p - term.lo];
          if (w > 0.0)
            obj += w * (std::log(state.lambda[k][p]) + dots[term.step[p]] +
                        spec.log_jump_slope(a));
        }
      }
    }
  }

  for (const auto& cterm : ctx.censor_terms()) {
    const CensorEval ev = eval_censor(ctx, state, cterm, dots, exps);
    obj += std::log(ev.phi);
  }
  return obj;
}

void gradient_and_hessian(const LikelihoodContext& ctx, const ModelState& state,
                          Eigen::VectorXd& u, Eigen::MatrixXd& H) {
  const int K = ctx.n_risks();
  const int d = ctx.n_covariates();
  const int P = K * d;
  u = Eigen::VectorXd::Zero(P);
  H = Eigen::MatrixXd::Zero(P, P);

  std::vector<double> dots, exps;
  // Per-step accumulators; subjects have few steps, so these stay tiny.
  std::vector<double> a, c_lin, c_b;
  std::vector<std::vector<double>> m1;

  // Weighted-event part.  For position p with prefix load A_p and per-step
  // prefix loads a_s(p):
  //   grad  += w [ Z_{step(p)} + ratio(A_p) B_p ],        B_p = sum_s a_s(p) Z_s
  //   hess  += w [ ratio'(A_p) B_p B_p' + ratio(A_p) C_p ], C_p = sum_s a_s(p) Z_s Z_s'
  // which collapses to per-step coefficients.
  for (int k = 0; k < K; ++k) {
    const auto& terms = ctx.event_terms(k);
    const auto& spec = ctx.spec(k);
    for (std::size_t e = 0; e < terms.size(); ++e) {
      const auto& term = terms[e];
      const auto& rec = ctx.subjects()[term.subject];
      const int S = rec.n_exams();
      step_dots(rec, state.beta, k, dots, exps);
      a.assign(S, 0.0);
      c_lin.assign(S, 0.0);
      c_b.assign(S, 0.0);
      m1.assign(S, std::vector<double>(S, 0.0));
      const Eigen::VectorXd& om = state.omega[k][e];

      double load = 0.0;
      for (int p = 0; p < term.hi; ++p) {
        const int s = term.step[p];
        const double le = state.lambda[k][p] * exps[s];
        load += le;
        a[s] += le;
        if (p >= term.lo) {
          const double w = om[p - term.lo];
          if (w == 0.0) continue;
          const double ratio = spec.jump_slope_log_deriv(load);
          const double ratio2 = spec.jump_slope_log_deriv2(load);
          c_lin[s] += w;
          for (int s2 = 0; s2 < S; ++s2) {
            const double was2 = w * a[s2];
            c_b[s2] += was2 * ratio;
            for (int s3 = 0; s3 < S; ++s3) m1[s2][s3] += was2 * ratio2 * a[s3];
          }
        }
      }

      auto useg = u.segment(k * d, d);
      auto hblk = H.block(k * d, k * d, d, d);
      for (int s = 0; s < S; ++s) {
        const double g = c_lin[s] + c_b[s];
        if (g != 0.0) useg += g * rec.covariate_steps.row(s).transpose();
        for (int s2 = 0; s2 < S; ++s2) {
          const double h = m1[s][s2] + (s == s2 ? c_b[s] : 0.0);
          if (h != 0.0)
            hblk += h * rec.covariate_steps.row(s).transpose() * rec.covariate_steps.row(s2);
        }
      }
    }
  }

  // Right-censored part: dependence through phi = sum_k sf_k - K + 1.
  Eigen::MatrixXd b(K, d);
  std::vector<double> slope(K), slope_deriv(K);
  for (const auto& cterm : ctx.censor_terms()) {
    const CensorEval ev = eval_censor(ctx, state, cterm, dots, exps);
    const auto& rec = ctx.subjects()[cterm.subject];
    const int S = rec.n_exams();

    b.setZero();
    for (int k = 0; k < K; ++k) {
      slope[k] = ctx.spec(k).jump_slope(ev.load[k]);
      slope_deriv[k] = ctx.spec(k).jump_slope_deriv(ev.load[k]);
      if (cterm.count[k] == 0) continue;
      step_dots(rec, state.beta, k, dots, exps);
      a.assign(S, 0.0);
      for (int p = 0; p < cterm.count[k]; ++p) {
        const int s = cterm.step[k][p];
        a[s] += state.lambda[k][p] * exps[s];
      }
      auto hblk = H.block(k * d, k * d, d, d);
      for (int s = 0; s < S; ++s) {
        if (a[s] == 0.0) continue;
        b.row(k) += a[s] * rec.covariate_steps.row(s);
        hblk -= (slope[k] * a[s] / ev.phi) * rec.covariate_steps.row(s).transpose() *
                rec.covariate_steps.row(s);
      }
      u.segment(k * d, d) -= (slope[k] / ev.phi) * b.row(k).transpose();
      hblk -= (slope_deriv[k] / ev.phi) * b.row(k).transpose() * b.row(k);
    }
    for (int k = 0; k < K; ++k) {
      if (cterm.count[k] == 0) continue;
      for (int k2 = 0; k2 < K; ++k2) {
        if (cterm.count[k2] == 0) continue;
        H.block(k * d, k2 * d, d, d) -=
            (slope[k] * slope[k2] / (ev.phi * ev.phi)) * b.row(k).transpose() * b.row(k2);
      }
    }
  }
}

Eigen::VectorXd gradient_u(const LikelihoodContext& ctx, const ModelState& state) {
  Eigen::VectorXd u;
  Eigen::MatrixXd H;
  gradient_and_hessian(ctx, state, u, H);
  return u;
}

Eigen::MatrixXd hessian_H(const LikelihoodContext& ctx, const ModelState& state) {
  Eigen::VectorXd u;
  Eigen::MatrixXd H;
  gradient_and_hessian(ctx, state, u, H);
  return H;
}

}  // namespace icrsel
