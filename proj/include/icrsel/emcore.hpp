#pragma once

#include <memory>
#include <vector>

#include <Eigen/Core>

#include "icrsel/data.hpp"
#include "icrsel/transform.hpp"

namespace icrsel {

// Evaluation plan for one dataset under per-risk transformations.
//
// The candidate grid per risk is the union of contributing subjects' interval
// endpoints; candidate points that fall inside no contributing (L,R] interval
// can never carry mass (their weight numerator is structurally zero), so the
// likelihood machinery works on the reduced "active" grid.  The reduction is
// exact: the estimator puts zero jumps on the excluded points.
//
// Per-risk transformations do not affect the grid bookkeeping, so contexts
// differing only in their transformation indices share the prepared plan.
class LikelihoodContext {
 public:
  struct EventTerm {
    int subject = -1;
    int lo = 0;             // active points <= L
    int hi = 0;             // active points <= R; in-interval positions [lo, hi)
    std::vector<int> step;  // covariate step row per active point, length hi
  };
  struct CensorTerm {
    int subject = -1;
    std::vector<int> count;              // per risk: active points <= L
    std::vector<std::vector<int>> step;  // per risk, length count[k]
  };

  LikelihoodContext(const std::vector<SubjectRecord>& subjects,
                    std::vector<TransformationSpec> specs);

  // Shares the prepared plan; only the transformation indices change.
  LikelihoodContext with_specs(std::vector<TransformationSpec> specs) const;

  int n_subjects() const { return static_cast<int>(prep_->subjects.size()); }
  int n_risks() const { return static_cast<int>(specs_.size()); }
  int n_covariates() const { return prep_->d; }
  int n_coefficients() const { return n_risks() * prep_->d; }
  const std::vector<SubjectRecord>& subjects() const { return prep_->subjects; }
  const TransformationSpec& spec(int k) const { return specs_[k]; }
  const JumpGrid& full_grid() const { return prep_->full_grid; }
  const std::vector<double>& active_times(int k) const { return prep_->active_times[k]; }
  const std::vector<EventTerm>& event_terms(int k) const { return prep_->event_terms[k]; }
  const std::vector<CensorTerm>& censor_terms() const { return prep_->censor_terms; }
  // Index into event_terms(k) for a subject, -1 when the subject does not
  // contribute to risk k.
  int event_term_index(int k, int subject) const {
    return prep_->term_of[k][subject];
  }

 private:
  struct Prep {
    std::vector<SubjectRecord> subjects;
    int d = 0;
    JumpGrid full_grid;
    std::vector<std::vector<double>> active_times;
    std::vector<std::vector<EventTerm>> event_terms;
    std::vector<CensorTerm> censor_terms;
    std::vector<std::vector<int>> term_of;
  };

  LikelihoodContext(std::shared_ptr<const Prep> prep, std::vector<TransformationSpec> specs)
      : prep_(std::move(prep)), specs_(std::move(specs)) {}

  std::shared_ptr<const Prep> prep_;
  std::vector<TransformationSpec> specs_;
};

// Current parameter values plus the posterior jump weights of the weighted
// objective.  omega[k][e] aligns with event_terms(k)[e]'s in-interval
// positions [lo, hi).
struct ModelState {
  Eigen::MatrixXd beta;                             // n_risks x d
  std::vector<Eigen::VectorXd> lambda;              // [k], active grid jumps, > 0
  std::vector<std::vector<Eigen::VectorXd>> omega;  // [k][event term]
};

// beta = 0, every jump 1/n, weights zeroed (one E-step makes them proper).
ModelState make_initial_state(const LikelihoodContext& ctx);

// Sum of jump * exp(beta_k' Z(t_j)) over active grid points t_j <= t.
double cum_load(const LikelihoodContext& ctx, const ModelState& state, int subject, int k,
                double t);

// Cause-k CIF at t for a subject's covariate path: 1 - exp(-G_k(cum_load)).
double subdist_F(const LikelihoodContext& ctx, const ModelState& state, int subject, int k,
                 double t);

// Overall survival 1 - sum_k F_k, evaluated as sum_k exp(-G_k) - K + 1.
double survival_S(const LikelihoodContext& ctx, const ModelState& state, int subject,
                  double t);

// Jump of F_k at the j-th in-interval active point of the subject (0-based).
double delta_F_exact(const LikelihoodContext& ctx, const ModelState& state, int subject,
                     int k, int j);

// First-order version used by the weighted objective: slope * exp(beta'Z) * jump.
double delta_F_approx(const LikelihoodContext& ctx, const ModelState& state, int subject,
                      int k, int j);

double observed_loglik(const LikelihoodContext& ctx, const ModelState& state);

// Posterior weight refresh (expectation pass); right-censored subjects carry
// no weights by construction.
void e_step(const LikelihoodContext& ctx, ModelState& state);

// Closed-form jump refresh at fixed weights; all risks updated from the same
// incoming state.
void update_lambda(const LikelihoodContext& ctx, ModelState& state);

// Weighted objective driving the coefficient update, plus its analytic
// derivatives with respect to the stacked coefficient vector
// (risk-major: beta_1', ..., beta_K').
double profile_objective(const LikelihoodContext& ctx, const ModelState& state);
Eigen::VectorXd gradient_u(const LikelihoodContext& ctx, const ModelState& state);
Eigen::MatrixXd hessian_H(const LikelihoodContext& ctx, const ModelState& state);
void gradient_and_hessian(const LikelihoodContext& ctx, const ModelState& state,
                          Eigen::VectorXd& u, Eigen::MatrixXd& H);

}  // namespace icrsel
