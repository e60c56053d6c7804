#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "icrsel/emcore.hpp"
#include "icrsel/penalty.hpp"

namespace icrsel {

struct FitConfig {
  PenaltyConfig penalty;
  double tau = 0.0;
  double outer_tol = 1e-6;      // stop when ||beta_next - beta|| drops below
  int max_outer = 500;
  double inner_tol = 1e-6;      // ridge-refresh fixed-point tolerance
  int max_inner = 500;
  double shooting_tol = 1e-8;   // coordinate-descent KKT tolerance
  int max_shooting = 10000;
  double zero_threshold = 1e-5; // |beta| below this reports as zero
};

void validate_config(const FitConfig& cfg);

struct FitResult {
  Eigen::MatrixXd beta;               // n_risks x d
  std::vector<std::uint8_t> support;  // stacked risk-major, 1 = reported nonzero
  ModelState state;                   // final jumps and weights alongside beta
  double loglik = 0.0;                // observed log-likelihood at the estimate
  double profile_obj = 0.0;           // weighted objective at the final weights
  double gcv = std::numeric_limits<double>::quiet_NaN();
  double tau = 0.0;
  int iterations = 0;
  bool converged = false;
  double bar_residual = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> trace;          // per-iteration coefficient-change norms
};

// Stacked risk-major coefficient vector (beta_1', ..., beta_K') and back.
Eigen::VectorXd stack_beta(const Eigen::MatrixXd& beta);
Eigen::MatrixXd unstack_beta(const Eigen::VectorXd& v, int n_risks, int d);

// Maximum-likelihood fit: cycles weight refresh, closed-form jump refresh,
// and one damped Newton step on the coefficients until the coefficient change
// drops below outer_tol.  A free-coordinate mask (stacked layout) pins the
// complementary coefficients at their initial values; with no free coordinate
// the stop rule falls back to the jump-size change.
FitResult fit_unpenalized(const LikelihoodContext& ctx, const FitConfig& cfg,
                          const ModelState* init = nullptr,
                          const std::vector<std::uint8_t>* free_mask = nullptr);

// Unpenalized fit with coefficients outside `keep` pinned at zero.
FitResult oracle_fit(const LikelihoodContext& ctx, const std::vector<std::uint8_t>& keep,
                     const FitConfig& cfg);

// Fallback starting point when the unpenalized fit will not converge
// (e.g. coefficient count near the sample size): the same outer loop with a
// fixed moderate ridge refresh on the coefficients.
FitResult fit_ridge_start(const LikelihoodContext& ctx, const FitConfig& cfg);

// fit_unpenalized with the ridge fallback applied automatically.
FitResult fit_initializer(const LikelihoodContext& ctx, const FitConfig& cfg);

// Penalized fit at fixed tau.  Starts from the supplied unpenalized fit (or
// computes one; on its non-convergence falls back to a ridge initializer) and
// loops {surrogate at current state -> penalized coefficient update -> jump
// refresh -> weight refresh}.  For the ridge-type penalty the update iterates
// the reweighted ridge refresh to its inner fixed point and the returned
// bar_residual certifies the fixed-point equation at the final surrogate.
FitResult fit_penalized(const LikelihoodContext& ctx, const FitConfig& cfg,
                        const FitResult* start = nullptr);

// Model-fit criterion -loglik / (n (1 - s/n)^2) with s the effective degrees
// of freedom tr{(Omega + eta)^{-1} Omega}, Omega the negated curvature of the
// weighted objective at the fit and eta the penalty curvature
// tau * grad p / |beta|.  The ridge-type penalty keeps the full
// delta-perturbed diagonal; the soft-threshold penalties restrict to the
// reported-nonzero block.  Throws DegenerateGCV when s reaches the sample
// size.
double gcv_score(const LikelihoodContext& ctx, const FitResult& fit, const FitConfig& cfg);

// 20 logarithmically spaced points in [1e-2, 1e2] * sqrt(n), ascending.
std::vector<double> default_tau_grid(int n);

struct TauSelection {
  double tau = 0.0;
  FitResult best;
  FitResult unpenalized;            // shared starting point for every tau
  std::vector<double> taus;
  std::vector<double> gcvs;         // NaN where the fit failed
  std::vector<std::string> errors;  // empty where the fit succeeded
};

// Fits every tau in the ascending grid, warm-starting each fit from the
// previous successful one (the unpenalized fit, computed unless supplied,
// seeds the first), and returns the GCV minimizer (ties -> smaller tau).
// Per-tau failures are recorded and skipped; throws when every tau fails.
TauSelection select_tau(const LikelihoodContext& ctx, const FitConfig& cfg,
                        std::vector<double> grid = {},
                        const FitResult* start = nullptr);

struct GridCell {
  std::vector<double> r;  // per-risk transformation index
  double loglik = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  bool ok = false;
  std::string error;
};

struct TransformationSelection {
  std::vector<double> r;  // winning combination
  double loglik = 0.0;
  FitResult fit;          // unpenalized fit at the winner
  std::vector<GridCell> table;
};

// Unpenalized fit per grid cell (lexicographic combinations of
// {r_step, 2 r_step, ..., r_max} across risks, warm-started from the previous
// successful cell); returns the log-likelihood argmax over the successes,
// ties broken toward the lexicographically smaller combination.
TransformationSelection select_transformation(const std::vector<SubjectRecord>& subjects,
                                              int n_risks, const FitConfig& cfg,
                                              double r_max = 3.0, double r_step = 0.2);

}  // namespace icrsel
