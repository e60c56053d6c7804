#pragma once

#include <Eigen/Core>

#include "icrsel/common.hpp"

namespace icrsel {

enum class PenaltyKind { none, bar, lasso, alasso };

struct PenaltyConfig {
  PenaltyKind kind = PenaltyKind::none;
  double delta = 1e-6;          // ridge perturbation of the squared reference
  double psi = 1.0;             // adaptive-weight exponent
  Eigen::VectorXd reference;    // adaptive reference (unpenalized estimate)
};

// Least-squares surrogate of the objective around beta: X is the upper
// Cholesky factor of the negated curvature (jittered if needed), and W is
// chosen so that the quadratic 1/2 ||W - X b||^2 has gradient -u at b = beta.
struct Surrogate {
  Eigen::MatrixXd X;    // upper triangular
  Eigen::VectorXd W;
  Eigen::MatrixXd XtX;  // == -H + jitter * I, cached
  Eigen::VectorXd XtW;  // == XtX * beta + u, cached
  double jitter = 0.0;
};

// Escalates a diagonal jitter (1e-8 .. 1e-2, tenfold steps) when the negated
// curvature is not positive definite; throws IndefiniteHessian past the cap.
Surrogate build_surrogate(const Eigen::MatrixXd& H, const Eigen::VectorXd& u,
                          const Eigen::VectorXd& beta);

// One ridge refresh against the previous iterate:
// solve (XtX + tau * diag(1/(prev^2 + delta^2))) b = XtW.
Eigen::VectorXd bar_step(const Surrogate& surr, const Eigen::VectorXd& beta_prev,
                         double tau, double delta);

// Cyclic coordinate descent (fixed ascending order) for the L1 problem
// 1/2 ||W - X b||^2 + tau * sum w_a |b_a|; stops when the KKT residual drops
// below tol * max(1, ||XtW||_inf).
Eigen::VectorXd lasso_shooting(const Surrogate& surr, double tau,
                               const Eigen::VectorXd& beta_init, double tol, int max_iter);

Eigen::VectorXd alasso_shooting(const Surrogate& surr, double tau,
                                const Eigen::VectorXd& weights,
                                const Eigen::VectorXd& beta_init, double tol, int max_iter);

// Penalty term value at beta (reference-dependent for bar/alasso).
double penalty_value(const PenaltyConfig& penalty, const Eigen::VectorXd& beta,
                     double tau, const Eigen::VectorXd& reference);

}  // namespace icrsel
