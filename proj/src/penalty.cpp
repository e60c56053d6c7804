#include "icrsel/penalty.hpp"

#include <cmath>
#include <string>

#include <Eigen/Cholesky>

namespace icrsel {

Surrogate build_surrogate(const Eigen::MatrixXd& H, const Eigen::VectorXd& u,
                          const Eigen::VectorXd& beta) {
  const int p = static_cast<int>(H.rows());
  if (H.cols() != p || u.size() != p || beta.size() != p)
    throw ValidationError("surrogate inputs have inconsistent dimensions");

  const Eigen::MatrixXd M = -0.5 * (H + H.transpose());
  Surrogate surr;
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;
  while (true) {
    surr.XtX = M;
    if (jitter > 0.0) surr.XtX.diagonal().array() += jitter;
    llt.compute(surr.XtX);
    if (llt.info() == Eigen::Success) break;
    jitter = jitter == 0.0 ? 1e-8 : jitter * 10.0;
    if (jitter > 1e-2)
      throw IndefiniteHessian("negated curvature not positive definite (jitter cap hit)");
  }
  surr.jitter = jitter;
  surr.X = llt.matrixU();
  surr.XtW = surr.XtX * beta + u;
  // Forward solve X' W = XtW (X' is lower triangular).
  surr.W = surr.X.transpose().triangularView<Eigen::Lower>().solve(surr.XtW);
  return surr;
}

Eigen::VectorXd bar_step(const Surrogate& surr, const Eigen::VectorXd& beta_prev,
                         double tau, double delta) {
  if (beta_prev.size() != surr.XtX.rows())
    throw ValidationError("previous iterate has wrong length");
  Eigen::MatrixXd A = surr.XtX;
  for (int i = 0; i < A.rows(); ++i)
    A(i, i) += tau / (beta_prev[i] * beta_prev[i] + delta * delta);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
  if (ldlt.info() != Eigen::Success)
    throw IndefiniteHessian("ridge-perturbed system not decomposable");
  Eigen::VectorXd out = ldlt.solve(surr.XtW);
  if (!out.allFinite()) throw IndefiniteHessian("ridge refresh produced non-finite values");
  return out;
}

namespace {

double soft_threshold(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

Eigen::VectorXd shooting(const Surrogate& surr, double tau, const Eigen::VectorXd* weights,
                         const Eigen::VectorXd& beta_init, double tol, int max_iter) {
  const int p = static_cast<int>(surr.XtX.rows());
  if (beta_init.size() != p) throw ValidationError("shooting start has wrong length");
  if (weights) {
    if (weights->size() != p) throw ValidationError("weight vector has wrong length");
    if (!weights->allFinite() || (weights->array() <= 0.0).any())
      throw InfiniteWeight("adaptive weights must be finite and positive");
  }

  const Eigen::MatrixXd& A = surr.XtX;
  const Eigen::VectorXd& b = surr.XtW;
  Eigen::VectorXd beta = beta_init;
  Eigen::VectorXd grad = A * beta;  // running A*beta

  const double scale = std::max(1.0, b.lpNorm<Eigen::Infinity>());
  const double w_norm_half = 0.5 * surr.W.squaredNorm();
  auto objective = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& ax) {
    double pen = 0.0;
    for (int j = 0; j < p; ++j) pen += (weights ? (*weights)[j] : 1.0) * std::abs(x[j]);
    return 0.5 * x.dot(ax) - b.dot(x) + w_norm_half + tau * pen;
  };
  double prev_obj = objective(beta, grad);

  for (int sweep = 0; sweep < max_iter; ++sweep) {
    for (int j = 0; j < p; ++j) {
      const double wj = weights ? (*weights)[j] : 1.0;
      const double z = b[j] - (grad[j] - A(j, j) * beta[j]);
      const double updated = soft_threshold(z, tau * wj) / A(j, j);
      const double diff = updated - beta[j];
      if (diff != 0.0) {
        grad += diff * A.col(j);
        beta[j] = updated;
      }
    }

    // Exact coordinate minimization cannot increase the objective.
    const double obj = objective(beta, grad);
    if (obj > prev_obj + 1e-8 * (1.0 + std::abs(prev_obj)))
      throw Error("coordinate descent objective increased");
    prev_obj = obj;

    double kkt = 0.0;
    for (int j = 0; j < p; ++j) {
      const double wj = weights ? (*weights)[j] : 1.0;
      const double g = grad[j] - b[j];
      const double viol =
          beta[j] != 0.0
              ? std::abs(g + tau * wj * (beta[j] > 0.0 ? 1.0 : -1.0))
              : std::max(0.0, std::abs(g) - tau * wj);
      kkt = std::max(kkt, viol);
    }
    if (kkt <= tol * scale) return beta;
  }
  throw NoConvergence("coordinate descent did not meet the KKT tolerance", beta);
}

}  // namespace

Eigen::VectorXd lasso_shooting(const Surrogate& surr, double tau,
                               const Eigen::VectorXd& beta_init, double tol, int max_iter) {
  return shooting(surr, tau, nullptr, beta_init, tol, max_iter);
}

Eigen::VectorXd alasso_shooting(const Surrogate& surr, double tau,
                                const Eigen::VectorXd& weights,
                                const Eigen::VectorXd& beta_init, double tol, int max_iter) {
  return shooting(surr, tau, &weights, beta_init, tol, max_iter);
}

double penalty_value(const PenaltyConfig& penalty, const Eigen::VectorXd& beta, double tau,
                     const Eigen::VectorXd& reference) {
  switch (penalty.kind) {
    case PenaltyKind::none:
      return 0.0;
    case PenaltyKind::bar: {
      if (reference.size() != beta.size())
        throw ValidationError("reference has wrong length");
      double v = 0.0;
      for (int j = 0; j < beta.size(); ++j)
        v += beta[j] * beta[j] /
             (reference[j] * reference[j] + penalty.delta * penalty.delta);
      return tau * v;
    }
    case PenaltyKind::lasso:
      return tau * beta.lpNorm<1>();
    case PenaltyKind::alasso: {
      if (reference.size() != beta.size())
        throw ValidationError("reference has wrong length");
      double v = 0.0;
      for (int j = 0; j < beta.size(); ++j) {
        const double ref = std::abs(reference[j]);
        if (ref == 0.0)
          throw InfiniteWeight("adaptive reference coefficient is exactly zero");
        v += std::abs(beta[j]) / std::pow(ref, penalty.psi);
      }
      return tau * v;
    }
  }
  throw Error("unknown penalty kind");
}

}  // namespace icrsel
