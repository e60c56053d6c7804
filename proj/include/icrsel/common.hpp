#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace icrsel {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Domain violations in the transformation family (negative load, negative r).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Malformed subject records or inconsistent dataset files.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Breakdown of a numeric procedure on valid inputs (as opposed to a
// misconfiguration); callers may recover with a different start or tuning.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Overall survival at a censoring time fell to (numerical) zero.
class NonPositiveSurvival : public NumericError {
 public:
  using NumericError::NumericError;
};

// A subject's likelihood factor is not strictly positive.
class NonPositiveLikelihoodTerm : public NumericError {
 public:
  using NumericError::NumericError;
};

// E-step normalizer vanished for a subject.
class ZeroDenominator : public NumericError {
 public:
  using NumericError::NumericError;
};

// A jump-size update produced a negative or non-finite mass.
class NonPositiveLambda : public NumericError {
 public:
  using NumericError::NumericError;
};

// Negated curvature matrix not positive definite even after jitter escalation.
class IndefiniteHessian : public NumericError {
 public:
  using NumericError::NumericError;
};

// Adaptive weight requested for an exactly-zero reference coefficient.
class InfiniteWeight : public Error {
 public:
  using Error::Error;
};

// Effective degrees of freedom reached the sample size.
class DegenerateGCV : public NumericError {
 public:
  using NumericError::NumericError;
};

// Cause probabilities already sum past 1 at the covariate mean: the scenario
// as specified leaves no room for event-free subjects.
class ProbabilityOverflow : public Error {
 public:
  using Error::Error;
};

class NoConvergence : public NumericError {
 public:
  explicit NoConvergence(const std::string& msg, Eigen::VectorXd last = {},
                         std::vector<double> history = {})
      : NumericError(msg), last_iterate(std::move(last)), trace(std::move(history)) {}
  Eigen::VectorXd last_iterate;
  std::vector<double> trace;  // per-iteration coefficient-change norms
};

}  // namespace icrsel
