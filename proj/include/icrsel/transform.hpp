#pragma once

#include <cmath>

#include "icrsel/common.hpp"

namespace icrsel {

// Logarithmic transformation family indexed by r >= 0, applied to the
// covariate-weighted cumulative load x:
//
//   r = 0 : x                 (proportional hazards on the subdistribution)
//   r > 0 : log(1 + r x) / r  (r = 1 gives proportional odds)
//
// The cause-specific CIF is F(x) = 1 - exp(-value(x)), so jump_slope is
// dF/dx and the log-derivatives of jump_slope drive the score and curvature
// of the weighted objective.  Values of r below kSmallR are evaluated on the
// r = 0 branch; log1p/expm1 keep everything stable for small r*x.
struct TransformationSpec {
  static constexpr double kSmallR = 1e-10;

  double r = 0.0;

  TransformationSpec() = default;
  explicit TransformationSpec(double r_in) : r(r_in) {
    if (!(r >= 0.0)) throw DomainError("transformation index r must be >= 0");
  }

  bool identity_branch() const { return r < kSmallR; }

  double value(double x) const {
    check_load(x);
    if (identity_branch()) return x;
    return std::log1p(r * x) / r;
  }

  double deriv(double x) const {
    check_load(x);
    if (identity_branch()) return 1.0;
    return 1.0 / (1.0 + r * x);
  }

  double inverse(double y) const {
    if (!(y >= 0.0)) throw DomainError("transform inverse needs y >= 0");
    if (identity_branch()) return y;
    return std::expm1(r * y) / r;
  }

  // exp(-value(x)) = (1+rx)^{-1/r}; the survival factor of the CIF.
  double survival_factor(double x) const { return std::exp(log_survival_factor(x)); }

  double log_survival_factor(double x) const {
    check_load(x);
    if (identity_branch()) return -x;
    return -std::log1p(r * x) / r;
  }

  // jump_slope(x) = deriv(x) * exp(-value(x)) = (1+rx)^{-1-1/r}: dF/dx.
  double jump_slope(double x) const { return std::exp(log_jump_slope(x)); }

  double log_jump_slope(double x) const {
    check_load(x);
    if (identity_branch()) return -x;
    return -(1.0 + 1.0 / r) * std::log1p(r * x);
  }

  double jump_slope_deriv(double x) const {
    check_load(x);
    if (identity_branch()) return -std::exp(-x);
    return -(r + 1.0) * std::exp(-(2.0 + 1.0 / r) * std::log1p(r * x));
  }

  // d/dx log jump_slope = jump_slope_deriv / jump_slope = -(r+1)/(1+rx).
  double jump_slope_log_deriv(double x) const {
    check_load(x);
    if (identity_branch()) return -1.0;
    return -(r + 1.0) / (1.0 + r * x);
  }

  // Second derivative of log jump_slope: r(r+1)/(1+rx)^2.
  double jump_slope_log_deriv2(double x) const {
    check_load(x);
    if (identity_branch()) return 0.0;
    const double den = 1.0 + r * x;
    return r * (r + 1.0) / (den * den);
  }

 private:
  static void check_load(double x) {
    if (!(x >= 0.0)) throw DomainError("cumulative load must be >= 0");
  }
};

}  // namespace icrsel
