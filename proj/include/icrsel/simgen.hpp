#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "icrsel/data.hpp"
#include "icrsel/rng.hpp"
#include "icrsel/transform.hpp"

namespace icrsel {

// Synthetic-data design: two potential failure causes under bounded-support
// CIFs with baseline scale * (1 - e^{-t}), AR(1)-correlated standard-normal
// covariates, a two-exam inspection schedule, and optional masking of the
// observed cause.
struct Scenario {
  int n = 200;
  int d_n = 14;
  int K = 2;
  double rho = 0.2;
  std::vector<double> r;                      // per-risk transformation index
  Eigen::MatrixXd beta_true;                  // K x d_n
  double baseline_scale = 0.2;
  std::array<double, 2> exam1_range{0.1, 1.5};
  std::array<double, 2> gap_range{0.1, 1.6};
  double missing_prob = 0.0;
  std::uint64_t seed = 0;
};

void validate_scenario(const Scenario& sc);

struct GenStats {
  int clamped_draws = 0;      // inverse-CDF arguments nudged back into (0,1)
  int overflow_subjects = 0;  // draws whose cause probabilities summed past 1
  int events = 0;
  int missing = 0;
};

// Row i is subject i's covariate vector; marginals are standard normal with
// corr(z_a, z_b) = rho^{|a-b|} via the AR(1) recursion.
Eigen::MatrixXd gen_covariates(int n, int d, double rho, const SplitRng& rng);

// P(cause k) = 1 - exp(-G_k(scale * e^{beta_k'z})).
double event_probability(const TransformationSpec& spec, const Eigen::VectorXd& beta_k,
                         const Eigen::VectorXd& z, double scale);

struct EventDraw {
  int cause = 0;         // 0 = no event ever
  double time = 0.0;     // failure time when cause > 0
};

EventDraw gen_event(const Scenario& sc, const Eigen::VectorXd& z, const SplitRng& rng,
                    std::uint64_t stream, GenStats* stats = nullptr);

std::array<double, 2> gen_examinations(const Scenario& sc, const SplitRng& rng,
                                       std::uint64_t stream);

std::vector<SubjectRecord> gen_dataset(const Scenario& sc, GenStats* stats = nullptr);

std::vector<TransformationSpec> scenario_specs(const Scenario& sc);

}  // namespace icrsel
