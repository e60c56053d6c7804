#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "icrsel/simgen.hpp"
#include "icrsel/solver.hpp"

namespace icrsel {

// Population covariate covariance [rho^{|a-b|}].
Eigen::MatrixXd ar1_covariance(int d, double rho);

// Stacked risk-major mask of the truly nonzero coefficients.
std::vector<std::uint8_t> true_support(const Eigen::MatrixXd& beta_true);

// Default sparse truth: row 1 = (0.8, 0.6, 0.8, 0, ..., 0), row 2 negated.
Eigen::MatrixXd default_beta_true(int n_risks, int d);

struct RepMetrics {
  int tp = 0;
  int fp = 0;
  int mcv = 0;
  double mse = 0.0;
};

// Selection counts against the threshold plus the covariance-weighted squared
// error summed over risks.
RepMetrics replication_metrics(const Eigen::MatrixXd& beta_hat,
                               const Eigen::MatrixXd& beta_true,
                               const std::vector<Eigen::MatrixXd>& sigma,
                               double zero_threshold);

struct BenchConfig {
  Scenario scenario;
  int reps = 50;
  std::vector<std::string> penalties{"bar", "lasso", "oracle"};
  std::vector<double> tau_grid;  // empty -> default grid
  // Batch fits get a deeper iteration budget than the library default: the
  // coefficient/jump alternation contracts linearly, and hard replications
  // routinely need a few thousand cheap tail sweeps.
  FitConfig fit = [] { FitConfig f; f.max_outer = 5000; return f; }();
};

// Parses {"scenario": {...}, "bench": {...}} with keys exactly matching the
// struct fields; unknown keys are rejected.
BenchConfig load_bench_config(std::istream& in);

struct MetricsRow {
  std::string penalty;
  int n = 0;
  int p = 0;  // total coefficient count across risks
  int q = 0;  // truly nonzero count
  double rho = 0.0;
  std::vector<double> r;
  double tp = 0.0;
  double fp = 0.0;
  double mcv = 0.0;
  double mmse = 0.0;
  double mse_sd = 0.0;
  int reps = 0;
  int failures = 0;
};

struct RepDetail {
  int rep = 0;
  std::string penalty;
  bool ok = false;
  double tau_star = 0.0;
  RepMetrics metrics;
  int iterations = 0;
  bool converged = false;
  std::string error;
};

struct BenchOutput {
  std::vector<MetricsRow> rows;      // one per penalty, config order
  std::vector<RepDetail> details;    // rep-major, penalty order within rep
};

// Runs all replications (replication i uses the sub-seed derived from the
// scenario seed and i), each fitting every requested penalty; failed fits are
// excluded from the aggregates and counted.  Replications run on `threads`
// workers; results are reduced by replication index, so the output does not
// depend on scheduling.  Throws when more than half the replications of any
// penalty fail.
BenchOutput run_bench(const BenchConfig& cfg, int threads);

// sep is ',' or '\t'; both renderers emit a header line and fixed-width
// numeric formats so identical runs produce identical bytes.
std::string render_summary(const std::vector<MetricsRow>& rows, char sep);
std::string render_detail(const std::vector<RepDetail>& details, char sep);

int cli_main(int argc, char** argv);

}  // namespace icrsel
