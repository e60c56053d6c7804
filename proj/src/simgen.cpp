#include "icrsel/simgen.hpp"

#include <cmath>
#include <string>

namespace icrsel {

namespace {

enum Role : std::uint32_t {
  kRoleCovariate = 0,
  kRoleCause = 1,
  kRoleEventQuantile = 2,
  kRoleExamFirst = 3,
  kRoleExamGap = 4,
  kRoleMask = 5,
};

}  // namespace

void validate_scenario(const Scenario& sc) {
  if (sc.n < 1) throw ValidationError("scenario: n must be positive");
  if (sc.d_n < 1) throw ValidationError("scenario: d_n must be positive");
  if (sc.K < 1) throw ValidationError("scenario: K must be positive");
  if (!(sc.rho > -1.0 && sc.rho < 1.0))
    throw ValidationError("scenario: rho must lie in (-1, 1)");
  if (static_cast<int>(sc.r.size()) != sc.K)
    throw ValidationError("scenario: need one transformation index per risk");
  for (double r : sc.r)
    if (!(r >= 0.0)) throw ValidationError("scenario: transformation indices must be >= 0");
  if (sc.beta_true.rows() != sc.K || sc.beta_true.cols() != sc.d_n)
    throw ValidationError("scenario: beta_true must be K x d_n");
  if (!(sc.baseline_scale > 0.0))
    throw ValidationError("scenario: baseline_scale must be positive");
  if (!(sc.exam1_range[0] > 0.0 && sc.exam1_range[1] >= sc.exam1_range[0]))
    throw ValidationError("scenario: bad first-exam range");
  if (!(sc.gap_range[0] > 0.0 && sc.gap_range[1] >= sc.gap_range[0]))
    throw ValidationError("scenario: bad exam-gap range");
  if (!(sc.missing_prob >= 0.0 && sc.missing_prob <= 1.0))
    throw ValidationError("scenario: missing_prob must lie in [0, 1]");

  // Misspecification guard: the cause probabilities must leave room for the
  // event-free outcome already at the covariate mean, otherwise the scenario
  // as a whole is infeasible (typically an oversized baseline_scale).
  double total = 0.0;
  const Eigen::VectorXd z0 = Eigen::VectorXd::Zero(sc.d_n);
  for (int k = 0; k < sc.K; ++k)
    total += event_probability(TransformationSpec(sc.r[k]), sc.beta_true.row(k).transpose(),
                               z0, sc.baseline_scale);
  if (total >= 1.0)
    throw ProbabilityOverflow("scenario: cause probabilities at the covariate mean sum to " +
                              std::to_string(total));
}

std::vector<TransformationSpec> scenario_specs(const Scenario& sc) {
  std::vector<TransformationSpec> specs;
  specs.reserve(sc.r.size());
  for (double r : sc.r) specs.emplace_back(r);
  return specs;
}

Eigen::MatrixXd gen_covariates(int n, int d, double rho, const SplitRng& rng) {
  Eigen::MatrixXd z(n, d);
  const double tail = std::sqrt(1.0 - rho * rho);
  for (int i = 0; i < n; ++i) {
    double prev = rng.normal(static_cast<std::uint64_t>(i), kRoleCovariate, 0);
    z(i, 0) = prev;
    for (int a = 1; a < d; ++a) {
      const double eps = rng.normal(static_cast<std::uint64_t>(i), kRoleCovariate,
                                    static_cast<std::uint32_t>(a));
      prev = rho * prev + tail * eps;
      z(i, a) = prev;
    }
  }
  return z;
}

double event_probability(const TransformationSpec& spec, const Eigen::VectorXd& beta_k,
                         const Eigen::VectorXd& z, double scale) {
  const double load = scale * std::exp(beta_k.dot(z));
  return -std::expm1(spec.log_survival_factor(load));
}

EventDraw gen_event(const Scenario& sc, const Eigen::VectorXd& z, const SplitRng& rng,
                    std::uint64_t stream, GenStats* stats) {
  const std::vector<TransformationSpec> specs = scenario_specs(sc);
  std::vector<double> probs(sc.K);
  double total = 0.0;
  for (int k = 0; k < sc.K; ++k) {
    probs[k] = event_probability(specs[k], sc.beta_true.row(k).transpose(), z,
                                 sc.baseline_scale);
    total += probs[k];
  }
  // Extreme covariate draws can push the sum past 1 (the event-free mass
  // vanishes); the single-uniform allocation below then truncates the last
  // cause's share. Count such subjects rather than aborting the dataset.
  if (total >= 1.0 && stats) ++stats->overflow_subjects;

  EventDraw draw;
  const double u = rng.uniform(stream, kRoleCause, 0);
  double cum = 0.0;
  int cause = 0;
  for (int k = 0; k < sc.K; ++k) {
    cum += probs[k];
    if (u < cum) {
      cause = k + 1;
      break;
    }
  }
  if (cause == 0) return draw;

  // Invert the conditional CIF: F_k(T)/p_k = V.
  const double v = rng.uniform_open(stream, kRoleEventQuantile, 0);
  const auto& spec = specs[cause - 1];
  const double expo =
      sc.baseline_scale * std::exp(sc.beta_true.row(cause - 1).dot(z.transpose()));
  double arg = 1.0 - spec.inverse(-std::log1p(-probs[cause - 1] * v)) / expo;
  if (arg < 1e-12 || arg >= 1.0) {
    arg = std::min(std::max(arg, 1e-12), 1.0 - 1e-16);
    if (stats) ++stats->clamped_draws;
  }
  draw.cause = cause;
  draw.time = -std::log(arg);
  return draw;
}

std::array<double, 2> gen_examinations(const Scenario& sc, const SplitRng& rng,
                                       std::uint64_t stream) {
  const double u1 =
      rng.uniform(stream, kRoleExamFirst, 0, sc.exam1_range[0], sc.exam1_range[1]);
  const double gap = rng.uniform(stream, kRoleExamGap, 0, sc.gap_range[0], sc.gap_range[1]);
  return {u1, u1 + gap};
}

std::vector<SubjectRecord> gen_dataset(const Scenario& sc, GenStats* stats) {
  validate_scenario(sc);
  const SplitRng rng(sc.seed);
  const Eigen::MatrixXd z = gen_covariates(sc.n, sc.d_n, sc.rho, rng);

  std::vector<SubjectRecord> subjects;
  subjects.reserve(sc.n);
  for (int i = 0; i < sc.n; ++i) {
    const std::uint64_t stream = static_cast<std::uint64_t>(i);
    const Eigen::VectorXd zi = z.row(i).transpose();
    const EventDraw draw = gen_event(sc, zi, rng, stream, stats);
    const std::array<double, 2> exams = gen_examinations(sc, rng, stream);

    SubjectRecord rec;
    rec.id = std::to_string(i + 1);
    rec.exam_times = {exams[0], exams[1]};
    rec.covariate_steps = zi.transpose().replicate(2, 1);

    if (draw.cause > 0 && draw.time <= exams[1]) {
      rec.event_observed = true;
      rec.event_interval = draw.time <= exams[0] ? 1 : 2;
      rec.cause = draw.cause;
      if (stats) ++stats->events;
      if (sc.missing_prob > 0.0 &&
          rng.uniform(stream, kRoleMask, 0) < sc.missing_prob) {
        rec.cause = 0;
        rec.cause_missing = true;
        if (stats) ++stats->missing;
      }
    }
    subjects.push_back(std::move(rec));
  }
  return subjects;
}

}  // namespace icrsel
