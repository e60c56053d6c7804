#pragma once

#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "icrsel/common.hpp"

namespace icrsel {

// One subject: examination schedule, event/censoring status, and a
// step-function covariate path anchored at the exam times.  Row s of
// covariate_steps is in force on (U_{s}, U_{s+1}] (0-based; the first row
// covers (0, U_1]), and the last row extends beyond the final exam.
struct SubjectRecord {
  std::string id;
  std::vector<double> exam_times;   // strictly increasing, all > 0
  bool event_observed = false;
  int event_interval = 0;           // 1-based exam interval when observed
  int cause = 0;                    // 1..K when known, 0 otherwise
  bool cause_missing = false;       // event observed but cause unknown
  Eigen::MatrixXd covariate_steps;  // n_exams rows

  int n_exams() const { return static_cast<int>(exam_times.size()); }
  int n_covariates() const { return static_cast<int>(covariate_steps.cols()); }
  bool right_censored() const { return !event_observed; }

  // Left-continuous step lookup: the value at an exam time is the value that
  // was in force up to and including it.
  int step_index(double t) const;
  Eigen::RowVectorXd covariate_at(double t) const;
};

void validate_record(const SubjectRecord& rec);

struct CensoringInterval {
  double left = 0.0;
  double right = std::numeric_limits<double>::infinity();
  bool right_censored() const { return !std::isfinite(right); }
};

// (L, R] bracketing the event between consecutive exams, or (U_J, inf) when
// no event was observed.
CensoringInterval build_interval(const SubjectRecord& rec);

// Candidate jump grid per risk: sorted distinct finite interval endpoints of
// the subjects with that cause or a missing cause (0 excluded).  Spans locate
// every subject against each grid.
struct JumpGrid {
  struct SubjectSpan {
    bool contributes = false;  // event subject with this cause or missing cause
    int below_left = 0;        // grid points <= L
    int below_right = 0;       // grid points <= R (== below_left when censored)
  };

  std::vector<std::vector<double>> times;       // [risk]
  std::vector<std::vector<SubjectSpan>> spans;  // [risk][subject]

  int n_risks() const { return static_cast<int>(times.size()); }
  int size(int k) const { return static_cast<int>(times[k].size()); }
};

JumpGrid build_jump_grid(const std::vector<SubjectRecord>& subjects, int n_risks);

// Wide CSV schema: id,n_exams,U1,...,Umax,event,event_j,cause,z1,...,zd.
// Unused exam cells stay empty; cause is 0 for a masked cause and empty for
// right-censored rows; a final exam cell of "inf" marks right-censoring
// explicitly.  An optional long-format companion (id,exam_index,z1,...,zd)
// overrides per-interval covariate values.
std::vector<SubjectRecord> load_dataset(std::istream& in);
void load_covariate_panel(std::istream& in, std::vector<SubjectRecord>& subjects);
void write_dataset(std::ostream& out, const std::vector<SubjectRecord>& subjects);
void write_covariate_panel(std::ostream& out, const std::vector<SubjectRecord>& subjects);

// Highest known cause in the data (0 when every cause is missing/censored).
int max_cause(const std::vector<SubjectRecord>& subjects);

// Common covariate dimension; throws ValidationError on mismatch.
int covariate_dim(const std::vector<SubjectRecord>& subjects);

}  // namespace icrsel
