#include "icrsel/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace icrsel {

int SubjectRecord::step_index(double t) const {
  // First exam time >= t gives the interval (U_{s-1}, U_s] containing t;
  // past the last exam the final row stays in force.
  auto it = std::lower_bound(exam_times.begin(), exam_times.end(), t);
  if (it == exam_times.end()) return n_exams() - 1;
  return static_cast<int>(it - exam_times.begin());
}

Eigen::RowVectorXd SubjectRecord::covariate_at(double t) const {
  return covariate_steps.row(step_index(t));
}

void validate_record(const SubjectRecord& rec) {
  const std::string who = "subject '" + rec.id + "': ";
  if (rec.exam_times.empty()) throw ValidationError(who + "no examination times");
  double prev = 0.0;
  for (double u : rec.exam_times) {
    if (!(u > prev) || !std::isfinite(u))
      throw ValidationError(who + "exam times must be finite, positive, strictly increasing");
    prev = u;
  }
  if (rec.covariate_steps.rows() != rec.n_exams())
    throw ValidationError(who + "covariate step rows must match the number of exams");
  if (rec.covariate_steps.cols() < 1)
    throw ValidationError(who + "at least one covariate required");
  if (!rec.covariate_steps.allFinite())
    throw ValidationError(who + "covariates must be finite");
  if (rec.event_observed) {
    if (rec.event_interval < 1 || rec.event_interval > rec.n_exams())
      throw ValidationError(who + "event interval out of range");
    if (rec.cause_missing) {
      if (rec.cause != 0)
        throw ValidationError(who + "missing cause must carry cause = 0");
    } else if (rec.cause < 1) {
      throw ValidationError(who + "observed event needs a cause or the missing flag");
    }
  } else {
    if (rec.cause != 0 || rec.cause_missing || rec.event_interval != 0)
      throw ValidationError(who + "censored record carries event fields");
  }
}

CensoringInterval build_interval(const SubjectRecord& rec) {
  CensoringInterval iv;
  if (rec.event_observed) {
    iv.left = rec.event_interval == 1 ? 0.0 : rec.exam_times[rec.event_interval - 2];
    iv.right = rec.exam_times[rec.event_interval - 1];
  } else {
    iv.left = rec.exam_times.back();
    iv.right = std::numeric_limits<double>::infinity();
  }
  return iv;
}

JumpGrid build_jump_grid(const std::vector<SubjectRecord>& subjects, int n_risks) {
  if (n_risks < 1) throw ValidationError("need at least one risk");
  bool any_event = false;
  for (const auto& rec : subjects) any_event = any_event || rec.event_observed;
  if (!any_event) throw ValidationError("no event-observed subjects: jump grid is empty");

  JumpGrid grid;
  grid.times.resize(n_risks);
  grid.spans.assign(n_risks, std::vector<JumpGrid::SubjectSpan>(subjects.size()));

  for (int k = 0; k < n_risks; ++k) {
    std::set<double> pts;
    for (const auto& rec : subjects) {
      if (!rec.event_observed) continue;
      if (rec.cause != k + 1 && !rec.cause_missing) continue;
      const CensoringInterval iv = build_interval(rec);
      if (iv.left > 0.0) pts.insert(iv.left);
      pts.insert(iv.right);
    }
    grid.times[k].assign(pts.begin(), pts.end());

    const auto& tk = grid.times[k];
    for (std::size_t i = 0; i < subjects.size(); ++i) {
      const auto& rec = subjects[i];
      const CensoringInterval iv = build_interval(rec);
      auto& span = grid.spans[k][i];
      span.below_left = static_cast<int>(
          std::upper_bound(tk.begin(), tk.end(), iv.left) - tk.begin());
      span.below_right = iv.right_censored()
                             ? span.below_left
                             : static_cast<int>(std::upper_bound(tk.begin(), tk.end(),
                                                                 iv.right) -
                                                tk.begin());
      span.contributes =
          rec.event_observed && (rec.cause == k + 1 || rec.cause_missing);
    }
  }
  return grid;
}

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool is_inf_token(const std::string& s) {
  std::string t;
  for (char c : s) t.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return t == "inf" || t == "+inf" || t == "infinity";
}

double parse_double(const std::string& cell, int row, const std::string& col) {
  try {
    std::size_t used = 0;
    double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("row " + std::to_string(row) + ": bad numeric value '" + cell +
                          "' in column " + col);
  }
}

long parse_int(const std::string& cell, int row, const std::string& col) {
  try {
    std::size_t used = 0;
    long v = std::stol(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("row " + std::to_string(row) + ": bad integer '" + cell +
                          "' in column " + col);
  }
}

}  // namespace

std::vector<SubjectRecord> load_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty dataset stream");
  const std::vector<std::string> header = split_csv(line);

  // id,n_exams,U1..Umax,event,event_j,cause,z1..zd
  if (header.size() < 7 || header[0] != "id" || header[1] != "n_exams")
    throw ValidationError("header must start with id,n_exams,U1,...");
  std::size_t pos = 2;
  int max_exams = 0;
  while (pos < header.size() && header[pos] == "U" + std::to_string(max_exams + 1)) {
    ++max_exams;
    ++pos;
  }
  if (max_exams == 0) throw ValidationError("header has no exam-time columns U1..");
  if (pos + 3 > header.size() || header[pos] != "event" || header[pos + 1] != "event_j" ||
      header[pos + 2] != "cause")
    throw ValidationError("header must contain event,event_j,cause after the exam columns");
  const std::size_t z0 = pos + 3;
  int d = 0;
  for (std::size_t c = z0; c < header.size(); ++c) {
    if (header[c] != "z" + std::to_string(d + 1))
      throw ValidationError("covariate columns must be named z1..zd in order");
    ++d;
  }
  if (d == 0) throw ValidationError("header has no covariate columns z1..");

  std::vector<SubjectRecord> subjects;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells = split_csv(line);
    if (cells.size() != header.size())
      throw ValidationError("row " + std::to_string(row) + ": expected " +
                            std::to_string(header.size()) + " cells, got " +
                            std::to_string(cells.size()));

    SubjectRecord rec;
    rec.id = cells[0];
    const long n_exams = parse_int(cells[1], row, "n_exams");
    if (n_exams < 1 || n_exams > max_exams)
      throw ValidationError("row " + std::to_string(row) + ": n_exams out of range");

    bool saw_inf = false;
    for (long j = 0; j < n_exams; ++j) {
      const std::string& cell = cells[2 + j];
      if (cell.empty())
        throw ValidationError("row " + std::to_string(row) + ": exam cell U" +
                              std::to_string(j + 1) + " is empty");
      if (is_inf_token(cell)) {
        if (j + 1 != n_exams)
          throw ValidationError("row " + std::to_string(row) +
                                ": 'inf' allowed only in the last exam cell");
        saw_inf = true;
        break;
      }
      rec.exam_times.push_back(parse_double(cell, row, "U" + std::to_string(j + 1)));
    }
    for (long j = n_exams; j < max_exams; ++j)
      if (!cells[2 + j].empty())
        throw ValidationError("row " + std::to_string(row) + ": exam cell U" +
                              std::to_string(j + 1) + " should be empty");
    if (rec.exam_times.empty())
      throw ValidationError("row " + std::to_string(row) + ": no finite exam times");

    const long event = parse_int(cells[pos], row, "event");
    if (event != 0 && event != 1)
      throw ValidationError("row " + std::to_string(row) + ": event must be 0 or 1");
    if (saw_inf && event != 0)
      throw ValidationError("row " + std::to_string(row) +
                            ": 'inf' exam sentinel requires event=0");
    rec.event_observed = event == 1;
    if (rec.event_observed) {
      if (cells[pos + 1].empty())
        throw ValidationError("row " + std::to_string(row) + ": event_j required when event=1");
      rec.event_interval = static_cast<int>(parse_int(cells[pos + 1], row, "event_j"));
      const long cause = cells[pos + 2].empty() ? 0 : parse_int(cells[pos + 2], row, "cause");
      if (cause < 0)
        throw ValidationError("row " + std::to_string(row) + ": cause must be >= 0");
      rec.cause = static_cast<int>(cause);
      rec.cause_missing = cause == 0;
    } else {
      if (!cells[pos + 1].empty())
        throw ValidationError("row " + std::to_string(row) + ": event_j must be empty when event=0");
      if (!cells[pos + 2].empty() && parse_int(cells[pos + 2], row, "cause") != 0)
        throw ValidationError("row " + std::to_string(row) + ": cause must be empty or 0 when event=0");
    }

    rec.covariate_steps.resize(rec.n_exams(), d);
    for (int c = 0; c < d; ++c) {
      const double v = parse_double(cells[z0 + c], row, "z" + std::to_string(c + 1));
      rec.covariate_steps.col(c).setConstant(v);
    }

    try {
      validate_record(rec);
    } catch (const ValidationError& e) {
      throw ValidationError("row " + std::to_string(row) + ": " + e.what());
    }
    subjects.push_back(std::move(rec));
  }
  if (subjects.empty()) throw ValidationError("dataset has no records");
  return subjects;
}

void load_covariate_panel(std::istream& in, std::vector<SubjectRecord>& subjects) {
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < subjects.size(); ++i) by_id[subjects[i].id] = i;

  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty covariate panel stream");
  const std::vector<std::string> header = split_csv(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "exam_index")
    throw ValidationError("panel header must start with id,exam_index,z1,...");
  const int d = static_cast<int>(header.size()) - 2;

  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells = split_csv(line);
    if (cells.size() != header.size())
      throw ValidationError("panel row " + std::to_string(row) + ": wrong cell count");
    auto it = by_id.find(cells[0]);
    if (it == by_id.end())
      throw ValidationError("panel row " + std::to_string(row) + ": unknown id '" + cells[0] + "'");
    SubjectRecord& rec = subjects[it->second];
    if (rec.n_covariates() != d)
      throw ValidationError("panel row " + std::to_string(row) + ": covariate dimension mismatch");
    const long s = parse_int(cells[1], row, "exam_index");
    if (s < 1 || s > rec.n_exams())
      throw ValidationError("panel row " + std::to_string(row) + ": exam_index out of range");
    for (int c = 0; c < d; ++c)
      rec.covariate_steps(s - 1, c) = parse_double(cells[2 + c], row, "z" + std::to_string(c + 1));
  }
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_dataset(std::ostream& out, const std::vector<SubjectRecord>& subjects) {
  int max_exams = 1;
  int d = 0;
  for (const auto& rec : subjects) {
    max_exams = std::max(max_exams, rec.n_exams());
    d = std::max(d, rec.n_covariates());
  }
  out << "id,n_exams";
  for (int j = 1; j <= max_exams; ++j) out << ",U" << j;
  out << ",event,event_j,cause";
  for (int c = 1; c <= d; ++c) out << ",z" << c;
  out << "\n";
  for (const auto& rec : subjects) {
    out << rec.id << ',' << rec.n_exams();
    for (int j = 0; j < max_exams; ++j)
      out << ',' << (j < rec.n_exams() ? fmt_double(rec.exam_times[j]) : "");
    out << ',' << (rec.event_observed ? 1 : 0) << ',';
    if (rec.event_observed) out << rec.event_interval;
    out << ',';
    if (rec.event_observed) out << rec.cause;
    for (int c = 0; c < d; ++c)
      out << ',' << (c < rec.n_covariates() ? fmt_double(rec.covariate_steps(0, c)) : "");
    out << "\n";
  }
}

void write_covariate_panel(std::ostream& out, const std::vector<SubjectRecord>& subjects) {
  const int d = subjects.empty() ? 0 : subjects.front().n_covariates();
  out << "id,exam_index";
  for (int c = 1; c <= d; ++c) out << ",z" << c;
  out << "\n";
  for (const auto& rec : subjects)
    for (int s = 0; s < rec.n_exams(); ++s) {
      out << rec.id << ',' << s + 1;
      for (int c = 0; c < d; ++c) out << ',' << fmt_double(rec.covariate_steps(s, c));
      out << "\n";
    }
}

int max_cause(const std::vector<SubjectRecord>& subjects) {
  int k = 0;
  for (const auto& rec : subjects) k = std::max(k, rec.cause);
  return k;
}

int covariate_dim(const std::vector<SubjectRecord>& subjects) {
  if (subjects.empty()) throw ValidationError("empty dataset");
  const int d = subjects.front().n_covariates();
  for (const auto& rec : subjects)
    if (rec.n_covariates() != d)
      throw ValidationError("subject '" + rec.id + "': covariate dimension mismatch");
  return d;
}

}  // namespace icrsel
