#include "gbtm/types.hpp"

#include <cmath>
#include <sstream>

namespace gbtm {

namespace {

std::string parse_error_message(const std::string& source, std::size_t line,
                                const std::string& column, const std::string& message) {
  std::ostringstream os;
  os << source << ":" << line;
  if (!column.empty()) os << " (column " << column << ")";
  os << ": " << message;
  return os.str();
}

}  // namespace

ParseError::ParseError(std::string source, std::size_t line, std::string column,
                       const std::string& message)
    : ValidationError(parse_error_message(source, line, column, message)),
      source_(std::move(source)),
      line_(line),
      column_(std::move(column)) {}

TimeAxis::TimeAxis(std::vector<long long> labels) : labels_(std::move(labels)) {
  const int T = size();
  if (T < 2) throw ValidationError("time axis needs at least 2 periods");
  for (int t = 1; t < T; ++t) {
    if (labels_[t] <= labels_[t - 1])
      throw ValidationError("time axis labels must be strictly increasing");
  }
  internal_.resize(T);
  for (int t = 0; t < T; ++t) internal_(t) = static_cast<double>(t) / (T - 1);
}

TimeAxis TimeAxis::consecutive(int periods, long long first) {
  std::vector<long long> labels(periods > 0 ? periods : 0);
  for (int t = 0; t < periods; ++t) labels[t] = first + t;
  return TimeAxis(std::move(labels));
}

double TimeAxis::at(int t_index) const {
  if (t_index < 1 || t_index > size())
    throw ValidationError("period index " + std::to_string(t_index) +
                          " outside 1.." + std::to_string(size()));
  return internal_(t_index - 1);
}

Eigen::MatrixXd TimeAxis::design(int order) const {
  Eigen::MatrixXd X(size(), order + 1);
  for (int t = 0; t < size(); ++t) {
    double p = 1.0;
    for (int m = 0; m <= order; ++m) {
      X(t, m) = p;
      p *= internal_(t);
    }
  }
  return X;
}

Eigen::VectorXd MixtureParams::weights() const {
  const double hi = theta.maxCoeff();
  Eigen::VectorXd w = (theta.array() - hi).exp();
  return w / w.sum();
}

void MixtureParams::validate() const {
  if (groups.empty()) throw ValidationError("mixture needs at least one group");
  if (theta.size() != n_groups())
    throw ValidationError("theta length differs from the number of groups");
  if (theta(0) != 0.0) throw ValidationError("theta_1 must be fixed at 0");
  if (!theta.allFinite()) throw ValidationError("theta has non-finite entries");
  for (int j = 0; j < n_groups(); ++j) {
    const auto& g = groups[j];
    if (g.beta.size() < 1 || g.gamma.size() < 1)
      throw ValidationError("group " + std::to_string(j + 1) + " has empty coefficients");
    if (!g.beta.allFinite() || !g.gamma.allFinite())
      throw ValidationError("group " + std::to_string(j + 1) + " has non-finite coefficients");
  }
}

Eigen::VectorXd weights_to_theta(const Eigen::VectorXd& weights) {
  Eigen::VectorXd theta = (weights.array() / weights(0)).log();
  theta(0) = 0.0;
  return theta;
}

std::string to_string(DocType type) {
  switch (type) {
    case DocType::article: return "article";
    case DocType::review: return "review";
    case DocType::letter: return "letter";
    case DocType::other: return "other";
  }
  return "other";
}

DocType parse_doc_type(const std::string& text) {
  if (text == "article") return DocType::article;
  if (text == "review") return DocType::review;
  if (text == "letter") return DocType::letter;
  if (text == "other") return DocType::other;
  throw ValidationError("unknown doc_type '" + text + "'");
}

void LongitudinalDataset::validate() const {
  if (counts.rows() < 1) throw ValidationError("dataset has no subjects");
  if (static_cast<Eigen::Index>(subject_ids.size()) != counts.rows())
    throw ValidationError("subject id count differs from count rows");
  if (!covariates.empty() &&
      static_cast<Eigen::Index>(covariates.size()) != counts.rows())
    throw ValidationError("covariate count differs from count rows");
  if (counts.cols() != axis.size())
    throw ValidationError("count columns differ from time axis length");
  for (Eigen::Index i = 0; i < counts.rows(); ++i) {
    for (Eigen::Index t = 0; t < counts.cols(); ++t) {
      if (counts(i, t) < 0)
        throw ValidationError("negative count for subject " + subject_ids[i]);
    }
  }
}

LongitudinalDataset LongitudinalDataset::subset(const std::vector<int>& rows) const {
  LongitudinalDataset out;
  out.axis = axis;
  out.counts.resize(static_cast<Eigen::Index>(rows.size()), counts.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.counts.row(static_cast<Eigen::Index>(k)) = counts.row(rows[k]);
    out.subject_ids.push_back(subject_ids[rows[k]]);
    if (!covariates.empty()) out.covariates.push_back(covariates[rows[k]]);
  }
  return out;
}

}  // namespace gbtm
