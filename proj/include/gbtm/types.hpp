#ifndef GBTM_TYPES_HPP
#define GBTM_TYPES_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace gbtm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid input: malformed data, configuration or arguments.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Evaluation left the representable range (overflowing rates, empty mixtures).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Parse failure with a 1-based line number and, when known, a column name.
class ParseError : public ValidationError {
 public:
  ParseError(std::string source, std::size_t line, std::string column,
             const std::string& message);

  const std::string& source() const { return source_; }
  std::size_t line() const { return line_; }
  const std::string& column() const { return column_; }

 private:
  std::string source_;
  std::size_t line_;
  std::string column_;
};

using CountMatrix =
    Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CountRow = Eigen::Ref<const Eigen::Matrix<int, 1, Eigen::Dynamic>>;

/// Observation periods. Labels are shown to users; polynomial regressors use
/// the period index rescaled to [0, 1]: a_t = (t - 1) / (T - 1).
class TimeAxis {
 public:
  TimeAxis() = default;
  explicit TimeAxis(std::vector<long long> labels);

  /// Axis with labels first, first+1, ..., first+periods-1.
  static TimeAxis consecutive(int periods, long long first = 1);

  int size() const { return static_cast<int>(labels_.size()); }
  const std::vector<long long>& labels() const { return labels_; }
  const Eigen::VectorXd& internal() const { return internal_; }
  double at(int t_index) const;  // 1-based

  /// T x (order + 1) matrix of powers a_t^m.
  Eigen::MatrixXd design(int order) const;

  bool operator==(const TimeAxis& other) const { return labels_ == other.labels_; }

 private:
  std::vector<long long> labels_;
  Eigen::VectorXd internal_;
};

/// Polynomial coefficients of one trajectory group: log-rate (beta) and
/// logit of the structural-zero probability (gamma).
struct GroupParams {
  Eigen::VectorXd beta;
  Eigen::VectorXd gamma;

  int order() const { return static_cast<int>(beta.size()) - 1; }
  int inflation_order() const { return static_cast<int>(gamma.size()) - 1; }
};

struct MixtureParams {
  Eigen::VectorXd theta;  // membership logits, theta(0) == 0
  std::vector<GroupParams> groups;

  int n_groups() const { return static_cast<int>(groups.size()); }
  Eigen::VectorXd weights() const;
  void validate() const;
};

/// Builds logits (theta_1 = 0) from mixing weights.
Eigen::VectorXd weights_to_theta(const Eigen::VectorXd& weights);

enum class DocType { article, review, letter, other };

std::string to_string(DocType type);
DocType parse_doc_type(const std::string& text);  // throws ValidationError

struct Covariates {
  DocType doc_type = DocType::article;
  std::string journal;
  int n_authors = 0;
  int n_refs = 0;
  int n_pages = 0;

  bool operator==(const Covariates&) const = default;
};

struct LongitudinalDataset {
  std::vector<std::string> subject_ids;
  CountMatrix counts;
  std::vector<Covariates> covariates;
  TimeAxis axis;

  int n_subjects() const { return static_cast<int>(counts.rows()); }
  int n_periods() const { return static_cast<int>(counts.cols()); }
  std::int64_t subject_total(int i) const { return counts.row(i).cast<std::int64_t>().sum(); }

  /// Throws ValidationError when shapes disagree or counts are negative.
  void validate() const;
  LongitudinalDataset subset(const std::vector<int>& rows) const;
};

}  // namespace gbtm

#endif  // GBTM_TYPES_HPP
