#ifndef GBTM_COVARIATES_HPP
#define GBTM_COVARIATES_HPP

#include "gbtm/types.hpp"

#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace gbtm {

/// Separation flag threshold on |B|.
inline constexpr double kSeparationBound = 15.0;

struct Coefficient {
  std::string term;
  double b = 0.0;
  double se = 0.0;
  double z = 0.0;
  double p = 1.0;      // two-sided Wald
  double exp_b = 1.0;  // exp(b)
  double lo95 = 1.0;   // exp(b - 1.96 se)
  double hi95 = 1.0;   // exp(b + 1.96 se)
  bool separated = false;
};

struct GroupEquation {
  int group = 0;  // label of the non-reference group
  std::vector<Coefficient> terms;
};

/// Multinomial logit of group membership against a reference group.
struct RegressionResult {
  int reference_group = 0;
  std::vector<int> groups;               // distinct labels, ascending
  std::vector<std::string> term_names;   // "(Intercept)" then predictors
  std::vector<GroupEquation> equations;  // one per non-reference group, ascending
  Eigen::MatrixXd coefficients;          // rows follow `groups`; reference row is 0
  Eigen::MatrixXd covariance;            // inverse observed information, packed

  double loglik = 0.0;
  double null_loglik = 0.0;
  double cox_snell_r2 = 0.0;
  double nagelkerke_r2 = 0.0;
  double model_chi2 = 0.0;
  int df = 0;
  double model_p = 1.0;
  int n = 0;
  int iterations = 0;
  bool converged = false;
  std::vector<std::string> warnings;

  /// N x K membership probabilities, columns follow `groups`.
  Eigen::MatrixXd predict_probabilities(const Eigen::MatrixXd& X) const;
  /// Argmax group label per row (ties to the lower label).
  std::vector<int> predict(const Eigen::MatrixXd& X) const;
};

/// Newton-Raphson maximum likelihood. The reference defaults to the largest
/// group label, which is the most-cited group under canonical ordering.
/// Throws ValidationError naming collinear predictors for a rank-deficient
/// design; diverging coefficients are flagged, not fatal.
RegressionResult multinomial_fit(const Eigen::MatrixXd& X, std::span<const int> groups,
                                 std::optional<int> reference = std::nullopt,
                                 std::vector<std::string> names = {});

struct Predictor {
  std::string name;
  std::variant<std::vector<double>, std::vector<std::string>> values;
};

struct Design {
  Eigen::MatrixXd X;
  std::vector<std::string> names;
};

/// Numeric predictors enter as-is; categorical ones as indicator columns
/// named "name=level", with the alphabetically first level as baseline.
Design encode_predictors(const std::vector<Predictor>& predictors);

/// journal, doc_type, n_authors, n_refs, n_pages of every subject.
std::vector<Predictor> covariate_predictors(const LongitudinalDataset& data);

struct ChiSquareResult {
  double chi2 = 0.0;
  int df = 0;
  double p = 1.0;
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  Eigen::MatrixXd observed;
  Eigen::MatrixXd expected;
  std::vector<std::string> warnings;
};

/// Pearson chi-square on an R x C table. Rows or columns with a zero marginal
/// are dropped with a warning; expected counts below 5 are warned about.
ChiSquareResult chi_square_test(const Eigen::MatrixXd& table);

/// Cross-tabulates two categorical variables and tests independence.
ChiSquareResult chi_square_test(std::span<const std::string> a, std::span<const std::string> b);
ChiSquareResult chi_square_test(std::span<const std::string> categories,
                                std::span<const int> groups);

struct ClassificationTable {
  std::string name;
  std::vector<int> groups;  // labels, ascending
  Eigen::MatrixXi counts;   // observed (rows) x predicted (cols)
  double percent_correct = 0.0;
  std::vector<std::string> warnings;
};

struct PredictorSet {
  std::string name;
  std::vector<Predictor> predictors;
};

ClassificationTable classify_membership(const PredictorSet& set, std::span<const int> groups);

std::vector<ClassificationTable> classification_table(const std::vector<PredictorSet>& sets,
                                                      std::span<const int> groups);

}  // namespace gbtm

#endif  // GBTM_COVARIATES_HPP
