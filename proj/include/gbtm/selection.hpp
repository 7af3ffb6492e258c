#ifndef GBTM_SELECTION_HPP
#define GBTM_SELECTION_HPP

#include "gbtm/estimation.hpp"

#include <optional>
#include <string>
#include <vector>

namespace gbtm {

/// BIC = loglik - 0.5 k ln(n); larger is better.
double bic(double loglik, int k, int n);

struct LogBayesFactor {
  double value = 0.0;
  bool strong_for_complex = false;  // value > 5
};

/// 2 (BIC_complex - BIC_simple).
LogBayesFactor log_bayes_factor(double bic_simple, double bic_complex);

inline constexpr double kAppThreshold = 0.70;
inline constexpr double kSmallGroupShare = 0.05;

struct AdequacyReport {
  std::vector<std::optional<double>> apps;  // nullopt when no subject is assigned
  std::vector<int> assigned;                // argmax counts, ties to the lower index
  Eigen::VectorXd weighted_sizes;           // column means of the posterior matrix
  bool pass = false;                        // every APP defined and >= 0.70
  std::vector<std::string> warnings;

  /// Smallest defined APP; NaN when none is defined.
  double app_min() const;
};

AdequacyReport adequacy(const Eigen::MatrixXd& posteriors);
AdequacyReport adequacy(const FittedModel& fitted);

/// Hard assignment per subject (argmax, ties to the lower index).
std::vector<int> assign_groups(const Eigen::MatrixXd& posteriors);

struct SweepRow {
  int n_groups = 0;
  std::vector<int> orders;
  double loglik = 0.0;
  int k = 0;
  double bic = 0.0;
  bool converged = false;
  double app_min = 0.0;
  Eigen::VectorXd weighted_sizes;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<FittedModel> models;  // parallel to rows
  std::optional<std::size_t> recommended;
  std::string rationale;
  std::vector<std::string> caveats;
};

/// Index of the converged row with the largest BIC (first one on ties).
std::optional<std::size_t> recommend_row(const std::vector<SweepRow>& rows);

/// Relative change threshold below which the two most-cited curves count as
/// unchanged between consecutive group counts.
inline constexpr double kTopCurveChange = 0.05;

/// Fits G = g_min..g_max with every group at base_order and recommends the
/// largest-BIC converged model. Rows whose added group only splits the lower
/// strata are flagged in the caveats.
SweepResult sweep_groups(const LongitudinalDataset& data, int g_min, int g_max,
                         int base_order, const FitControls& controls, int iorder = 0);

/// Coordinate search over per-group orders (q..5), one group at a time with
/// the others fixed, two full passes, keeping changes that raise BIC.
SweepResult refine_orders(const LongitudinalDataset& data, const FittedModel& start,
                          const FitControls& controls);

/// Row for a fitted model.
SweepRow make_sweep_row(const FittedModel& fitted);

}  // namespace gbtm

#endif  // GBTM_SELECTION_HPP
