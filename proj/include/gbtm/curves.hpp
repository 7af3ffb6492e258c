#ifndef GBTM_CURVES_HPP
#define GBTM_CURVES_HPP

#include "gbtm/estimation.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace gbtm {

enum class BandMethod { delta, bootstrap };

std::string to_string(BandMethod method);
BandMethod parse_band_method(const std::string& text);

enum class Shape { sticky, transient, sleeping_beauty, low, plateau_mixed };

std::string to_string(Shape shape);

struct ShapeThresholds {
  double low_max = 1.0;           // curves whose maximum is below this are `low`
  double sleeper_early = 0.3;     // early ratio ceiling for sleeping beauties
  double sleeper_peak = 0.6;      // peak no earlier than this fraction of T
  double transient_peak = 0.4;    // peak no later than this fraction of T
  double transient_tail = 0.4;    // tail ratio ceiling for transients
  double sticky_tail = 0.6;       // tail ratio floor for sticky curves
  int window = 3;                 // periods averaged for early / tail ratios

  bool operator==(const ShapeThresholds&) const = default;
};

struct ShapeLabel {
  Shape shape = Shape::plateau_mixed;
  int peak_period = 0;  // 1-based, first maximum
  double tail_ratio = 0.0;
  double early_ratio = 0.0;
  std::string warning;
};

/// Rule set, checked in order: low (max < low_max); sleeping beauty
/// (e <= sleeper_early and p >= sleeper_peak T); transient (p <= transient_peak T
/// and r <= transient_tail); sticky (r >= sticky_tail); otherwise plateau/mixed.
/// Curves shorter than 10 periods are labelled plateau/mixed with a warning.
ShapeLabel classify_shape(std::span<const double> curve,
                          const ShapeThresholds& thresholds = {});

struct PolynomialRefit {
  Eigen::VectorXd coefficients;
  double r_squared = 0.0;
};

/// Least squares of the values on powers of the normalised time axis
/// a_t = (t-1)/(T-1). A zero-variance curve has R^2 = 1 when the residuals
/// vanish and 0 otherwise.
PolynomialRefit polynomial_refit(std::span<const double> curve, int order);

struct TrajectoryCurve {
  int group = 0;  // 1-based
  Eigen::VectorXd estimate;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  double weighted_share = 0.0;
  std::optional<double> app;
  ShapeLabel shape;
};

struct CurveOptions {
  BandMethod method = BandMethod::delta;
  int bootstrap_replicates = 200;
  std::uint64_t seed = 0;
  FitControls refit_controls;  // used for bootstrap refits
  ShapeThresholds thresholds;
};

struct CurveSet {
  std::vector<TrajectoryCurve> curves;
  BandMethod method_used = BandMethod::delta;
  std::vector<std::string> warnings;
};

/// Per-group rate curves lambda_jt with 95% bands on the log scale,
/// exp(eta_jt +- 1.96 sd). The delta method reads sd from the stored inverse
/// observed information; a missing or unusable information matrix falls back
/// to a parametric bootstrap. Throws ValidationError for non-converged fits.
CurveSet curves(const FittedModel& fitted, const CurveOptions& options = {});

/// Standard deviation of eta_jt for every group and period from a packed
/// covariance matrix.
Eigen::MatrixXd delta_log_rate_sd(const FittedModel& fitted, const Eigen::MatrixXd& covariance);

struct CorrelationTest {
  double coefficient = 0.0;
  double p_value = 1.0;
};

struct PercentileComparison {
  std::vector<double> gbtm_cumulative;  // percent, most-cited group first
  std::vector<double> nsf_cumulative;   // percent: 1, 5, 10, 25, 50, 100
  CorrelationTest pearson;
  CorrelationTest spearman;
  std::vector<int> class_counts;        // subjects per NSF class, top-1% first
  std::vector<std::string> warnings;
};

inline const std::vector<double> kNsfBounds = {1.0, 5.0, 10.0, 25.0, 50.0, 100.0};

CorrelationTest pearson_test(std::span<const double> x, std::span<const double> y);
/// Spearman correlation with average ranks for ties.
CorrelationTest spearman_test(std::span<const double> x, std::span<const double> y);

/// Compares cumulative group shares (percent, most-cited first) to bounds.
PercentileComparison compare_cumulative_shares(std::span<const double> cumulative,
                                               std::span<const double> bounds = kNsfBounds);

/// NSF percentile class (0 = top 1%, ..., 5 = bottom 50%) of every subject by
/// cumulative count; tied totals share their average rank.
std::vector<int> nsf_classes(std::span<const double> totals);

/// Cumulative weighted group shares (groups ordered least to most cited)
/// against the NSF class bounds. With G != 6 the first G - 1 cumulative shares
/// are paired with the first G - 1 bounds and the final 100% with 100%.
PercentileComparison percentile_class_comparison(std::span<const double> totals,
                                                 const Eigen::VectorXd& weighted_sizes);

}  // namespace gbtm

#endif  // GBTM_CURVES_HPP
