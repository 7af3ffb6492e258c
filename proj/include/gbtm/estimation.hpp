#ifndef GBTM_ESTIMATION_HPP
#define GBTM_ESTIMATION_HPP

#include "gbtm/likelihood.hpp"
#include "gbtm/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace gbtm {

struct FitControls {
  int max_em_iterations = 500;
  double loglik_tolerance = 1e-7;
  int max_newton_iterations = 50;
  double ridge = 1e-8;
  std::uint64_t seed = 0;
  int n_restarts = 5;
  /// Quasi-Newton pass over all free parameters after EM converges.
  bool refine = true;
  /// Observed information (and its inverse) at the optimum, used by curve bands.
  bool compute_information = true;

  void validate() const;
  bool operator==(const FitControls&) const = default;
};

/// estimated: gamma coefficients are free parameters. none: gamma is pinned at
/// kNoInflationLogit (s < 1e-12), giving a plain Poisson mixture.
enum class InflationMode { estimated, none };

inline constexpr double kNoInflationLogit = -30.0;
inline constexpr int kDefaultMaxOrder = 5;

struct ModelSpec {
  std::vector<int> orders;  // one polynomial order per group
  int iorder = 0;
  InflationMode inflation = InflationMode::estimated;
  int max_order = kDefaultMaxOrder;
  std::optional<MixtureParams> start;

  static ModelSpec uniform(int n_groups, int order, int iorder = 0);

  int n_groups() const { return static_cast<int>(orders.size()); }
  void validate() const;
};

/// k = (G - 1) + sum_j (o_j + 1) + G (q + 1); the last term drops when the
/// inflation is not estimated.
int parameter_count(const ModelSpec& spec);

struct FittedModel {
  ModelSpec spec;
  MixtureParams params;
  double loglik = 0.0;
  int k = 0;
  double bic = 0.0;
  bool converged = false;
  std::string reason;
  std::vector<std::string> reason_trail;
  std::vector<std::string> warnings;
  Eigen::MatrixXd posteriors;  // N x G, rows follow subject_ids
  std::vector<std::string> subject_ids;
  std::vector<std::string> excluded_subjects;
  TimeAxis axis;
  int iterations_used = 0;
  std::uint64_t seed = 0;
  std::vector<double> loglik_trace;  // EM trajectory of the returned restart
  std::optional<Eigen::MatrixXd> covariance;  // inverse observed information

  int n_subjects() const { return static_cast<int>(posteriors.rows()); }
  int n_groups() const { return params.n_groups(); }
};

/// Quantile-band starting values: subjects ranked by total count (ties by id)
/// are split into G equal bands, each seeding one group. restart > 0 adds
/// N(0, 0.1^2) jitter drawn from a generator derived from (seed, restart).
MixtureParams initialize(const LongitudinalDataset& data, const ModelSpec& spec,
                         std::uint64_t seed, int restart = 0);

FittedModel fit(const LongitudinalDataset& data, const ModelSpec& spec,
                const FitControls& controls);

struct OutlierScreen {
  LongitudinalDataset kept;
  std::vector<std::string> excluded_ids;
};

/// Cuts the leading ranks 1..r of the descending totals, where r is the first
/// rank within the top ceil(top_fraction * N) such that
/// total_r > gap_factor * total_{r+1}.
OutlierScreen screen_outliers(const LongitudinalDataset& data, double gap_factor = 1.8,
                              double top_fraction = 0.01);

/// Free-parameter vector: theta_2..theta_G, then per group beta_j followed by
/// gamma_j (gamma omitted when inflation is none).
Eigen::VectorXd pack_parameters(const MixtureParams& params,
                                InflationMode mode = InflationMode::estimated);
MixtureParams unpack_parameters(const Eigen::VectorXd& x, const MixtureParams& shape,
                                InflationMode mode = InflationMode::estimated);

/// Analytic gradient of total_log_likelihood in the packed layout. Summation
/// is correctly rounded, so the result is exactly additive over subjects.
Eigen::VectorXd loglik_gradient(const LongitudinalDataset& data, const MixtureParams& params,
                                InflationMode mode = InflationMode::estimated);

/// Negative Hessian of the log-likelihood (packed layout) by central
/// differences of the analytic gradient.
Eigen::MatrixXd observed_information(const LongitudinalDataset& data,
                                     const MixtureParams& params,
                                     InflationMode mode = InflationMode::estimated);

/// G x T matrix of expected counts (1 - s_jt) lambda_jt.
Eigen::MatrixXd expected_counts(const MixtureParams& params, const TimeAxis& axis);

/// Expected count sum_t (1 - s_jt) lambda_jt per group.
Eigen::VectorXd expected_totals(const MixtureParams& params, const TimeAxis& axis);

/// Reorders groups by ascending expected total (stable). Returns the
/// permutation: new group k was old group perm[k].
std::vector<int> canonical_order(const MixtureParams& params, const TimeAxis& axis);
MixtureParams permute_groups(const MixtureParams& params, const std::vector<int>& perm);

}  // namespace gbtm

#endif  // GBTM_ESTIMATION_HPP
