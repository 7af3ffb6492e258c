#ifndef GBTM_LIKELIHOOD_HPP
#define GBTM_LIKELIHOOD_HPP

#include "gbtm/numerics.hpp"
#include "gbtm/types.hpp"

#include <cmath>
#include <limits>
#include <string_view>

namespace gbtm {

/// Largest |linear predictor| accepted for a log-rate before exp() overflows.
inline constexpr double kMaxLinearPredictor = 700.0;

template <typename Scalar>
Scalar horner(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& coef, Scalar x) {
  Scalar acc(0);
  for (Eigen::Index m = coef.size() - 1; m >= 0; --m) acc = acc * x + coef(m);
  return acc;
}

/// log P(y) under a zero-inflated Poisson with rate lambda and structural-zero
/// probability s. Returns -inf (never NaN) when s == 1 and y >= 1.
template <typename Scalar>
Scalar zip_log_pmf(int y, Scalar lambda, Scalar s) {
  using std::exp;
  using std::lgamma;
  using std::log;
  using std::log1p;
  constexpr Scalar ninf = -std::numeric_limits<Scalar>::infinity();
  const Scalar log_poisson_zero = -lambda;
  if (y == 0) {
    if (s <= Scalar(0)) return log_poisson_zero;
    if (s >= Scalar(1)) return Scalar(0);
    return log_add_exp(log(s), log1p(-s) + log_poisson_zero);
  }
  if (s >= Scalar(1)) return ninf;
  const Scalar log_keep = s <= Scalar(0) ? Scalar(0) : log1p(-s);
  return log_keep - lambda + Scalar(y) * log(lambda) - lgamma(Scalar(y) + Scalar(1));
}

/// Same density parameterised on the link scale: eta = log(lambda),
/// zeta = logit(s). Stable for any finite eta, zeta.
template <typename Scalar>
Scalar zip_log_pmf_link(int y, Scalar eta, Scalar zeta) {
  using std::exp;
  using std::lgamma;
  const Scalar lambda = exp(eta);
  if (y == 0) {
    // log(e^zeta + e^-lambda) - log(1 + e^zeta)
    return log_add_exp(zeta, -lambda) - log1pexp(zeta);
  }
  return -log1pexp(zeta) - lambda + Scalar(y) * eta - lgamma(Scalar(y) + Scalar(1));
}

template <typename Scalar>
Scalar poisson_log_pmf(int y, Scalar lambda) {
  using std::lgamma;
  using std::log;
  if (y == 0) return -lambda;
  return Scalar(y) * log(lambda) - lambda - lgamma(Scalar(y) + Scalar(1));
}

/// lambda_jt = exp(sum_m beta_m a_t^m). Throws NumericError naming the group
/// and period when the linear predictor exceeds kMaxLinearPredictor.
double group_rate(const GroupParams& g, int t_index, const TimeAxis& axis,
                  int group_index = 0);

/// s_jt = logistic(sum_m gamma_m a_t^m).
double zero_inflation(const GroupParams& g, int t_index, const TimeAxis& axis);

/// Per-period link-scale quantities of one group, precomputed for repeated
/// density evaluation over many subjects.
struct GroupTable {
  Eigen::VectorXd eta;       // log rate
  Eigen::VectorXd zeta;      // logit structural zero
  Eigen::VectorXd log_zero;  // log P(0)
  Eigen::VectorXd log_pos;   // log(1 - s) - lambda, the y-free part of log P(y > 0)
};

GroupTable make_group_table(const GroupParams& g, const TimeAxis& axis,
                            int group_index = 0);

/// sum_t lgamma(y_t + 1), the group-independent part of a row's density.
double row_log_factorial(const CountRow& row);

/// Log-density of a full row under one group, given its row_log_factorial.
double group_log_density(const CountRow& row, const GroupTable& table,
                         double log_factorial);

/// N x G matrix of per-subject, per-group log-densities log f_j(y_i).
Eigen::MatrixXd group_log_densities(const LongitudinalDataset& data,
                                    const MixtureParams& params);

double subject_log_likelihood(const CountRow& row, const MixtureParams& params,
                              const TimeAxis& axis,
                              std::string_view subject_id = {});

/// Sum over subjects; the sum is correctly rounded, hence exactly invariant
/// under any reordering of the subjects.
double total_log_likelihood(const LongitudinalDataset& data,
                            const MixtureParams& params);

Eigen::VectorXd posterior(const CountRow& row, const MixtureParams& params,
                          const TimeAxis& axis, std::string_view subject_id = {});

/// Normalises one row of log joint terms log(pi_j) + log f_j into posterior
/// probabilities. Returns the log marginal.
double normalize_posterior_row(const Eigen::Ref<const Eigen::RowVectorXd>& log_joint,
                               Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> out,
                               std::string_view subject_id);

/// Plain Poisson mixture log-likelihood (no inflation term), evaluated
/// directly from the rate polynomials. Gamma coefficients are ignored.
double poisson_mixture_log_likelihood(const LongitudinalDataset& data,
                                      const MixtureParams& params);

}  // namespace gbtm

#endif  // GBTM_LIKELIHOOD_HPP
