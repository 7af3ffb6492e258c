#include "gbtm/likelihood.hpp"

#include <string>

namespace gbtm {

namespace {

void check_period(int t_index, const TimeAxis& axis) {
  if (t_index < 1 || t_index > axis.size())
    throw ValidationError("period index " + std::to_string(t_index) + " outside 1.." +
                          std::to_string(axis.size()));
}

std::string subject_label(std::string_view id) {
  return id.empty() ? std::string("<unnamed>") : std::string(id);
}

}  // namespace

double group_rate(const GroupParams& g, int t_index, const TimeAxis& axis,
                  int group_index) {
  check_period(t_index, axis);
  const double eta = horner<double>(g.beta, axis.at(t_index));
  if (!(std::abs(eta) <= kMaxLinearPredictor))
    throw NumericError("log-rate " + std::to_string(eta) + " out of range for group " +
                       std::to_string(group_index + 1) + ", period " +
                       std::to_string(t_index) + " (" +
                       std::to_string(axis.labels()[t_index - 1]) + ")");
  return std::exp(eta);
}

double zero_inflation(const GroupParams& g, int t_index, const TimeAxis& axis) {
  check_period(t_index, axis);
  return logistic(horner<double>(g.gamma, axis.at(t_index)));
}

GroupTable make_group_table(const GroupParams& g, const TimeAxis& axis, int group_index) {
  const int T = axis.size();
  GroupTable table;
  table.eta.resize(T);
  table.zeta.resize(T);
  table.log_zero.resize(T);
  table.log_pos.resize(T);
  for (int t = 0; t < T; ++t) {
    const double a = axis.internal()(t);
    const double eta = horner<double>(g.beta, a);
    if (!(std::abs(eta) <= kMaxLinearPredictor))
      throw NumericError("log-rate " + std::to_string(eta) + " out of range for group " +
                         std::to_string(group_index + 1) + ", period " +
                         std::to_string(t + 1) + " (" + std::to_string(axis.labels()[t]) + ")");
    const double zeta = horner<double>(g.gamma, a);
    const double lambda = std::exp(eta);
    table.eta(t) = eta;
    table.zeta(t) = zeta;
    table.log_zero(t) = log_add_exp(zeta, -lambda) - log1pexp(zeta);
    table.log_pos(t) = -log1pexp(zeta) - lambda;
  }
  return table;
}

double row_log_factorial(const CountRow& row) {
  double acc = 0.0;
  for (Eigen::Index t = 0; t < row.size(); ++t) {
    if (row(t) > 1) acc += std::lgamma(row(t) + 1.0);
  }
  return acc;
}

double group_log_density(const CountRow& row, const GroupTable& table,
                         double log_factorial) {
  double acc = -log_factorial;
  for (Eigen::Index t = 0; t < row.size(); ++t) {
    const int y = row(t);
    acc += y == 0 ? table.log_zero(t) : table.log_pos(t) + y * table.eta(t);
  }
  return acc;
}

Eigen::MatrixXd group_log_densities(const LongitudinalDataset& data,
                                    const MixtureParams& params) {
  const int G = params.n_groups();
  std::vector<GroupTable> tables;
  tables.reserve(G);
  for (int j = 0; j < G; ++j) tables.push_back(make_group_table(params.groups[j], data.axis, j));
  Eigen::MatrixXd out(data.n_subjects(), G);
  for (int i = 0; i < data.n_subjects(); ++i) {
    const auto row = data.counts.row(i);
    const double lf = row_log_factorial(row);
    for (int j = 0; j < G; ++j) out(i, j) = group_log_density(row, tables[j], lf);
  }
  return out;
}

double normalize_posterior_row(const Eigen::Ref<const Eigen::RowVectorXd>& log_joint,
                               Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> out,
                               std::string_view subject_id) {
  const double lse = log_sum_exp(log_joint);
  if (!std::isfinite(lse))
    throw NumericError("subject " + subject_label(subject_id) +
                       ": every group assigns zero probability");
  out = (log_joint.array() - lse).exp();
  out /= out.sum();
  return lse;
}

namespace {

Eigen::RowVectorXd log_joint_row(const CountRow& row, const MixtureParams& params,
                                 const TimeAxis& axis) {
  params.validate();
  if (row.size() != axis.size())
    throw ValidationError("row length " + std::to_string(row.size()) +
                          " differs from time axis length " + std::to_string(axis.size()));
  const int G = params.n_groups();
  const Eigen::VectorXd log_w = params.weights().array().log();
  const double lf = row_log_factorial(row);
  Eigen::RowVectorXd lj(G);
  for (int j = 0; j < G; ++j)
    lj(j) = log_w(j) + group_log_density(row, make_group_table(params.groups[j], axis, j), lf);
  return lj;
}

}  // namespace

double subject_log_likelihood(const CountRow& row, const MixtureParams& params,
                              const TimeAxis& axis, std::string_view subject_id) {
  const Eigen::RowVectorXd lj = log_joint_row(row, params, axis);
  const double lse = log_sum_exp(lj);
  if (!std::isfinite(lse))
    throw NumericError("subject " + subject_label(subject_id) +
                       ": every group assigns zero probability");
  return lse;
}

Eigen::VectorXd posterior(const CountRow& row, const MixtureParams& params,
                          const TimeAxis& axis, std::string_view subject_id) {
  const Eigen::RowVectorXd lj = log_joint_row(row, params, axis);
  Eigen::RowVectorXd p(lj.size());
  normalize_posterior_row(lj, p, subject_id);
  return p.transpose();
}

double total_log_likelihood(const LongitudinalDataset& data, const MixtureParams& params) {
  data.validate();
  params.validate();
  const Eigen::MatrixXd dens = group_log_densities(data, params);
  const Eigen::RowVectorXd log_w = params.weights().array().log().transpose();
  ExactSum acc;
  for (int i = 0; i < data.n_subjects(); ++i) {
    const double lse = log_sum_exp((dens.row(i) + log_w).eval());
    if (!std::isfinite(lse))
      throw NumericError("subject " + subject_label(data.subject_ids[i]) +
                         ": every group assigns zero probability");
    acc.add(lse);
  }
  return acc.value();
}

double poisson_mixture_log_likelihood(const LongitudinalDataset& data,
                                      const MixtureParams& params) {
  data.validate();
  params.validate();
  const int G = params.n_groups();
  const int T = data.n_periods();
  const Eigen::VectorXd w = params.weights();
  ExactSum acc;
  for (int i = 0; i < data.n_subjects(); ++i) {
    Eigen::VectorXd terms(G);
    for (int j = 0; j < G; ++j) {
      double s = std::log(w(j));
      for (int t = 1; t <= T; ++t)
        s += poisson_log_pmf(data.counts(i, t - 1), group_rate(params.groups[j], t, data.axis, j));
      terms(j) = s;
    }
    acc.add(log_sum_exp(terms));
  }
  return acc.value();
}

}  // namespace gbtm
