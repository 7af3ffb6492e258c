#ifndef GBTM_TESTS_FIXTURES_HPP
#define GBTM_TESTS_FIXTURES_HPP

#include "gbtm/types.hpp"

#include <random>
#include <string>
#include <vector>

namespace fixtures {

inline gbtm::LongitudinalDataset dataset(const std::vector<std::vector<int>>& rows, long long first = 1) {
  gbtm::LongitudinalDataset d;
  const int T = static_cast<int>(rows.front().size());
  d.axis = gbtm::TimeAxis::consecutive(T, first);
  d.counts.resize(static_cast<Eigen::Index>(rows.size()), T);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int t = 0; t < T; ++t) d.counts(static_cast<Eigen::Index>(i), t) = rows[i][t];
    d.subject_ids.push_back("s" + std::to_string(1000 + i));
  }
  return d;
}

/// Rows whose totals are exactly the given values, spread over T periods.
inline gbtm::LongitudinalDataset with_totals(const std::vector<int>& totals, int T = 4) {
  std::vector<std::vector<int>> rows;
  for (int tot : totals) {
    std::vector<int> r(T, tot / T);
    r[0] += tot % T;
    rows.push_back(r);
  }
  return dataset(rows);
}

inline gbtm::GroupParams group(std::vector<double> beta, std::vector<double> gamma) {
  gbtm::GroupParams g;
  g.beta = Eigen::Map<Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
  g.gamma = Eigen::Map<Eigen::VectorXd>(gamma.data(), static_cast<Eigen::Index>(gamma.size()));
  return g;
}

inline gbtm::MixtureParams random_params(std::uint64_t seed, int G, int order, int iorder) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.5);
  gbtm::MixtureParams p;
  p.theta = Eigen::VectorXd::Zero(G);
  for (int j = 0; j < G; ++j) {
    gbtm::GroupParams g;
    g.beta = Eigen::VectorXd(order + 1);
    g.gamma = Eigen::VectorXd(iorder + 1);
    for (auto& v : g.beta) v = n(rng);
    g.beta(0) += 0.8 * j;
    for (auto& v : g.gamma) v = n(rng) - 1.0;
    if (j > 0) p.theta(j) = n(rng);
    p.groups.push_back(g);
  }
  return p;
}

struct Toy {
  Eigen::MatrixXd X;
  std::vector<int> labels;  // 1-based
};

// Classes drawn from a known multinomial logit on one or more normal predictors.
inline Toy multinomial_toy(std::uint64_t seed, int n, const Eigen::MatrixXd& truth) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Eigen::Index K = truth.rows(), p = truth.cols();
  Toy toy;
  toy.X.resize(n, p - 1);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd zi(p);
    zi(0) = 1.0;
    for (Eigen::Index c = 1; c < p; ++c) zi(c) = toy.X(i, c - 1) = z(rng);
    const Eigen::VectorXd eta = truth * zi;
    const Eigen::ArrayXd w = (eta.array() - eta.maxCoeff()).exp();
    double draw = u(rng) * w.sum();
    int k = 0;
    while (k + 1 < K && draw >= w(k)) draw -= w(k++);
    toy.labels.push_back(k + 1);
  }
  return toy;
}

inline Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& X) {
  Eigen::MatrixXd Z(X.rows(), X.cols() + 1);
  Z.col(0).setOnes();
  Z.rightCols(X.cols()) = X;
  return Z;
}

}  // namespace fixtures

#endif  // GBTM_TESTS_FIXTURES_HPP
