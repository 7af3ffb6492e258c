#include "gbtm/simulator.hpp"

#include "gbtm/likelihood.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <iomanip>

namespace gbtm {

namespace {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

int draw_category(std::mt19937_64& rng, const Eigen::RowVectorXd& probs) {
  const double u = uniform01(rng) * probs.sum();
  double acc = 0.0;
  for (Eigen::Index k = 0; k < probs.size(); ++k) {
    acc += probs(k);
    if (u < acc) return static_cast<int>(k);
  }
  return static_cast<int>(probs.size()) - 1;
}

int draw_poisson(std::mt19937_64& rng, double mean) {
  if (!(mean > 0.0)) return 0;
  std::poisson_distribution<int> pois(mean);
  return pois(rng);
}

std::string subject_id(int i, int n) {
  int width = 1;
  for (int m = n; m >= 10; m /= 10) ++width;
  std::ostringstream os;
  os << "s" << std::setw(width) << std::setfill('0') << (i + 1);
  return os.str();
}

GroupParams constant_group(double rate, double inflation) {
  GroupParams g;
  g.beta = Eigen::VectorXd::Constant(1, std::log(rate));
  g.gamma = Eigen::VectorXd::Constant(1, std::log(inflation / (1.0 - inflation)));
  return g;
}

MixtureParams s1_truth() {
  MixtureParams p;
  p.groups = {constant_group(0.3, 0.3), constant_group(2.0, 0.1), constant_group(10.0, 0.02)};
  p.theta = weights_to_theta(Eigen::Vector3d(0.5, 0.3, 0.2));
  return p;
}

CovariateRule neutral_covariates(int groups) {
  CovariateRule rule;
  rule.journals = {"J1", "J2", "J3"};
  rule.journal_probs = Eigen::MatrixXd::Constant(groups, 3, 1.0 / 3.0);
  rule.doc_type_probs = Eigen::MatrixXd(groups, 4);
  for (int j = 0; j < groups; ++j) rule.doc_type_probs.row(j) << 0.85, 0.05, 0.08, 0.02;
  rule.authors_mean = Eigen::VectorXd::Constant(groups, 4.0);
  rule.refs_mean = Eigen::VectorXd::Constant(groups, 25.0);
  rule.pages_mean = Eigen::VectorXd::Constant(groups, 8.0);
  return rule;
}

}  // namespace

void Scenario::validate() const {
  truth.validate();
  if (n_subjects < truth.n_groups())
    throw ValidationError("scenario needs at least as many subjects as groups");
  if (axis.size() < 2) throw ValidationError("scenario needs a time axis");
  if (covariates) {
    const auto G = truth.n_groups();
    const auto& c = *covariates;
    if (c.journal_probs.rows() != G || c.doc_type_probs.rows() != G ||
        c.doc_type_probs.cols() != 4 || c.authors_mean.size() != G ||
        c.refs_mean.size() != G || c.pages_mean.size() != G ||
        c.journal_probs.cols() != static_cast<Eigen::Index>(c.journals.size()))
      throw ValidationError("covariate rule shape does not match the scenario");
  }
}

SimulatedData generate(const Scenario& scenario) {
  scenario.validate();
  const int N = scenario.n_subjects;
  const int T = scenario.axis.size();
  const int G = scenario.truth.n_groups();
  const Eigen::RowVectorXd pi = scenario.truth.weights().transpose();

  Eigen::MatrixXd rate(G, T), zero(G, T);
  for (int j = 0; j < G; ++j) {
    for (int t = 1; t <= T; ++t) {
      rate(j, t - 1) = group_rate(scenario.truth.groups[j], t, scenario.axis, j);
      zero(j, t - 1) = zero_inflation(scenario.truth.groups[j], t, scenario.axis);
    }
  }
  const CovariateRule rule = scenario.covariates ? *scenario.covariates : neutral_covariates(G);

  SimulatedData out;
  out.data.axis = scenario.axis;
  out.data.counts.resize(N, T);
  out.assignments.resize(N);
  for (int i = 0; i < N; ++i) {
    std::mt19937_64 rng(mix64(scenario.seed ^ mix64(static_cast<std::uint64_t>(i) + 1)));
    const int j = draw_category(rng, pi);
    out.assignments[i] = j;
    for (int t = 0; t < T; ++t) {
      const bool structural = uniform01(rng) < zero(j, t);
      out.data.counts(i, t) = structural ? 0 : draw_poisson(rng, rate(j, t));
    }
    Covariates cov;
    cov.journal = rule.journals[draw_category(rng, rule.journal_probs.row(j))];
    cov.doc_type = static_cast<DocType>(draw_category(rng, rule.doc_type_probs.row(j)));
    cov.n_authors = 1 + draw_poisson(rng, rule.authors_mean(j) - 1.0);
    cov.n_refs = draw_poisson(rng, rule.refs_mean(j));
    cov.n_pages = 1 + draw_poisson(rng, rule.pages_mean(j) - 1.0);
    out.data.covariates.push_back(std::move(cov));
    out.data.subject_ids.push_back(subject_id(i, N));
  }
  return out;
}

Scenario scenario_s1(std::uint64_t seed, int n_subjects, int periods) {
  Scenario s;
  s.name = "S1";
  s.truth = s1_truth();
  s.n_subjects = n_subjects;
  s.axis = TimeAxis::consecutive(periods, 1996);
  s.seed = seed;
  return s;
}

Scenario scenario_s2(std::uint64_t seed, int n_subjects, int periods) {
  Scenario s = scenario_s1(seed, n_subjects, periods);
  s.name = "S2";
  CovariateRule rule;
  rule.journals = {"J1", "J2", "J3", "J4"};
  rule.journal_probs.resize(3, 4);
  rule.journal_probs << 0.45, 0.35, 0.15, 0.05,
                        0.20, 0.30, 0.35, 0.15,
                        0.05, 0.15, 0.30, 0.50;
  rule.doc_type_probs.resize(3, 4);
  rule.doc_type_probs << 0.80, 0.02, 0.15, 0.03,
                         0.85, 0.07, 0.06, 0.02,
                         0.78, 0.18, 0.02, 0.02;
  rule.authors_mean = Eigen::Vector3d(2.5, 4.0, 6.5);
  rule.refs_mean = Eigen::Vector3d(18.0, 26.0, 38.0);
  rule.pages_mean = Eigen::Vector3d(5.0, 7.0, 9.0);
  s.covariates = rule;
  return s;
}

Scenario scenario_homogeneous(std::uint64_t seed, double rate, int n_subjects, int periods) {
  Scenario s;
  s.name = "homogeneous";
  GroupParams g;
  g.beta = Eigen::VectorXd::Constant(1, std::log(rate));
  g.gamma = Eigen::VectorXd::Constant(1, -30.0);
  s.truth.groups = {g};
  s.truth.theta = Eigen::VectorXd::Zero(1);
  s.n_subjects = n_subjects;
  s.axis = TimeAxis::consecutive(periods, 1996);
  s.seed = seed;
  return s;
}

std::vector<CanonicalCurve> canonical_curves() {
  constexpr int T = 16;
  CanonicalCurve transient{"C-transient", {}};
  CanonicalCurve sticky{"C-sticky", {}};
  CanonicalCurve sleeper{"C-sleeper", {}};
  CanonicalCurve low{"C-low", std::vector<double>(T, 0.3)};
  const double peak = 10.0;
  for (int t = 1; t <= T; ++t) {
    // rise to the peak at t = 3, then geometric decay 0.7 per period
    transient.values.push_back(t <= 3 ? peak * (0.2 + 0.4 * (t - 1)) : peak * std::pow(0.7, t - 3));
    // rise to the peak at t = 4, then settle toward 70% of it
    sticky.values.push_back(t <= 4 ? peak * 0.25 * t
                                   : peak * (0.7 + 0.3 * std::pow(0.5, t - 4)));
    // dormant through t = 8, rising afterwards
    sleeper.values.push_back(t <= 8 ? 0.05 : 1.0 * (t - 8));
  }
  return {transient, sticky, sleeper, low};
}

const CanonicalCurve& canonical_curve(const std::string& name) {
  static const std::vector<CanonicalCurve> curves = canonical_curves();
  for (const auto& c : curves)
    if (c.name == name) return c;
  throw ValidationError("unknown canonical curve '" + name + "'");
}

}  // namespace gbtm
