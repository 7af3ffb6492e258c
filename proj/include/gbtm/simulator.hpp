#ifndef GBTM_SIMULATOR_HPP
#define GBTM_SIMULATOR_HPP

#include "gbtm/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace gbtm {

/// Group-dependent covariate distributions. Row j of each probability matrix
/// belongs to group j; count covariates are 1 + Poisson(mean - 1) for authors
/// and pages, Poisson(mean) for references.
struct CovariateRule {
  std::vector<std::string> journals;
  Eigen::MatrixXd journal_probs;   // G x journals
  Eigen::MatrixXd doc_type_probs;  // G x 4 (article, review, letter, other)
  Eigen::VectorXd authors_mean;
  Eigen::VectorXd refs_mean;
  Eigen::VectorXd pages_mean;
};

struct Scenario {
  std::string name;
  MixtureParams truth;
  int n_subjects = 0;
  TimeAxis axis;
  std::optional<CovariateRule> covariates;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SimulatedData {
  LongitudinalDataset data;
  std::vector<int> assignments;  // true 0-based group per subject
};

/// Draws group ~ pi, then per period a structural zero with probability s_jt
/// or Poisson(lambda_jt). Each subject uses its own generator derived from
/// (seed, subject index), so the output is a pure function of the scenario.
SimulatedData generate(const Scenario& scenario);

/// Three constant-rate groups: lambda = (0.3, 2, 10), s = (0.3, 0.1, 0.02),
/// pi = (0.5, 0.3, 0.2). Covariates are independent of the group.
Scenario scenario_s1(std::uint64_t seed, int n_subjects = 1000, int periods = 16);

/// S1 trajectories with covariates that depend on the group: higher groups
/// have more authors, references and pages and favour particular journals.
Scenario scenario_s2(std::uint64_t seed, int n_subjects = 1000, int periods = 16);

/// One Poisson group with constant rate and no zero inflation.
Scenario scenario_homogeneous(std::uint64_t seed, double rate = 3.0, int n_subjects = 1000,
                              int periods = 16);

struct CanonicalCurve {
  std::string name;
  std::vector<double> values;
};

/// Deterministic 16-period reference shapes: C-transient, C-sticky,
/// C-sleeper and C-low.
std::vector<CanonicalCurve> canonical_curves();
const CanonicalCurve& canonical_curve(const std::string& name);

}  // namespace gbtm

#endif  // GBTM_SIMULATOR_HPP
