#ifndef GBTM_IO_HPP
#define GBTM_IO_HPP

#include "gbtm/covariates.hpp"
#include "gbtm/curves.hpp"
#include "gbtm/estimation.hpp"
#include "gbtm/selection.hpp"
#include "gbtm/simulator.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gbtm {

/// Shortest text that reads back to the same double; "nan", "inf", "-inf"
/// for non-finite values. Independent of the global locale.
std::string format_number(double value);

/// Whole-file read and atomic (temporary + rename) write. Errors name the path.
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

/// 64-bit FNV-1a, as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view bytes);

// ---------------------------------------------------------------- dataset

/// Header: id,doc_type,journal,n_authors,n_refs,n_pages,y<label1>,...,y<labelT>.
/// Fields may be double-quoted. Errors are ParseErrors with the line number
/// and column name.
LongitudinalDataset parse_dataset_text(std::string_view text, const std::string& source = "<input>");
LongitudinalDataset parse_dataset(const std::string& path);

std::string format_dataset(const LongitudinalDataset& data);
void write_dataset(const LongitudinalDataset& data, const std::string& path);

struct DatasetSummary {
  int n_subjects = 0;
  int n_periods = 0;
  std::int64_t total_citations = 0;
  double zero_row_share = 0.0;  // fraction of subjects with no counts at all
  std::map<std::string, int> by_journal;
  std::map<DocType, int> by_doc_type;  // all four types, zeros included
};

DatasetSummary summarize(const LongitudinalDataset& data);
std::string format_summary_csv(const DatasetSummary& summary);

// ----------------------------------------------------------------- config

struct OutlierRule {
  bool enabled = false;
  double gap_factor = 1.8;
  double top_fraction = 0.01;

  bool operator==(const OutlierRule&) const = default;
};

/// Simulation keys. `scenario` is s1, s2, homogeneous or custom; custom uses
/// one constant rate, inflation probability and weight per group.
struct SimulationConfig {
  std::string scenario = "s1";
  int n_subjects = 1000;
  int periods = 16;
  long long first_label = 1996;
  double homogeneous_rate = 3.0;
  std::vector<double> rates;
  std::vector<double> inflation;
  std::vector<double> weights;

  bool operator==(const SimulationConfig&) const = default;
};

struct AnalysisConfig {
  std::string model = "zip";
  std::optional<int> ngroups;
  std::vector<int> order;  // empty: cubic for every group
  int iorder = 0;
  int max_order = kDefaultMaxOrder;
  FitControls controls;
  OutlierRule outliers;
  ShapeThresholds shape;
  BandMethod bands = BandMethod::delta;
  int bootstrap_replicates = 200;
  std::optional<std::uint64_t> seed;
  std::optional<int> reference;  // regression reference group, 1-based
  SimulationConfig simulation;

  /// Spec for `ngroups` groups; throws when ngroups is unset.
  ModelSpec model_spec() const;
  void validate() const;
  bool operator==(const AnalysisConfig&) const = default;
};

inline constexpr int kDefaultSweepOrder = 3;

/// `key = value` lines, `#` comments, integer or real lists in brackets.
/// A scalar order applies to every group. Unknown keys, type mismatches and
/// an order list whose length differs from ngroups raise ParseError.
AnalysisConfig parse_config_text(std::string_view text, const std::string& source = "<input>");
AnalysisConfig parse_config(const std::string& path);

/// Canonical form: every key in a fixed order, unset optionals omitted.
std::string format_config(const AnalysisConfig& config);
void write_config(const AnalysisConfig& config, const std::string& path);

Scenario scenario_from_config(const AnalysisConfig& config, std::uint64_t seed);

// ----------------------------------------------------------------- models

std::string format_model_json(const FittedModel& fitted);
FittedModel parse_model_json(std::string_view text, const std::string& source = "<input>");
void save_model(const FittedModel& fitted, const std::string& path);
FittedModel load_model(const std::string& path);

// ---------------------------------------------------------------- reports

std::string format_sweep_csv(const SweepResult& sweep);
std::string format_sweep_json(const SweepResult& sweep);
std::string format_curves_csv(const CurveSet& curves, const TimeAxis& axis);
std::string format_regression_csv(const RegressionResult& regression);
std::string format_chisq_csv(const std::vector<std::pair<std::string, ChiSquareResult>>& tests);
std::string format_classification_csv(const std::vector<ClassificationTable>& tables);
std::string format_assignments_csv(const FittedModel& fitted);
std::string format_adequacy_csv(const AdequacyReport& report);

}  // namespace gbtm

#endif  // GBTM_IO_HPP
