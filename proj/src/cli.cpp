#include "gbtm/cli.hpp"

#include "gbtm/covariates.hpp"
#include "gbtm/curves.hpp"
#include "gbtm/estimation.hpp"
#include "gbtm/io.hpp"
#include "gbtm/selection.hpp"
#include "gbtm/simulator.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>

namespace gbtm::cli {

namespace {

namespace fs = std::filesystem;

struct Options {
  std::string data;
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::string model;
  std::string groups;
  std::string bands;
};

// One invocation's inputs, outputs and manifest bookkeeping.
class Run {
 public:
  Run(std::string command, const Options& opts, std::ostream& out)
      : command_(std::move(command)), opts_(opts), out_(out) {
    if (!opts_.config.empty()) {
      const std::string text = read_text_file(opts_.config);
      config_hash_ = fnv1a_hex(text);
      config_ = parse_config_text(text, opts_.config);
    }
    seed_ = opts_.seed ? *opts_.seed : config_.seed.value_or(0);
    std::error_code ec;
    fs::create_directories(opts_.out, ec);
    if (ec || !fs::is_directory(opts_.out))
      throw ValidationError("cannot create output directory '" + opts_.out + "'");
  }

  const AnalysisConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  std::ostream& out() { return out_; }

  FitControls controls() const {
    FitControls c = config_.controls;
    c.seed = seed_;
    return c;
  }

  const LongitudinalDataset& data() {
    if (!data_) {
      if (opts_.data.empty()) throw ValidationError(command_ + " needs --data PATH");
      const std::string text = read_text_file(opts_.data);
      data_hash_ = fnv1a_hex(text);
      data_ = parse_dataset_text(text, opts_.data);
    }
    return *data_;
  }

  /// The model from --model, or a fit of --data under the config spec.
  const FittedModel& model() {
    if (model_) return *model_;
    if (!opts_.model.empty()) {
      const std::string text = read_text_file(opts_.model);
      model_hash_ = fnv1a_hex(text);
      model_ = parse_model_json(text, opts_.model);
      return *model_;
    }
    if (!config_.ngroups)
      throw ValidationError(command_ + " needs --model PATH or a config with ngroups");
    const ModelSpec spec = config_.model_spec();
    const LongitudinalDataset& all = data();
    if (config_.outliers.enabled) {
      OutlierScreen screen =
          screen_outliers(all, config_.outliers.gap_factor, config_.outliers.top_fraction);
      model_ = fit(screen.kept, spec, controls());
      model_->excluded_subjects = screen.excluded_ids;
    } else {
      model_ = fit(all, spec, controls());
    }
    fitted_here_ = true;
    return *model_;
  }

  bool fitted_here() const { return fitted_here_; }

  /// Rows of the dataset matching the model's subjects, with 1-based groups.
  std::pair<LongitudinalDataset, std::vector<int>> assigned_subjects() {
    const FittedModel& m = model();
    const LongitudinalDataset& all = data();
    std::map<std::string, int> row_of;
    for (int i = 0; i < all.n_subjects(); ++i) row_of[all.subject_ids[i]] = i;
    const std::vector<int> groups = assign_groups(m.posteriors);
    std::vector<int> rows, labels;
    for (int i = 0; i < m.n_subjects(); ++i) {
      const auto it = row_of.find(m.subject_ids[i]);
      if (it == row_of.end())
        throw ValidationError("model subject '" + m.subject_ids[i] + "' is not in '" + opts_.data + "'");
      rows.push_back(it->second);
      labels.push_back(groups[i] + 1);
    }
    return {all.subset(rows), labels};
  }

  void write(const std::string& name, const std::string& content) {
    write_text_file((fs::path(opts_.out) / name).string(), content);
    outputs_.push_back(name);
  }

  void save_fitted_model() {
    if (fitted_here_) write("model.json", format_model_json(*model_));
  }

  int finish(int status, const std::string& reason = {}) {
    nlohmann::ordered_json j;
    j["command"] = command_;
    j["version"] = kVersion;
    j["seed"] = seed_;
    j["config_hash"] = config_hash_.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(config_hash_);
    j["dataset_hash"] = data_hash_.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(data_hash_);
    if (!model_hash_.empty()) j["model_hash"] = model_hash_;
    j["outputs"] = outputs_;
    j["exit_status"] = status;
    if (!reason.empty()) j["reason"] = reason;
    write_text_file((fs::path(opts_.out) / "manifest.json").string(), j.dump(1) + "\n");
    return status;
  }

 private:
  std::string command_;
  Options opts_;
  std::ostream& out_;
  AnalysisConfig config_;
  std::uint64_t seed_ = 0;
  std::string config_hash_, data_hash_, model_hash_;
  std::optional<LongitudinalDataset> data_;
  std::optional<FittedModel> model_;
  bool fitted_here_ = false;
  std::vector<std::string> outputs_;
};

int not_converged(Run& run, const FittedModel& m) {
  run.out() << "not converged: " << m.reason << "\n";
  return run.finish(kExitNotConverged, m.reason);
}

int cmd_fit(Run& run) {
  const FittedModel& m = run.model();
  run.save_fitted_model();
  run.write("assignments.csv", format_assignments_csv(m));
  run.write("adequacy.csv", format_adequacy_csv(adequacy(m)));
  run.out() << "G=" << m.n_groups() << " loglik=" << format_number(m.loglik)
            << " bic=" << format_number(m.bic) << " reason=" << m.reason << "\n";
  if (!m.converged) return not_converged(run, m);
  return run.finish(kExitOk);
}

std::pair<int, int> parse_group_range(const std::string& text) {
  const auto dots = text.find("..");
  int lo = 0, hi = 0;
  std::size_t used_lo = 0, used_hi = 0;
  try {
    if (dots == std::string::npos) throw std::invalid_argument("range");
    lo = std::stoi(text.substr(0, dots), &used_lo);
    hi = std::stoi(text.substr(dots + 2), &used_hi);
  } catch (const std::exception&) {
    throw ValidationError("--groups expects MIN..MAX, got '" + text + "'");
  }
  if (used_lo != dots || used_hi != text.size() - dots - 2 || lo < 1 || hi < lo)
    throw ValidationError("--groups expects MIN..MAX with 1 <= MIN <= MAX, got '" + text + "'");
  return {lo, hi};
}

int cmd_sweep(Run& run, const Options& opts) {
  const AnalysisConfig& cfg = run.config();
  int lo = 1, hi = cfg.ngroups.value_or(5);
  if (!opts.groups.empty()) std::tie(lo, hi) = parse_group_range(opts.groups);
  int order = kDefaultSweepOrder;
  if (!cfg.order.empty()) {
    order = cfg.order.front();
    if (std::any_of(cfg.order.begin(), cfg.order.end(), [&](int o) { return o != order; }))
      throw ValidationError("sweep needs one order shared by every group");
  }
  const LongitudinalDataset& data = run.data();
  if (hi > data.n_subjects()) throw ValidationError("--groups maximum exceeds the number of subjects");
  const SweepResult sweep = sweep_groups(data, lo, hi, order, run.controls(), cfg.iorder);
  run.write("sweep.csv", format_sweep_csv(sweep));
  run.write("sweep.json", format_sweep_json(sweep));
  if (!sweep.recommended) {
    run.out() << "no converged model in the sweep\n";
    return run.finish(kExitNotConverged, "no converged model");
  }
  run.out() << "recommended G=" << sweep.rows[*sweep.recommended].n_groups << "\n";
  return run.finish(kExitOk);
}

int cmd_curves(Run& run, const Options& opts) {
  const FittedModel& m = run.model();
  run.save_fitted_model();
  if (!m.converged) return not_converged(run, m);
  CurveOptions co;
  co.method = opts.bands.empty() ? run.config().bands : parse_band_method(opts.bands);
  co.bootstrap_replicates = run.config().bootstrap_replicates;
  co.seed = run.seed();
  co.refit_controls = run.controls();
  co.thresholds = run.config().shape;
  const CurveSet set = curves(m, co);
  run.write("curves.csv", format_curves_csv(set, m.axis));
  for (const auto& w : set.warnings) run.out() << "warning: " << w << "\n";
  return run.finish(kExitOk);
}

int cmd_classify(Run& run) {
  const FittedModel& m = run.model();
  run.save_fitted_model();
  run.write("assignments.csv", format_assignments_csv(m));
  const AdequacyReport rep = adequacy(m);
  run.write("adequacy.csv", format_adequacy_csv(rep));
  run.out() << "adequacy " << (rep.pass ? "pass" : "fail") << "\n";
  if (!m.converged) return not_converged(run, m);
  return run.finish(kExitOk);
}

int cmd_regress(Run& run) {
  const auto [data, groups] = run.assigned_subjects();
  run.save_fitted_model();
  const Design d = encode_predictors(covariate_predictors(data));
  const RegressionResult reg = multinomial_fit(d.X, groups, run.config().reference, d.names);
  run.write("regression.csv", format_regression_csv(reg));
  if (!run.model().converged) return not_converged(run, run.model());
  return run.finish(kExitOk);
}

int cmd_chisq(Run& run) {
  const auto [data, groups] = run.assigned_subjects();
  run.save_fitted_model();
  std::vector<std::string> journal, doc;
  for (const auto& c : data.covariates) {
    journal.push_back(c.journal);
    doc.push_back(to_string(c.doc_type));
  }
  std::vector<std::pair<std::string, ChiSquareResult>> tests;
  tests.emplace_back("journal", chi_square_test(std::span<const std::string>(journal), std::span<const int>(groups)));
  tests.emplace_back("doc_type", chi_square_test(std::span<const std::string>(doc), std::span<const int>(groups)));
  run.write("chisq.csv", format_chisq_csv(tests));
  if (!run.model().converged) return not_converged(run, run.model());
  return run.finish(kExitOk);
}

int cmd_table(Run& run) {
  const auto [data, groups] = run.assigned_subjects();
  run.save_fitted_model();
  const std::vector<Predictor> all = covariate_predictors(data);
  std::vector<PredictorSet> sets;
  for (const auto& p : all) sets.push_back({p.name, {p}});
  sets.push_back({"combined", all});
  run.write("classification.csv", format_classification_csv(classification_table(sets, groups)));
  if (!run.model().converged) return not_converged(run, run.model());
  return run.finish(kExitOk);
}

int cmd_summary(Run& run) {
  run.write("summary.csv", format_summary_csv(summarize(run.data())));
  return run.finish(kExitOk);
}

int cmd_simulate(Run& run) {
  const Scenario scenario = scenario_from_config(run.config(), run.seed());
  const SimulatedData sim = generate(scenario);
  run.write("data.csv", format_dataset(sim.data));
  std::string truth = "id,group\n";
  for (int i = 0; i < sim.data.n_subjects(); ++i)
    truth += sim.data.subject_ids[i] + "," + std::to_string(sim.assignments[i] + 1) + "\n";
  run.write("truth.csv", truth);
  return run.finish(kExitOk);
}

void common_flags(CLI::App* sub, Options& o) {
  sub->add_option("--data", o.data, "dataset CSV");
  sub->add_option("--config", o.config, "analysis config");
  sub->add_option("--out", o.out, "output directory");
  sub->add_option("--seed", o.seed, "random seed (unsigned 64-bit)");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Group-based trajectory modeling of longitudinal counts", "gbtm"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Options o;
  std::map<std::string, CLI::App*> subs;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"fit", "fit a ZIP trajectory model"},
      {"sweep", "BIC sweep over group counts"},
      {"curves", "group curves with 95% bands and shape labels"},
      {"classify", "posterior group assignments and adequacy"},
      {"regress", "multinomial logit of group membership on covariates"},
      {"chisq", "chi-square tests of journal and doc_type against groups"},
      {"table", "classification tables per predictor set"},
      {"summary", "descriptive summary of a dataset"},
      {"simulate", "generate a synthetic dataset"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    common_flags(sub, o);
    if (name != "fit" && name != "sweep" && name != "summary" && name != "simulate")
      sub->add_option("--model", o.model, "saved model JSON");
    subs[name] = sub;
  }
  subs["sweep"]->add_option("--groups", o.groups, "group range MIN..MAX");
  subs["curves"]->add_option("--bands", o.bands, "delta or bootstrap");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitInvalid;
  }

  std::string command;
  for (const auto& [name, sub] : subs)
    if (sub->parsed()) command = name;

  try {
    Run r(command, o, out);
    if (command == "fit") return cmd_fit(r);
    if (command == "sweep") return cmd_sweep(r, o);
    if (command == "curves") return cmd_curves(r, o);
    if (command == "classify") return cmd_classify(r);
    if (command == "regress") return cmd_regress(r);
    if (command == "chisq") return cmd_chisq(r);
    if (command == "table") return cmd_table(r);
    if (command == "summary") return cmd_summary(r);
    if (command == "simulate") return cmd_simulate(r);
    err << app.help();
    return kExitInvalid;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNotConverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  }
}

}  // namespace gbtm::cli
