#include "gbtm/io.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_set>

namespace gbtm {

using json = nlohmann::ordered_json;

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw ValidationError("failed reading '" + path + "'");
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot open '" + path + "' for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw ValidationError("failed writing '" + path + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw ValidationError("cannot move output into place at '" + path + "'");
  }
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

template <class T>
bool parse_exact(std::string_view text, T& value) {
  if (text.empty()) return false;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  return res.ec == std::errc() && res.ptr == text.data() + text.size();
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

std::vector<std::string> split_csv(std::string_view line, const std::string& source,
                                   std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  std::size_t i = 0;
  while (true) {
    cur.clear();
    if (i < line.size() && line[i] == '"') {
      ++i;
      bool closed = false;
      while (i < line.size()) {
        if (line[i] == '"') {
          if (i + 1 < line.size() && line[i + 1] == '"') {
            cur += '"';
            i += 2;
            continue;
          }
          ++i;
          closed = true;
          break;
        }
        cur += line[i++];
      }
      if (!closed) throw ParseError(source, line_no, "", "unterminated quoted field");
      if (i < line.size() && line[i] != ',')
        throw ParseError(source, line_no, "", "unexpected text after quoted field");
    } else {
      while (i < line.size() && line[i] != ',') cur += line[i++];
    }
    fields.push_back(cur);
    if (i >= line.size()) break;
    ++i;  // comma
  }
  return fields;
}

std::string csv_field(const std::string& s) {
  const bool quote = s.find_first_of(",\"\r\n") != std::string::npos ||
                     (!s.empty() && (s.front() == ' ' || s.back() == ' '));
  if (!quote) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

const std::vector<std::string> kDatasetColumns = {"id",        "doc_type", "journal",
                                                  "n_authors", "n_refs",   "n_pages"};

}  // namespace

LongitudinalDataset parse_dataset_text(std::string_view text, const std::string& source) {
  if (text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
  std::vector<std::string_view> lines = split_lines(text);
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw ParseError(source, 1, "", "missing header");

  const std::vector<std::string> header = split_csv(lines[0], source, 1);
  if (header.size() < kDatasetColumns.size() + 2)
    throw ParseError(source, 1, "", "header needs the six covariate columns and at least two count columns");
  for (std::size_t c = 0; c < kDatasetColumns.size(); ++c)
    if (header[c] != kDatasetColumns[c])
      throw ParseError(source, 1, header[c],
                       "expected column '" + kDatasetColumns[c] + "', found '" + header[c] + "'");
  std::vector<long long> labels;
  for (std::size_t c = kDatasetColumns.size(); c < header.size(); ++c) {
    long long label = 0;
    if (header[c].size() < 2 || header[c][0] != 'y' ||
        !parse_exact(std::string_view(header[c]).substr(1), label))
      throw ParseError(source, 1, header[c], "count columns must be named y<integer label>");
    if (!labels.empty() && label <= labels.back())
      throw ParseError(source, 1, header[c], "period labels must be strictly increasing");
    labels.push_back(label);
  }

  LongitudinalDataset data;
  data.axis = TimeAxis(labels);
  const auto T = static_cast<Eigen::Index>(labels.size());
  const std::size_t n_rows = lines.size() - 1;
  if (n_rows == 0) throw ParseError(source, 1, "", "dataset has no rows");
  data.counts.resize(static_cast<Eigen::Index>(n_rows), T);
  std::unordered_set<std::string> seen;

  auto parse_nonneg = [&](const std::string& field, std::size_t line_no, const std::string& col) {
    long long v = 0;
    if (!parse_exact(std::string_view(field), v)) {
      double d = 0.0;
      if (parse_exact(std::string_view(field), d))
        throw ParseError(source, line_no, col, "value must be an integer, got '" + field + "'");
      throw ParseError(source, line_no, col, "value is not a number: '" + field + "'");
    }
    if (v < 0) throw ParseError(source, line_no, col, "value must be nonnegative, got '" + field + "'");
    if (v > std::numeric_limits<int>::max())
      throw ParseError(source, line_no, col, "value out of range: '" + field + "'");
    return static_cast<int>(v);
  };

  for (std::size_t r = 0; r < n_rows; ++r) {
    const std::size_t line_no = r + 2;
    const std::vector<std::string> f = split_csv(lines[r + 1], source, line_no);
    if (f.size() != header.size())
      throw ParseError(source, line_no, "",
                       "ragged row: expected " + std::to_string(header.size()) + " fields, found " +
                           std::to_string(f.size()));
    if (f[0].empty()) throw ParseError(source, line_no, "id", "empty id");
    if (!seen.insert(f[0]).second)
      throw ParseError(source, line_no, "id", "duplicate id '" + f[0] + "'");
    Covariates cov;
    try {
      cov.doc_type = parse_doc_type(f[1]);
    } catch (const ValidationError&) {
      throw ParseError(source, line_no, "doc_type", "unknown doc_type '" + f[1] + "'");
    }
    cov.journal = f[2];
    cov.n_authors = parse_nonneg(f[3], line_no, "n_authors");
    cov.n_refs = parse_nonneg(f[4], line_no, "n_refs");
    cov.n_pages = parse_nonneg(f[5], line_no, "n_pages");
    for (Eigen::Index t = 0; t < T; ++t) {
      const std::size_t c = kDatasetColumns.size() + static_cast<std::size_t>(t);
      data.counts(static_cast<Eigen::Index>(r), t) = parse_nonneg(f[c], line_no, header[c]);
    }
    data.subject_ids.push_back(f[0]);
    data.covariates.push_back(std::move(cov));
  }
  data.validate();
  return data;
}

LongitudinalDataset parse_dataset(const std::string& path) {
  return parse_dataset_text(read_text_file(path), path);
}

std::string format_dataset(const LongitudinalDataset& data) {
  data.validate();
  std::string out;
  for (std::size_t c = 0; c < kDatasetColumns.size(); ++c) {
    if (c) out += ',';
    out += kDatasetColumns[c];
  }
  for (long long label : data.axis.labels()) out += ",y" + std::to_string(label);
  out += '\n';
  const Covariates neutral;
  for (int i = 0; i < data.n_subjects(); ++i) {
    const Covariates& cov = data.covariates.empty() ? neutral : data.covariates[i];
    out += csv_field(data.subject_ids[i]);
    out += ',' + to_string(cov.doc_type);
    out += ',' + csv_field(cov.journal);
    out += ',' + std::to_string(cov.n_authors);
    out += ',' + std::to_string(cov.n_refs);
    out += ',' + std::to_string(cov.n_pages);
    for (int t = 0; t < data.n_periods(); ++t) out += ',' + std::to_string(data.counts(i, t));
    out += '\n';
  }
  return out;
}

void write_dataset(const LongitudinalDataset& data, const std::string& path) {
  write_text_file(path, format_dataset(data));
}

DatasetSummary summarize(const LongitudinalDataset& data) {
  DatasetSummary s;
  s.n_subjects = data.n_subjects();
  s.n_periods = data.n_periods();
  for (auto t : {DocType::article, DocType::review, DocType::letter, DocType::other})
    s.by_doc_type[t] = 0;
  int zero_rows = 0;
  for (int i = 0; i < data.n_subjects(); ++i) {
    const std::int64_t total = data.subject_total(i);
    s.total_citations += total;
    if (total == 0) ++zero_rows;
  }
  for (const auto& c : data.covariates) {
    ++s.by_journal[c.journal];
    ++s.by_doc_type[c.doc_type];
  }
  s.zero_row_share = s.n_subjects > 0 ? static_cast<double>(zero_rows) / s.n_subjects : 0.0;
  return s;
}

std::string format_summary_csv(const DatasetSummary& s) {
  std::string out = "section,key,value\n";
  out += "overall,subjects," + std::to_string(s.n_subjects) + "\n";
  out += "overall,periods," + std::to_string(s.n_periods) + "\n";
  out += "overall,total_citations," + std::to_string(s.total_citations) + "\n";
  out += "overall,zero_row_share," + format_number(s.zero_row_share) + "\n";
  for (const auto& [type, n] : s.by_doc_type)
    out += "doc_type," + to_string(type) + "," + std::to_string(n) + "\n";
  for (const auto& [journal, n] : s.by_journal)
    out += "journal," + csv_field(journal) + "," + std::to_string(n) + "\n";
  return out;
}

// ----------------------------------------------------------------- config

ModelSpec AnalysisConfig::model_spec() const {
  if (!ngroups) throw ValidationError("ngroups is required");
  ModelSpec spec;
  spec.orders = order.empty() ? std::vector<int>(*ngroups, kDefaultSweepOrder) : order;
  spec.iorder = iorder;
  spec.max_order = max_order;
  spec.validate();
  return spec;
}

void AnalysisConfig::validate() const {
  if (model != "zip") throw ValidationError("model must be zip");
  if (ngroups && *ngroups < 1) throw ValidationError("ngroups must be at least 1");
  if (ngroups && !order.empty() && static_cast<int>(order.size()) != *ngroups)
    throw ValidationError("order list has " + std::to_string(order.size()) + " entries but ngroups is " +
                          std::to_string(*ngroups));
  for (int o : order)
    if (o < 0 || o > max_order)
      throw ValidationError("order " + std::to_string(o) + " outside 0.." + std::to_string(max_order));
  if (iorder < 0) throw ValidationError("iorder must be nonnegative");
  controls.validate();
  if (outliers.gap_factor <= 1.0) throw ValidationError("outlier_gap must exceed 1");
  if (!(outliers.top_fraction > 0.0 && outliers.top_fraction < 1.0))
    throw ValidationError("outlier_top must lie in (0, 1)");
  if (shape.window < 1) throw ValidationError("shape_window must be at least 1");
  if (bootstrap_replicates < 2) throw ValidationError("bootstrap_reps must be at least 2");
  if (reference && *reference < 1) throw ValidationError("reference must be a 1-based group");
  const auto& sim = simulation;
  if (sim.scenario != "s1" && sim.scenario != "s2" && sim.scenario != "homogeneous" &&
      sim.scenario != "custom")
    throw ValidationError("sim_scenario must be s1, s2, homogeneous or custom");
  if (sim.n_subjects < 1) throw ValidationError("sim_n must be positive");
  if (sim.periods < 2) throw ValidationError("sim_periods must be at least 2");
  if (sim.scenario == "custom") {
    if (sim.rates.empty() || sim.rates.size() != sim.inflation.size() ||
        sim.rates.size() != sim.weights.size())
      throw ValidationError("custom scenario needs sim_rates, sim_inflation and sim_weights of equal length");
  }
}

namespace {

struct ConfigLine {
  std::size_t line;
  std::string key;
  std::string value;
};

class ConfigReader {
 public:
  ConfigReader(const ConfigLine& l, const std::string& source) : l_(l), source_(source) {}

  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(source_, l_.line, l_.key, msg); }

  long long integer() const {
    long long v = 0;
    if (!parse_exact(std::string_view(l_.value), v)) fail("expected an integer, got '" + l_.value + "'");
    return v;
  }
  int int32() const {
    const long long v = integer();
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
      fail("integer out of range");
    return static_cast<int>(v);
  }
  std::uint64_t unsigned64() const {
    std::uint64_t v = 0;
    if (!parse_exact(std::string_view(l_.value), v))
      fail("expected an unsigned integer, got '" + l_.value + "'");
    return v;
  }
  double real() const {
    double v = 0.0;
    if (!parse_exact(std::string_view(l_.value), v) || !std::isfinite(v))
      fail("expected a number, got '" + l_.value + "'");
    return v;
  }
  bool boolean() const {
    if (l_.value == "true") return true;
    if (l_.value == "false") return false;
    fail("expected true or false, got '" + l_.value + "'");
  }
  std::vector<std::string> list_items() const {
    const std::string& v = l_.value;
    if (v.size() < 2 || v.front() != '[' || v.back() != ']')
      fail("expected a bracketed list such as [3 3 3], got '" + v + "'");
    std::vector<std::string> items;
    std::istringstream ss(v.substr(1, v.size() - 2));
    std::string item;
    while (ss >> item) items.push_back(item);
    return items;
  }
  std::vector<int> int_list_or_scalar(std::optional<int>& broadcast) const {
    if (!l_.value.empty() && l_.value.front() != '[') {
      broadcast = int32();
      return {};
    }
    std::vector<int> out;
    for (const auto& item : list_items()) {
      int v = 0;
      if (!parse_exact(std::string_view(item), v)) fail("list entries must be integers, got '" + item + "'");
      out.push_back(v);
    }
    return out;
  }
  std::vector<double> real_list() const {
    std::vector<double> out;
    for (const auto& item : list_items()) {
      double v = 0.0;
      if (!parse_exact(std::string_view(item), v) || !std::isfinite(v))
        fail("list entries must be numbers, got '" + item + "'");
      out.push_back(v);
    }
    return out;
  }

 private:
  const ConfigLine& l_;
  const std::string& source_;
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

std::string int_list(const std::vector<int>& v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? " " : "") + std::to_string(v[i]);
  return out + "]";
}

std::string real_list(const std::vector<double>& v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? " " : "") + format_number(v[i]);
  return out + "]";
}

}  // namespace

AnalysisConfig parse_config_text(std::string_view text, const std::string& source) {
  if (text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
  AnalysisConfig cfg;
  std::optional<int> order_broadcast;
  std::size_t order_line = 0, ngroups_line = 0;
  std::set<std::string> seen;

  const auto lines = split_lines(text);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    std::string_view raw = lines[n];
    const auto hash = raw.find('#');
    if (hash != std::string_view::npos) raw = raw.substr(0, hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(source, n + 1, "", "expected 'key = value'");
    ConfigLine cl{n + 1, trim(std::string_view(line).substr(0, eq)),
                  trim(std::string_view(line).substr(eq + 1))};
    std::transform(cl.key.begin(), cl.key.end(), cl.key.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    const ConfigReader r(cl, source);
    if (cl.key.empty()) r.fail("missing key");
    if (cl.value.empty()) r.fail("missing value");
    if (!seen.insert(cl.key).second) r.fail("duplicate key");
    const std::string& k = cl.key;
    auto& c = cfg.controls;
    auto& sh = cfg.shape;
    auto& sim = cfg.simulation;
    if (k == "model") {
      if (cl.value != "zip") r.fail("only model = zip is supported, got '" + cl.value + "'");
      cfg.model = cl.value;
    } else if (k == "ngroups") {
      cfg.ngroups = r.int32();
      if (*cfg.ngroups < 1) r.fail("ngroups must be at least 1");
      ngroups_line = cl.line;
    } else if (k == "order") {
      cfg.order = r.int_list_or_scalar(order_broadcast);
      order_line = cl.line;
    } else if (k == "iorder") {
      cfg.iorder = r.int32();
    } else if (k == "max_order") {
      cfg.max_order = r.int32();
    } else if (k == "max_iter") {
      c.max_em_iterations = r.int32();
    } else if (k == "tolerance") {
      c.loglik_tolerance = r.real();
    } else if (k == "newton_iter") {
      c.max_newton_iterations = r.int32();
    } else if (k == "ridge") {
      c.ridge = r.real();
    } else if (k == "restarts") {
      c.n_restarts = r.int32();
    } else if (k == "refine") {
      c.refine = r.boolean();
    } else if (k == "information") {
      c.compute_information = r.boolean();
    } else if (k == "outliers") {
      cfg.outliers.enabled = r.boolean();
    } else if (k == "outlier_gap") {
      cfg.outliers.gap_factor = r.real();
    } else if (k == "outlier_top") {
      cfg.outliers.top_fraction = r.real();
    } else if (k == "shape_low_max") {
      sh.low_max = r.real();
    } else if (k == "shape_sleeper_early") {
      sh.sleeper_early = r.real();
    } else if (k == "shape_sleeper_peak") {
      sh.sleeper_peak = r.real();
    } else if (k == "shape_transient_peak") {
      sh.transient_peak = r.real();
    } else if (k == "shape_transient_tail") {
      sh.transient_tail = r.real();
    } else if (k == "shape_sticky_tail") {
      sh.sticky_tail = r.real();
    } else if (k == "shape_window") {
      sh.window = r.int32();
    } else if (k == "band_method") {
      try {
        cfg.bands = parse_band_method(cl.value);
      } catch (const ValidationError&) {
        r.fail("band_method must be delta or bootstrap, got '" + cl.value + "'");
      }
    } else if (k == "bootstrap_reps") {
      cfg.bootstrap_replicates = r.int32();
    } else if (k == "seed") {
      cfg.seed = r.unsigned64();
    } else if (k == "reference") {
      cfg.reference = r.int32();
    } else if (k == "sim_scenario") {
      sim.scenario = cl.value;
    } else if (k == "sim_n") {
      sim.n_subjects = r.int32();
    } else if (k == "sim_periods") {
      sim.periods = r.int32();
    } else if (k == "sim_first_label") {
      sim.first_label = r.integer();
    } else if (k == "sim_rate") {
      sim.homogeneous_rate = r.real();
    } else if (k == "sim_rates") {
      sim.rates = r.real_list();
    } else if (k == "sim_inflation") {
      sim.inflation = r.real_list();
    } else if (k == "sim_weights") {
      sim.weights = r.real_list();
    } else {
      r.fail("unknown key '" + k + "'");
    }
  }

  if (order_broadcast) {
    if (cfg.ngroups)
      cfg.order.assign(*cfg.ngroups, *order_broadcast);
    else
      cfg.order = {*order_broadcast};
  }
  if (cfg.ngroups && !cfg.order.empty() && static_cast<int>(cfg.order.size()) != *cfg.ngroups)
    throw ParseError(source, std::max(order_line, ngroups_line), "order",
                     "order list has " + std::to_string(cfg.order.size()) +
                         " entries but ngroups is " + std::to_string(*cfg.ngroups));
  try {
    cfg.validate();
  } catch (const ParseError&) {
    throw;
  } catch (const ValidationError& e) {
    throw ValidationError(source + ": " + e.what());
  }
  return cfg;
}

AnalysisConfig parse_config(const std::string& path) {
  return parse_config_text(read_text_file(path), path);
}

std::string format_config(const AnalysisConfig& cfg) {
  const auto& c = cfg.controls;
  const auto& sh = cfg.shape;
  const auto& sim = cfg.simulation;
  std::string out;
  auto put = [&](const std::string& key, const std::string& value) { out += key + " = " + value + "\n"; };
  put("model", cfg.model);
  if (cfg.ngroups) put("ngroups", std::to_string(*cfg.ngroups));
  if (!cfg.order.empty()) put("order", int_list(cfg.order));
  put("iorder", std::to_string(cfg.iorder));
  put("max_order", std::to_string(cfg.max_order));
  put("max_iter", std::to_string(c.max_em_iterations));
  put("tolerance", format_number(c.loglik_tolerance));
  put("newton_iter", std::to_string(c.max_newton_iterations));
  put("ridge", format_number(c.ridge));
  put("restarts", std::to_string(c.n_restarts));
  put("refine", c.refine ? "true" : "false");
  put("information", c.compute_information ? "true" : "false");
  put("outliers", cfg.outliers.enabled ? "true" : "false");
  put("outlier_gap", format_number(cfg.outliers.gap_factor));
  put("outlier_top", format_number(cfg.outliers.top_fraction));
  put("shape_low_max", format_number(sh.low_max));
  put("shape_sleeper_early", format_number(sh.sleeper_early));
  put("shape_sleeper_peak", format_number(sh.sleeper_peak));
  put("shape_transient_peak", format_number(sh.transient_peak));
  put("shape_transient_tail", format_number(sh.transient_tail));
  put("shape_sticky_tail", format_number(sh.sticky_tail));
  put("shape_window", std::to_string(sh.window));
  put("band_method", to_string(cfg.bands));
  put("bootstrap_reps", std::to_string(cfg.bootstrap_replicates));
  if (cfg.seed) put("seed", std::to_string(*cfg.seed));
  if (cfg.reference) put("reference", std::to_string(*cfg.reference));
  put("sim_scenario", sim.scenario);
  put("sim_n", std::to_string(sim.n_subjects));
  put("sim_periods", std::to_string(sim.periods));
  put("sim_first_label", std::to_string(sim.first_label));
  put("sim_rate", format_number(sim.homogeneous_rate));
  put("sim_rates", real_list(sim.rates));
  put("sim_inflation", real_list(sim.inflation));
  put("sim_weights", real_list(sim.weights));
  return out;
}

void write_config(const AnalysisConfig& config, const std::string& path) {
  write_text_file(path, format_config(config));
}

Scenario scenario_from_config(const AnalysisConfig& config, std::uint64_t seed) {
  const auto& sim = config.simulation;
  Scenario s;
  if (sim.scenario == "s1") {
    s = scenario_s1(seed, sim.n_subjects, sim.periods);
  } else if (sim.scenario == "s2") {
    s = scenario_s2(seed, sim.n_subjects, sim.periods);
  } else if (sim.scenario == "homogeneous") {
    s = scenario_homogeneous(seed, sim.homogeneous_rate, sim.n_subjects, sim.periods);
  } else {
    s.name = "custom";
    s.seed = seed;
    s.n_subjects = sim.n_subjects;
    Eigen::VectorXd w(static_cast<Eigen::Index>(sim.weights.size()));
    for (std::size_t j = 0; j < sim.rates.size(); ++j) {
      if (!(sim.rates[j] > 0.0)) throw ValidationError("sim_rates entries must be positive");
      if (!(sim.inflation[j] >= 0.0 && sim.inflation[j] < 1.0))
        throw ValidationError("sim_inflation entries must lie in [0, 1)");
      if (!(sim.weights[j] > 0.0)) throw ValidationError("sim_weights entries must be positive");
      GroupParams g;
      g.beta = Eigen::VectorXd::Constant(1, std::log(sim.rates[j]));
      g.gamma = Eigen::VectorXd::Constant(
          1, sim.inflation[j] > 0.0 ? std::log(sim.inflation[j] / (1.0 - sim.inflation[j]))
                                    : kNoInflationLogit);
      s.truth.groups.push_back(g);
      w(static_cast<Eigen::Index>(j)) = sim.weights[j];
    }
    s.truth.theta = weights_to_theta(w / w.sum());
  }
  s.axis = TimeAxis::consecutive(sim.periods, sim.first_label);
  s.validate();
  return s;
}

// ----------------------------------------------------------------- models

namespace {

json vector_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::isfinite(v(i)))
      a.push_back(v(i));
    else
      a.push_back(nullptr);
  }
  return a;
}

Eigen::VectorXd json_vector(const json& a) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    v(static_cast<Eigen::Index>(i)) =
        a[i].is_null() ? std::numeric_limits<double>::quiet_NaN() : a[i].get<double>();
  return v;
}

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vector_json(m.row(r).transpose()));
  return rows;
}

Eigen::MatrixXd json_matrix(const json& rows, Eigen::Index cols) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Eigen::VectorXd v = json_vector(rows[r]);
    if (v.size() != cols) throw ValidationError("matrix row has the wrong length");
    m.row(static_cast<Eigen::Index>(r)) = v.transpose();
  }
  return m;
}

double json_number(const json& v) {
  return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}

json number_json(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

std::string format_model_json(const FittedModel& f) {
  json j;
  j["format"] = "gbtm-model";
  j["format_version"] = 1;
  json spec;
  spec["model"] = "zip";
  spec["orders"] = f.spec.orders;
  spec["iorder"] = f.spec.iorder;
  spec["inflation"] = f.spec.inflation == InflationMode::estimated ? "estimated" : "none";
  spec["max_order"] = f.spec.max_order;
  j["spec"] = spec;
  j["axis"] = f.axis.labels();
  json groups = json::array();
  for (int g = 0; g < f.n_groups(); ++g) {
    json gj;
    gj["group"] = g + 1;
    gj["beta"] = vector_json(f.params.groups[g].beta);
    gj["gamma"] = vector_json(f.params.groups[g].gamma);
    groups.push_back(gj);
  }
  j["groups"] = groups;
  j["theta"] = vector_json(f.params.theta);
  j["weights"] = vector_json(f.params.weights());
  j["loglik"] = number_json(f.loglik);
  j["k"] = f.k;
  j["bic"] = number_json(f.bic);
  j["converged"] = f.converged;
  j["reason"] = f.reason;
  j["reason_trail"] = f.reason_trail;
  j["warnings"] = f.warnings;
  j["iterations"] = f.iterations_used;
  j["seed"] = f.seed;
  j["excluded_ids"] = f.excluded_subjects;
  j["subjects"] = f.subject_ids;
  j["posteriors"] = matrix_json(f.posteriors);
  j["covariance"] = f.covariance ? matrix_json(*f.covariance) : json(nullptr);
  return j.dump(1) + "\n";
}

FittedModel parse_model_json(std::string_view text, const std::string& source) {
  json j;
  try {
    j = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ValidationError(source + ": invalid JSON: " + e.what());
  }
  try {
    if (j.value("format", "") != "gbtm-model") throw ValidationError("not a gbtm model file");
    FittedModel f;
    const json& spec = j.at("spec");
    f.spec.orders = spec.at("orders").get<std::vector<int>>();
    f.spec.iorder = spec.at("iorder").get<int>();
    f.spec.inflation =
        spec.at("inflation").get<std::string>() == "none" ? InflationMode::none : InflationMode::estimated;
    f.spec.max_order = spec.at("max_order").get<int>();
    f.axis = TimeAxis(j.at("axis").get<std::vector<long long>>());
    for (const auto& gj : j.at("groups")) {
      GroupParams g;
      g.beta = json_vector(gj.at("beta"));
      g.gamma = json_vector(gj.at("gamma"));
      f.params.groups.push_back(g);
    }
    f.params.theta = json_vector(j.at("theta"));
    f.params.validate();
    f.loglik = json_number(j.at("loglik"));
    f.k = j.at("k").get<int>();
    f.bic = json_number(j.at("bic"));
    f.converged = j.at("converged").get<bool>();
    f.reason = j.at("reason").get<std::string>();
    f.reason_trail = j.at("reason_trail").get<std::vector<std::string>>();
    f.warnings = j.at("warnings").get<std::vector<std::string>>();
    f.iterations_used = j.at("iterations").get<int>();
    f.seed = j.at("seed").get<std::uint64_t>();
    f.excluded_subjects = j.at("excluded_ids").get<std::vector<std::string>>();
    f.subject_ids = j.at("subjects").get<std::vector<std::string>>();
    f.posteriors = json_matrix(j.at("posteriors"), f.n_groups());
    if (f.posteriors.rows() != static_cast<Eigen::Index>(f.subject_ids.size()))
      throw ValidationError("posterior rows differ from subjects");
    if (!j.at("covariance").is_null()) {
      const json& cov = j.at("covariance");
      f.covariance = json_matrix(cov, static_cast<Eigen::Index>(cov.size()));
    }
    if (f.spec.n_groups() != f.n_groups()) throw ValidationError("spec orders differ from groups");
    return f;
  } catch (const json::exception& e) {
    throw ValidationError(source + ": malformed model: " + e.what());
  } catch (const ParseError&) {
    throw;
  } catch (const ValidationError& e) {
    throw ValidationError(source + ": " + e.what());
  }
}

void save_model(const FittedModel& fitted, const std::string& path) {
  write_text_file(path, format_model_json(fitted));
}

FittedModel load_model(const std::string& path) {
  return parse_model_json(read_text_file(path), path);
}

// ---------------------------------------------------------------- reports

namespace {

std::string orders_text(const std::vector<int>& orders) {
  std::string out;
  for (std::size_t i = 0; i < orders.size(); ++i) out += (i ? " " : "") + std::to_string(orders[i]);
  return out;
}

}  // namespace

std::string format_sweep_csv(const SweepResult& sweep) {
  std::string out = "G,orders,loglik,k,bic,converged,app_min\n";
  for (const auto& r : sweep.rows) {
    out += std::to_string(r.n_groups) + "," + orders_text(r.orders) + "," + format_number(r.loglik) +
           "," + std::to_string(r.k) + "," + format_number(r.bic) + "," +
           (r.converged ? "true" : "false") + "," + format_number(r.app_min) + "\n";
  }
  return out;
}

std::string format_sweep_json(const SweepResult& sweep) {
  json j;
  if (sweep.recommended) {
    const SweepRow& r = sweep.rows[*sweep.recommended];
    json rec;
    rec["G"] = r.n_groups;
    rec["orders"] = r.orders;
    rec["bic"] = number_json(r.bic);
    j["recommended"] = rec;
  } else {
    j["recommended"] = nullptr;
  }
  j["rationale"] = sweep.rationale;
  j["caveats"] = sweep.caveats;
  return j.dump(1) + "\n";
}

std::string format_curves_csv(const CurveSet& set, const TimeAxis& axis) {
  std::string out = "group,period_label,estimate,lo95,hi95,weighted_share,app,shape_label\n";
  for (const auto& c : set.curves) {
    for (int t = 0; t < axis.size(); ++t) {
      out += std::to_string(c.group) + "," + std::to_string(axis.labels()[t]) + "," +
             format_number(c.estimate(t)) + "," + format_number(c.lower(t)) + "," +
             format_number(c.upper(t)) + "," + format_number(c.weighted_share) + "," +
             (c.app ? format_number(*c.app) : std::string()) + "," + to_string(c.shape.shape) + "\n";
    }
  }
  return out;
}

std::string format_regression_csv(const RegressionResult& reg) {
  std::string out = "group,term,B,SE,p,ExpB,lo95,hi95\n";
  for (const auto& eq : reg.equations) {
    for (const auto& t : eq.terms) {
      out += std::to_string(eq.group) + "," + csv_field(t.term) + "," + format_number(t.b) + "," +
             format_number(t.se) + "," + format_number(t.p) + "," + format_number(t.exp_b) + "," +
             format_number(t.lo95) + "," + format_number(t.hi95) + "\n";
    }
  }
  out += "# reference_group=" + std::to_string(reg.reference_group) + "\n";
  out += "# n=" + std::to_string(reg.n) + "\n";
  out += "# loglik=" + format_number(reg.loglik) + "\n";
  out += "# null_loglik=" + format_number(reg.null_loglik) + "\n";
  out += "# model_chi2=" + format_number(reg.model_chi2) + "\n";
  out += "# df=" + std::to_string(reg.df) + "\n";
  out += "# model_p=" + format_number(reg.model_p) + "\n";
  out += "# cox_snell_r2=" + format_number(reg.cox_snell_r2) + "\n";
  out += "# nagelkerke_r2=" + format_number(reg.nagelkerke_r2) + "\n";
  out += "# converged=" + std::string(reg.converged ? "true" : "false") + "\n";
  out += "# encoding=indicator contrasts against the alphabetically first level\n";
  for (const auto& w : reg.warnings) out += "# warning=" + w + "\n";
  return out;
}

std::string format_chisq_csv(const std::vector<std::pair<std::string, ChiSquareResult>>& tests) {
  std::string out = "variable,category,group,observed,expected\n";
  for (const auto& [name, t] : tests) {
    for (Eigen::Index r = 0; r < t.observed.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.observed.cols(); ++c) {
        const std::string row = r < static_cast<Eigen::Index>(t.row_labels.size())
                                    ? t.row_labels[r]
                                    : std::to_string(r + 1);
        const std::string col = c < static_cast<Eigen::Index>(t.col_labels.size())
                                    ? t.col_labels[c]
                                    : std::to_string(c + 1);
        out += csv_field(name) + "," + csv_field(row) + "," + csv_field(col) + "," +
               format_number(t.observed(r, c)) + "," + format_number(t.expected(r, c)) + "\n";
      }
    }
  }
  for (const auto& [name, t] : tests) {
    out += "# " + name + ": chi2=" + format_number(t.chi2) + " df=" + std::to_string(t.df) +
           " p=" + format_number(t.p) + "\n";
    for (const auto& w : t.warnings) out += "# " + name + ": warning=" + w + "\n";
  }
  return out;
}

std::string format_classification_csv(const std::vector<ClassificationTable>& tables) {
  std::string out = "set,observed,predicted,count\n";
  for (const auto& t : tables)
    for (std::size_t r = 0; r < t.groups.size(); ++r)
      for (std::size_t c = 0; c < t.groups.size(); ++c)
        out += csv_field(t.name) + "," + std::to_string(t.groups[r]) + "," + std::to_string(t.groups[c]) +
               "," + std::to_string(t.counts(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c))) +
               "\n";
  for (const auto& t : tables)
    out += "# " + t.name + ": percent_correct=" + format_number(t.percent_correct) + "\n";
  return out;
}

std::string format_assignments_csv(const FittedModel& fitted) {
  std::string out = "id,group";
  for (int g = 1; g <= fitted.n_groups(); ++g) out += ",p" + std::to_string(g);
  out += "\n";
  const std::vector<int> groups = assign_groups(fitted.posteriors);
  for (int i = 0; i < fitted.n_subjects(); ++i) {
    out += csv_field(fitted.subject_ids[i]) + "," + std::to_string(groups[i] + 1);
    for (int g = 0; g < fitted.n_groups(); ++g) out += "," + format_number(fitted.posteriors(i, g));
    out += "\n";
  }
  return out;
}

std::string format_adequacy_csv(const AdequacyReport& report) {
  std::string out = "group,app,assigned,weighted_size\n";
  for (std::size_t g = 0; g < report.apps.size(); ++g) {
    out += std::to_string(g + 1) + "," + (report.apps[g] ? format_number(*report.apps[g]) : std::string()) +
           "," + std::to_string(report.assigned[g]) + "," +
           format_number(report.weighted_sizes(static_cast<Eigen::Index>(g))) + "\n";
  }
  out += std::string("# pass=") + (report.pass ? "true" : "false") + "\n";
  for (const auto& w : report.warnings) out += "# warning=" + w + "\n";
  return out;
}

}  // namespace gbtm
