#include "gbtm/curves.hpp"

#include "gbtm/selection.hpp"
#include "gbtm/simulator.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gbtm {

std::string to_string(BandMethod method) {
  return method == BandMethod::delta ? "delta" : "bootstrap";
}

BandMethod parse_band_method(const std::string& text) {
  if (text == "delta") return BandMethod::delta;
  if (text == "bootstrap") return BandMethod::bootstrap;
  throw ValidationError("unknown band method '" + text + "' (expected delta or bootstrap)");
}

std::string to_string(Shape shape) {
  switch (shape) {
    case Shape::sticky: return "sticky";
    case Shape::transient: return "transient";
    case Shape::sleeping_beauty: return "sleeping-beauty";
    case Shape::low: return "low";
    case Shape::plateau_mixed: return "plateau-mixed";
  }
  return "plateau-mixed";
}

ShapeLabel classify_shape(std::span<const double> curve, const ShapeThresholds& th) {
  ShapeLabel out;
  const int T = static_cast<int>(curve.size());
  if (T < 1) throw ValidationError("cannot classify an empty curve");
  const auto peak_it = std::max_element(curve.begin(), curve.end());
  const double peak = *peak_it;
  out.peak_period = static_cast<int>(peak_it - curve.begin()) + 1;
  const int w = std::min(th.window, T);
  if (peak > 0.0) {
    out.early_ratio = std::accumulate(curve.begin(), curve.begin() + w, 0.0) / w / peak;
    out.tail_ratio = std::accumulate(curve.end() - w, curve.end(), 0.0) / w / peak;
  }
  if (T < 10) {
    out.shape = Shape::plateau_mixed;
    out.warning = "fewer than 10 periods; shape label not meaningful";
    return out;
  }
  const double p = out.peak_period;
  if (peak < th.low_max)
    out.shape = Shape::low;
  else if (out.early_ratio <= th.sleeper_early && p >= th.sleeper_peak * T)
    out.shape = Shape::sleeping_beauty;
  else if (p <= th.transient_peak * T && out.tail_ratio <= th.transient_tail)
    out.shape = Shape::transient;
  else if (out.tail_ratio >= th.sticky_tail)
    out.shape = Shape::sticky;
  else
    out.shape = Shape::plateau_mixed;
  return out;
}

PolynomialRefit polynomial_refit(std::span<const double> curve, int order) {
  const int T = static_cast<int>(curve.size());
  if (order < 0 || order >= T)
    throw ValidationError("polynomial order must lie in 0..T-1");
  const Eigen::Map<const Eigen::VectorXd> y(curve.data(), T);
  const Eigen::MatrixXd X = TimeAxis::consecutive(T).design(order);
  PolynomialRefit out;
  out.coefficients = X.colPivHouseholderQr().solve(y);
  const Eigen::VectorXd resid = y - X * out.coefficients;
  const double ss_res = resid.squaredNorm();
  const double ss_tot = (y.array() - y.mean()).square().sum();
  if (ss_tot == 0.0) {
    out.r_squared = ss_res <= 1e-24 * (1.0 + y.squaredNorm()) ? 1.0 : 0.0;
  } else {
    out.r_squared = 1.0 - ss_res / ss_tot;
  }
  return out;
}

Eigen::MatrixXd delta_log_rate_sd(const FittedModel& fitted, const Eigen::MatrixXd& cov) {
  const int G = fitted.n_groups();
  const int T = fitted.axis.size();
  const bool free_gamma = fitted.spec.inflation == InflationMode::estimated;
  Eigen::MatrixXd sd(G, T);
  Eigen::Index offset = G - 1;
  for (int j = 0; j < G; ++j) {
    const GroupParams& g = fitted.params.groups[j];
    const Eigen::Index pb = g.beta.size();
    if (offset + pb > cov.rows()) throw ValidationError("covariance matrix too small");
    const Eigen::MatrixXd X = fitted.axis.design(g.order());
    const Eigen::MatrixXd block = cov.block(offset, offset, pb, pb);
    for (int t = 0; t < T; ++t) {
      const double var = X.row(t) * block * X.row(t).transpose();
      sd(j, t) = var >= 0.0 ? std::sqrt(var) : std::numeric_limits<double>::quiet_NaN();
    }
    offset += pb + (free_gamma ? g.gamma.size() : 0);
  }
  return sd;
}

namespace {

std::uint64_t replicate_seed(std::uint64_t seed, int b) {
  std::uint64_t x = seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(b + 1);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Eigen::MatrixXd log_rates(const MixtureParams& p, const TimeAxis& axis) {
  Eigen::MatrixXd out(p.n_groups(), axis.size());
  for (int j = 0; j < p.n_groups(); ++j) out.row(j) = make_group_table(p.groups[j], axis, j).eta;
  return out;
}

Eigen::MatrixXd bootstrap_log_rate_sd(const FittedModel& fitted, const CurveOptions& opt,
                                      std::vector<std::string>& warnings) {
  const int G = fitted.n_groups();
  const int T = fitted.axis.size();
  FitControls rc = opt.refit_controls;
  rc.n_restarts = 1;
  rc.refine = false;
  rc.compute_information = false;
  std::vector<Eigen::MatrixXd> draws;
  int failed = 0;
  for (int b = 0; b < opt.bootstrap_replicates; ++b) {
    Scenario sc;
    sc.name = "bootstrap";
    sc.truth = fitted.params;
    sc.n_subjects = fitted.n_subjects();
    sc.axis = fitted.axis;
    sc.seed = replicate_seed(opt.seed, b);
    ModelSpec spec = fitted.spec;
    spec.start = fitted.params;
    rc.seed = sc.seed;
    try {
      const SimulatedData sim = generate(sc);
      draws.push_back(log_rates(fit(sim.data, spec, rc).params, fitted.axis));
    } catch (const Error&) {
      ++failed;
    }
  }
  if (failed > 0)
    warnings.push_back(std::to_string(failed) + " bootstrap replicates failed and were skipped");
  Eigen::MatrixXd sd = Eigen::MatrixXd::Zero(G, T);
  if (draws.size() < 2) {
    warnings.push_back("too few bootstrap replicates; bands collapse to the estimate");
    return sd;
  }
  const double B = static_cast<double>(draws.size());
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(G, T);
  for (const auto& d : draws) mean += d;
  mean /= B;
  for (const auto& d : draws) sd += (d - mean).array().square().matrix();
  return (sd / (B - 1.0)).array().sqrt();
}

}  // namespace

CurveSet curves(const FittedModel& fitted, const CurveOptions& options) {
  if (!fitted.converged)
    throw ValidationError("confidence bands are refused for a non-converged model (" +
                          fitted.reason + ")");
  const int G = fitted.n_groups();
  const int T = fitted.axis.size();
  CurveSet out;
  Eigen::MatrixXd sd;
  out.method_used = options.method;
  if (options.method == BandMethod::delta) {
    if (fitted.covariance && fitted.covariance->allFinite()) {
      sd = delta_log_rate_sd(fitted, *fitted.covariance);
    }
    if (sd.size() == 0 || !sd.allFinite()) {
      out.warnings.push_back("observed information unusable; falling back to bootstrap bands");
      out.method_used = BandMethod::bootstrap;
    }
  }
  if (out.method_used == BandMethod::bootstrap) sd = bootstrap_log_rate_sd(fitted, options, out.warnings);

  std::optional<AdequacyReport> adequacy_report;
  if (fitted.posteriors.rows() > 0) adequacy_report = adequacy(fitted);
  const Eigen::MatrixXd eta = log_rates(fitted.params, fitted.axis);
  for (int j = 0; j < G; ++j) {
    TrajectoryCurve c;
    c.group = j + 1;
    c.estimate = eta.row(j).array().exp().transpose();
    c.lower = (eta.row(j) - 1.96 * sd.row(j)).array().exp().transpose();
    c.upper = (eta.row(j) + 1.96 * sd.row(j)).array().exp().transpose();
    if (adequacy_report) {
      c.weighted_share = adequacy_report->weighted_sizes(j);
      c.app = adequacy_report->apps[j];
    }
    c.shape = classify_shape(std::span<const double>(c.estimate.data(), T), options.thresholds);
    out.curves.push_back(std::move(c));
  }
  return out;
}

CorrelationTest pearson_test(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 3)
    throw ValidationError("correlation needs two series of equal length >= 3");
  const auto n = static_cast<Eigen::Index>(x.size());
  const Eigen::Map<const Eigen::VectorXd> a(x.data(), n), b(y.data(), n);
  const Eigen::VectorXd da = a.array() - a.mean();
  const Eigen::VectorXd db = b.array() - b.mean();
  const double denom = std::sqrt(da.squaredNorm() * db.squaredNorm());
  CorrelationTest out;
  if (denom == 0.0) {
    out.coefficient = std::numeric_limits<double>::quiet_NaN();
    out.p_value = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  out.coefficient = std::clamp(da.dot(db) / denom, -1.0, 1.0);
  const double df = static_cast<double>(n - 2);
  const double r2 = out.coefficient * out.coefficient;
  if (r2 >= 1.0) {
    out.p_value = 0.0;
  } else {
    const double t = out.coefficient * std::sqrt(df / (1.0 - r2));
    boost::math::students_t dist(df);
    out.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  }
  return out;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t k = i;
    while (k + 1 < idx.size() && v[idx[k + 1]] == v[idx[i]]) ++k;
    const double r = 0.5 * static_cast<double>(i + k) + 1.0;
    for (std::size_t m = i; m <= k; ++m) ranks[idx[m]] = r;
    i = k + 1;
  }
  return ranks;
}

}  // namespace

CorrelationTest spearman_test(std::span<const double> x, std::span<const double> y) {
  const std::vector<double> rx = average_ranks(x);
  const std::vector<double> ry = average_ranks(y);
  return pearson_test(rx, ry);
}

PercentileComparison compare_cumulative_shares(std::span<const double> cumulative,
                                               std::span<const double> bounds) {
  PercentileComparison out;
  out.gbtm_cumulative.assign(cumulative.begin(), cumulative.end());
  out.nsf_cumulative.assign(bounds.begin(), bounds.end());
  out.pearson = pearson_test(cumulative, bounds);
  out.spearman = spearman_test(cumulative, bounds);
  return out;
}

std::vector<int> nsf_classes(std::span<const double> totals) {
  const std::size_t N = totals.size();
  // Rank 1 = most cited; ties share their average rank.
  std::vector<double> negated(N);
  for (std::size_t i = 0; i < N; ++i) negated[i] = -totals[i];
  const std::vector<double> ranks = average_ranks(negated);
  std::vector<int> cls(N);
  for (std::size_t i = 0; i < N; ++i) {
    const double pct = 100.0 * ranks[i] / static_cast<double>(N);
    int c = 0;
    while (c < 5 && pct > kNsfBounds[c]) ++c;
    cls[i] = c;
  }
  return cls;
}

PercentileComparison percentile_class_comparison(std::span<const double> totals,
                                                 const Eigen::VectorXd& weighted_sizes) {
  if (totals.size() < 6) throw ValidationError("percentile classes need at least 6 subjects");
  const Eigen::Index G = weighted_sizes.size();
  std::vector<double> cumulative;
  double acc = 0.0;
  for (Eigen::Index j = G - 1; j >= 0; --j) {
    acc += 100.0 * weighted_sizes(j);
    cumulative.push_back(acc);
  }
  std::vector<std::string> warnings;
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(G), kNsfBounds.size());
  std::vector<double> gbtm(cumulative.begin(), cumulative.begin() + static_cast<long>(n) - 1);
  std::vector<double> nsf(kNsfBounds.begin(), kNsfBounds.begin() + static_cast<long>(n) - 1);
  gbtm.push_back(100.0);
  nsf.push_back(100.0);
  if (static_cast<std::size_t>(G) != kNsfBounds.size())
    warnings.push_back("model has " + std::to_string(G) +
                       " groups; compared against the first NSF bounds only");

  PercentileComparison out;
  if (n >= 3) {
    out = compare_cumulative_shares(gbtm, nsf);
  } else {
    out.gbtm_cumulative = gbtm;
    out.nsf_cumulative = nsf;
    out.pearson = {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
    out.spearman = out.pearson;
    warnings.push_back("fewer than 3 classes; correlations undefined");
  }
  out.warnings.insert(out.warnings.end(), warnings.begin(), warnings.end());
  out.class_counts.assign(kNsfBounds.size(), 0);
  for (int c : nsf_classes(totals)) out.class_counts[c] += 1;
  return out;
}

}  // namespace gbtm
