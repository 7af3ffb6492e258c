#include "gbtm/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

namespace gbtm {

double bic(double loglik, int k, int n) {
  if (n < 1) throw ValidationError("bic needs n >= 1");
  return loglik - 0.5 * static_cast<double>(k) * std::log(static_cast<double>(n));
}

LogBayesFactor log_bayes_factor(double bic_simple, double bic_complex) {
  LogBayesFactor out;
  out.value = 2.0 * (bic_complex - bic_simple);
  out.strong_for_complex = out.value > 5.0;
  return out;
}

double AdequacyReport::app_min() const {
  double m = std::numeric_limits<double>::quiet_NaN();
  for (const auto& a : apps) {
    if (a && (std::isnan(m) || *a < m)) m = *a;
  }
  return m;
}

std::vector<int> assign_groups(const Eigen::MatrixXd& posteriors) {
  std::vector<int> out(posteriors.rows());
  for (Eigen::Index i = 0; i < posteriors.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < posteriors.cols(); ++j)
      if (posteriors(i, j) > posteriors(i, best)) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

AdequacyReport adequacy(const Eigen::MatrixXd& posteriors) {
  if (posteriors.rows() < 1 || posteriors.cols() < 1)
    throw ValidationError("adequacy needs a non-empty posterior matrix");
  const Eigen::Index N = posteriors.rows();
  const Eigen::Index G = posteriors.cols();
  AdequacyReport rep;
  rep.assigned.assign(G, 0);
  rep.weighted_sizes.resize(G);
  std::vector<ExactSum> app_sum(G);
  const std::vector<int> assigned = assign_groups(posteriors);
  for (Eigen::Index i = 0; i < N; ++i) {
    rep.assigned[assigned[i]] += 1;
    app_sum[assigned[i]].add(posteriors(i, assigned[i]));
  }
  for (Eigen::Index j = 0; j < G; ++j) {
    ExactSum col;
    for (Eigen::Index i = 0; i < N; ++i) col.add(posteriors(i, j));
    rep.weighted_sizes(j) = col.value() / static_cast<double>(N);
  }
  rep.pass = true;
  for (Eigen::Index j = 0; j < G; ++j) {
    if (rep.assigned[j] == 0) {
      rep.apps.push_back(std::nullopt);
      rep.pass = false;
      rep.warnings.push_back("group " + std::to_string(j + 1) +
                             " has no assigned subjects; APP undefined");
    } else {
      const double app = app_sum[j].value() / rep.assigned[j];
      rep.apps.push_back(app);
      if (app < kAppThreshold) rep.pass = false;
    }
    if (rep.weighted_sizes(j) < kSmallGroupShare) {
      std::ostringstream os;
      os << "group " << (j + 1) << " holds " << 100.0 * rep.weighted_sizes(j)
         << "% of subjects (below 5%)";
      rep.warnings.push_back(os.str());
    }
  }
  return rep;
}

AdequacyReport adequacy(const FittedModel& fitted) { return adequacy(fitted.posteriors); }

SweepRow make_sweep_row(const FittedModel& fitted) {
  const AdequacyReport rep = adequacy(fitted);
  SweepRow row;
  row.n_groups = fitted.n_groups();
  row.orders = fitted.spec.orders;
  row.loglik = fitted.loglik;
  row.k = fitted.k;
  row.bic = fitted.bic;
  row.converged = fitted.converged;
  row.app_min = rep.app_min();
  row.weighted_sizes = rep.weighted_sizes;
  return row;
}

std::optional<std::size_t> recommend_row(const std::vector<SweepRow>& rows) {
  std::optional<std::size_t> best;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (!rows[r].converged || !std::isfinite(rows[r].bic)) continue;
    if (!best || rows[r].bic > rows[*best].bic) best = r;
  }
  return best;
}

namespace {

// Largest relative change of the two most-cited expected-count curves
// between a (G-1)-group and a G-group model.
double top_curve_change(const FittedModel& smaller, const FittedModel& larger) {
  const Eigen::MatrixXd a = expected_counts(smaller.params, smaller.axis);
  const Eigen::MatrixXd b = expected_counts(larger.params, larger.axis);
  double worst = 0.0;
  for (int k = 1; k <= 2; ++k) {
    const Eigen::RowVectorXd ca = a.row(a.rows() - k);
    const Eigen::RowVectorXd cb = b.row(b.rows() - k);
    const double scale = std::max(ca.cwiseAbs().maxCoeff(), 1e-12);
    worst = std::max(worst, (ca - cb).cwiseAbs().maxCoeff() / scale);
  }
  return worst;
}

void sort_rows(SweepResult& res) {
  std::vector<std::size_t> idx(res.rows.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (res.rows[a].n_groups != res.rows[b].n_groups)
      return res.rows[a].n_groups < res.rows[b].n_groups;
    return res.rows[a].orders < res.rows[b].orders;
  });
  SweepResult sorted;
  for (std::size_t i : idx) {
    sorted.rows.push_back(res.rows[i]);
    sorted.models.push_back(std::move(res.models[i]));
  }
  res.rows = std::move(sorted.rows);
  res.models = std::move(sorted.models);
}

std::string orders_text(const std::vector<int>& orders) {
  std::ostringstream os;
  for (std::size_t j = 0; j < orders.size(); ++j) os << (j ? " " : "") << orders[j];
  return os.str();
}

}  // namespace

SweepResult sweep_groups(const LongitudinalDataset& data, int g_min, int g_max,
                         int base_order, const FitControls& controls, int iorder) {
  data.validate();
  if (g_min < 1 || g_min > g_max || g_max > data.n_subjects())
    throw ValidationError("group range must satisfy 1 <= min <= max <= N");
  SweepResult res;
  FitControls c = controls;
  c.compute_information = false;
  for (int G = g_min; G <= g_max; ++G) {
    FittedModel m = fit(data, ModelSpec::uniform(G, base_order, iorder), c);
    res.rows.push_back(make_sweep_row(m));
    res.models.push_back(std::move(m));
  }
  sort_rows(res);
  res.recommended = recommend_row(res.rows);
  if (!res.recommended) {
    res.rationale = "no converged model";
    return res;
  }
  const std::size_t r = *res.recommended;
  std::ostringstream os;
  os << "G = " << res.rows[r].n_groups << " has the largest BIC (" << res.rows[r].bic
     << ") among converged models";
  res.rationale = os.str();

  for (std::size_t i = 1; i < res.rows.size(); ++i) {
    const int G = res.rows[i].n_groups;
    if (G < 3 || res.rows[i - 1].n_groups != G - 1) continue;
    const double change = top_curve_change(res.models[i - 1], res.models[i]);
    if (change < kTopCurveChange) {
      std::ostringstream cv;
      cv << "G = " << G << " leaves the two most-cited curves within "
         << 100.0 * change << "% of the G = " << (G - 1)
         << " solution; the added group only subdivides the lower strata";
      res.caveats.push_back(cv.str());
    }
  }
  for (std::size_t i = 0; i < res.rows.size(); ++i) {
    if (!res.rows[i].converged)
      res.caveats.push_back("G = " + std::to_string(res.rows[i].n_groups) + " did not converge (" +
                            res.models[i].reason + ")");
  }
  return res;
}

SweepResult refine_orders(const LongitudinalDataset& data, const FittedModel& start,
                          const FitControls& controls) {
  data.validate();
  const int G = start.n_groups();
  const int q = start.spec.inflation == InflationMode::estimated ? start.spec.iorder : 0;
  FitControls c = controls;
  c.compute_information = false;

  SweepResult res;
  std::map<std::vector<int>, std::size_t> seen;
  auto record = [&](FittedModel m) {
    auto it = seen.find(m.spec.orders);
    if (it != seen.end()) {
      // Keep whichever fit of this order vector reached the higher likelihood.
      if (m.loglik > res.models[it->second].loglik) {
        res.rows[it->second] = make_sweep_row(m);
        res.models[it->second] = std::move(m);
      }
      return it->second;
    }
    seen.emplace(m.spec.orders, res.rows.size());
    res.rows.push_back(make_sweep_row(m));
    res.models.push_back(std::move(m));
    return res.rows.size() - 1;
  };

  std::size_t current = record(start);
  for (int pass = 0; pass < 2; ++pass) {
    for (int j = 0; j < G; ++j) {
      const FittedModel base = res.models[current];
      std::size_t best = current;
      for (int o = q; o <= base.spec.max_order; ++o) {
        if (o == base.spec.orders[j]) continue;
        std::vector<int> orders = base.spec.orders;
        orders[j] = o;
        ModelSpec spec = base.spec;
        spec.orders = orders;
        MixtureParams warm = base.params;
        Eigen::VectorXd beta = Eigen::VectorXd::Zero(o + 1);
        const Eigen::Index keep = std::min<Eigen::Index>(beta.size(), warm.groups[j].beta.size());
        beta.head(keep) = warm.groups[j].beta.head(keep);
        warm.groups[j].beta = beta;
        spec.start = warm;
        FittedModel m;
        try {
          m = fit(data, spec, c);
        } catch (const NumericError&) {
          continue;
        }
        m.excluded_subjects = start.excluded_subjects;
        const std::size_t idx = record(std::move(m));
        if (res.rows[idx].converged && res.rows[idx].bic > res.rows[best].bic) best = idx;
      }
      current = best;
    }
  }

  const std::vector<int> chosen = res.models[current].spec.orders;
  sort_rows(res);
  for (std::size_t i = 0; i < res.rows.size(); ++i)
    if (res.rows[i].orders == chosen) res.recommended = i;
  std::ostringstream os;
  os << "orders [" << orders_text(chosen) << "] reached the largest BIC ("
     << res.rows[*res.recommended].bic << ") in the coordinate search";
  res.rationale = os.str();
  return res;
}

}  // namespace gbtm
