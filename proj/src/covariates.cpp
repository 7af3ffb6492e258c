#include "gbtm/covariates.hpp"

#include "gbtm/numerics.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

namespace gbtm {

namespace {

Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& X) {
  Eigen::MatrixXd Z(X.rows(), X.cols() + 1);
  Z.col(0).setOnes();
  Z.rightCols(X.cols()) = X;
  return Z;
}

// Linear predictors N x K with the reference column at zero.
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& eta) {
  Eigen::MatrixXd p(eta.rows(), eta.cols());
  for (Eigen::Index i = 0; i < eta.rows(); ++i) {
    const double hi = eta.row(i).maxCoeff();
    p.row(i) = (eta.row(i).array() - hi).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

struct MultinomialState {
  double loglik = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
};

// Parameters are packed row-major over the free (non-reference) groups.
Eigen::MatrixXd unpack_coefficients(const Eigen::VectorXd& v, int K, int ref, Eigen::Index p) {
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(K, p);
  Eigen::Index k = 0;
  for (int g = 0; g < K; ++g) {
    if (g == ref) continue;
    B.row(g) = v.segment(k, p).transpose();
    k += p;
  }
  return B;
}

double multinomial_loglik(const Eigen::MatrixXd& Z, const std::vector<int>& y,
                          const Eigen::MatrixXd& B) {
  const Eigen::MatrixXd eta = Z * B.transpose();
  double ll = 0.0;
  for (Eigen::Index i = 0; i < Z.rows(); ++i) ll += eta(i, y[i]) - log_sum_exp(eta.row(i));
  return ll;
}

MultinomialState multinomial_state(const Eigen::MatrixXd& Z, const std::vector<int>& y,
                                   const Eigen::MatrixXd& B, int ref) {
  const Eigen::Index N = Z.rows();
  const Eigen::Index p = Z.cols();
  const int K = static_cast<int>(B.rows());
  const Eigen::MatrixXd eta = Z * B.transpose();
  const Eigen::MatrixXd prob = softmax_rows(eta);
  MultinomialState st;
  st.loglik = 0.0;
  for (Eigen::Index i = 0; i < N; ++i) st.loglik += eta(i, y[i]) - log_sum_exp(eta.row(i));

  std::vector<int> free;
  for (int g = 0; g < K; ++g)
    if (g != ref) free.push_back(g);
  const Eigen::Index P = static_cast<Eigen::Index>(free.size()) * p;
  st.grad = Eigen::VectorXd::Zero(P);
  st.hess = Eigen::MatrixXd::Zero(P, P);
  for (std::size_t a = 0; a < free.size(); ++a) {
    const int k = free[a];
    Eigen::VectorXd resid(N);
    for (Eigen::Index i = 0; i < N; ++i) resid(i) = (y[i] == k ? 1.0 : 0.0) - prob(i, k);
    st.grad.segment(static_cast<Eigen::Index>(a) * p, p) = Z.transpose() * resid;
    for (std::size_t b = a; b < free.size(); ++b) {
      const int l = free[b];
      Eigen::VectorXd w(N);
      for (Eigen::Index i = 0; i < N; ++i)
        w(i) = prob(i, k) * ((k == l ? 1.0 : 0.0) - prob(i, l));
      const Eigen::MatrixXd block = -(Z.transpose() * w.asDiagonal() * Z);
      st.hess.block(static_cast<Eigen::Index>(a) * p, static_cast<Eigen::Index>(b) * p, p, p) = block;
      if (b != a)
        st.hess.block(static_cast<Eigen::Index>(b) * p, static_cast<Eigen::Index>(a) * p, p, p) =
            block.transpose();
    }
  }
  return st;
}

void check_rank(const Eigen::MatrixXd& Z, const std::vector<std::string>& names) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Z);
  const Eigen::Index r = qr.rank();
  if (r == Z.cols()) return;
  // Null vectors from R = [R11 R12]; every column they load on is collinear.
  const Eigen::MatrixXd R = qr.matrixR().topRows(r).template triangularView<Eigen::Upper>();
  const Eigen::MatrixXd coef =
      R.leftCols(r).triangularView<Eigen::Upper>().solve(R.rightCols(Z.cols() - r));
  const auto& perm = qr.colsPermutation().indices();
  std::vector<bool> involved(Z.cols(), false);
  for (Eigen::Index c = 0; c < coef.cols(); ++c) {
    involved[perm(r + c)] = true;
    const double scale = std::max(1.0, coef.col(c).cwiseAbs().maxCoeff());
    for (Eigen::Index k = 0; k < r; ++k)
      if (std::abs(coef(k, c)) > 1e-8 * scale) involved[perm(k)] = true;
  }
  std::vector<std::string> collinear;
  for (Eigen::Index c = 0; c < Z.cols(); ++c)
    if (involved[c]) collinear.push_back(names[c]);
  std::sort(collinear.begin(), collinear.end());
  std::ostringstream os;
  os << "rank-deficient design; collinear predictors:";
  for (const auto& n : collinear) os << " " << n;
  throw ValidationError(os.str());
}

}  // namespace

Eigen::MatrixXd RegressionResult::predict_probabilities(const Eigen::MatrixXd& X) const {
  return softmax_rows(with_intercept(X) * coefficients.transpose());
}

std::vector<int> RegressionResult::predict(const Eigen::MatrixXd& X) const {
  const Eigen::MatrixXd p = predict_probabilities(X);
  std::vector<int> out(p.rows());
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < p.cols(); ++k)
      if (p(i, k) > p(i, best)) best = k;
    out[i] = groups[best];
  }
  return out;
}

RegressionResult multinomial_fit(const Eigen::MatrixXd& X, std::span<const int> groups,
                                 std::optional<int> reference, std::vector<std::string> names) {
  const Eigen::Index N = X.rows();
  if (static_cast<Eigen::Index>(groups.size()) != N)
    throw ValidationError("predictor rows differ from group assignments");
  if (!X.allFinite()) throw ValidationError("predictors must be finite");
  if (names.empty())
    for (Eigen::Index c = 0; c < X.cols(); ++c) names.push_back("x" + std::to_string(c + 1));
  if (static_cast<Eigen::Index>(names.size()) != X.cols())
    throw ValidationError("predictor names differ from predictor columns");

  RegressionResult res;
  std::set<int> labels(groups.begin(), groups.end());
  res.groups.assign(labels.begin(), labels.end());
  const int K = static_cast<int>(res.groups.size());
  if (K < 2) throw ValidationError("multinomial regression needs at least 2 groups");
  res.reference_group = reference ? *reference : res.groups.back();
  const auto ref_it = std::find(res.groups.begin(), res.groups.end(), res.reference_group);
  if (ref_it == res.groups.end())
    throw ValidationError("reference group " + std::to_string(res.reference_group) + " not present");
  const int ref = static_cast<int>(ref_it - res.groups.begin());

  std::vector<int> y(N);
  for (Eigen::Index i = 0; i < N; ++i)
    y[i] = static_cast<int>(std::lower_bound(res.groups.begin(), res.groups.end(), groups[i]) -
                            res.groups.begin());

  const Eigen::MatrixXd Z = with_intercept(X);
  const Eigen::Index p = Z.cols();
  res.term_names.push_back("(Intercept)");
  res.term_names.insert(res.term_names.end(), names.begin(), names.end());
  const Eigen::Index P = (K - 1) * p;
  if (N <= P)
    throw ValidationError("multinomial regression needs more subjects (" + std::to_string(N) +
                          ") than parameters (" + std::to_string(P) + ")");
  check_rank(Z, res.term_names);

  // Start from the intercept-only solution.
  std::vector<double> counts(K, 0.0);
  for (int g : y) counts[g] += 1.0;
  Eigen::VectorXd v = Eigen::VectorXd::Zero(P);
  {
    Eigen::Index k = 0;
    for (int g = 0; g < K; ++g) {
      if (g == ref) continue;
      v(k * p) = std::log(counts[g] / counts[ref]);
      ++k;
    }
  }
  res.null_loglik = 0.0;
  for (int g = 0; g < K; ++g) res.null_loglik += counts[g] * std::log(counts[g] / N);

  MultinomialState st = multinomial_state(Z, y, unpack_coefficients(v, K, ref, p), ref);
  for (int it = 1; it <= 200; ++it) {
    res.iterations = it;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(-st.hess);
    Eigen::VectorXd step = ldlt.solve(st.grad);
    if (ldlt.info() != Eigen::Success || !step.allFinite()) {
      Eigen::MatrixXd A = -st.hess;
      A.diagonal().array() += 1e-8 * (1.0 + A.diagonal().cwiseAbs().maxCoeff());
      step = A.ldlt().solve(st.grad);
    }
    if (step.allFinite() && std::abs(st.grad.dot(step)) < 1e-20 * (1.0 + std::abs(st.loglik))) {
      res.converged = true;
      break;
    }
    double alpha = 1.0;
    bool accepted = false;
    Eigen::VectorXd vn;
    for (int h = 0; h < 40; ++h, alpha *= 0.5) {
      vn = v + alpha * step;
      const double lln = multinomial_loglik(Z, y, unpack_coefficients(vn, K, ref, p));
      if (std::isfinite(lln) && lln >= st.loglik) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      res.converged = st.grad.cwiseAbs().maxCoeff() < 1e-6;
      break;
    }
    const double max_step = (alpha * step).cwiseAbs().maxCoeff();
    v = vn;
    st = multinomial_state(Z, y, unpack_coefficients(v, K, ref, p), ref);
    if (max_step < 1e-12) {
      res.converged = true;
      break;
    }
    if (v.cwiseAbs().maxCoeff() > 1e3) break;
  }

  res.loglik = st.loglik;
  res.n = static_cast<int>(N);
  res.coefficients = unpack_coefficients(v, K, ref, p);
  Eigen::LDLT<Eigen::MatrixXd> info(-st.hess);
  res.covariance = info.solve(Eigen::MatrixXd::Identity(P, P));
  if (!res.converged) res.warnings.push_back("Newton-Raphson did not converge");

  const boost::math::normal standard;
  Eigen::Index k = 0;
  for (int g = 0; g < K; ++g) {
    if (g == ref) continue;
    GroupEquation eq;
    eq.group = res.groups[g];
    for (Eigen::Index c = 0; c < p; ++c) {
      Coefficient cf;
      cf.term = res.term_names[c];
      cf.b = v(k * p + c);
      const double var = res.covariance(k * p + c, k * p + c);
      cf.se = var > 0.0 ? std::sqrt(var) : std::numeric_limits<double>::quiet_NaN();
      cf.z = cf.b / cf.se;
      cf.p = std::isfinite(cf.z)
                 ? 2.0 * boost::math::cdf(boost::math::complement(standard, std::abs(cf.z)))
                 : std::numeric_limits<double>::quiet_NaN();
      cf.exp_b = std::exp(cf.b);
      cf.lo95 = std::exp(cf.b - 1.96 * cf.se);
      cf.hi95 = std::exp(cf.b + 1.96 * cf.se);
      cf.separated = std::abs(cf.b) > kSeparationBound;
      if (cf.separated)
        res.warnings.push_back("possible separation: group " + std::to_string(eq.group) + ", term " +
                               cf.term + " has |B| > 15");
      eq.terms.push_back(std::move(cf));
    }
    res.equations.push_back(std::move(eq));
    ++k;
  }

  const double n = static_cast<double>(N);
  res.cox_snell_r2 = 1.0 - std::exp(2.0 * (res.null_loglik - res.loglik) / n);
  res.nagelkerke_r2 = res.cox_snell_r2 / (1.0 - std::exp(2.0 * res.null_loglik / n));
  res.model_chi2 = 2.0 * (res.loglik - res.null_loglik);
  res.df = static_cast<int>((K - 1) * X.cols());
  if (res.df > 0) {
    const boost::math::chi_squared dist(res.df);
    res.model_p = boost::math::cdf(boost::math::complement(dist, std::max(res.model_chi2, 0.0)));
  }
  return res;
}

Design encode_predictors(const std::vector<Predictor>& predictors) {
  Design d;
  Eigen::Index N = -1;
  std::vector<Eigen::VectorXd> cols;
  for (const auto& pr : predictors) {
    const Eigen::Index n = std::visit([](const auto& v) { return static_cast<Eigen::Index>(v.size()); },
                                      pr.values);
    if (N >= 0 && n != N)
      throw ValidationError("predictor '" + pr.name + "' has a different length");
    N = n;
    if (const auto* num = std::get_if<std::vector<double>>(&pr.values)) {
      cols.push_back(Eigen::Map<const Eigen::VectorXd>(num->data(), n));
      d.names.push_back(pr.name);
    } else {
      const auto& cat = std::get<std::vector<std::string>>(pr.values);
      const std::set<std::string> levels(cat.begin(), cat.end());
      auto it = levels.begin();
      for (++it; it != levels.end(); ++it) {
        Eigen::VectorXd c(n);
        for (Eigen::Index i = 0; i < n; ++i) c(i) = cat[i] == *it ? 1.0 : 0.0;
        cols.push_back(std::move(c));
        d.names.push_back(pr.name + "=" + *it);
      }
    }
  }
  d.X.resize(std::max<Eigen::Index>(N, 0), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) d.X.col(static_cast<Eigen::Index>(c)) = cols[c];
  return d;
}

std::vector<Predictor> covariate_predictors(const LongitudinalDataset& data) {
  std::vector<std::string> journal, doc;
  std::vector<double> authors, refs, pages;
  for (const auto& c : data.covariates) {
    journal.push_back(c.journal);
    doc.push_back(to_string(c.doc_type));
    authors.push_back(c.n_authors);
    refs.push_back(c.n_refs);
    pages.push_back(c.n_pages);
  }
  return {{"journal", journal},
          {"doc_type", doc},
          {"n_authors", authors},
          {"n_refs", refs},
          {"n_pages", pages}};
}

ChiSquareResult chi_square_test(const Eigen::MatrixXd& table) {
  ChiSquareResult res;
  if (table.size() == 0) throw ValidationError("chi-square needs a non-empty table");
  if ((table.array() < 0.0).any()) throw ValidationError("chi-square counts must be nonnegative");
  std::vector<Eigen::Index> rows, cols;
  for (Eigen::Index r = 0; r < table.rows(); ++r) {
    if (table.row(r).sum() > 0.0)
      rows.push_back(r);
    else
      res.warnings.push_back("row " + std::to_string(r + 1) + " has a zero marginal; dropped");
  }
  for (Eigen::Index c = 0; c < table.cols(); ++c) {
    if (table.col(c).sum() > 0.0)
      cols.push_back(c);
    else
      res.warnings.push_back("column " + std::to_string(c + 1) + " has a zero marginal; dropped");
  }
  const auto R = static_cast<Eigen::Index>(rows.size());
  const auto C = static_cast<Eigen::Index>(cols.size());
  res.observed.resize(R, C);
  for (Eigen::Index r = 0; r < R; ++r)
    for (Eigen::Index c = 0; c < C; ++c) res.observed(r, c) = table(rows[r], cols[c]);
  const Eigen::VectorXd row_sum = res.observed.rowwise().sum();
  const Eigen::RowVectorXd col_sum = res.observed.colwise().sum();
  const double total = res.observed.sum();
  res.expected = row_sum * col_sum / total;
  res.df = static_cast<int>((R - 1) * (C - 1));
  double chi2 = 0.0;
  bool small = false;
  for (Eigen::Index r = 0; r < R; ++r) {
    for (Eigen::Index c = 0; c < C; ++c) {
      const double e = res.expected(r, c);
      const double d = res.observed(r, c) - e;
      chi2 += d * d / e;
      small = small || e < 5.0;
    }
  }
  if (small) res.warnings.push_back("some expected counts are below 5");
  res.chi2 = chi2;
  if (res.df <= 0) {
    res.warnings.push_back("table has no degrees of freedom after dropping empty margins");
    res.chi2 = 0.0;
    res.p = 1.0;
    return res;
  }
  const boost::math::chi_squared dist(res.df);
  res.p = boost::math::cdf(boost::math::complement(dist, res.chi2));
  return res;
}

ChiSquareResult chi_square_test(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.size() != b.size()) throw ValidationError("chi-square variables differ in length");
  std::map<std::string, Eigen::Index> ra, cb;
  for (const auto& s : a) ra.emplace(s, 0);
  for (const auto& s : b) cb.emplace(s, 0);
  Eigen::Index k = 0;
  for (auto& [_, idx] : ra) idx = k++;
  k = 0;
  for (auto& [_, idx] : cb) idx = k++;
  Eigen::MatrixXd table = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ra.size()),
                                                static_cast<Eigen::Index>(cb.size()));
  for (std::size_t i = 0; i < a.size(); ++i) table(ra[a[i]], cb[b[i]]) += 1.0;
  ChiSquareResult res = chi_square_test(table);
  for (const auto& [label, _] : ra) res.row_labels.push_back(label);
  for (const auto& [label, _] : cb) res.col_labels.push_back(label);
  return res;
}

ChiSquareResult chi_square_test(std::span<const std::string> categories,
                                std::span<const int> groups) {
  std::vector<std::string> labels;
  labels.reserve(groups.size());
  for (int g : groups) labels.push_back(std::to_string(g));
  return chi_square_test(categories, std::span<const std::string>(labels));
}

ClassificationTable classify_membership(const PredictorSet& set, std::span<const int> groups) {
  const Design d = encode_predictors(set.predictors);
  const RegressionResult fit = multinomial_fit(d.X, groups, std::nullopt, d.names);
  const std::vector<int> predicted = fit.predict(d.X);
  ClassificationTable tab;
  tab.name = set.name;
  tab.groups = fit.groups;
  tab.warnings = fit.warnings;
  const auto K = static_cast<Eigen::Index>(fit.groups.size());
  tab.counts = Eigen::MatrixXi::Zero(K, K);
  auto index_of = [&](int label) {
    return static_cast<Eigen::Index>(
        std::lower_bound(fit.groups.begin(), fit.groups.end(), label) - fit.groups.begin());
  };
  for (std::size_t i = 0; i < groups.size(); ++i)
    tab.counts(index_of(groups[i]), index_of(predicted[i])) += 1;
  tab.percent_correct = 100.0 * tab.counts.trace() / static_cast<double>(groups.size());
  return tab;
}

std::vector<ClassificationTable> classification_table(const std::vector<PredictorSet>& sets,
                                                      std::span<const int> groups) {
  std::vector<ClassificationTable> out;
  for (const auto& s : sets) out.push_back(classify_membership(s, groups));
  return out;
}

}  // namespace gbtm
