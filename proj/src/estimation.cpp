#include "gbtm/estimation.hpp"

#include "gbtm/selection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace gbtm {

void FitControls::validate() const {
  if (max_em_iterations < 1) throw ValidationError("max_em_iterations must be positive");
  if (!(loglik_tolerance > 0.0 && loglik_tolerance < 1.0))
    throw ValidationError("loglik_tolerance must lie in (0, 1)");
  if (max_newton_iterations < 1) throw ValidationError("max_newton_iterations must be positive");
  if (!(ridge > 0.0)) throw ValidationError("ridge must be positive");
  if (n_restarts < 1) throw ValidationError("n_restarts must be positive");
}

ModelSpec ModelSpec::uniform(int n_groups, int order, int iorder) {
  ModelSpec spec;
  spec.orders.assign(n_groups > 0 ? n_groups : 0, order);
  spec.iorder = iorder;
  return spec;
}

void ModelSpec::validate() const {
  if (orders.empty()) throw ValidationError("model needs at least one group");
  if (iorder < 0) throw ValidationError("iorder must be nonnegative");
  for (std::size_t j = 0; j < orders.size(); ++j) {
    if (orders[j] < 0 || orders[j] > max_order)
      throw ValidationError("order of group " + std::to_string(j + 1) + " must lie in 0.." +
                            std::to_string(max_order));
    if (inflation == InflationMode::estimated && iorder > orders[j])
      throw ValidationError("iorder " + std::to_string(iorder) + " exceeds order of group " +
                            std::to_string(j + 1));
  }
  if (start) {
    start->validate();
    if (start->n_groups() != n_groups())
      throw ValidationError("starting values have the wrong number of groups");
    for (int j = 0; j < n_groups(); ++j) {
      if (start->groups[j].order() != orders[j])
        throw ValidationError("starting values for group " + std::to_string(j + 1) +
                              " have the wrong order");
      if (inflation == InflationMode::estimated && start->groups[j].inflation_order() != iorder)
        throw ValidationError("starting values for group " + std::to_string(j + 1) +
                              " have the wrong inflation order");
    }
  }
}

int parameter_count(const ModelSpec& spec) {
  const int G = spec.n_groups();
  int k = G - 1;
  for (int o : spec.orders) k += o + 1;
  if (spec.inflation == InflationMode::estimated) k += G * (spec.iorder + 1);
  return k;
}

namespace {

constexpr double kRateFloor = 1e-6;
constexpr double kWeightFloor = 1e-12;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Per-period posterior-weighted sufficient statistics of one group.
struct PeriodStats {
  Eigen::VectorXd zeros;     // sum_i w_ij [y_it == 0]
  Eigen::VectorXd positive;  // sum_i w_ij [y_it > 0]
  Eigen::VectorXd counts;    // sum_i w_ij y_it
};

template <typename Accumulator>
std::vector<PeriodStats> period_stats(const LongitudinalDataset& data,
                                      const Eigen::MatrixXd& post) {
  const int N = data.n_subjects();
  const int T = data.n_periods();
  const int G = static_cast<int>(post.cols());
  std::vector<Accumulator> acc(static_cast<std::size_t>(G) * T * 3);
  auto slot = [T](int j, int t, int kind) { return (static_cast<std::size_t>(j) * T + t) * 3 + kind; };
  for (int i = 0; i < N; ++i) {
    for (int t = 0; t < T; ++t) {
      const int y = data.counts(i, t);
      for (int j = 0; j < G; ++j) {
        const double w = post(i, j);
        if (y == 0) {
          acc[slot(j, t, 0)].add(w);
        } else {
          acc[slot(j, t, 1)].add(w);
          acc[slot(j, t, 2)].add(w * y);
        }
      }
    }
  }
  std::vector<PeriodStats> out(G);
  for (int j = 0; j < G; ++j) {
    out[j].zeros.resize(T);
    out[j].positive.resize(T);
    out[j].counts.resize(T);
    for (int t = 0; t < T; ++t) {
      out[j].zeros(t) = acc[slot(j, t, 0)].value();
      out[j].positive(t) = acc[slot(j, t, 1)].value();
      out[j].counts(t) = acc[slot(j, t, 2)].value();
    }
  }
  return out;
}

// Expected complete-data log-likelihood of one group as a function of its
// link-scale curves, with derivatives per period.
struct LinkTerms {
  double value = 0.0;
  Eigen::VectorXd d_eta, d_zeta;
  Eigen::VectorXd h_eta_eta, h_eta_zeta, h_zeta_zeta;
};

LinkTerms link_terms(const PeriodStats& st, const Eigen::VectorXd& eta,
                     const Eigen::VectorXd& zeta, bool with_hessian) {
  const Eigen::Index T = eta.size();
  LinkTerms out;
  out.d_eta.resize(T);
  out.d_zeta.resize(T);
  if (with_hessian) {
    out.h_eta_eta.resize(T);
    out.h_eta_zeta.resize(T);
    out.h_zeta_zeta.resize(T);
  }
  double value = 0.0;
  for (Eigen::Index t = 0; t < T; ++t) {
    const double lambda = std::exp(eta(t));
    const double w0 = st.zeros(t);
    const double wp = st.positive(t);
    const double s = logistic(zeta(t));
    // share of observed zeros attributed to the structural-zero component
    const double r = logistic(zeta(t) + lambda);
    const double log_zero = log_add_exp(zeta(t), -lambda) - log1pexp(zeta(t));
    if (w0 > 0.0) value += w0 * log_zero;
    value += wp * (-log1pexp(zeta(t)) - lambda) + st.counts(t) * eta(t);
    out.d_eta(t) = -w0 * (1.0 - r) * lambda - wp * lambda + st.counts(t);
    out.d_zeta(t) = w0 * (r - s) - wp * s;
    if (with_hessian) {
      const double rr = r * (1.0 - r);
      const double ss = s * (1.0 - s);
      out.h_eta_eta(t) = w0 * (rr * lambda * lambda - (1.0 - r) * lambda) - wp * lambda;
      out.h_eta_zeta(t) = w0 * lambda * rr;
      out.h_zeta_zeta(t) = w0 * (rr - ss) - wp * ss;
    }
  }
  out.value = value;
  return out;
}

class GroupObjective {
 public:
  GroupObjective(const PeriodStats& stats, const TimeAxis& axis, int order, int iorder,
                 bool free_gamma, Eigen::VectorXd fixed_gamma)
      : stats_(stats),
        Xb_(axis.design(order)),
        Xg_(axis.design(iorder)),
        free_gamma_(free_gamma),
        fixed_gamma_(std::move(fixed_gamma)) {}

  Eigen::Index size() const { return Xb_.cols() + (free_gamma_ ? Xg_.cols() : 0); }

  Eigen::VectorXd pack(const GroupParams& g) const {
    Eigen::VectorXd z(size());
    z.head(Xb_.cols()) = g.beta;
    if (free_gamma_) z.tail(Xg_.cols()) = g.gamma;
    return z;
  }

  GroupParams unpack(const Eigen::VectorXd& z) const {
    GroupParams g;
    g.beta = z.head(Xb_.cols());
    g.gamma = free_gamma_ ? Eigen::VectorXd(z.tail(Xg_.cols())) : fixed_gamma_;
    return g;
  }

  // Returns -inf outside the representable range.
  double evaluate(const Eigen::VectorXd& z, Eigen::VectorXd* grad, Eigen::MatrixXd* hess) const {
    const Eigen::Index pb = Xb_.cols();
    const Eigen::VectorXd eta = Xb_ * z.head(pb);
    const Eigen::VectorXd zeta =
        free_gamma_ ? Eigen::VectorXd(Xg_ * z.tail(Xg_.cols())) : Eigen::VectorXd(Xg_ * fixed_gamma_);
    if (!(eta.cwiseAbs().maxCoeff() <= kMaxLinearPredictor) ||
        !(zeta.cwiseAbs().maxCoeff() <= kMaxLinearPredictor))
      return -std::numeric_limits<double>::infinity();
    const LinkTerms lt = link_terms(stats_, eta, zeta, hess != nullptr);
    if (grad) {
      grad->resize(size());
      grad->head(pb) = Xb_.transpose() * lt.d_eta;
      if (free_gamma_) grad->tail(Xg_.cols()) = Xg_.transpose() * lt.d_zeta;
    }
    if (hess) {
      hess->resize(size(), size());
      hess->topLeftCorner(pb, pb) = Xb_.transpose() * lt.h_eta_eta.asDiagonal() * Xb_;
      if (free_gamma_) {
        const Eigen::Index pg = Xg_.cols();
        hess->bottomRightCorner(pg, pg) = Xg_.transpose() * lt.h_zeta_zeta.asDiagonal() * Xg_;
        hess->topRightCorner(pb, pg) = Xb_.transpose() * lt.h_eta_zeta.asDiagonal() * Xg_;
        hess->bottomLeftCorner(pg, pb) = hess->topRightCorner(pb, pg).transpose();
      }
    }
    return lt.value;
  }

 private:
  const PeriodStats& stats_;
  Eigen::MatrixXd Xb_;
  Eigen::MatrixXd Xg_;
  bool free_gamma_;
  Eigen::VectorXd fixed_gamma_;
};

struct NewtonResult {
  Eigen::VectorXd z;
  bool diverged = false;
};

// Ridge-damped Newton ascent with step halving; never accepts a step that
// lowers the objective.
NewtonResult newton_ascent(const GroupObjective& obj, Eigen::VectorXd z, int max_iter,
                           double ridge) {
  NewtonResult res;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
  for (int it = 0; it < max_iter; ++it) {
    const double f = obj.evaluate(z, &grad, &hess);
    if (!std::isfinite(f) || !grad.allFinite() || !hess.allFinite()) {
      res.diverged = true;
      break;
    }
    Eigen::MatrixXd A = -hess;
    A.diagonal().array() += ridge;
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    double lam = std::max(ridge, 1e-8 * (1.0 + A.diagonal().cwiseAbs().maxCoeff()));
    for (int tries = 0; llt.info() != Eigen::Success && tries < 60; ++tries) {
      A = -hess;
      A.diagonal().array() += lam;
      llt.compute(A);
      lam *= 10.0;
    }
    if (llt.info() != Eigen::Success) {
      res.diverged = true;
      break;
    }
    const Eigen::VectorXd dir = llt.solve(grad);
    if (!dir.allFinite()) {
      res.diverged = true;
      break;
    }
    double alpha = 1.0;
    bool accepted = false;
    Eigen::VectorXd zn;
    double fn = f;
    for (int h = 0; h < 40; ++h, alpha *= 0.5) {
      zn = z + alpha * dir;
      fn = obj.evaluate(zn, nullptr, nullptr);
      if (std::isfinite(fn) && fn >= f) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    z = zn;
    if (fn - f <= 1e-13 * (1.0 + std::abs(f))) break;
  }
  res.z = std::move(z);
  return res;
}

struct EStep {
  Eigen::MatrixXd post;
  double loglik = 0.0;
};

EStep e_step(const LongitudinalDataset& data, const MixtureParams& params) {
  EStep out;
  const Eigen::MatrixXd dens = group_log_densities(data, params);
  const Eigen::RowVectorXd log_w = params.weights().array().log().transpose();
  out.post.resize(dens.rows(), dens.cols());
  ExactSum ll;
  for (Eigen::Index i = 0; i < dens.rows(); ++i) {
    const Eigen::RowVectorXd lj = dens.row(i) + log_w;
    ll.add(normalize_posterior_row(lj, out.post.row(i), data.subject_ids[i]));
  }
  out.loglik = ll.value();
  return out;
}

Eigen::VectorXd theta_from_posteriors(const Eigen::MatrixXd& post) {
  const Eigen::Index G = post.cols();
  Eigen::VectorXd pi(G);
  for (Eigen::Index j = 0; j < G; ++j) {
    CompensatedSum acc;
    for (Eigen::Index i = 0; i < post.rows(); ++i) acc.add(post(i, j));
    pi(j) = std::max(acc.value() / static_cast<double>(post.rows()), kWeightFloor);
  }
  pi /= pi.sum();
  return weights_to_theta(pi);
}

struct RunResult {
  MixtureParams params;
  EStep last;
  bool converged = false;
  bool failed = false;
  std::string reason;
  std::vector<std::string> trail;
  std::vector<double> trace;
  int iterations = 0;
};

MixtureParams m_step(const LongitudinalDataset& data, const ModelSpec& spec,
                     const FitControls& controls, const MixtureParams& current,
                     const Eigen::MatrixXd& post, int iteration,
                     std::vector<std::string>& trail) {
  MixtureParams next;
  next.theta = theta_from_posteriors(post);
  const auto stats = period_stats<CompensatedSum>(data, post);
  const bool free_gamma = spec.inflation == InflationMode::estimated;
  for (int j = 0; j < current.n_groups(); ++j) {
    const GroupParams& g = current.groups[j];
    GroupObjective obj(stats[j], data.axis, g.order(), g.inflation_order(), free_gamma,
                       g.gamma);
    NewtonResult nr = newton_ascent(obj, obj.pack(g), controls.max_newton_iterations,
                                    controls.ridge);
    if (nr.diverged) {
      const double bigger = controls.ridge * 1e4;
      std::ostringstream os;
      os << "iteration " << iteration << ": newton divergence in group " << (j + 1)
         << ", restarted with ridge " << bigger;
      trail.push_back(os.str());
      nr = newton_ascent(obj, obj.pack(g), controls.max_newton_iterations, bigger);
    }
    const GroupParams candidate = obj.unpack(nr.z);
    next.groups.push_back(candidate.beta.allFinite() && candidate.gamma.allFinite() ? candidate : g);
  }
  return next;
}

RunResult run_em(const LongitudinalDataset& data, const ModelSpec& spec,
                 const FitControls& controls, MixtureParams start) {
  RunResult run;
  try {
    run.params = std::move(start);
    run.last = e_step(data, run.params);
  } catch (const NumericError& e) {
    run.failed = true;
    run.reason = std::string("numeric_failure: ") + e.what();
    return run;
  }
  run.trace.push_back(run.last.loglik);
  for (int it = 1; it <= controls.max_em_iterations; ++it) {
    MixtureParams next = m_step(data, spec, controls, run.params, run.last.post, it, run.trail);
    EStep es;
    try {
      es = e_step(data, next);
    } catch (const NumericError& e) {
      run.trail.push_back("iteration " + std::to_string(it) + ": " + e.what());
      run.reason = "numeric_failure";
      run.iterations = it;
      return run;
    }
    const double delta = es.loglik - run.last.loglik;
    run.params = std::move(next);
    run.last = std::move(es);
    run.trace.push_back(run.last.loglik);
    run.iterations = it;
    if (std::abs(delta) < controls.loglik_tolerance) {
      run.converged = true;
      run.reason = "converged";
      return run;
    }
  }
  run.reason = "max_iterations";
  return run;
}

double safe_loglik(const LongitudinalDataset& data, const MixtureParams& p) {
  try {
    return total_log_likelihood(data, p);
  } catch (const NumericError&) {
    return -std::numeric_limits<double>::infinity();
  }
}

// BFGS on the negative log-likelihood over all free parameters.
MixtureParams refine_bfgs(const LongitudinalDataset& data, const MixtureParams& start,
                          InflationMode mode, double& loglik) {
  Eigen::VectorXd x = pack_parameters(start, mode);
  const Eigen::Index P = x.size();
  double f = -loglik;
  Eigen::VectorXd g = -loglik_gradient(data, start, mode);
  Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(P, P);
  bool scaled = false;
  int stalled = 0;
  for (int it = 0; it < 1000; ++it) {
    if (g.cwiseAbs().maxCoeff() < 1e-8) break;
    Eigen::VectorXd d = -Hinv * g;
    double slope = g.dot(d);
    if (!(slope < 0.0)) {
      Hinv.setIdentity();
      d = -g;
      slope = g.dot(d);
    }
    double alpha = 1.0;
    bool accepted = false;
    Eigen::VectorXd xn;
    double fn = f;
    for (int h = 0; h < 50; ++h, alpha *= 0.5) {
      xn = x + alpha * d;
      fn = -safe_loglik(data, unpack_parameters(xn, start, mode));
      if (std::isfinite(fn) && fn <= f + 1e-4 * alpha * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    const Eigen::VectorXd gn = -loglik_gradient(data, unpack_parameters(xn, start, mode), mode);
    const Eigen::VectorXd s = xn - x;
    const Eigen::VectorXd y = gn - g;
    const double sy = s.dot(y);
    const double gain = f - fn;
    x = xn;
    f = fn;
    g = gn;
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (!scaled) {
        Hinv *= sy / y.squaredNorm();
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(P, P);
      Hinv = (I - rho * s * y.transpose()) * Hinv * (I - rho * y * s.transpose()) +
             rho * s * s.transpose();
    }
    stalled = gain < 1e-14 * (1.0 + std::abs(f)) ? stalled + 1 : 0;
    if (stalled >= 5) break;
  }
  loglik = -f;
  return unpack_parameters(x, start, mode);
}

MixtureParams jitter(MixtureParams p, const ModelSpec& spec, std::uint64_t seed, int restart) {
  std::mt19937_64 rng(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(restart))));
  std::normal_distribution<double> noise(0.0, 0.1);
  for (Eigen::Index j = 1; j < p.theta.size(); ++j) p.theta(j) += noise(rng);
  for (auto& g : p.groups) {
    for (Eigen::Index m = 0; m < g.beta.size(); ++m) g.beta(m) += noise(rng);
    if (spec.inflation == InflationMode::estimated)
      for (Eigen::Index m = 0; m < g.gamma.size(); ++m) g.gamma(m) += noise(rng);
  }
  return p;
}

// Poisson log-linear polynomial fit to per-period means.
Eigen::VectorXd poisson_poly_fit(const Eigen::VectorXd& means, const Eigen::MatrixXd& X) {
  const Eigen::Index p = X.cols();
  const double grand = means.mean();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  if (!(grand > 0.0)) {
    beta(0) = std::log(kRateFloor);
    return beta;
  }
  beta(0) = std::log(grand);
  if (p == 1) return beta;
  auto objective = [&](const Eigen::VectorXd& b) {
    const Eigen::VectorXd eta = X * b;
    if (eta.cwiseAbs().maxCoeff() > 50.0) return -std::numeric_limits<double>::infinity();
    return means.dot(eta) - eta.array().exp().sum();
  };
  double f = objective(beta);
  for (int it = 0; it < 50; ++it) {
    const Eigen::VectorXd lambda = (X * beta).array().exp();
    const Eigen::VectorXd grad = X.transpose() * (means - lambda);
    Eigen::MatrixXd A = X.transpose() * lambda.asDiagonal() * X;
    A.diagonal().array() += 1e-8;
    const Eigen::VectorXd dir = A.ldlt().solve(grad);
    double alpha = 1.0;
    bool accepted = false;
    for (int h = 0; h < 30; ++h, alpha *= 0.5) {
      const Eigen::VectorXd bn = beta + alpha * dir;
      const double fn = objective(bn);
      if (std::isfinite(fn) && fn >= f) {
        const double gain = fn - f;
        beta = bn;
        f = fn;
        accepted = gain > 1e-12 * (1.0 + std::abs(f));
        break;
      }
    }
    if (!accepted) break;
  }
  return beta;
}

}  // namespace

MixtureParams initialize(const LongitudinalDataset& data, const ModelSpec& spec,
                         std::uint64_t seed, int restart) {
  spec.validate();
  data.validate();
  const int G = spec.n_groups();
  const int N = data.n_subjects();
  const int T = data.n_periods();
  if (G > N)
    throw ValidationError("cannot seed " + std::to_string(G) + " groups from " +
                          std::to_string(N) + " subjects");

  std::vector<std::int64_t> totals(N);
  for (int i = 0; i < N; ++i) totals[i] = data.subject_total(i);
  std::vector<int> idx(N);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (totals[a] != totals[b]) return totals[a] < totals[b];
    return data.subject_ids[a] < data.subject_ids[b];
  });

  MixtureParams p;
  Eigen::VectorXd sizes(G);
  for (int b = 0; b < G; ++b) {
    const int lo = static_cast<int>(static_cast<std::int64_t>(b) * N / G);
    const int hi = static_cast<int>(static_cast<std::int64_t>(b + 1) * N / G);
    sizes(b) = hi - lo;
    Eigen::VectorXd means = Eigen::VectorXd::Zero(T);
    double zero_cells = 0.0;
    for (int k = lo; k < hi; ++k) {
      const auto row = data.counts.row(idx[k]);
      for (int t = 0; t < T; ++t) {
        means(t) += row(t);
        if (row(t) == 0) zero_cells += 1.0;
      }
    }
    means /= static_cast<double>(hi - lo);
    const double zero_share = zero_cells / (static_cast<double>(hi - lo) * T);
    const double poisson_zero = (-means.array()).exp().mean();
    double s0 = 0.99;
    if (poisson_zero < 1.0 - 1e-12)
      s0 = std::clamp((zero_share - poisson_zero) / (1.0 - poisson_zero), 0.01, 0.99);

    GroupParams g;
    g.beta = poisson_poly_fit(means, data.axis.design(spec.orders[b]));
    if (spec.inflation == InflationMode::estimated) {
      g.gamma = Eigen::VectorXd::Zero(spec.iorder + 1);
      g.gamma(0) = std::log(s0 / (1.0 - s0));
    } else {
      g.gamma = Eigen::VectorXd::Constant(1, kNoInflationLogit);
    }
    p.groups.push_back(std::move(g));
  }
  p.theta = weights_to_theta(sizes / sizes.sum());
  if (restart > 0) p = jitter(std::move(p), spec, seed, restart);
  return p;
}

Eigen::VectorXd pack_parameters(const MixtureParams& params, InflationMode mode) {
  Eigen::Index P = params.n_groups() - 1;
  for (const auto& g : params.groups)
    P += g.beta.size() + (mode == InflationMode::estimated ? g.gamma.size() : 0);
  Eigen::VectorXd x(P);
  Eigen::Index k = 0;
  for (int j = 1; j < params.n_groups(); ++j) x(k++) = params.theta(j);
  for (const auto& g : params.groups) {
    x.segment(k, g.beta.size()) = g.beta;
    k += g.beta.size();
    if (mode == InflationMode::estimated) {
      x.segment(k, g.gamma.size()) = g.gamma;
      k += g.gamma.size();
    }
  }
  return x;
}

MixtureParams unpack_parameters(const Eigen::VectorXd& x, const MixtureParams& shape,
                                InflationMode mode) {
  MixtureParams p = shape;
  Eigen::Index k = 0;
  p.theta(0) = 0.0;
  for (int j = 1; j < p.n_groups(); ++j) p.theta(j) = x(k++);
  for (auto& g : p.groups) {
    g.beta = x.segment(k, g.beta.size());
    k += g.beta.size();
    if (mode == InflationMode::estimated) {
      g.gamma = x.segment(k, g.gamma.size());
      k += g.gamma.size();
    }
  }
  if (k != x.size()) throw ValidationError("parameter vector length mismatch");
  return p;
}

Eigen::VectorXd loglik_gradient(const LongitudinalDataset& data, const MixtureParams& params,
                                InflationMode mode) {
  data.validate();
  params.validate();
  const EStep es = e_step(data, params);
  const int G = params.n_groups();
  const Eigen::VectorXd pi = params.weights();
  const auto stats = period_stats<ExactSum>(data, es.post);

  Eigen::VectorXd grad(pack_parameters(params, mode).size());
  Eigen::Index k = 0;
  for (int j = 1; j < G; ++j) {
    ExactSum acc;
    for (Eigen::Index i = 0; i < es.post.rows(); ++i) acc.add(es.post(i, j) - pi(j));
    grad(k++) = acc.value();
  }
  for (int j = 0; j < G; ++j) {
    const GroupParams& g = params.groups[j];
    const GroupTable table = make_group_table(g, data.axis, j);
    const LinkTerms lt = link_terms(stats[j], table.eta, table.zeta, false);
    grad.segment(k, g.beta.size()) = data.axis.design(g.order()).transpose() * lt.d_eta;
    k += g.beta.size();
    if (mode == InflationMode::estimated) {
      grad.segment(k, g.gamma.size()) =
          data.axis.design(g.inflation_order()).transpose() * lt.d_zeta;
      k += g.gamma.size();
    }
  }
  return grad;
}

Eigen::MatrixXd observed_information(const LongitudinalDataset& data,
                                     const MixtureParams& params, InflationMode mode) {
  const Eigen::VectorXd x = pack_parameters(params, mode);
  const Eigen::Index P = x.size();
  Eigen::MatrixXd J(P, P);
  for (Eigen::Index c = 0; c < P; ++c) {
    const double h = 1e-5 * std::max(1.0, std::abs(x(c)));
    Eigen::VectorXd xp = x, xm = x;
    xp(c) += h;
    xm(c) -= h;
    J.col(c) = (loglik_gradient(data, unpack_parameters(xp, params, mode), mode) -
                loglik_gradient(data, unpack_parameters(xm, params, mode), mode)) /
               (2.0 * h);
  }
  return -0.5 * (J + J.transpose());
}

Eigen::MatrixXd expected_counts(const MixtureParams& params, const TimeAxis& axis) {
  Eigen::MatrixXd out(params.n_groups(), axis.size());
  for (int j = 0; j < params.n_groups(); ++j) {
    const GroupTable tb = make_group_table(params.groups[j], axis, j);
    for (int t = 0; t < axis.size(); ++t)
      out(j, t) = (1.0 - logistic(tb.zeta(t))) * std::exp(tb.eta(t));
  }
  return out;
}

Eigen::VectorXd expected_totals(const MixtureParams& params, const TimeAxis& axis) {
  return expected_counts(params, axis).rowwise().sum();
}

std::vector<int> canonical_order(const MixtureParams& params, const TimeAxis& axis) {
  const Eigen::VectorXd totals = expected_totals(params, axis);
  std::vector<int> perm(params.n_groups());
  std::iota(perm.begin(), perm.end(), 0);
  std::stable_sort(perm.begin(), perm.end(),
                   [&](int a, int b) { return totals(a) < totals(b); });
  return perm;
}

MixtureParams permute_groups(const MixtureParams& params, const std::vector<int>& perm) {
  MixtureParams out;
  out.theta.resize(params.n_groups());
  for (std::size_t k = 0; k < perm.size(); ++k) {
    out.groups.push_back(params.groups[perm[k]]);
    out.theta(static_cast<Eigen::Index>(k)) = params.theta(perm[k]) - params.theta(perm[0]);
  }
  return out;
}

FittedModel fit(const LongitudinalDataset& data, const ModelSpec& spec,
                const FitControls& controls) {
  data.validate();
  spec.validate();
  controls.validate();
  const int N = data.n_subjects();
  const int G = spec.n_groups();
  if (G > N)
    throw ValidationError("cannot fit " + std::to_string(G) + " groups to " +
                          std::to_string(N) + " subjects");

  // Subjects are processed in id order so that the fit does not depend on
  // the row order of the input.
  std::vector<int> order(N);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return data.subject_ids[a] < data.subject_ids[b]; });
  const LongitudinalDataset sorted = data.subset(order);

  FittedModel model;
  model.spec = spec;
  model.spec.start.reset();
  model.axis = data.axis;
  model.seed = controls.seed;
  model.k = parameter_count(spec);
  if (N <= model.k)
    model.warnings.push_back("N = " + std::to_string(N) + " does not exceed the parameter count k = " +
                             std::to_string(model.k));

  std::optional<RunResult> best;
  std::vector<std::string> trail;
  for (int r = 0; r < controls.n_restarts; ++r) {
    MixtureParams start;
    if (spec.start)
      start = r == 0 ? *spec.start : jitter(*spec.start, spec, controls.seed, r);
    else
      start = initialize(sorted, spec, controls.seed, r);
    RunResult run = run_em(sorted, spec, controls, std::move(start));
    for (const auto& line : run.trail) trail.push_back("restart " + std::to_string(r) + ": " + line);
    if (run.failed) {
      trail.push_back("restart " + std::to_string(r) + ": " + run.reason);
      continue;
    }
    if (!best || run.last.loglik > best->last.loglik) best = std::move(run);
  }
  if (!best) throw NumericError("every restart failed to produce a finite likelihood");

  MixtureParams params = best->params;
  double loglik = best->last.loglik;
  if (controls.refine && best->converged) {
    double refined = loglik;
    MixtureParams candidate = refine_bfgs(sorted, params, spec.inflation, refined);
    if (refined > loglik) {
      std::ostringstream os;
      os << "quasi-Newton refinement raised loglik by " << (refined - loglik);
      trail.push_back(os.str());
      params = std::move(candidate);
    }
  }

  const std::vector<int> perm = canonical_order(params, data.axis);
  params = permute_groups(params, perm);
  for (std::size_t k = 0; k < perm.size(); ++k) model.spec.orders[k] = spec.orders[perm[k]];

  const EStep final_step = e_step(sorted, params);
  model.params = params;
  model.loglik = final_step.loglik;
  model.bic = bic(model.loglik, model.k, N);
  model.converged = best->converged;
  model.reason = best->reason;
  model.reason_trail = std::move(trail);
  model.iterations_used = best->iterations;
  model.loglik_trace = best->trace;
  model.subject_ids = data.subject_ids;
  model.posteriors.resize(N, G);
  for (int k = 0; k < N; ++k) model.posteriors.row(order[k]) = final_step.post.row(k);

  const Eigen::VectorXd w = params.weights();
  for (int j = 0; j < G; ++j) {
    if (w(j) < 1e-6)
      model.warnings.push_back("group " + std::to_string(j + 1) + " collapsed to weight " +
                               std::to_string(w(j)));
  }

  if (controls.compute_information) {
    const Eigen::MatrixXd info = observed_information(sorted, params, spec.inflation);
    Eigen::LLT<Eigen::MatrixXd> llt(info);
    if (info.allFinite() && llt.info() == Eigen::Success) {
      model.covariance = llt.solve(Eigen::MatrixXd::Identity(info.rows(), info.cols()));
    } else {
      model.warnings.push_back("observed information is not positive definite");
    }
  }
  return model;
}

OutlierScreen screen_outliers(const LongitudinalDataset& data, double gap_factor,
                              double top_fraction) {
  data.validate();
  if (!(gap_factor > 1.0)) throw ValidationError("gap_factor must exceed 1");
  if (!(top_fraction > 0.0 && top_fraction <= 1.0))
    throw ValidationError("top_fraction must lie in (0, 1]");
  const int N = data.n_subjects();
  std::vector<std::int64_t> totals(N);
  for (int i = 0; i < N; ++i) totals[i] = data.subject_total(i);
  std::vector<int> idx(N);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (totals[a] != totals[b]) return totals[a] > totals[b];
    return data.subject_ids[a] < data.subject_ids[b];
  });
  const int window = std::max(1, static_cast<int>(std::ceil(top_fraction * N - 1e-9)));
  int cut = 0;
  for (int r = 1; r <= window && r < N; ++r) {
    if (static_cast<double>(totals[idx[r - 1]]) > gap_factor * static_cast<double>(totals[idx[r]])) {
      cut = r;
      break;
    }
  }
  OutlierScreen out;
  std::vector<bool> drop(N, false);
  for (int r = 0; r < cut; ++r) {
    drop[idx[r]] = true;
    out.excluded_ids.push_back(data.subject_ids[idx[r]]);
  }
  std::vector<int> keep;
  for (int i = 0; i < N; ++i)
    if (!drop[i]) keep.push_back(i);
  out.kept = data.subset(keep);
  return out;
}

}  // namespace gbtm
