#ifndef GBTM_NUMERICS_HPP
#define GBTM_NUMERICS_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace gbtm {

template <typename Scalar>
inline Scalar log1pexp(Scalar x) {
  using std::exp;
  using std::log1p;
  if (x > Scalar(35)) return x + exp(-x);
  if (x < Scalar(-35)) return exp(x);
  return log1p(exp(x));
}

template <typename Scalar>
inline Scalar logistic(Scalar x) {
  using std::exp;
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + exp(-x));
  const Scalar e = exp(x);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
inline Scalar log_add_exp(Scalar a, Scalar b) {
  using std::exp;
  using std::log1p;
  constexpr Scalar ninf = -std::numeric_limits<Scalar>::infinity();
  if (a == ninf) return b;
  if (b == ninf) return a;
  const Scalar hi = std::max(a, b);
  const Scalar lo = std::min(a, b);
  return hi + log1p(exp(lo - hi));
}

// Returns -inf when every entry is -inf.
template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::DenseBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  const Scalar hi = v.maxCoeff();
  if (!std::isfinite(hi)) return hi;
  return hi + std::log((v.derived().array() - hi).exp().sum());
}

/// Correctly rounded floating-point sum (Shewchuk partials). The result does
/// not depend on the order in which terms are added, so reductions built on
/// it are permutation-invariant and bit-reproducible.
class ExactSum {
 public:
  void add(double x) {
    if (!std::isfinite(x)) {
      special_ += x;
      return;
    }
    std::size_t used = 0;
    for (double p : partials_) {
      if (std::abs(x) < std::abs(p)) std::swap(x, p);
      const double hi = x + p;
      const double lo = p - (hi - x);
      if (lo != 0.0) partials_[used++] = lo;
      x = hi;
    }
    partials_.resize(used);
    partials_.push_back(x);
  }

  double value() const {
    if (special_ != 0.0 || std::isnan(special_)) return special_;
    if (partials_.empty()) return 0.0;
    std::size_t n = partials_.size();
    double hi = partials_[--n];
    double lo = 0.0;
    while (n > 0) {
      const double x = hi;
      const double y = partials_[--n];
      hi = x + y;
      lo = y - (hi - x);
      if (lo != 0.0) break;
    }
    // Round-half-even correction across the remaining partials.
    if (n > 0 && ((lo < 0.0 && partials_[n - 1] < 0.0) ||
                  (lo > 0.0 && partials_[n - 1] > 0.0))) {
      const double y = lo * 2.0;
      const double x = hi + y;
      if (y == x - hi) hi = x;
    }
    return hi;
  }

 private:
  std::vector<double> partials_;
  double special_ = 0.0;
};

template <typename Range>
double exact_sum(const Range& values) {
  ExactSum acc;
  for (double v : values) acc.add(v);
  return acc.value();
}

/// Neumaier-compensated running sum for hot loops with a fixed iteration order.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace gbtm

#endif  // GBTM_NUMERICS_HPP
