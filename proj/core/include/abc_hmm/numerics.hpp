#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "abc_hmm/dual.hpp"

namespace abc_hmm {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ---------------------------------------------------------------------------
// Standard normal helpers, overloaded for double and Dual2.

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }
/// Upper tail 1 - Phi(z), accurate for large positive z.
inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::numbers::sqrt2); }

inline Dual2 normal_pdf(const Dual2& z) {
  const double v = z.value();
  const double p = normal_pdf(v);
  return z.apply(p, -v * p, (v * v - 1.0) * p);
}
inline Dual2 normal_cdf(const Dual2& z) {
  const double v = z.value();
  const double p = normal_pdf(v);
  return z.apply(normal_cdf(v), p, -v * p);
}
inline Dual2 normal_sf(const Dual2& z) {
  const double v = z.value();
  const double p = normal_pdf(v);
  return z.apply(normal_sf(v), -p, v * p);
}

/// P(za <= Z <= zb) for standard normal Z, choosing the tail that avoids
/// cancellation.
template <class T>
T normal_interval(const T& za, const T& zb) {
  if (value_of(za) > 0.0) return normal_sf(za) - normal_sf(zb);
  if (value_of(zb) < 0.0) return normal_cdf(zb) - normal_cdf(za);
  return 1.0 - normal_cdf(za) - normal_sf(zb);
}

// ---------------------------------------------------------------------------
// Adaptive Simpson quadrature.

struct QuadratureConfig {
  double abs_tol = 1e-10;
  int max_depth = 40;
  /// Number of equal panels adapted independently; more panels give a node
  /// layout that varies less with the integrand.
  int initial_panels = 16;
};

namespace detail {

inline double quad_error(double x) { return std::abs(x); }
template <class Derived>
double quad_error(const Eigen::MatrixBase<Derived>& x) {
  return x.cwiseAbs().maxCoeff();
}

template <class T, class F>
T simpson_step(const F& f, double a, double b, const T& fa, const T& fm, const T& fb, const T& whole,
               double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const T flm = f(lm);
  const T frm = f(rm);
  const T left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const T right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const T delta = left + right - whole;
  if (depth <= 0 || quad_error(delta) <= 15.0 * tol) {
    return T(left + right + delta / 15.0);
  }
  return T(simpson_step<T>(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           simpson_step<T>(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1));
}

}  // namespace detail

/// Integrates f over [a, b] by adaptive Simpson to absolute tolerance.
/// T may be double or an Eigen column vector (error measured in max-norm).
template <class T, class F>
T adaptive_simpson(const F& f, double a, double b, const QuadratureConfig& cfg = {}) {
  const int panels = cfg.initial_panels > 0 ? cfg.initial_panels : 1;
  const double width = (b - a) / panels;
  T total = f(a) * 0.0;
  for (int i = 0; i < panels; ++i) {
    const double lo = a + i * width;
    const double hi = (i + 1 == panels) ? b : lo + width;
    const T flo = f(lo);
    const T fhi = f(hi);
    const T fm = f(0.5 * (lo + hi));
    const T whole = (hi - lo) / 6.0 * (flo + 4.0 * fm + fhi);
    total = T(total + detail::simpson_step<T>(f, lo, hi, flo, fm, fhi, whole, cfg.abs_tol / panels,
                                              cfg.max_depth));
  }
  return total;
}

// ---------------------------------------------------------------------------
// Golden-section search.

struct GoldenResult {
  double x = 0.0;
  double value = -kInf;
  int evaluations = 0;
};

/// Maximizes f on [a, b] until the bracket is narrower than x_tol. The
/// returned point is the best evaluated point (ties keep the smaller x).
GoldenResult golden_section_max(const std::function<double(double)>& f, double a, double b, double x_tol,
                                int max_iter = 200);

// ---------------------------------------------------------------------------
// Statistics.

/// log(sum(exp(v))), returning -inf for an empty or all -inf input.
double log_sum_exp(std::span<const double> v);

/// Ordinary least-squares slope of y on x.
double ols_slope(std::span<const double> x, std::span<const double> y);

double sample_mean(std::span<const double> v);
/// Unbiased sample variance (n - 1 denominator).
double sample_variance(std::span<const double> v);

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// One-sample Kolmogorov-Smirnov test against a continuous CDF. The p-value
/// uses the asymptotic Kolmogorov distribution with Stephens' small-sample
/// correction.
KsResult ks_test(std::vector<double> sample, const std::function<double(double)>& cdf);

/// Survival function of the Kolmogorov distribution, Q(lambda) = P(K > lambda).
double kolmogorov_sf(double lambda);

// ---------------------------------------------------------------------------
// Linear algebra.

struct SymmetricInverse {
  Eigen::MatrixXd inverse;
  Eigen::VectorXd eigenvalues;
  bool positive_definite = false;
};

/// Inverse of a symmetric matrix through its eigendecomposition. The input is
/// symmetrized first; `positive_definite` reports whether every eigenvalue is
/// strictly positive.
SymmetricInverse symmetric_inverse(const Eigen::MatrixXd& m);

}  // namespace abc_hmm
