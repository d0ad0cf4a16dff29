#include "abc_hmm/perturbation.hpp"

#include <cmath>

#include "abc_hmm/errors.hpp"

namespace abc_hmm {

namespace {

void check_epsilon(double epsilon) {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
    throw DomainError("epsilon must be >= 0 (got " + std::to_string(epsilon) + ")");
  }
}

// Ball mass, or ZeroBallMeasureError when it is empty.
double nonempty_ball(const MeasureDescriptor& m, double y, double eps) {
  const BallMeasure b = ball_measure(m, y, eps);
  if (!(b.mass > 0.0)) throw ZeroBallMeasureError(y, eps);
  return b.mass;
}

}  // namespace

BallMeasure ball_measure(const MeasureDescriptor& measure, double y, double epsilon) {
  check_epsilon(epsilon);
  BallMeasure b{y, epsilon, 0.0};
  if (measure.kind == MeasureKind::Lebesgue1D) {
    b.mass = 2.0 * epsilon;
  } else {
    b.mass = static_cast<double>(measure.count_in(y - epsilon, y + epsilon));
  }
  return b;
}

WindowedEmission::WindowedEmission(std::shared_ptr<const EmissionFamily> family, double eps,
                                   QuadratureConfig quad)
    : base(std::move(family)), epsilon(eps), quadrature(quad) {
  check_epsilon(epsilon);
}

double window_density(const WindowedEmission& w, const Params& theta, std::size_t x, double y) {
  if (w.epsilon == 0.0) return w.base->density(theta, x, y);
  const double mass = nonempty_ball(w.measure(), y, w.epsilon);
  const double lo = y - w.epsilon;
  const double hi = y + w.epsilon;
  double integral = 0.0;
  if (w.base->has_closed_form_mass()) {
    integral = w.base->interval_mass(theta, x, lo, hi);
  } else {
    if (w.measure().kind != MeasureKind::Lebesgue1D) {
      throw NumericalError("quadrature fallback requires a Lebesgue dominating measure");
    }
    integral = adaptive_simpson<double>([&](double u) { return w.base->density(theta, x, u); }, lo, hi,
                                        w.quadrature);
  }
  return integral / mass;
}

Dual2 window_density_derivs(const WindowedEmission& w, const Params& theta, std::size_t x, double y) {
  if (w.epsilon == 0.0) return w.base->density_derivs(theta, x, y);
  const double mass = nonempty_ball(w.measure(), y, w.epsilon);
  const double lo = y - w.epsilon;
  const double hi = y + w.epsilon;
  if (w.base->has_closed_form_mass()) return w.base->interval_mass_derivs(theta, x, lo, hi) / mass;
  if (w.measure().kind != MeasureKind::Lebesgue1D) {
    throw NumericalError("quadrature fallback requires a Lebesgue dominating measure");
  }
  // Integrate value, gradient and Hessian together as one packed vector.
  const Eigen::Index d = theta.size();
  auto packed = [&](double u) {
    const Dual2 g = w.base->density_derivs(theta, x, u);
    Eigen::VectorXd v(1 + d + d * d);
    v(0) = g.value();
    v.segment(1, d) = g.grad();
    v.segment(1 + d, d * d) = Eigen::Map<const Eigen::VectorXd>(g.hess().data(), d * d);
    return v;
  };
  const Eigen::VectorXd total = adaptive_simpson<Eigen::VectorXd>(packed, lo, hi, w.quadrature) / mass;
  ParamMatrix hess = Eigen::Map<const Eigen::MatrixXd>(total.data() + 1 + d, d, d);
  return Dual2::make(total(0), total.segment(1, d), hess);
}

Params window_density_grad(const WindowedEmission& w, const Params& theta, std::size_t x, double y) {
  return window_density_derivs(w, theta, x, y).grad();
}

double perturb_sample(double y, double epsilon, Rng& rng) {
  check_epsilon(epsilon);
  if (epsilon == 0.0) return y;
  const double u = 2.0 * uniform01(rng) - 1.0;
  return y + epsilon * u;
}

double perturb_sample(double y, double epsilon, std::uint64_t seed) {
  Rng rng(seed);
  return perturb_sample(y, epsilon, rng);
}

}  // namespace abc_hmm
