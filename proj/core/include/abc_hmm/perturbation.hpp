#pragma once

// Windowed emission densities: the emission law averaged over the closed ball
// [y - eps, y + eps] against the dominating measure, its parameter
// derivatives, ball measures, and the uniform noise channel y + eps * U.

#include <cstdint>
#include <memory>

#include "abc_hmm/dual.hpp"
#include "abc_hmm/model.hpp"
#include "abc_hmm/numerics.hpp"

namespace abc_hmm {

struct BallMeasure {
  double center = 0.0;
  double radius = 0.0;
  double mass = 0.0;
};

/// nu([y - eps, y + eps]): 2 eps for Lebesgue, the atom count for counting measure.
BallMeasure ball_measure(const MeasureDescriptor& measure, double y, double epsilon);

struct WindowedEmission {
  std::shared_ptr<const EmissionFamily> base;
  double epsilon = 0.0;
  QuadratureConfig quadrature{};

  WindowedEmission() = default;
  WindowedEmission(std::shared_ptr<const EmissionFamily> family, double eps, QuadratureConfig quad = {});

  const MeasureDescriptor& measure() const { return base->dominating_measure(); }
};

/// Windowed density g^eps_theta(y | x). eps == 0 delegates to the base density.
/// Throws ZeroBallMeasureError when a counting-measure ball holds no atom.
double window_density(const WindowedEmission& w, const Params& theta, std::size_t x, double y);

/// grad_theta of window_density.
Params window_density_grad(const WindowedEmission& w, const Params& theta, std::size_t x, double y);

/// window_density with its theta-gradient and Hessian.
Dual2 window_density_derivs(const WindowedEmission& w, const Params& theta, std::size_t x, double y);

/// y + eps * U with U ~ Uniform[-1, 1] drawn from a generator seeded by `seed`.
double perturb_sample(double y, double epsilon, std::uint64_t seed);
/// Same, drawing U from an existing generator.
double perturb_sample(double y, double epsilon, Rng& rng);

}  // namespace abc_hmm
