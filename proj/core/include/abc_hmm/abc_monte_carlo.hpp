#pragma once

// Estimators of the ABC ball probability P(Y_k in [y_k - eps, y_k + eps] for
// all k): the exact finite-state value, naive rejection, and a particle
// filter with indicator potentials.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "abc_hmm/model.hpp"

namespace abc_hmm {

struct AbcEstimate {
  double log_prob = 0.0;          // may be -inf
  std::vector<double> ess_trace;  // accepted particles per step (SMC only)
  std::size_t n = 0;              // trials or particles
  std::uint64_t seed = 0;
  bool degenerate = false;        // true iff log_prob == -inf
  std::optional<std::size_t> degenerate_step;  // 1-based (SMC only)
};

/// log of the exact ball probability: windowed log-likelihood plus
/// sum_k log nu(B_k). Empty balls give -inf.
double ball_probability_exact(const HmmSpec& spec, const Params& theta, double epsilon,
                              std::span<const double> obs);

/// Fraction of full simulated trajectories landing in every ball.
AbcEstimate ball_probability_mc(const HmmSpec& spec, const Params& theta, double epsilon,
                                std::span<const double> obs, std::size_t n_trials, std::uint64_t seed);

/// Bootstrap-style particle filter: propagate by the kernel, draw one
/// pseudo-observation per particle, keep those inside the ball, resample
/// multinomially from the survivors. The product of acceptance rates is an
/// unbiased estimate of the ball probability.
AbcEstimate ball_probability_smc(const HmmSpec& spec, const Params& theta, double epsilon,
                                 std::span<const double> obs, std::size_t n_particles, std::uint64_t seed);

}  // namespace abc_hmm
