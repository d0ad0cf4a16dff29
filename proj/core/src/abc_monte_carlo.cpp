#include "abc_hmm/abc_monte_carlo.hpp"

#include <cmath>

#include "abc_hmm/errors.hpp"
#include "abc_hmm/exact_inference.hpp"
#include "abc_hmm/numerics.hpp"
#include "abc_hmm/perturbation.hpp"

namespace abc_hmm {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::size_t draw_index(const double* probs, std::size_t n, Rng& rng) {
  double u = uniform01(rng);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (u < probs[i]) return i;
    u -= probs[i];
  }
  return n - 1;
}

bool in_ball(double y, double center, double epsilon) { return std::abs(y - center) <= epsilon; }

void check_common(const HmmSpec& spec, const Params& theta, double epsilon) {
  spec.theta_space.require_contains(theta);
  if (!(epsilon >= 0.0)) throw DomainError("epsilon must be >= 0");
}

}  // namespace

double ball_probability_exact(const HmmSpec& spec, const Params& theta, double epsilon,
                              std::span<const double> obs) {
  check_common(spec, theta, epsilon);
  double log_balls = 0.0;
  for (double y : obs) {
    const double m = ball_measure(spec.dominating_measure(), y, epsilon).mass;
    if (!(m > 0.0)) return -kInf;
    log_balls += std::log(m);
  }
  const double ll = log_likelihood_value(spec, theta, epsilon, obs);
  if (ll == -kInf) return -kInf;
  return ll + log_balls;
}

AbcEstimate ball_probability_mc(const HmmSpec& spec, const Params& theta, double epsilon,
                                std::span<const double> obs, std::size_t n_trials, std::uint64_t seed) {
  check_common(spec, theta, epsilon);
  if (n_trials == 0) throw DomainError("n_trials must be >= 1");
  const RowMatrix q = transition_matrix(spec, theta);
  const std::size_t s = spec.n_states;
  Rng rng(seed);
  std::size_t accepted = 0;
  for (std::size_t t = 0; t < n_trials; ++t) {
    std::size_t x = draw_index(spec.initial_dist.data(), s, rng);
    bool ok = true;
    for (double target : obs) {
      x = s == 1 ? 0 : draw_index(q.data() + x * s, s, rng);
      if (!in_ball(spec.emission->sample(theta, x, rng), target, epsilon)) {
        ok = false;
        break;
      }
    }
    if (ok) ++accepted;
  }
  AbcEstimate est;
  est.n = n_trials;
  est.seed = seed;
  est.degenerate = accepted == 0;
  est.log_prob = est.degenerate ? -kInf
                                : std::log(static_cast<double>(accepted)) - std::log(static_cast<double>(n_trials));
  return est;
}

AbcEstimate ball_probability_smc(const HmmSpec& spec, const Params& theta, double epsilon,
                                 std::span<const double> obs, std::size_t n_particles, std::uint64_t seed) {
  check_common(spec, theta, epsilon);
  if (n_particles < 2) throw DomainError("n_particles must be >= 2");
  const RowMatrix q = transition_matrix(spec, theta);
  const std::size_t s = spec.n_states;
  Rng rng(seed);

  AbcEstimate est;
  est.n = n_particles;
  est.seed = seed;
  est.log_prob = 0.0;
  est.ess_trace.reserve(obs.size());

  std::vector<std::size_t> particles(n_particles), survivors;
  survivors.reserve(n_particles);
  for (auto& x : particles) x = draw_index(spec.initial_dist.data(), s, rng);

  for (std::size_t k = 0; k < obs.size(); ++k) {
    survivors.clear();
    for (std::size_t x : particles) {
      const std::size_t next = s == 1 ? 0 : draw_index(q.data() + x * s, s, rng);
      if (in_ball(spec.emission->sample(theta, next, rng), obs[k], epsilon)) survivors.push_back(next);
    }
    est.ess_trace.push_back(static_cast<double>(survivors.size()));
    if (survivors.empty()) {
      est.degenerate = true;
      est.degenerate_step = k + 1;
      est.log_prob = -kInf;
      return est;
    }
    est.log_prob += std::log(static_cast<double>(survivors.size()) / static_cast<double>(n_particles));
    // Equal weights among survivors, so multinomial resampling is a uniform draw.
    for (auto& x : particles) {
      const auto pick = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(survivors.size()));
      x = survivors[std::min(pick, survivors.size() - 1)];
    }
  }
  return est;
}

}  // namespace abc_hmm
