#include "abc_hmm/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "abc_hmm/abc_monte_carlo.hpp"
#include "abc_hmm/errors.hpp"
#include "abc_hmm/exact_inference.hpp"
#include "abc_hmm/numerics.hpp"
#include "abc_hmm/parallel.hpp"
#include "abc_hmm/perturbation.hpp"

namespace abc_hmm {

namespace {

constexpr const char* kZeroEverywhere =
    "data has zero ABC likelihood everywhere on the grid; try a larger epsilon";

bool near_boundary(const ParamSpace& box, const Params& theta, double tol) {
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    if (theta(i) - box.lower(i) <= tol || box.upper(i) - theta(i) <= tol) return true;
  }
  return false;
}

std::string format_vector(const Eigen::VectorXd& v) {
  std::ostringstream os;
  os << "[";
  for (Eigen::Index i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v(i);
  os << "]";
  return os.str();
}

// First index attaining the maximum; -1 when every value is -inf or NaN.
std::ptrdiff_t first_argmax(const std::vector<double>& v) {
  std::ptrdiff_t best = -1;
  double best_value = -kInf;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] > best_value) {
      best_value = v[i];
      best = static_cast<std::ptrdiff_t>(i);
    }
  }
  return best;
}

}  // namespace

std::string to_string(LikelihoodBackend b) { return b == LikelihoodBackend::Smc ? "smc" : "exact-window"; }

LikelihoodBackend backend_from_string(const std::string& s) {
  if (s == "exact-window" || s == "exact") return LikelihoodBackend::ExactWindow;
  if (s == "smc") return LikelihoodBackend::Smc;
  throw DomainError("unknown likelihood backend '" + s + "' (expected exact-window or smc)");
}

// ---------------------------------------------------------------------------
// MLE

double abc_objective(const HmmSpec& spec, const Params& theta, double epsilon, std::span<const double> obs,
                     const MleConfig& cfg) {
  if (cfg.backend == LikelihoodBackend::Smc) {
    return ball_probability_smc(spec, theta, epsilon, obs, cfg.smc_particles, cfg.smc_seed).log_prob;
  }
  return log_likelihood_value(spec, theta, epsilon, obs);
}

MleResult abc_mle(const HmmSpec& spec, double epsilon, std::span<const double> obs, const MleConfig& cfg) {
  if (obs.empty()) throw DomainError("abc_mle: no observations");
  if (!(epsilon >= 0.0)) throw DomainError("epsilon must be >= 0");
  if (cfg.grid_points == 0) throw DomainError("abc_mle: grid_points must be >= 1");
  const ParamSpace& box = spec.theta_space;
  const Eigen::Index d = box.dim();

  MleResult res;
  auto f = [&](const Params& t) {
    const double v = abc_objective(spec, t, epsilon, obs, cfg);
    ++res.evaluations;
    if (cfg.keep_trace) res.optimizer_trace.push_back({t, v});
    return v;
  };

  const std::vector<Params> grid = box_grid(box, cfg.grid_points);
  std::vector<double> values(grid.size());
  parallel_for(grid.size(), [&](std::size_t i) { values[i] = abc_objective(spec, grid[i], epsilon, obs, cfg); });
  res.evaluations = grid.size();
  if (cfg.keep_trace) {
    for (std::size_t i = 0; i < grid.size(); ++i) res.optimizer_trace.push_back({grid[i], values[i]});
  }
  const std::ptrdiff_t best = first_argmax(values);
  if (best < 0) throw NumericalError(kZeroEverywhere);
  Params theta = grid[static_cast<std::size_t>(best)];
  double value = values[static_cast<std::size_t>(best)];

  if (cfg.refine) {
    Params step(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      step(i) = cfg.grid_points > 1 ? (box.upper(i) - box.lower(i)) / static_cast<double>(cfg.grid_points - 1)
                                    : 0.5 * (box.upper(i) - box.lower(i));
    }
    const int sweeps = d == 1 ? 1 : std::max(1, cfg.max_sweeps);
    for (int sweep = 0; sweep < sweeps; ++sweep) {
      bool moved = false;
      for (Eigen::Index i = 0; i < d; ++i) {
        const double lo = std::max(box.lower(i), theta(i) - step(i));
        const double hi = std::min(box.upper(i), theta(i) + step(i));
        Params probe = theta;
        const GoldenResult g = golden_section_max(
            [&](double t) {
              probe(i) = t;
              return f(probe);
            },
            lo, hi, cfg.x_tol);
        if (g.value > value) {
          moved = moved || std::abs(g.x - theta(i)) > cfg.x_tol;
          theta(i) = g.x;
          value = g.value;
        }
      }
      if (!moved) break;
    }
  }

  if (cfg.score_refine && cfg.backend == LikelihoodBackend::ExactWindow) {
    for (int it = 0; it < 5; ++it) {
      const LoglikDerivatives dv = loglik_derivatives(spec, theta, epsilon, obs);
      const SymmetricInverse inv = symmetric_inverse(dv.observed_information);
      if (!inv.positive_definite) break;
      const Eigen::VectorXd delta = inv.inverse * dv.score;
      const Params candidate = theta + Params(delta);
      if (!box.contains(candidate)) break;
      const double v = f(candidate);
      if (!(v > value)) break;
      theta = candidate;
      value = v;
      if (delta.norm() < cfg.x_tol) break;
    }
  }

  res.theta_hat = theta;
  res.loglik_at_hat = value;
  res.on_boundary = near_boundary(box, theta, 2.0 * cfg.x_tol);
  return res;
}

// ---------------------------------------------------------------------------
// Posterior

Prior Prior::normal(Params mean, Params sd) {
  if (mean.size() != sd.size() || mean.size() == 0) throw DomainError("normal prior: mean/sd size mismatch");
  if ((sd.array() <= 0.0).any()) throw DomainError("normal prior: sd must be positive");
  Prior p;
  p.kind = Kind::Normal;
  p.mean = std::move(mean);
  p.sd = std::move(sd);
  return p;
}

double Prior::log_density(const Params& theta, const ParamSpace& box) const {
  if (!box.contains(theta)) return -kInf;
  if (kind == Kind::Flat) return 0.0;
  if (mean.size() != theta.size()) throw DomainError("normal prior: dimension mismatch");
  const Eigen::ArrayXd z = (theta - mean).array() / sd.array();
  return -0.5 * z.square().sum();
}

PosteriorGrid abc_posterior(const HmmSpec& spec, double epsilon, std::span<const double> obs, const Prior& prior,
                            const PosteriorConfig& cfg) {
  if (!(epsilon >= 0.0)) throw DomainError("epsilon must be >= 0");
  const ParamSpace box = cfg.box.value_or(spec.theta_space);
  for (Eigen::Index i = 0; i < box.dim(); ++i) {
    if (box.lower(i) < spec.theta_space.lower(i) || box.upper(i) > spec.theta_space.upper(i)) {
      throw DomainError("posterior grid box must lie inside the parameter box");
    }
  }
  PosteriorGrid out;
  out.prior = prior;
  out.theta_grid = box_grid(box, cfg.grid_points);
  const std::size_t m = out.theta_grid.size();
  out.log_unnorm.assign(m, -kInf);
  parallel_for(m, [&](std::size_t i) {
    const double lp = prior.log_density(out.theta_grid[i], spec.theta_space);
    if (lp == -kInf) return;
    out.log_unnorm[i] = lp + log_likelihood_value(spec, out.theta_grid[i], epsilon, obs);
  });
  const double lse = log_sum_exp(out.log_unnorm);
  if (lse == -kInf) throw NumericalError(kZeroEverywhere);
  out.weights.resize(m);
  for (std::size_t i = 0; i < m; ++i) out.weights[i] = std::exp(out.log_unnorm[i] - lse);
  out.mode = out.theta_grid[static_cast<std::size_t>(first_argmax(out.log_unnorm))];

  const Eigen::Index d = box.dim();
  out.mean = Params::Zero(d);
  for (std::size_t i = 0; i < m; ++i) out.mean += out.weights[i] * out.theta_grid[i];
  out.covariance = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t i = 0; i < m; ++i) {
    const Eigen::VectorXd u = out.theta_grid[i] - out.mean;
    out.covariance += out.weights[i] * u * u.transpose();
  }
  return out;
}

McmcResult abc_posterior_mcmc(const HmmSpec& spec, double epsilon, std::span<const double> obs,
                              const Prior& prior, const McmcConfig& cfg) {
  const ParamSpace& box = spec.theta_space;
  const Eigen::Index d = box.dim();
  auto log_target = [&](const Params& t) {
    const double lp = prior.log_density(t, box);
    if (lp == -kInf) return -kInf;
    return lp + log_likelihood_value(spec, t, epsilon, obs);
  };

  McmcResult out;
  out.proposal_sd = cfg.proposal_sd;
  Params start = cfg.initial.size() ? cfg.initial : Params(0.5 * (box.lower + box.upper));
  if (out.proposal_sd.size() == 0 || log_target(start) == -kInf) {
    PosteriorConfig pc;
    pc.grid_points = d <= 2 ? 41 : 9;
    const PosteriorGrid coarse = abc_posterior(spec, epsilon, obs, prior, pc);
    if (out.proposal_sd.size() == 0) {
      out.proposal_sd = Params(d);
      for (Eigen::Index i = 0; i < d; ++i) {
        const double grid_step = (box.upper(i) - box.lower(i)) / static_cast<double>(pc.grid_points - 1);
        const double sd = std::max(std::sqrt(coarse.covariance(i, i)), 0.5 * grid_step);
        out.proposal_sd(i) = 2.38 / std::sqrt(static_cast<double>(d)) * sd;
      }
    }
    if (log_target(start) == -kInf) start = coarse.mode;
  }
  if (out.proposal_sd.size() != d) throw DomainError("mcmc: proposal_sd has the wrong dimension");

  Rng rng(cfg.seed);
  Params current = start;
  double current_lp = log_target(current);
  if (current_lp == -kInf) throw NumericalError(kZeroEverywhere);
  std::size_t accepted = 0;
  const std::size_t total = cfg.burn_in + cfg.n_draws;
  out.draws.reserve(cfg.n_draws);
  for (std::size_t it = 0; it < total; ++it) {
    Params proposal = current;
    for (Eigen::Index i = 0; i < d; ++i) proposal(i) += out.proposal_sd(i) * standard_normal(rng);
    const double lp = log_target(proposal);
    const double u = uniform01(rng);
    if (lp > -kInf && std::log(u) < lp - current_lp) {
      current = proposal;
      current_lp = lp;
      if (it >= cfg.burn_in) ++accepted;
    }
    if (it >= cfg.burn_in) out.draws.push_back(current);
  }
  out.acceptance_rate = cfg.n_draws ? static_cast<double>(accepted) / static_cast<double>(cfg.n_draws) : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Pseudo-true parameter

ExpectedLogDensity expected_log_window_density(const HmmSpec& spec, const Params& theta, const Params& theta_star,
                                               double epsilon, double tol) {
  if (spec.n_states != 1) throw DomainError("expected_log_window_density needs a single-state spec");
  spec.theta_space.require_contains(theta);
  spec.theta_space.require_contains(theta_star);
  const Eigen::Index d = theta.size();
  const WindowedEmission w(spec.emission, epsilon, QuadratureConfig{tol, 40, 16});
  const EmissionFamily& truth = *spec.emission;
  bool zero = false;

  // g*(y) * (log g, grad log g, hess log g) packed into one vector.
  auto packed = [&](double y) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(1 + d + d * d);
    const double weight = truth.density(theta_star, 0, y);
    if (!(weight > 0.0)) return v;
    const Dual2 g = window_density_derivs(w, theta, 0, y);
    if (!(g.value() > 0.0)) {
      zero = true;
      return v;
    }
    const Dual2 l = log(g);
    v(0) = weight * l.value();
    v.segment(1, d) = weight * Eigen::VectorXd(l.grad());
    v.segment(1 + d, d * d) = weight * Eigen::Map<const Eigen::VectorXd>(Eigen::MatrixXd(l.hess()).data(), d * d);
    return v;
  };

  Eigen::VectorXd total;
  if (spec.dominating_measure().kind == MeasureKind::CountingAtoms) {
    total = Eigen::VectorXd::Zero(1 + d + d * d);
    for (double a : spec.dominating_measure().atoms) total += packed(a);
  } else {
    const auto [lo, hi] = truth.support(theta_star, 0);
    total = adaptive_simpson<Eigen::VectorXd>(packed, lo, hi, QuadratureConfig{tol, 40, 16});
  }
  ExpectedLogDensity out;
  if (zero) {
    out.value = -kInf;
    out.gradient = Eigen::VectorXd::Constant(d, kNaN);
    out.hessian = Eigen::MatrixXd::Constant(d, d, kNaN);
    return out;
  }
  out.value = total(0);
  out.gradient = total.segment(1, d);
  out.hessian = Eigen::Map<const Eigen::MatrixXd>(total.data() + 1 + d, d, d);
  out.hessian = 0.5 * (out.hessian + out.hessian.transpose()).eval();
  return out;
}

PseudoTrue pseudo_true_parameter(const HmmSpec& spec, double epsilon, const PseudoTrueConfig& cfg) {
  if (!(epsilon >= 0.0)) throw DomainError("epsilon must be >= 0");
  const ParamSpace& box = spec.theta_space;
  box.require_contains(cfg.theta_star);
  const Eigen::Index d = box.dim();
  PseudoTrue out;

  if (spec.n_states == 1) {
    out.method = PseudoTrueMethod::AnalyticIntegral;
    out.quadrature_tol = cfg.quadrature_tol;
    auto objective = [&](const Params& t) {
      return expected_log_window_density(spec, t, cfg.theta_star, epsilon, cfg.quadrature_tol).value;
    };
    out.gradient_at_truth =
        expected_log_window_density(spec, cfg.theta_star, cfg.theta_star, epsilon, cfg.quadrature_tol).gradient;
    Params theta = cfg.theta_star;
    if (epsilon == 0.0) {
      // Well-specified limit: the Kullback-Leibler divergence is minimized at the truth.
      out.theta_star_eps = theta;
      out.objective = objective(theta);
      out.on_boundary = near_boundary(box, theta, 2.0 * cfg.x_tol);
      return out;
    }
    double value = objective(theta);
    const int sweeps = d == 1 ? 1 : 20;
    for (int sweep = 0; sweep < sweeps; ++sweep) {
      bool moved = false;
      for (Eigen::Index i = 0; i < d; ++i) {
        Params probe = theta;
        const GoldenResult g = golden_section_max(
            [&](double t) {
              probe(i) = t;
              return objective(probe);
            },
            box.lower(i), box.upper(i), cfg.x_tol);
        if (g.value >= value) {
          moved = moved || std::abs(g.x - theta(i)) > cfg.x_tol;
          theta(i) = g.x;
          value = g.value;
        }
      }
      if (!moved) break;
    }
    // The objective is flat to O(dtheta^2) near the optimum, so golden section
    // alone resolves theta only to about sqrt(quadrature_tol). Newton steps on
    // the expected score sharpen it.
    if (cfg.newton_polish) {
      for (int it = 0; it < 8; ++it) {
        const ExpectedLogDensity e = expected_log_window_density(spec, theta, cfg.theta_star, epsilon,
                                                                 cfg.quadrature_tol);
        const SymmetricInverse inv = symmetric_inverse(-e.hessian);
        if (!inv.positive_definite || !e.gradient.allFinite()) break;
        const Eigen::VectorXd delta = inv.inverse * e.gradient;
        if (delta.norm() > 1e-3) break;
        const Params candidate = theta + Params(delta);
        if (!box.contains(candidate)) break;
        theta = candidate;
        if (delta.norm() < 1e-13) break;
      }
    }
    out.theta_star_eps = theta;
    out.objective = objective(theta);
    out.on_boundary = near_boundary(box, theta, 1e-6);
    return out;
  }

  out.method = PseudoTrueMethod::LongRunMle;
  out.n_used = cfg.long_run_n;
  const Trajectory t = simulate(spec, cfg.theta_star, cfg.long_run_n, derive_seed(cfg.seed, "pseudo-true", 0));
  MleConfig mc;
  mc.grid_points = cfg.grid_points;
  mc.keep_trace = false;
  const MleResult mle = abc_mle(spec, epsilon, t.observed, mc);
  out.theta_star_eps = mle.theta_hat;
  out.on_boundary = mle.on_boundary;
  out.standard_error = Eigen::VectorXd::Constant(d, kNaN);
  if (!mle.on_boundary) {
    try {
      const SandwichVariance sv = sandwich_variance(spec, mle.theta_hat, epsilon, t.observed);
      out.standard_error = (sv.sandwich.diagonal() / static_cast<double>(t.observed.size())).cwiseSqrt();
    } catch (const NumericalError&) {
      // leave NaN: the surface is too flat for a variance estimate
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sandwich variance

SandwichVariance sandwich_variance(const HmmSpec& spec, const Params& theta_hat, double epsilon,
                                   std::span<const double> obs, const BlockConfig& block_cfg,
                                   const std::optional<Params>& theta_star) {
  const std::size_t n = obs.size();
  if (n < 2) throw DomainError("sandwich_variance: need at least two observations");
  const Eigen::Index d = theta_hat.size();
  const LoglikDerivatives dv = loglik_derivatives(spec, theta_hat, epsilon, obs, true);
  const double nd = static_cast<double>(n);

  SandwichVariance out;
  out.I_eps = dv.observed_information / nd;
  const SymmetricInverse inv = symmetric_inverse(out.I_eps);
  out.I_eigenvalues = inv.eigenvalues;
  if (!inv.positive_definite) {
    throw NumericalError("I_eps is not positive definite (eigenvalues " + format_vector(inv.eigenvalues) +
                         "); the surface is flat or theta_hat is on the boundary");
  }

  std::size_t len = block_cfg.block_length;
  if (len == 0) len = spec.n_states == 1 ? 1 : static_cast<std::size_t>(std::ceil(std::sqrt(nd)));
  const std::size_t blocks = n / len;
  if (blocks < 2) throw DomainError("sandwich_variance: fewer than two score blocks");
  out.block_length = len;
  out.n_blocks = blocks;

  std::vector<Eigen::VectorXd> sums(blocks, Eigen::VectorXd::Zero(d));
  for (std::size_t b = 0; b < blocks; ++b) {
    for (std::size_t k = b * len; k < (b + 1) * len; ++k) sums[b] += dv.score_increments[k];
  }
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  for (const auto& s : sums) mean += s;
  mean /= static_cast<double>(blocks);
  out.J_eps = Eigen::MatrixXd::Zero(d, d);
  for (const auto& s : sums) out.J_eps += (s - mean) * (s - mean).transpose();
  out.J_eps /= static_cast<double>(blocks - 1) * static_cast<double>(len);
  out.J_eps = 0.5 * (out.J_eps + out.J_eps.transpose()).eval();
  if (!symmetric_inverse(out.J_eps).positive_definite) {
    throw NumericalError("J_eps is not positive definite");
  }

  out.sandwich = inv.inverse * out.J_eps * inv.inverse;
  out.sandwich = 0.5 * (out.sandwich + out.sandwich.transpose()).eval();
  if (theta_star) out.fisher_I = observed_information(spec, *theta_star, 0.0, obs) / nd;
  return out;
}

}  // namespace abc_hmm
