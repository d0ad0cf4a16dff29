#pragma once

// ABC maximum likelihood, grid and MCMC posteriors, pseudo-true parameters and
// the sandwich variance of the ABC MLE.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "abc_hmm/model.hpp"

namespace abc_hmm {

enum class LikelihoodBackend { ExactWindow, Smc };

std::string to_string(LikelihoodBackend b);
LikelihoodBackend backend_from_string(const std::string& s);

struct MleConfig {
  std::size_t grid_points = 64;  // per coordinate
  double x_tol = 1e-6;
  bool refine = true;            // golden-section polish after the grid pass
  bool score_refine = false;     // extra Newton steps on the score (exact backend)
  int max_sweeps = 10;           // coordinate sweeps for d > 1
  LikelihoodBackend backend = LikelihoodBackend::ExactWindow;
  std::size_t smc_particles = 10000;
  /// Every SMC evaluation reuses this seed (common random numbers).
  std::uint64_t smc_seed = 0;
  bool keep_trace = true;
};

struct TracePoint {
  Params theta;
  double loglik = 0.0;
};

struct MleResult {
  Params theta_hat;
  double loglik_at_hat = 0.0;
  std::vector<TracePoint> optimizer_trace;
  std::size_t evaluations = 0;
  bool on_boundary = false;
};

/// Maximizes the windowed log-likelihood (or its SMC estimate) over the box.
/// Grid ties resolve to the lexicographically smallest theta.
MleResult abc_mle(const HmmSpec& spec, double epsilon, std::span<const double> obs, const MleConfig& cfg = {});

/// Objective used by abc_mle: windowed log-likelihood or SMC log ball probability.
double abc_objective(const HmmSpec& spec, const Params& theta, double epsilon, std::span<const double> obs,
                     const MleConfig& cfg);

// ---------------------------------------------------------------------------
// Posterior

/// Prior on the parameter box: flat, or independent normals truncated to the
/// box (unnormalized).
struct Prior {
  enum class Kind { Flat, Normal };
  Kind kind = Kind::Flat;
  Params mean;
  Params sd;

  static Prior flat() { return {}; }
  static Prior normal(Params mean, Params sd);

  /// Log density up to a constant; -inf outside the box.
  double log_density(const Params& theta, const ParamSpace& box) const;
};

struct PosteriorConfig {
  std::size_t grid_points = 201;   // per coordinate
  /// Grid box; defaults to the full parameter box. Must lie inside it.
  std::optional<ParamSpace> box;
};

struct PosteriorGrid {
  std::vector<Params> theta_grid;
  std::vector<double> log_unnorm;
  std::vector<double> weights;
  Prior prior;
  Params mode;
  Params mean;
  Eigen::MatrixXd covariance;
};

PosteriorGrid abc_posterior(const HmmSpec& spec, double epsilon, std::span<const double> obs, const Prior& prior,
                            const PosteriorConfig& cfg = {});

struct McmcConfig {
  std::size_t n_draws = 5000;
  std::size_t burn_in = 1000;
  /// Per-coordinate proposal sd; empty means 2.38/sqrt(d) times the marginal
  /// sd of a coarse grid posterior.
  Params proposal_sd;
  Params initial;  // empty means the box centre
  std::uint64_t seed = 0;
};

struct McmcResult {
  std::vector<Params> draws;
  double acceptance_rate = 0.0;
  Params proposal_sd;
};

/// Random-walk Metropolis on the ABC posterior with Gaussian proposals.
McmcResult abc_posterior_mcmc(const HmmSpec& spec, double epsilon, std::span<const double> obs,
                              const Prior& prior, const McmcConfig& cfg = {});

// ---------------------------------------------------------------------------
// Pseudo-true parameter

enum class PseudoTrueMethod { AnalyticIntegral, LongRunMle };

struct PseudoTrueConfig {
  Params theta_star;
  double quadrature_tol = 1e-10;
  double x_tol = 1e-8;
  bool newton_polish = true;
  // Long-run route (multi-state specs).
  std::size_t long_run_n = 1000000;
  std::size_t grid_points = 16;
  std::uint64_t seed = 0;
};

struct PseudoTrue {
  Params theta_star_eps;
  PseudoTrueMethod method = PseudoTrueMethod::AnalyticIntegral;
  std::size_t n_used = 0;           // long-run route
  double quadrature_tol = 0.0;      // analytic route
  double objective = 0.0;           // E log g^eps at the maximizer (analytic route)
  Eigen::VectorXd gradient_at_truth;  // grad of the limiting surface at theta* (analytic route)
  Eigen::VectorXd standard_error;     // long-run route
  bool on_boundary = false;
};

/// Limiting maximizer of the windowed surface. Single-state specs use
/// E_{theta*}[log g^eps_theta(Y)] by quadrature or exact atom sums; other
/// specs use a long simulated record.
PseudoTrue pseudo_true_parameter(const HmmSpec& spec, double epsilon, const PseudoTrueConfig& cfg);

/// E_{theta*}[log g^eps_theta(Y)] with gradient and Hessian in theta
/// (single-state specs only).
struct ExpectedLogDensity {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
};
ExpectedLogDensity expected_log_window_density(const HmmSpec& spec, const Params& theta, const Params& theta_star,
                                               double epsilon, double tol = 1e-10);

// ---------------------------------------------------------------------------
// Sandwich variance

struct BlockConfig {
  /// Block length for the score-variance estimate; 0 picks ceil(sqrt(n)) for
  /// multi-state specs and 1 for single-state specs (independent increments).
  std::size_t block_length = 0;
};

struct SandwichVariance {
  Eigen::MatrixXd I_eps;
  Eigen::MatrixXd J_eps;
  Eigen::MatrixXd sandwich;
  std::optional<Eigen::MatrixXd> fisher_I;
  Eigen::VectorXd I_eigenvalues;
  std::size_t block_length = 0;
  std::size_t n_blocks = 0;
};

SandwichVariance sandwich_variance(const HmmSpec& spec, const Params& theta_hat, double epsilon,
                                   std::span<const double> obs, const BlockConfig& block_cfg = {},
                                   const std::optional<Params>& theta_star = std::nullopt);

}  // namespace abc_hmm
