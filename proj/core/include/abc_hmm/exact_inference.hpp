#pragma once

// Exact likelihood computations for finite-state HMMs with raw (eps = 0) or
// windowed (eps > 0) emissions.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "abc_hmm/model.hpp"

namespace abc_hmm {

struct LoglikResult {
  double loglik = 0.0;            // natural log
  std::vector<double> per_step;   // log normalizers, one per observation
  Eigen::VectorXd filter;         // final filtering distribution
  /// 1-based step at which every state had zero weight (loglik = -inf).
  std::optional<std::size_t> zero_step;
};

/// Scaled forward recursion. X_0 ~ initial_dist unless `initial_state` fixes it.
LoglikResult log_likelihood(const HmmSpec& spec, const Params& theta, double epsilon,
                            std::span<const double> obs,
                            std::optional<std::size_t> initial_state = std::nullopt);

/// Same value as log_likelihood(...).loglik without per-step bookkeeping.
double log_likelihood_value(const HmmSpec& spec, const Params& theta, double epsilon,
                            std::span<const double> obs);

/// Log of the explicit sum over hidden paths (oracle). Requires
/// n_states^len(obs) <= 1e6.
double brute_force_loglik(const HmmSpec& spec, const Params& theta, double epsilon,
                          std::span<const double> obs);

struct LoglikDerivatives {
  double loglik = 0.0;
  Eigen::VectorXd score;                  // grad log p
  Eigen::MatrixXd observed_information;   // -hess log p
  /// grad log p(y_k | y_{1:k-1}), k = 1..n (when requested).
  std::vector<Eigen::VectorXd> score_increments;
};

/// Score through the Fisher identity and observed information through the
/// Louis identity, using forward smoothing of additive functionals.
LoglikDerivatives loglik_derivatives(const HmmSpec& spec, const Params& theta, double epsilon,
                                     std::span<const double> obs, bool keep_increments = false);

Eigen::VectorXd score(const HmmSpec& spec, const Params& theta, double epsilon, std::span<const double> obs);

Eigen::MatrixXd observed_information(const HmmSpec& spec, const Params& theta, double epsilon,
                                     std::span<const double> obs);

struct SurfaceEstimate {
  std::vector<Params> theta_grid;
  std::vector<double> values;                // (1/n)(log p_theta - log p_theta*)
  std::vector<Eigen::VectorXd> gradients;    // empty unless derivatives requested
  std::vector<Eigen::MatrixXd> hessians;
  std::vector<bool> valid;                   // false where log p_theta = -inf
  std::size_t n = 0;
  double epsilon = 0.0;
};

SurfaceEstimate relative_surface(const HmmSpec& spec, const std::vector<Params>& theta_grid,
                                 const Params& theta_star, double epsilon, std::span<const double> obs,
                                 bool with_derivatives = true);

}  // namespace abc_hmm
