#pragma once

// Desk-scale experiments for the asymptotic behaviour of ABC estimators:
// surface convergence, bias rates, the dyadic gradient identity, CLT with
// sandwich variance, Bernstein-von Mises, and the optimal tolerance scaling.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "abc_hmm/estimators.hpp"
#include "abc_hmm/model.hpp"

namespace abc_hmm {

struct StudyResult {
  std::string study_name;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  std::vector<std::uint64_t> row_seeds;  // seed that produced each row (0 when deterministic)
  std::map<std::string, double> summary;
  std::map<std::string, std::string> flags;  // verdicts and exclusion notes
};

/// Column headers, pinned per study.
const std::vector<std::string>& study_columns(const std::string& study_name);

/// l^0(theta) for families with a closed form (gaussian_location, gaussian_scale).
std::optional<double> analytic_l0(const HmmSpec& spec, const Params& theta, const Params& theta_star);

struct SurfaceConvergenceConfig {
  Params theta_star;
  std::vector<double> epsilon_list;
  std::vector<std::size_t> n_list;  // increasing; prefixes of one record
  std::vector<Params> theta_grid;
  std::uint64_t seed = 0;
};
StudyResult surface_convergence_study(const HmmSpec& spec, const SurfaceConvergenceConfig& cfg);

struct BiasRateConfig {
  Params theta_star;
  std::vector<double> epsilon_list;
  PseudoTrueConfig method;  // theta_star is copied in
  double min_bias = 1e-9;
};
StudyResult bias_rate_study(const HmmSpec& spec, const BiasRateConfig& cfg);

struct DyadicGradientConfig {
  std::vector<int> k_list{0, 1, 2, 3};
  int truncation = 20;
};
StudyResult dyadic_gradient_check(const DyadicGradientConfig& cfg);

struct CltConfig {
  Params theta_star;
  double epsilon = 0.0;
  std::size_t n = 2000;
  std::size_t replications = 500;
  std::uint64_t seed = 0;
  MleConfig mle;
  /// Precomputed theta*,eps; computed by pseudo_true_parameter when absent.
  std::optional<Params> theta_star_eps;
};
StudyResult clt_study(const HmmSpec& spec, const CltConfig& cfg);

struct BvmConfig {
  Params theta_star;
  double epsilon = 0.0;
  std::vector<std::size_t> n_list{500, 2000, 8000};
  Prior prior;
  std::uint64_t seed = 0;
  std::size_t grid_points = 801;
  double half_width_sd = 8.0;  // grid spans theta_hat +- this many posterior sds
  MleConfig mle;
};
StudyResult bvm_study(const HmmSpec& spec, const BvmConfig& cfg);

struct OptimalEpsConfig {
  Params theta_star;
  std::vector<std::size_t> n_list{1000, 10000, 100000};
  std::vector<double> epsilon_grid;
  std::size_t replications = 100;
  std::uint64_t seed = 0;
  MleConfig mle;
};
StudyResult optimal_eps_study(const HmmSpec& spec, const OptimalEpsConfig& cfg);

}  // namespace abc_hmm
