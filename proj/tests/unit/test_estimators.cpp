#include <doctest.h>

#include <cmath>
#include <random>

#include "abc_hmm/errors.hpp"
#include "abc_hmm/estimators.hpp"
#include "abc_hmm/exact_inference.hpp"
#include "abc_hmm/numerics.hpp"
#include "abc_hmm/random.hpp"
#include "test_support.hpp"

using namespace abc_hmm;

TEST_CASE("abc_mle: location MLE is the sample mean") {
  const HmmSpec loc = gaussian_location_spec();
  const std::vector<double> obs{0.2, 0.4};
  const MleResult r = abc_mle(loc, 0.0, obs);
  CHECK(std::abs(r.theta_hat(0) - 0.3) <= 1e-6);
  CHECK_FALSE(r.on_boundary);
  for (const auto& p : r.optimizer_trace) CHECK(r.loglik_at_hat >= p.loglik - 1e-12);
  CHECK(r.evaluations == r.optimizer_trace.size());
}

TEST_CASE("abc_mle: symmetric smoothing leaves the location estimate unbiased") {
  const HmmSpec loc = gaussian_location_spec();
  const Trajectory t = simulate(loc, make_params({0.0}), 100000, 404);
  for (double eps : {0.1, 0.5, 1.0}) {
    const MleResult r = abc_mle(loc, eps, t.observed);
    CHECK(std::abs(r.theta_hat(0)) <= 3.0 / std::sqrt(1e5));
  }
}

TEST_CASE("abc_mle: ties resolve to the lexicographically smallest grid point") {
  // Uniform[0, theta] with every observation inside [0, 0.5]: the windowed
  // likelihood is maximal at the smallest admissible theta on a coarse grid
  // and flat neighbours are broken towards smaller theta.
  HmmSpec unif = uniform_scale_spec(0.5, 2.0);
  const std::vector<double> obs{0.1, 0.2};
  MleConfig cfg;
  cfg.refine = false;
  cfg.grid_points = 4;
  const MleResult r = abc_mle(unif, 0.0, obs, cfg);
  CHECK(r.theta_hat(0) == 0.5);
  CHECK(r.on_boundary);
}

TEST_CASE("abc_mle: zero likelihood everywhere is an error") {
  const HmmSpec unif = uniform_scale_spec(0.5, 2.0);
  const std::vector<double> obs{5.0};
  try {
    abc_mle(unif, 0.1, obs);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("zero ABC likelihood everywhere") != std::string::npos);
  }
}

TEST_CASE("abc_mle: dropping the ball-measure constant leaves the argmax unchanged") {
  const HmmSpec scale = gaussian_scale_spec();
  const Trajectory t = simulate(scale, make_params({1.3}), 500, 17);
  MleConfig cfg;
  cfg.grid_points = 32;
  const MleResult a = abc_mle(scale, 0.3, t.observed, cfg);
  cfg.backend = LikelihoodBackend::ExactWindow;
  // Same optimizer on the ball-probability objective.
  const auto grid = box_grid(scale.theta_space, 32);
  std::size_t best = 0;
  double bv = -kInf;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double v = log_likelihood_value(scale, grid[i], 0.3, t.observed) + 500.0 * std::log(0.6);
    if (v > bv) bv = v, best = i;
  }
  MleConfig grid_only = cfg;
  grid_only.refine = false;
  CHECK(abc_mle(scale, 0.3, t.observed, grid_only).theta_hat(0) == grid[best](0));
  CHECK(std::abs(a.theta_hat(0) - grid[best](0)) <= (4.0 - 0.25) / 31.0);
}

TEST_CASE("abc_mle: score refinement keeps or improves the optimum") {
  const HmmSpec h2 = gaussian_hmm2_spec();
  const Trajectory t = simulate(h2, make_params({0.2, 0.3}), 400, 8);
  MleConfig cfg;
  cfg.grid_points = 16;
  const MleResult a = abc_mle(h2, 0.1, t.observed, cfg);
  cfg.score_refine = true;
  const MleResult b = abc_mle(h2, 0.1, t.observed, cfg);
  CHECK(b.loglik_at_hat >= a.loglik_at_hat);
  CHECK(score(h2, b.theta_hat, 0.1, t.observed).norm() < 1e-3);
}

TEST_CASE("exact and SMC backends agree within two grid steps") {
  const HmmSpec h2 = gaussian_hmm2_spec();
  const Trajectory t = simulate(h2, make_params({0.2, 0.3}), 200, 2024);
  MleConfig cfg;
  cfg.grid_points = 16;
  cfg.keep_trace = false;
  const MleResult exact = abc_mle(h2, 0.2, t.observed, cfg);
  cfg.backend = LikelihoodBackend::Smc;
  cfg.smc_particles = 10000;
  cfg.smc_seed = derive_seed(1, "backend-exchange", 0);
  cfg.refine = false;
  const MleResult smc = abc_mle(h2, 0.2, t.observed, cfg);
  const double step = 0.9 / 15.0;
  CHECK((exact.theta_hat - smc.theta_hat).cwiseAbs().maxCoeff() <= 2.0 * step + 1e-12);
}

TEST_CASE("posterior grid invariants and examples") {
  const HmmSpec loc = gaussian_location_spec();
  const Trajectory t = simulate(loc, make_params({0.4}), 100, 5);
  const double ybar = sample_mean(t.observed);
  PosteriorConfig pc;
  pc.grid_points = 401;
  pc.box = ParamSpace(make_params({ybar - 1.0}), make_params({ybar + 1.0}));
  const PosteriorGrid g = abc_posterior(loc, 0.0, t.observed, Prior::flat(), pc);
  double total = 0.0;
  for (double w : g.weights) {
    CHECK(w >= 0.0);
    total += w;
  }
  CHECK(std::abs(total - 1.0) <= 1e-12);
  CHECK(std::abs(g.mean(0) - ybar) <= 0.01 * std::abs(ybar));
  CHECK(g.covariance(0, 0) == doctest::Approx(0.01).epsilon(0.01));

  // Flat prior: mode equals the grid-only MLE on the same grid.
  MleConfig mc;
  mc.grid_points = 201;
  mc.refine = false;
  PosteriorConfig full;
  full.grid_points = 201;
  CHECK(abc_posterior(loc, 0.2, t.observed, Prior::flat(), full).mode(0) ==
        abc_mle(loc, 0.2, t.observed, mc).theta_hat(0));

  // No data: posterior equals the prior on the grid.
  const Prior normal = Prior::normal(make_params({1.0}), make_params({2.0}));
  const PosteriorGrid empty = abc_posterior(loc, 0.1, std::span<const double>(), normal, full);
  std::vector<double> lp;
  for (const auto& th : empty.theta_grid) lp.push_back(normal.log_density(th, loc.theta_space));
  const double lse = log_sum_exp(lp);
  for (std::size_t i = 0; i < lp.size(); ++i) CHECK(empty.weights[i] == doctest::Approx(std::exp(lp[i] - lse)).epsilon(1e-12));
}

TEST_CASE("posterior weights are invariant to constant shifts of the log target") {
  const HmmSpec scale = gaussian_scale_spec();
  const Trajectory t = simulate(scale, make_params({1.0}), 50, 3);
  PosteriorConfig pc;
  pc.grid_points = 101;
  const PosteriorGrid a = abc_posterior(scale, 0.3, t.observed, Prior::flat(), pc);
  // A normal prior with a huge sd differs from flat only by a near-constant.
  const PosteriorGrid b = abc_posterior(scale, 0.3, t.observed, Prior::normal(make_params({0.0}), make_params({1e8})), pc);
  for (std::size_t i = 0; i < a.weights.size(); ++i) CHECK(a.weights[i] == doctest::Approx(b.weights[i]).epsilon(1e-9));
}

TEST_CASE("posterior sd shrinks like 1/sqrt(n)") {
  const HmmSpec scale = gaussian_scale_spec();
  const Trajectory t = simulate(scale, make_params({1.0}), 10000, 99);
  PosteriorConfig pc;
  pc.grid_points = 801;
  pc.box = ParamSpace(make_params({0.7}), make_params({1.4}));
  const std::span<const double> all(t.observed);
  const double sd3 = std::sqrt(abc_posterior(scale, 0.3, all.first(1000), Prior::flat(), pc).covariance(0, 0));
  const double sd4 = std::sqrt(abc_posterior(scale, 0.3, all, Prior::flat(), pc).covariance(0, 0));
  CHECK(std::abs(sd3 * std::sqrt(1000.0) / (sd4 * std::sqrt(10000.0)) - 1.0) <= 0.2);
}

TEST_CASE("MCMC agrees with the grid posterior") {
  const HmmSpec scale = gaussian_scale_spec();
  const Trajectory t = simulate(scale, make_params({1.0}), 400, 6);
  PosteriorConfig pc;
  pc.grid_points = 801;
  const PosteriorGrid g = abc_posterior(scale, 0.3, t.observed, Prior::flat(), pc);
  McmcConfig mc;
  mc.n_draws = 20000;
  mc.burn_in = 2000;
  mc.seed = 11;
  const McmcResult m = abc_posterior_mcmc(scale, 0.3, t.observed, Prior::flat(), mc);
  std::vector<double> v;
  for (const auto& d : m.draws) v.push_back(d(0));
  const double sd = std::sqrt(g.covariance(0, 0));
  CHECK(std::abs(sample_mean(v) - g.mean(0)) <= 0.1 * sd);
  CHECK(std::sqrt(sample_variance(v)) == doctest::Approx(sd).epsilon(0.1));
  CHECK(m.acceptance_rate > 0.2);
  CHECK(m.acceptance_rate < 0.7);
}

TEST_CASE("pseudo-true parameter examples") {
  PseudoTrueConfig cfg;
  cfg.theta_star = make_params({1.0});
  const HmmSpec scale = gaussian_scale_spec();
  CHECK(pseudo_true_parameter(scale, 0.0, cfg).theta_star_eps(0) == 1.0);
  const PseudoTrue p = pseudo_true_parameter(scale, 0.5, cfg);
  CHECK(p.method == PseudoTrueMethod::AnalyticIntegral);
  CHECK(std::abs(p.theta_star_eps(0) - 0.916689085782052) < 1e-7);
  CHECK(std::abs(p.theta_star_eps(0) - (1.0 - 0.25 / 3.0)) < 0.005);
  CHECK_FALSE(p.on_boundary);

  const double eps_list[] = {0.1, 0.1414213562373095, 0.2, 0.282842712474619, 0.4};
  const double expected[] = {0.9966666667937832, 0.9933333343453115, 0.9866666817742564, 0.9733335723259806,
                             0.9466704508540584};
  for (int i = 0; i < 5; ++i) CHECK(std::abs(pseudo_true_parameter(scale, eps_list[i], cfg).theta_star_eps(0) - expected[i]) < 1e-8);

  const HmmSpec dy = dyadic_spec();
  PseudoTrueConfig dc;
  dc.theta_star = make_params({0.5});
  const PseudoTrue q = pseudo_true_parameter(dy, 0.25, dc);
  CHECK(q.gradient_at_truth(0) == doctest::Approx(0.1875).epsilon(1e-12));
  CHECK(std::abs(q.theta_star_eps(0) - 16.0 / 27.0) < 1e-9);
  const double dyadic_expected[] = {0.5132456242402738, 0.503015892967472, 0.500737683817487};
  for (int k = 1; k <= 3; ++k) {
    CHECK(std::abs(pseudo_true_parameter(dy, std::pow(4.0, -(k + 1)), dc).theta_star_eps(0) - dyadic_expected[k - 1]) < 1e-9);
  }
}

TEST_CASE("pseudo-true parameter of the symmetric location family is the truth") {
  PseudoTrueConfig cfg;
  cfg.theta_star = make_params({0.3});
  const PseudoTrue p = pseudo_true_parameter(gaussian_location_spec(), 0.4, cfg);
  CHECK(std::abs(p.theta_star_eps(0) - 0.3) < 1e-9);
  CHECK(std::abs(p.gradient_at_truth(0)) < 1e-9);
}

TEST_CASE("pseudo-true parameter on a two-state HMM uses the long-run MLE") {
  PseudoTrueConfig cfg;
  cfg.theta_star = make_params({0.2, 0.3});
  cfg.long_run_n = 20000;
  cfg.grid_points = 10;
  const PseudoTrue p = pseudo_true_parameter(gaussian_hmm2_spec(), 0.1, cfg);
  CHECK(p.method == PseudoTrueMethod::LongRunMle);
  CHECK(p.n_used == 20000);
  REQUIRE(p.standard_error.allFinite());
  CHECK((p.theta_star_eps - cfg.theta_star).cwiseAbs().maxCoeff() < 4.0 * p.standard_error.maxCoeff());
}

TEST_CASE("sandwich variance: information equality in the well-specified location model") {
  const HmmSpec loc = gaussian_location_spec();
  const Trajectory t = simulate(loc, make_params({0.0}), 10000, 71);
  const MleResult r = abc_mle(loc, 0.0, t.observed);
  const SandwichVariance sv = sandwich_variance(loc, r.theta_hat, 0.0, t.observed, {}, make_params({0.0}));
  CHECK(sv.block_length == 1);
  CHECK(sv.I_eps(0, 0) == doctest::Approx(1.0).epsilon(0.05));
  CHECK(sv.J_eps(0, 0) == doctest::Approx(1.0).epsilon(0.05));
  CHECK(sv.sandwich(0, 0) == doctest::Approx(1.0).epsilon(0.05));
  REQUIRE(sv.fisher_I);
  CHECK((*sv.fisher_I)(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("sandwich variance: symmetry and HMM block length") {
  const HmmSpec h2 = gaussian_hmm2_spec();
  const Trajectory t = simulate(h2, make_params({0.2, 0.3}), 2000, 12);
  const SandwichVariance sv = sandwich_variance(h2, make_params({0.2, 0.3}), 0.1, t.observed);
  CHECK(sv.block_length == 45);
  CHECK((sv.I_eps - sv.I_eps.transpose()).norm() <= 1e-10);
  CHECK((sv.J_eps - sv.J_eps.transpose()).norm() <= 1e-10);
  CHECK((sv.sandwich - sv.sandwich.transpose()).norm() <= 1e-10);
  CHECK(symmetric_inverse(sv.sandwich).positive_definite);
}

TEST_CASE("sandwich variance: I_eps approaches I as epsilon shrinks") {
  const HmmSpec scale = gaussian_scale_spec();
  const Trajectory t = simulate(scale, make_params({1.0}), 20000, 13);
  double prev = kInf;
  for (double eps : {0.4, 0.2, 0.1}) {
    const MleResult r = abc_mle(scale, eps, t.observed);
    const SandwichVariance sv = sandwich_variance(scale, r.theta_hat, eps, t.observed, {}, make_params({1.0}));
    const double gap = (sv.I_eps - *sv.fisher_I).norm();
    CHECK(gap < prev);
    prev = gap;
  }
}

TEST_CASE("sandwich variance rejects a non-positive-definite information") {
  const HmmSpec scale = gaussian_scale_spec();
  const std::vector<double> obs{0.0, 0.0, 0.0};
  CHECK_THROWS_AS(sandwich_variance(scale, make_params({1.0}), 0.0, obs), NumericalError);
}
