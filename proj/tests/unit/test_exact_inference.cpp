#include <doctest.h>

#include <cmath>
#include <random>

#include "abc_hmm/errors.hpp"
#include "abc_hmm/exact_inference.hpp"
#include "abc_hmm/numerics.hpp"
#include "test_support.hpp"

using namespace abc_hmm;
using abc_hmm::testing::close_rel;

namespace {

std::vector<double> random_obs(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, 1.5);
  std::vector<double> y(n);
  for (auto& v : y) v = z(rng);
  return y;
}

}  // namespace

TEST_CASE("log_likelihood examples") {
  const HmmSpec loc = gaussian_location_spec();
  const std::vector<double> zeros{0.0, 0.0};
  CHECK(log_likelihood(loc, make_params({0.0}), 0.0, zeros).loglik ==
        doctest::Approx(-1.8378770664093453).epsilon(1e-13));

  const HmmSpec h2 = gaussian_hmm2_spec();
  const std::vector<double> obs{0.5, -1.2, 2.0};
  const Params th = make_params({0.2, 0.3});
  const double fwd = log_likelihood(h2, th, 0.1, obs).loglik;
  CHECK(fwd == doctest::Approx(-5.8483452398493725).epsilon(1e-12));
  CHECK(std::abs(fwd - brute_force_loglik(h2, th, 0.1, obs)) < 1e-10);
  CHECK(log_likelihood(h2, th, 0.0, obs).loglik == doctest::Approx(-5.849733145698167).epsilon(1e-12));

  const HmmSpec dy = dyadic_spec();
  const std::vector<double> half{0.5};
  CHECK(log_likelihood(dy, make_params({0.5}), 0.125, half).loglik == doctest::Approx(std::log(0.375)));
}

TEST_CASE("LoglikResult invariants") {
  std::mt19937_64 rng(5);
  const HmmSpec spec = abc_hmm::testing::random_constant_hmm(3, rng);
  const auto obs = random_obs(200, rng);
  const LoglikResult r = log_likelihood(spec, make_params({0.5}), 0.2, obs);
  double sum = 0.0;
  for (double c : r.per_step) sum += c;
  CHECK(std::abs(sum - r.loglik) <= 1e-10);
  CHECK(r.per_step.size() == obs.size());
  CHECK((r.filter.array() >= 0.0).all());
  CHECK(std::abs(r.filter.sum() - 1.0) <= 1e-12);
  CHECK_FALSE(r.zero_step);
  CHECK(log_likelihood_value(spec, make_params({0.5}), 0.2, obs) == r.loglik);
}

TEST_CASE("zero emission weight yields -inf with the step index") {
  const HmmSpec dy = dyadic_spec();
  const std::vector<double> obs{1.0, 0.3, 0.25};
  const LoglikResult r = log_likelihood(dy, make_params({0.5}), 0.0, obs);
  CHECK(r.loglik == -kInf);
  REQUIRE(r.zero_step);
  CHECK(*r.zero_step == 2);
  CHECK_THROWS_AS(score(dy, make_params({0.5}), 0.0, obs), ZeroLikelihoodError);
  CHECK_THROWS_AS(log_likelihood(gaussian_location_spec(), make_params({20.0}), 0.0, obs), DomainError);
}

TEST_CASE("brute_force_loglik examples") {
  const HmmSpec loc = gaussian_location_spec();
  const std::vector<double> obs{0.3, -1.0, 2.2, 0.0};
  CHECK(brute_force_loglik(loc, make_params({0.4}), 0.2, obs) ==
        doctest::Approx(log_likelihood(loc, make_params({0.4}), 0.2, obs).loglik).epsilon(1e-14));

  const HmmSpec h2 = gaussian_hmm2_spec();
  const Params th = make_params({0.2, 0.3});
  const std::vector<double> one{0.7};
  const Eigen::MatrixXd q = transition_matrix(h2, th);
  const Eigen::VectorXd first = q.transpose() * h2.initial_dist;
  const double hand = std::log(first(0) * emission_density(h2, th, 0, 0.7) + first(1) * emission_density(h2, th, 1, 0.7));
  CHECK(brute_force_loglik(h2, th, 0.0, one) == doctest::Approx(hand).epsilon(1e-14));

  const std::vector<double> long_obs(25, 0.0);
  CHECK_THROWS_AS(brute_force_loglik(h2, th, 0.0, long_obs), DomainError);
}

TEST_CASE("forward recursion matches the path sum on random models") {
  std::mt19937_64 rng(2025);
  std::uniform_int_distribution<int> states(1, 4), len(1, 6);
  int checked = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const auto s = static_cast<std::size_t>(states(rng));
    const HmmSpec spec = abc_hmm::testing::random_constant_hmm(s, rng);
    const auto obs = random_obs(static_cast<std::size_t>(len(rng)), rng);
    for (double eps : {0.0, 0.05, 0.3}) {
      const double a = log_likelihood(spec, make_params({0.5}), eps, obs).loglik;
      const double b = brute_force_loglik(spec, make_params({0.5}), eps, obs);
      REQUIRE(std::abs(a - b) <= 1e-10);
      ++checked;
    }
  }
  CHECK(checked >= 150);
}

TEST_CASE("score examples") {
  const HmmSpec loc = gaussian_location_spec();
  const std::vector<double> obs{1.0, 2.0};
  CHECK(score(loc, make_params({0.0}), 0.0, obs)(0) == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(std::abs(score(loc, make_params({1.5}), 0.0, obs)(0)) < 1e-14);
}

TEST_CASE("observed information examples") {
  const HmmSpec loc = gaussian_location_spec();
  std::mt19937_64 rng(1);
  const auto obs = random_obs(37, rng);
  CHECK(observed_information(loc, make_params({0.2}), 0.0, obs)(0, 0) == doctest::Approx(37.0).epsilon(1e-12));
}

TEST_CASE("score and information match finite differences on random 2-state models") {
  for (int trial = 0; trial < 10; ++trial) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(500 + trial));
    const HmmSpec spec = abc_hmm::testing::random_hmm2(rng);
    const Params th = abc_hmm::testing::random_hmm2_theta(rng);
    const Trajectory t = simulate(spec, th, 40, static_cast<std::uint64_t>(trial));
    for (double eps : {0.0, 0.1}) {
      const LoglikDerivatives d = loglik_derivatives(spec, th, eps, t.observed, true);
      CHECK(d.loglik == doctest::Approx(log_likelihood_value(spec, th, eps, t.observed)).epsilon(1e-12));
      const Eigen::MatrixXd& info = d.observed_information;
      CHECK((info - info.transpose()).norm() <= 1e-8);
      Eigen::VectorXd inc_sum = Eigen::VectorXd::Zero(th.size());
      for (const auto& v : d.score_increments) inc_sum += v;
      CHECK((inc_sum - d.score).norm() <= 1e-9 * (1.0 + d.score.norm()));
      for (Eigen::Index i = 0; i < th.size(); ++i) {
        const double h = 1e-5;
        Params tp = th, tm = th;
        tp(i) += h;
        tm(i) -= h;
        const double fd = (log_likelihood_value(spec, tp, eps, t.observed) -
                           log_likelihood_value(spec, tm, eps, t.observed)) / (2.0 * h);
        REQUIRE(close_rel(d.score(i), fd, 1e-5, 1e-6));
        const double h2 = 1e-4;
        tp = th;
        tm = th;
        tp(i) += h2;
        tm(i) -= h2;
        const Eigen::VectorXd fd_col =
            -(score(spec, tp, eps, t.observed) - score(spec, tm, eps, t.observed)) / (2.0 * h2);
        for (Eigen::Index j = 0; j < th.size(); ++j) REQUIRE(close_rel(info(j, i), fd_col(j), 1e-3, 1e-4));
      }
    }
  }
}

TEST_CASE("relative surface examples") {
  const HmmSpec scale = gaussian_scale_spec();
  const Trajectory t = simulate(scale, make_params({1.0}), 100000, 31);
  std::vector<Params> grid;
  for (double v : {0.5, 0.75, 1.0, 1.5, 2.0, 3.0}) grid.push_back(make_params({v}));
  const SurfaceEstimate s = relative_surface(scale, grid, make_params({1.0}), 0.0, t.observed);
  CHECK(s.values[2] == 0.0);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    CHECK(s.valid[i]);
    CHECK(s.values[i] <= 3.0 / std::sqrt(100000.0));
    CHECK(std::abs(s.hessians[i](0, 0) - s.hessians[i].transpose()(0, 0)) <= 1e-8);
  }
  const double l0 = -0.5 * (std::log(2.0) + 0.5 - 1.0);
  CHECK(l0 == doctest::Approx(-0.096574).epsilon(1e-5));
  CHECK(std::abs(s.values[4] - l0) < 0.01);

  const HmmSpec dy = dyadic_spec(20, 0.0, 1.0);
  const std::vector<double> obs{1.0, 0.5};
  const SurfaceEstimate d = relative_surface(dy, {make_params({0.0}), make_params({0.5})}, make_params({0.5}), 0.0, obs);
  CHECK_FALSE(d.valid[0]);
  CHECK(d.values[0] == -kInf);
  CHECK(d.valid[1]);
}

TEST_CASE("initial-condition forgetting") {
  const HmmSpec h2 = gaussian_hmm2_spec();
  const Params th = make_params({0.2, 0.3});
  const Trajectory t = simulate(h2, th, 10000, 8);
  double worst = 0.0;
  for (std::size_t n : {10u, 100u, 1000u, 10000u}) {
    const std::span<const double> prefix(t.observed.data(), n);
    const double a = log_likelihood(h2, th, 0.1, prefix, 0).loglik;
    const double b = log_likelihood(h2, th, 0.1, prefix, 1).loglik;
    worst = std::max(worst, std::abs(a - b));
  }
  CHECK(worst < 3.0);
}
