#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "abc_hmm/errors.hpp"
#include "abc_hmm/model.hpp"
#include "abc_hmm/numerics.hpp"
#include "test_support.hpp"

using namespace abc_hmm;

namespace {

HmmSpec constant_two_state(Eigen::Matrix2d q) {
  HmmSpec spec = gaussian_hmm2_spec();
  spec.transition = constant_transition(q);
  spec.theta_space = ParamSpace(make_params({0.0}), make_params({1.0}));
  return spec;
}

}  // namespace

TEST_CASE("ParamSpace rejects degenerate boxes and names violated bounds") {
  CHECK_THROWS_AS(ParamSpace(make_params({1.0}), make_params({1.0})), DomainError);
  CHECK_THROWS_AS(ParamSpace(make_params({0.0, 0.0}), make_params({1.0})), DomainError);
  const ParamSpace box(make_params({0.0, -1.0}), make_params({1.0, 1.0}));
  CHECK(box.contains(make_params({0.5, 0.0})));
  CHECK_FALSE(box.contains(make_params({0.5, 1.5})));
  try {
    box.require_contains(make_params({0.5, 1.5}));
    FAIL("expected DomainError");
  } catch (const DomainError& e) {
    CHECK(std::string(e.what()).find("theta[1]") != std::string::npos);
    CHECK(std::string(e.what()).find("upper") != std::string::npos);
  }
}

TEST_CASE("counting measure requires strictly increasing atoms") {
  CHECK_THROWS_AS(MeasureDescriptor::counting({0.0, 0.0}), DomainError);
  CHECK_THROWS_AS(MeasureDescriptor::counting({1.0, 0.5}), DomainError);
  const auto m = MeasureDescriptor::counting({0.25, 0.5, 1.0});
  CHECK(m.count_in(0.4, 1.6) == 2);
  CHECK(m.count_in(0.25, 0.25) == 1);
  CHECK(m.count_in(0.3, 0.4) == 0);
}

TEST_CASE("validate_spec examples") {
  Eigen::Matrix2d q;
  q << 0.7, 0.3, 0.4, 0.6;
  const ValidationReport ok = validate_spec(constant_two_state(q), 5);
  CHECK(ok.passed);
  CHECK(ok.grid_size == 5);

  q << 0.8, 0.3, 0.4, 0.6;
  const ValidationReport bad = validate_spec(constant_two_state(q), 3);
  CHECK_FALSE(bad.passed);
  REQUIRE_FALSE(bad.issues.empty());
  CHECK(bad.issues.front().what.find("row 0 sums to 1.1") != std::string::npos);

  const HmmSpec dyadic = dyadic_spec(20);
  const auto total = dyadic.emission->total_mass(make_params({0.5}), 0);
  REQUIRE(total);
  CHECK(std::abs(*total - (1.0 - std::pow(4.0, -20))) < 1e-15);
  CHECK(validate_spec(dyadic, 7, 1e-11).passed);
  CHECK_FALSE(validate_spec(dyadic_spec(5), 3, 1e-11).passed);

  HmmSpec empty = gaussian_location_spec();
  empty.theta_space.upper = empty.theta_space.lower;
  CHECK_THROWS_AS(validate_spec(empty, 3), DomainError);
}

TEST_CASE("validate_spec flags non-finite densities") {
  HmmSpec spec = gaussian_scale_spec(0.0, 0.25, 4.0);
  spec.emission = std::make_shared<GaussianEmission>(std::vector{ParamExpr::fixed(0.0)},
                                                     std::vector{ParamExpr::fixed(0.0)});
  const ValidationReport r = validate_spec(spec, 2);
  CHECK_FALSE(r.passed);
  CHECK(r.issues.front().what.find("emission density") != std::string::npos);
}

TEST_CASE("built-in families pass validation") {
  CHECK(validate_spec(gaussian_location_spec(), 9).passed);
  CHECK(validate_spec(gaussian_scale_spec(), 9).passed);
  CHECK(validate_spec(gaussian_hmm2_spec(), 9).passed);
  CHECK(validate_spec(uniform_scale_spec(), 9).passed);
}

TEST_CASE("simulate: sampler mean, determinism and bounds") {
  const HmmSpec spec = gaussian_location_spec();
  const Params theta = make_params({0.7});
  double sum = 0.0;
  const int repeats = 100000;
  for (int r = 0; r < repeats; ++r) {
    const Trajectory t = simulate(spec, theta, 3, derive_seed(11, "sampler-mean", r));
    REQUIRE(t.observed.size() == 3);
    REQUIRE(t.hidden.size() == 4);
    sum += t.observed[0];
  }
  CHECK(std::abs(sum / repeats - 0.7) < 3.0 / std::sqrt(repeats));

  const Trajectory a = simulate(spec, theta, 50, 99);
  const Trajectory b = simulate(spec, theta, 50, 99);
  CHECK(a.observed == b.observed);
  CHECK(a.hidden == b.hidden);
  CHECK(a.seed == 99);
  CHECK_THROWS_AS(simulate(spec, make_params({11.0}), 5, 1), DomainError);
  CHECK_THROWS_AS(simulate(spec, theta, 0, 1), DomainError);
}

TEST_CASE("simulate: absorbing chain stays put") {
  Eigen::Matrix2d q;
  q << 1.0, 0.0, 0.5, 0.5;
  HmmSpec spec = constant_two_state(q);
  spec.initial_dist = Eigen::Vector2d(1.0, 0.0);
  const Trajectory t = simulate(spec, make_params({0.5}), 200, 5);
  CHECK(std::all_of(t.hidden.begin(), t.hidden.end(), [](std::size_t x) { return x == 0; }));
}

TEST_CASE("simulate: dyadic at theta = 1 only hits powers of 1/4") {
  const HmmSpec spec = dyadic_spec(20, 0.0, 1.0);
  const Trajectory t = simulate(spec, make_params({1.0}), 2000, 3);
  for (double y : t.observed) {
    const double k = -std::log(y) / std::log(4.0);
    REQUIRE(std::abs(k - std::round(k)) < 1e-9);
  }
}

TEST_CASE("simulate: single-state marginal passes KS at 99%") {
  const HmmSpec spec = gaussian_scale_spec();
  const Trajectory t = simulate(spec, make_params({2.0}), 100000, 2024);
  const KsResult r = ks_test(t.observed, [](double y) { return normal_cdf(y / std::sqrt(2.0)); });
  CHECK(r.p_value > 0.01);
}

TEST_CASE("simulate: two-state occupancy matches stationary law") {
  const HmmSpec spec = gaussian_hmm2_spec();
  const Trajectory t = simulate(spec, make_params({0.2, 0.3}), 100000, 77);
  const double ones = static_cast<double>(std::count(t.hidden.begin() + 1, t.hidden.end(), 1));
  // stationary law of q01 = 0.2, q10 = 0.3 is (0.6, 0.4)
  CHECK(std::abs(ones / 100000.0 - 0.4) < 0.01);
}

TEST_CASE("emission_density examples") {
  CHECK(emission_density(gaussian_location_spec(), make_params({0.0}), 0, 0.0) ==
        doctest::Approx(0.3989423).epsilon(1e-6));
  const HmmSpec dyadic = dyadic_spec();
  CHECK(emission_density(dyadic, make_params({0.5}), 0, 1.0) == doctest::Approx(0.375).epsilon(1e-15));
  CHECK(emission_density(dyadic, make_params({0.5}), 0, 0.3) == 0.0);
  CHECK_THROWS_AS(emission_density(dyadic, make_params({0.5}), 1, 1.0), DomainError);
}

TEST_CASE("transition_matrix examples") {
  Eigen::Matrix2d q;
  q << 0.7, 0.3, 0.4, 0.6;
  CHECK((transition_matrix(constant_two_state(q), make_params({0.3})) - Eigen::MatrixXd(q)).norm() == 0.0);

  const HmmSpec spec = gaussian_hmm2_spec();
  const Eigen::MatrixXd m = transition_matrix(spec, make_params({0.25, 0.5}));
  CHECK(m(0, 0) == doctest::Approx(0.75));
  CHECK(m(0, 1) == doctest::Approx(0.25));

  const double delta = 1e-6;
  const Eigen::MatrixXd m2 = transition_matrix(spec, make_params({0.25 + delta, 0.5}));
  CHECK((m2 - m).cwiseAbs().maxCoeff() <= 1.0 * delta * (1.0 + 1e-6));

  HmmSpec broken = constant_two_state(q);
  Eigen::Matrix2d bad;
  bad << 0.8, 0.3, 0.4, 0.6;
  broken.transition = constant_transition(bad);
  try {
    transition_matrix(broken, make_params({0.5}));
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("row 0") != std::string::npos);
  }
}

TEST_CASE("emission score matches central finite differences") {
  std::mt19937_64 rng(12345);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto fd_check = [](const EmissionFamily& e, Params theta, std::size_t x, double y) {
    const Params s = e.score(theta, x, y);
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      const double h = 1e-6 * std::max(1.0, std::abs(theta(i)));
      Params tp = theta, tm = theta;
      tp(i) += h;
      tm(i) -= h;
      const double fd = (std::log(e.density(tp, x, y)) - std::log(e.density(tm, x, y))) / (2.0 * h);
      REQUIRE(abc_hmm::testing::close_rel(s(i), fd, 1e-5, 1e-9));
    }
  };
  for (int trial = 0; trial < 50; ++trial) {
    const HmmSpec loc = gaussian_location_spec();
    fd_check(*loc.emission, make_params({-2.0 + 4.0 * u(rng)}), 0, -3.0 + 6.0 * u(rng));
    const HmmSpec scale = gaussian_scale_spec();
    fd_check(*scale.emission, make_params({0.3 + 3.0 * u(rng)}), 0, -3.0 + 6.0 * u(rng));
    const HmmSpec dy = dyadic_spec();
    const auto& atoms = dy.dominating_measure().atoms;
    const double y = atoms[atoms.size() - 1 - static_cast<std::size_t>(8 * u(rng))];
    fd_check(*dy.emission, make_params({0.3 + 0.4 * u(rng)}), 0, y);
    const HmmSpec unif = uniform_scale_spec();
    const double th = 0.6 + 1.3 * u(rng);
    fd_check(*unif.emission, make_params({th}), 0, 0.5 * th * u(rng));
    std::mt19937_64 mrng(static_cast<std::uint64_t>(trial));
    const HmmSpec h2 = abc_hmm::testing::random_hmm2(mrng);
    const Params t2 = abc_hmm::testing::random_hmm2_theta(mrng);
    fd_check(*h2.emission, t2, static_cast<std::size_t>(trial % 2), -2.0 + 4.0 * u(rng));
  }
}
