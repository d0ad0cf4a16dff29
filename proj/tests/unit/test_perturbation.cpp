#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "abc_hmm/errors.hpp"
#include "abc_hmm/numerics.hpp"
#include "abc_hmm/perturbation.hpp"
#include "test_support.hpp"

using namespace abc_hmm;

namespace {

// Gaussian emission that hides its closed form so the quadrature path runs.
class QuadratureGaussian final : public EmissionFamily {
 public:
  explicit QuadratureGaussian(std::shared_ptr<const EmissionFamily> inner) : inner_(std::move(inner)) {}
  EmissionKind kind() const override { return EmissionKind::Custom; }
  std::size_t n_states() const override { return inner_->n_states(); }
  const MeasureDescriptor& dominating_measure() const override { return inner_->dominating_measure(); }
  double density(const Params& t, std::size_t x, double y) const override { return inner_->density(t, x, y); }
  Dual2 density_derivs(const Params& t, std::size_t x, double y) const override {
    return inner_->density_derivs(t, x, y);
  }
  double sample(const Params& t, std::size_t x, Rng& rng) const override { return inner_->sample(t, x, rng); }
  std::pair<double, double> support(const Params& t, std::size_t x) const override {
    return inner_->support(t, x);
  }

 private:
  std::shared_ptr<const EmissionFamily> inner_;
};

}  // namespace

TEST_CASE("window_density examples") {
  const HmmSpec loc = gaussian_location_spec();
  const WindowedEmission w(loc.emission, 0.1);
  CHECK(window_density(w, make_params({0.0}), 0, 0.0) == doctest::Approx(0.3982783727702899).epsilon(1e-13));

  const HmmSpec unif = uniform_scale_spec();
  CHECK(window_density(WindowedEmission(unif.emission, 0.2), make_params({1.0}), 0, 0.5) ==
        doctest::Approx(1.0).epsilon(1e-15));

  const HmmSpec dy = dyadic_spec();
  CHECK(window_density(WindowedEmission(dy.emission, 0.125), make_params({0.5}), 0, 0.5) ==
        doctest::Approx(0.375).epsilon(1e-15));
}

TEST_CASE("window_density: epsilon = 0 delegates and negative epsilon is rejected") {
  const HmmSpec scale = gaussian_scale_spec();
  const Params th = make_params({1.7});
  const WindowedEmission w0(scale.emission, 0.0);
  for (double y : {-2.0, 0.1, 3.0}) CHECK(window_density(w0, th, 0, y) == scale.emission->density(th, 0, y));
  CHECK_THROWS_AS(WindowedEmission(scale.emission, -0.1), DomainError);
}

TEST_CASE("empty counting ball is an error, not a zero") {
  const HmmSpec dy = dyadic_spec();
  const WindowedEmission w(dy.emission, 0.01);
  CHECK_THROWS_AS(window_density(w, make_params({0.5}), 0, 0.3), ZeroBallMeasureError);
  CHECK_THROWS_AS(window_density_grad(w, make_params({0.5}), 0, 0.3), ZeroBallMeasureError);
}

TEST_CASE("window_density_grad examples") {
  const HmmSpec loc = gaussian_location_spec();
  CHECK(std::abs(window_density_grad(WindowedEmission(loc.emission, 0.1), make_params({0.0}), 0, 0.0)(0)) < 1e-12);

  const HmmSpec dy = dyadic_spec();
  CHECK(window_density_grad(WindowedEmission(dy.emission, 0.125), make_params({0.5}), 0, 0.5)(0) ==
        doctest::Approx(-0.75).epsilon(1e-15));

  const HmmSpec scale = gaussian_scale_spec();
  const Params th = make_params({0.8});
  CHECK(window_density_grad(WindowedEmission(scale.emission, 0.0), th, 0, 0.4)(0) ==
        scale.emission->density_derivs(th, 0, 0.4).grad()(0));
}

TEST_CASE("ball_measure examples") {
  CHECK(ball_measure(MeasureDescriptor::lebesgue(), 3.0, 0.1).mass == doctest::Approx(0.2).epsilon(1e-15));
  const auto& atoms = dyadic_spec().dominating_measure();
  CHECK(ball_measure(atoms, 1.0, 0.25).mass == 1.0);
  CHECK(ball_measure(atoms, 1.0, 0.6).mass == 2.0);
  // closed ball: 1/4 is on the boundary of [1/4, 3/4]
  CHECK(ball_measure(atoms, 0.5, 0.25).mass == 2.0);
}

TEST_CASE("perturb_sample examples") {
  CHECK(perturb_sample(1.25, 0.0, 17) == 1.25);
  CHECK(perturb_sample(0.3, 0.5, 4) == perturb_sample(0.3, 0.5, 4));
  Rng rng(2718);
  const int n = 100000;
  std::vector<double> draws;
  draws.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double z = perturb_sample(0.0, 0.5, rng);
    REQUIRE(z >= -0.5);
    REQUIRE(z <= 0.5);
    draws.push_back(z);
  }
  CHECK(std::abs(sample_mean(draws)) < 3.0 * (0.5 / std::sqrt(3.0)) / std::sqrt(n));
  CHECK(std::abs(sample_variance(draws) / (0.25 / 3.0) - 1.0) < 0.05);
}

TEST_CASE("normalization of the perturbed law") {
  // Uniform base: integral of the windowed density over the line is one.
  const HmmSpec unif = uniform_scale_spec();
  const WindowedEmission wu(unif.emission, 0.3);
  const double total = adaptive_simpson<double>(
      [&](double y) { return window_density(wu, make_params({1.4}), 0, y); }, -0.3, 1.7, {1e-12, 50, 64});
  CHECK(total == doctest::Approx(1.0).epsilon(1e-8));

  // Dyadic base: P(Y in B_y) / (2 eps) is the density of Y + eps U; integrate
  // it exactly as a piecewise-constant function.
  const HmmSpec dy = dyadic_spec();
  const double eps = 0.05;
  const WindowedEmission wd(dy.emission, eps);
  const Params th = make_params({0.4});
  std::set<double> cuts;
  for (double a : dy.dominating_measure().atoms) {
    cuts.insert(a - eps);
    cuts.insert(a + eps);
  }
  const std::vector<double> pts(cuts.begin(), cuts.end());
  double integral = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double mid = 0.5 * (pts[i] + pts[i + 1]);
    const double mass = ball_measure(dy.dominating_measure(), mid, eps).mass;
    if (mass == 0.0) continue;
    integral += (pts[i + 1] - pts[i]) * window_density(wd, th, 0, mid) * mass / (2.0 * eps);
  }
  CHECK(std::abs(integral - 1.0) < 1e-8);
}

TEST_CASE("Lebesgue differentiation for the Gaussian family") {
  const HmmSpec loc = gaussian_location_spec();
  const Params th = make_params({0.0});
  for (int y = -2; y <= 2; ++y) {
    const double g = loc.emission->density(th, 0, y);
    CHECK(std::abs(window_density(WindowedEmission(loc.emission, 0.01), th, 0, y) - g) <= 1e-4);
    double prev = kInf;
    for (double eps : {0.4, 0.2, 0.1, 0.05}) {
      const double gap = std::abs(window_density(WindowedEmission(loc.emission, eps), th, 0, y) - g);
      CHECK(gap < prev);
      prev = gap;
    }
  }
}

TEST_CASE("windowed density times ball length is the CDF probability") {
  const HmmSpec scale = gaussian_scale_spec();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const double var = 0.3 + 3.0 * u(rng), y = -4.0 + 8.0 * u(rng), eps = 0.01 + 0.5 * u(rng);
    const double sd = std::sqrt(var);
    const double p = normal_cdf((y + eps) / sd) - normal_cdf((y - eps) / sd);
    const double w = window_density(WindowedEmission(scale.emission, eps), make_params({var}), 0, y);
    REQUIRE(std::abs(w * 2.0 * eps - p) < 1e-8);
  }
}

TEST_CASE("quadrature fallback agrees with the closed form") {
  const HmmSpec h2 = gaussian_hmm2_spec();
  std::mt19937_64 mrng(9);
  const HmmSpec r2 = abc_hmm::testing::random_hmm2(mrng);
  const Params th = abc_hmm::testing::random_hmm2_theta(mrng);
  const auto quad = std::make_shared<QuadratureGaussian>(r2.emission);
  for (double eps : {0.05, 0.3}) {
    const WindowedEmission exact(r2.emission, eps), numeric(quad, eps);
    for (std::size_t x = 0; x < 2; ++x) {
      for (double y : {-1.3, 0.2, 2.5}) {
        CHECK(window_density(numeric, th, x, y) ==
              doctest::Approx(window_density(exact, th, x, y)).epsilon(1e-8));
        const Dual2 a = window_density_derivs(exact, th, x, y);
        const Dual2 b = window_density_derivs(numeric, th, x, y);
        CHECK((a.grad() - b.grad()).cwiseAbs().maxCoeff() < 1e-8);
        CHECK((a.hess() - b.hess()).cwiseAbs().maxCoeff() < 1e-8);
      }
    }
  }
}

TEST_CASE("gradient interchange matches finite differences") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto check = [](const WindowedEmission& w, const Params& theta, std::size_t x, double y) {
    const Params g = window_density_grad(w, theta, x, y);
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      const double h = 1e-6 * std::max(1.0, std::abs(theta(i)));
      Params tp = theta, tm = theta;
      tp(i) += h;
      tm(i) -= h;
      const double fd = (window_density(w, tp, x, y) - window_density(w, tm, x, y)) / (2.0 * h);
      REQUIRE(abc_hmm::testing::close_rel(g(i), fd, 1e-5, 1e-9));
    }
  };
  for (int trial = 0; trial < 30; ++trial) {
    const double eps = 0.02 + 0.4 * u(rng);
    const HmmSpec scale = gaussian_scale_spec();
    check(WindowedEmission(scale.emission, eps), make_params({0.3 + 3.0 * u(rng)}), 0, -3.0 + 6.0 * u(rng));
    const HmmSpec loc = gaussian_location_spec();
    check(WindowedEmission(loc.emission, eps), make_params({-1.0 + 2.0 * u(rng)}), 0, -3.0 + 6.0 * u(rng));
    std::mt19937_64 mrng(static_cast<std::uint64_t>(100 + trial));
    const HmmSpec r2 = abc_hmm::testing::random_hmm2(mrng);
    check(WindowedEmission(r2.emission, eps), abc_hmm::testing::random_hmm2_theta(mrng),
          static_cast<std::size_t>(trial % 2), -2.0 + 4.0 * u(rng));
    const HmmSpec dy = dyadic_spec();
    check(WindowedEmission(dy.emission, eps), make_params({0.3 + 0.4 * u(rng)}), 0, 0.5);
  }
}
