#include <benchmark/benchmark.h>

#include "abc_hmm/abc_monte_carlo.hpp"
#include "abc_hmm/estimators.hpp"
#include "abc_hmm/exact_inference.hpp"
#include "abc_hmm/perturbation.hpp"

using namespace abc_hmm;

namespace {

void BM_ForwardScale(benchmark::State& state) {
  const HmmSpec spec = gaussian_scale_spec();
  const Params th = make_params({1.0});
  const auto obs = simulate(spec, th, static_cast<std::size_t>(state.range(0)), 1).observed;
  for (auto _ : state) benchmark::DoNotOptimize(log_likelihood_value(spec, th, 0.2, obs));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardScale)->Arg(1000)->Arg(100000);

void BM_ForwardHmm2(benchmark::State& state) {
  const HmmSpec spec = gaussian_hmm2_spec();
  const Params th = make_params({0.2, 0.3});
  const auto obs = simulate(spec, th, static_cast<std::size_t>(state.range(0)), 1).observed;
  for (auto _ : state) benchmark::DoNotOptimize(log_likelihood_value(spec, th, 0.1, obs));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardHmm2)->Arg(1000)->Arg(100000);

void BM_Derivatives(benchmark::State& state) {
  const HmmSpec spec = gaussian_hmm2_spec();
  const Params th = make_params({0.2, 0.3});
  const auto obs = simulate(spec, th, static_cast<std::size_t>(state.range(0)), 2).observed;
  for (auto _ : state) benchmark::DoNotOptimize(loglik_derivatives(spec, th, 0.1, obs, false).score);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Derivatives)->Arg(1000);

void BM_Smc(benchmark::State& state) {
  const HmmSpec spec = gaussian_hmm2_spec();
  const Params th = make_params({0.2, 0.3});
  const auto obs = simulate(spec, th, 50, 3).observed;
  const auto particles = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(ball_probability_smc(spec, th, 0.3, obs, particles, 4).log_prob);
  state.SetItemsProcessed(state.iterations() * state.range(0) * 50);
}
BENCHMARK(BM_Smc)->Arg(1000)->Arg(10000);

void BM_WindowedDensityDyadic(benchmark::State& state) {
  const HmmSpec spec = dyadic_spec(20);
  const WindowedEmission w(spec.emission, 0.1);
  const Params th = make_params({0.5});
  for (auto _ : state) benchmark::DoNotOptimize(window_density(w, th, 0, 0.5));
}
BENCHMARK(BM_WindowedDensityDyadic);

void BM_PseudoTrueScale(benchmark::State& state) {
  const HmmSpec spec = gaussian_scale_spec();
  PseudoTrueConfig cfg;
  cfg.theta_star = make_params({1.0});
  for (auto _ : state) benchmark::DoNotOptimize(pseudo_true_parameter(spec, 0.3, cfg).theta_star_eps);
}
BENCHMARK(BM_PseudoTrueScale)->Unit(benchmark::kMillisecond);

void BM_MleScale(benchmark::State& state) {
  const HmmSpec spec = gaussian_scale_spec();
  const auto obs = simulate(spec, make_params({1.0}), 2000, 5).observed;
  MleConfig cfg;
  cfg.keep_trace = false;
  for (auto _ : state) benchmark::DoNotOptimize(abc_mle(spec, 0.5, obs, cfg).theta_hat);
}
BENCHMARK(BM_MleScale)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
