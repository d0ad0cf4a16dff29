#include "abc_hmm/asymptotics_lab.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "abc_hmm/errors.hpp"
#include "abc_hmm/exact_inference.hpp"
#include "abc_hmm/numerics.hpp"
#include "abc_hmm/parallel.hpp"
#include "abc_hmm/perturbation.hpp"
#include "abc_hmm/random.hpp"

namespace abc_hmm {

namespace {

std::string short_number(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double sup_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::isfinite(a[i]) && std::isfinite(b[i])) m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

StudyResult make_result(const std::string& name) {
  StudyResult r;
  r.study_name = name;
  r.columns = study_columns(name);
  return r;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw DomainError(what);
}

}  // namespace

const std::vector<std::string>& study_columns(const std::string& study_name) {
  static const std::map<std::string, std::vector<std::string>> headers{
      {"surface_convergence", {"epsilon", "n", "gap_to_reference", "gap_to_eps0", "gap_to_analytic"}},
      {"bias_rate", {"epsilon", "theta_star_eps", "abs_bias"}},
      {"dyadic_gradient", {"k", "epsilon", "analytic_gradient", "computed_gradient"}},
      {"clt", {"replication", "theta_hat", "standardized"}},
      {"bvm", {"n", "distance", "posterior_sd_scaled", "predicted_sd"}},
      {"optimal_eps", {"n", "epsilon", "rmse"}},
  };
  const auto it = headers.find(study_name);
  if (it == headers.end()) throw DomainError("unknown study '" + study_name + "'");
  return it->second;
}

std::optional<double> analytic_l0(const HmmSpec& spec, const Params& theta, const Params& theta_star) {
  if (spec.family == "gaussian_location") {
    const auto* g = dynamic_cast<const GaussianEmission*>(spec.emission.get());
    if (!g) return std::nullopt;
    const double sd = g->sd(0).eval(theta);
    const double d = theta(0) - theta_star(0);
    return -d * d / (2.0 * sd * sd);
  }
  if (spec.family == "gaussian_scale") {
    const double r = theta_star(0) / theta(0);
    return -0.5 * (-std::log(r) + r - 1.0);
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------

StudyResult surface_convergence_study(const HmmSpec& spec, const SurfaceConvergenceConfig& cfg) {
  require(!cfg.epsilon_list.empty() && !cfg.n_list.empty() && !cfg.theta_grid.empty(),
          "surface_convergence: epsilon_list, n_list and theta_grid must be nonempty");
  require(std::is_sorted(cfg.n_list.begin(), cfg.n_list.end()) && cfg.n_list.front() > 0,
          "surface_convergence: n_list must be positive and increasing");
  StudyResult res = make_result("surface_convergence");
  const std::uint64_t seed = derive_seed(cfg.seed, "surface-convergence", 0);
  const Trajectory traj = simulate(spec, cfg.theta_star, cfg.n_list.back(), seed);
  const std::span<const double> all(traj.observed);

  // Surfaces for every (epsilon, n) cell plus the epsilon = 0 row.
  std::vector<double> eps = cfg.epsilon_list;
  eps.push_back(0.0);
  const std::size_t ne = eps.size(), nn = cfg.n_list.size();
  std::vector<std::vector<double>> surf(ne * nn);
  parallel_for(ne * nn, [&](std::size_t c) {
    const std::size_t e = c / nn, i = c % nn;
    surf[c] = relative_surface(spec, cfg.theta_grid, cfg.theta_star, eps[e], all.first(cfg.n_list[i]), false).values;
  });

  std::vector<double> l0(cfg.theta_grid.size(), kNaN);
  bool has_analytic = true;
  for (std::size_t j = 0; j < cfg.theta_grid.size(); ++j) {
    const auto v = analytic_l0(spec, cfg.theta_grid[j], cfg.theta_star);
    if (!v) {
      has_analytic = false;
      break;
    }
    l0[j] = *v;
  }

  for (std::size_t e = 0; e + 1 < ne; ++e) {
    int inversions = 0;
    double prev = kInf;
    for (std::size_t i = 0; i < nn; ++i) {
      const auto& s = surf[e * nn + i];
      const double to_ref = sup_abs_diff(s, surf[e * nn + nn - 1]);
      const double to_eps0 = sup_abs_diff(s, surf[(ne - 1) * nn + i]);
      const double to_analytic = has_analytic ? sup_abs_diff(s, l0) : kNaN;
      res.rows.push_back({eps[e], static_cast<double>(cfg.n_list[i]), to_ref, to_eps0, to_analytic});
      res.row_seeds.push_back(seed);
      if (i + 1 < nn) {
        if (to_ref > prev) ++inversions;
        prev = to_ref;
      }
    }
    const std::string key = "eps=" + short_number(eps[e]);
    res.summary[key + ".inversions"] = inversions;
    res.flags[key + ".verdict"] = inversions <= 1 ? "converging" : "not monotone";
  }
  return res;
}

// ---------------------------------------------------------------------------

StudyResult bias_rate_study(const HmmSpec& spec, const BiasRateConfig& cfg) {
  require(cfg.epsilon_list.size() >= 2, "bias_rate: need at least two epsilon values");
  StudyResult res = make_result("bias_rate");
  PseudoTrueConfig method = cfg.method;
  method.theta_star = cfg.theta_star;
  std::vector<PseudoTrue> pts(cfg.epsilon_list.size());
  parallel_for(pts.size(), [&](std::size_t i) { pts[i] = pseudo_true_parameter(spec, cfg.epsilon_list[i], method); });

  std::vector<double> lx, ly;
  std::size_t excluded = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double bias = (pts[i].theta_star_eps - cfg.theta_star).norm();
    res.rows.push_back({cfg.epsilon_list[i], pts[i].theta_star_eps(0), bias});
    res.row_seeds.push_back(method.seed);
    if (bias < cfg.min_bias || cfg.epsilon_list[i] <= 0.0) {
      ++excluded;
      continue;
    }
    lx.push_back(std::log(cfg.epsilon_list[i]));
    ly.push_back(std::log(bias));
  }
  res.summary["excluded_points"] = static_cast<double>(excluded);
  if (lx.size() >= 2) {
    res.summary["slope"] = ols_slope(lx, ly);
  } else {
    res.summary["slope"] = kNaN;
    res.flags["verdict"] = "degenerate: symmetric family";
  }
  if (excluded > 0 && lx.size() >= 2) {
    res.flags["excluded"] = std::to_string(excluded) + " point(s) with bias below " + short_number(cfg.min_bias);
  }
  return res;
}

// ---------------------------------------------------------------------------

StudyResult dyadic_gradient_check(const DyadicGradientConfig& cfg) {
  require(!cfg.k_list.empty(), "dyadic_gradient: k_list must be nonempty");
  const int kmax = *std::max_element(cfg.k_list.begin(), cfg.k_list.end());
  require(*std::min_element(cfg.k_list.begin(), cfg.k_list.end()) >= 0, "dyadic_gradient: k must be >= 0");
  const double tail = std::pow(4.0, -cfg.truncation);
  if (cfg.truncation < kmax + 10 || tail > 1e-12) {
    throw DomainError("dyadic_gradient: truncation K = " + std::to_string(cfg.truncation) +
                      " too small (need K >= max(k) + 10 and tail 4^-K <= 1e-12); increase truncation");
  }
  StudyResult res = make_result("dyadic_gradient");
  const HmmSpec spec = dyadic_spec(cfg.truncation);
  const Params half = make_params({0.5});
  double worst = 0.0;
  for (int k : cfg.k_list) {
    const double eps = std::pow(4.0, -(k + 1));
    const double analytic = 3.0 * std::pow(4.0, -(k + 2));
    const double computed = expected_log_window_density(spec, half, half, eps).gradient(0);
    worst = std::max(worst, std::abs(computed - analytic));
    res.rows.push_back({static_cast<double>(k), eps, analytic, computed});
    res.row_seeds.push_back(0);
  }
  res.summary["max_abs_discrepancy"] = worst;
  res.summary["truncation_tail"] = tail;
  return res;
}

// ---------------------------------------------------------------------------

StudyResult clt_study(const HmmSpec& spec, const CltConfig& cfg) {
  require(cfg.n >= 2 && cfg.replications >= 200, "clt: need n >= 2 and at least 200 replications");
  StudyResult res = make_result("clt");
  Params center;
  if (cfg.theta_star_eps) {
    center = *cfg.theta_star_eps;
  } else {
    PseudoTrueConfig pc;
    pc.theta_star = cfg.theta_star;
    pc.seed = cfg.seed;
    center = pseudo_true_parameter(spec, cfg.epsilon, pc).theta_star_eps;
  }
  MleConfig mc = cfg.mle;
  mc.keep_trace = false;

  struct Rep {
    double theta_hat = kNaN;
    double sandwich = kNaN;
    bool excluded = false;
  };
  std::vector<Rep> reps(cfg.replications);
  std::vector<std::uint64_t> seeds(cfg.replications);
  parallel_for(cfg.replications, [&](std::size_t i) {
    seeds[i] = derive_seed(cfg.seed, "clt", i);
    const Trajectory t = simulate(spec, cfg.theta_star, cfg.n, seeds[i]);
    const MleResult m = abc_mle(spec, cfg.epsilon, t.observed, mc);
    reps[i].theta_hat = m.theta_hat(0);
    if (m.on_boundary) {
      reps[i].excluded = true;
      return;
    }
    try {
      reps[i].sandwich = sandwich_variance(spec, m.theta_hat, cfg.epsilon, t.observed).sandwich(0, 0);
    } catch (const NumericalError&) {
      reps[i].excluded = true;
    }
  });

  std::vector<double> preds;
  for (const Rep& r : reps) {
    if (!r.excluded) preds.push_back(r.sandwich);
  }
  require(preds.size() >= 2, "clt: fewer than two usable replications");
  const double prediction = sample_mean(preds);
  const double root_n = std::sqrt(static_cast<double>(cfg.n));
  std::vector<double> z;
  for (std::size_t i = 0; i < reps.size(); ++i) {
    if (reps[i].excluded) continue;
    const double s = root_n * (reps[i].theta_hat - center(0)) / std::sqrt(prediction);
    z.push_back(s);
    res.rows.push_back({static_cast<double>(i), reps[i].theta_hat, s});
    res.row_seeds.push_back(seeds[i]);
  }
  const KsResult ks = ks_test(z, [](double v) { return normal_cdf(v); });
  res.summary["theta_star_eps"] = center(0);
  res.summary["sandwich_prediction"] = prediction;
  res.summary["ks_stat"] = ks.statistic;
  res.summary["ks_p_value"] = ks.p_value;
  res.summary["variance_ratio"] = sample_variance(z);
  res.summary["mean_standardized"] = sample_mean(z);
  res.summary["excluded"] = static_cast<double>(reps.size() - z.size());
  return res;
}

// ---------------------------------------------------------------------------

StudyResult bvm_study(const HmmSpec& spec, const BvmConfig& cfg) {
  require(spec.dim() == 1, "bvm: one-dimensional parameter required");
  require(!cfg.n_list.empty() && cfg.grid_points >= 3, "bvm: n_list must be nonempty and grid_points >= 3");
  require(cfg.prior.kind == Prior::Kind::Flat || (cfg.prior.sd.size() == 1 && cfg.prior.sd(0) > 0.0),
          "bvm: prior must be continuous and positive on the box");
  StudyResult res = make_result("bvm");
  const std::size_t n_max = *std::max_element(cfg.n_list.begin(), cfg.n_list.end());
  const std::uint64_t seed = derive_seed(cfg.seed, "bvm", 0);
  const Trajectory traj = simulate(spec, cfg.theta_star, n_max, seed);
  const std::span<const double> all(traj.observed);
  MleConfig mc = cfg.mle;
  mc.keep_trace = false;
  const ParamSpace& box = spec.theta_space;

  std::vector<std::vector<double>> rows(cfg.n_list.size());
  parallel_for(cfg.n_list.size(), [&](std::size_t idx) {
    const std::size_t n = cfg.n_list[idx];
    const auto obs = all.first(n);
    const double nd = static_cast<double>(n);
    const MleResult m = abc_mle(spec, cfg.epsilon, obs, mc);
    const double info = observed_information(spec, m.theta_hat, cfg.epsilon, obs)(0, 0) / nd;
    if (!(info > 0.0)) throw NumericalError("bvm: non-positive information at theta_hat");
    const double predicted_sd = 1.0 / std::sqrt(info);
    const double half = cfg.half_width_sd * predicted_sd / std::sqrt(nd);
    PosteriorConfig pc;
    pc.grid_points = cfg.grid_points;
    pc.box = ParamSpace(make_params({std::max(box.lower(0), m.theta_hat(0) - half)}),
                        make_params({std::min(box.upper(0), m.theta_hat(0) + half)}));
    const PosteriorGrid post = abc_posterior(spec, cfg.epsilon, obs, cfg.prior, pc);

    // Trapezoid CDF of the rescaled posterior on the grid.
    const std::size_t g = post.theta_grid.size();
    std::vector<double> z(g), cdf(g, 0.0);
    for (std::size_t j = 0; j < g; ++j) z[j] = std::sqrt(nd) * (post.theta_grid[j](0) - m.theta_hat(0));
    for (std::size_t j = 1; j < g; ++j) {
      cdf[j] = cdf[j - 1] + 0.5 * (post.weights[j - 1] + post.weights[j]) * (z[j] - z[j - 1]);
    }
    double distance = 0.0;
    for (std::size_t j = 0; j < g; ++j) {
      distance = std::max(distance, std::abs(cdf[j] / cdf[g - 1] - normal_cdf(z[j] / predicted_sd)));
    }
    rows[idx] = {nd, distance, std::sqrt(nd * post.covariance(0, 0)), predicted_sd};
  });
  for (auto& r : rows) {
    res.rows.push_back(std::move(r));
    res.row_seeds.push_back(seed);
  }
  int inversions = 0;
  for (std::size_t i = 1; i < res.rows.size(); ++i) {
    if (res.rows[i][1] > res.rows[i - 1][1]) ++inversions;
  }
  res.summary["distance_inversions"] = inversions;
  res.summary["final_distance"] = res.rows.back()[1];
  return res;
}

// ---------------------------------------------------------------------------

StudyResult optimal_eps_study(const HmmSpec& spec, const OptimalEpsConfig& cfg) {
  require(!cfg.n_list.empty() && !cfg.epsilon_grid.empty() && cfg.replications >= 100,
          "optimal_eps: need n_list, epsilon_grid and at least 100 replications");
  require(spec.dominating_measure().kind == MeasureKind::Lebesgue1D, "optimal_eps: Lebesgue dominating measure required");
  StudyResult res = make_result("optimal_eps");
  const std::size_t nn = cfg.n_list.size(), ne = cfg.epsilon_grid.size(), nr = cfg.replications;
  MleConfig mc = cfg.mle;
  mc.keep_trace = false;

  // err[(n, rep)][eps]: one record per (n, replication) shared across the epsilon grid.
  std::vector<std::vector<double>> err(nn * nr, std::vector<double>(ne, kNaN));
  parallel_for(nn * nr, [&](std::size_t task) {
    const std::size_t ni = task / nr;
    const Trajectory t = simulate(spec, cfg.theta_star, cfg.n_list[ni], derive_seed(cfg.seed, "optimal-eps", task));
    for (std::size_t e = 0; e < ne; ++e) {
      const MleResult m = abc_mle(spec, cfg.epsilon_grid[e], t.observed, mc);
      err[task][e] = (m.theta_hat - cfg.theta_star).norm();
    }
  });

  std::vector<double> log_n, log_argmin;
  for (std::size_t ni = 0; ni < nn; ++ni) {
    double best = kInf, best_eps = kNaN;
    for (std::size_t e = 0; e < ne; ++e) {
      double mse = 0.0;
      for (std::size_t r = 0; r < nr; ++r) mse += err[ni * nr + r][e] * err[ni * nr + r][e];
      const double rmse = std::sqrt(mse / static_cast<double>(nr));
      res.rows.push_back({static_cast<double>(cfg.n_list[ni]), cfg.epsilon_grid[e], rmse});
      res.row_seeds.push_back(derive_seed(cfg.seed, "optimal-eps", ni * nr));
      if (rmse < best) {
        best = rmse;
        best_eps = cfg.epsilon_grid[e];
      }
    }
    res.summary["argmin_eps.n=" + std::to_string(cfg.n_list[ni])] = best_eps;
    log_n.push_back(std::log(static_cast<double>(cfg.n_list[ni])));
    log_argmin.push_back(std::log(best_eps));
  }
  res.summary["slope"] = nn >= 2 ? ols_slope(log_n, log_argmin) : kNaN;
  return res;
}

}  // namespace abc_hmm
