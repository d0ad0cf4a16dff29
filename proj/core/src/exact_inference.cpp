#include "abc_hmm/exact_inference.hpp"

#include <cmath>

#include "abc_hmm/errors.hpp"
#include "abc_hmm/numerics.hpp"
#include "abc_hmm/perturbation.hpp"

namespace abc_hmm {

namespace {

Eigen::VectorXd start_distribution(const HmmSpec& spec, std::optional<std::size_t> initial_state) {
  if (!initial_state) return spec.initial_dist;
  if (*initial_state >= spec.n_states) throw DomainError("initial state out of range");
  Eigen::VectorXd e = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.n_states));
  e(static_cast<Eigen::Index>(*initial_state)) = 1.0;
  return e;
}

void check_inputs(const HmmSpec& spec, const Params& theta, double epsilon) {
  spec.theta_space.require_contains(theta);
  if (!(epsilon >= 0.0)) throw DomainError("epsilon must be >= 0");
}

template <class OnStep>
double forward(const HmmSpec& spec, const Params& theta, double epsilon, std::span<const double> obs,
               Eigen::VectorXd& alpha, std::optional<std::size_t>& zero_step, OnStep&& on_step) {
  check_inputs(spec, theta, epsilon);
  const WindowedEmission w(spec.emission, epsilon);
  const auto s = static_cast<Eigen::Index>(spec.n_states);
  double ll = 0.0;
  if (s == 1) {
    alpha = Eigen::VectorXd::Ones(1);
    for (std::size_t k = 0; k < obs.size(); ++k) {
      const double g = window_density(w, theta, 0, obs[k]);
      if (!(g > 0.0)) {
        zero_step = k + 1;
        return -kInf;
      }
      const double c = std::log(g);
      on_step(c);
      ll += c;
    }
    return ll;
  }
  const Eigen::MatrixXd q = transition_matrix(spec, theta);
  Eigen::VectorXd pred(s);
  for (std::size_t k = 0; k < obs.size(); ++k) {
    pred.noalias() = q.transpose() * alpha;
    for (Eigen::Index j = 0; j < s; ++j) {
      if (pred(j) > 0.0) pred(j) *= window_density(w, theta, static_cast<std::size_t>(j), obs[k]);
    }
    const double c = pred.sum();
    if (!(c > 0.0)) {
      zero_step = k + 1;
      return -kInf;
    }
    alpha = pred / c;
    const double lc = std::log(c);
    on_step(lc);
    ll += lc;
  }
  return ll;
}

}  // namespace

LoglikResult log_likelihood(const HmmSpec& spec, const Params& theta, double epsilon,
                            std::span<const double> obs, std::optional<std::size_t> initial_state) {
  LoglikResult r;
  r.per_step.reserve(obs.size());
  r.filter = start_distribution(spec, initial_state);
  r.loglik = forward(spec, theta, epsilon, obs, r.filter, r.zero_step,
                     [&](double c) { r.per_step.push_back(c); });
  if (r.zero_step) r.per_step.push_back(-kInf);
  return r;
}

double log_likelihood_value(const HmmSpec& spec, const Params& theta, double epsilon,
                            std::span<const double> obs) {
  std::optional<std::size_t> zero_step;
  Eigen::VectorXd alpha = spec.initial_dist;
  return forward(spec, theta, epsilon, obs, alpha, zero_step, [](double) {});
}

double brute_force_loglik(const HmmSpec& spec, const Params& theta, double epsilon,
                          std::span<const double> obs) {
  check_inputs(spec, theta, epsilon);
  const std::size_t s = spec.n_states;
  const std::size_t n = obs.size();
  double paths = 1.0;
  for (std::size_t k = 0; k < n; ++k) paths *= static_cast<double>(s);
  if (paths > 1e6) throw DomainError("brute_force_loglik: more than 1e6 hidden paths");
  if (n == 0) return 0.0;

  const WindowedEmission w(spec.emission, epsilon);
  const Eigen::MatrixXd q = transition_matrix(spec, theta);
  const Eigen::VectorXd first = q.transpose() * spec.initial_dist;
  auto safe_log = [](double v) { return v > 0.0 ? std::log(v) : -kInf; };

  std::vector<std::vector<double>> log_g(n, std::vector<double>(s));
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t x = 0; x < s; ++x) log_g[k][x] = safe_log(window_density(w, theta, x, obs[k]));
  }

  std::vector<double> terms;
  terms.reserve(static_cast<std::size_t>(paths));
  std::vector<std::size_t> path(n, 0);
  while (true) {
    double t = safe_log(first(static_cast<Eigen::Index>(path[0]))) + log_g[0][path[0]];
    for (std::size_t k = 1; k < n; ++k) {
      t += safe_log(q(static_cast<Eigen::Index>(path[k - 1]), static_cast<Eigen::Index>(path[k]))) +
           log_g[k][path[k]];
    }
    terms.push_back(t);
    std::size_t k = n;
    while (k > 0 && ++path[k - 1] == s) {
      path[k - 1] = 0;
      --k;
    }
    if (k == 0) break;
  }
  return log_sum_exp(terms);
}

LoglikDerivatives loglik_derivatives(const HmmSpec& spec, const Params& theta, double epsilon,
                                     std::span<const double> obs, bool keep_increments) {
  check_inputs(spec, theta, epsilon);
  const Eigen::Index d = spec.dim();
  const auto s = static_cast<Eigen::Index>(spec.n_states);
  const auto su = spec.n_states;
  const WindowedEmission w(spec.emission, epsilon);

  // log q derivatives (entries with q = 0 never carry smoothing weight).
  const DualMatrix qd = spec.transition(theta);
  Eigen::MatrixXd q(s, s);
  std::vector<Eigen::VectorXd> lq_grad(su * su, Eigen::VectorXd::Zero(d));
  std::vector<Eigen::MatrixXd> lq_hess(su * su, Eigen::MatrixXd::Zero(d, d));
  for (std::size_t i = 0; i < su; ++i) {
    for (std::size_t j = 0; j < su; ++j) {
      const Dual2& e = qd[i * su + j];
      q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = e.value();
      if (e.value() > 0.0) {
        const Dual2 l = log(e);
        lq_grad[i * su + j] = l.grad();
        lq_hess[i * su + j] = l.hess();
      }
    }
  }

  Eigen::VectorXd alpha = spec.initial_dist;
  std::vector<Eigen::VectorXd> t_mean(su, Eigen::VectorXd::Zero(d));
  std::vector<Eigen::MatrixXd> t_cov(su, Eigen::MatrixXd::Zero(d, d));
  std::vector<Eigen::MatrixXd> h_mean(su, Eigen::MatrixXd::Zero(d, d));
  std::vector<Eigen::VectorXd> nt_mean(su), le_grad(su);
  std::vector<Eigen::MatrixXd> nt_cov(su), nh_mean(su), le_hess(su);
  Eigen::VectorXd g(s), pred(s), prev_score = Eigen::VectorXd::Zero(d);

  LoglikDerivatives out;
  out.loglik = 0.0;
  if (keep_increments) out.score_increments.reserve(obs.size());

  for (std::size_t k = 0; k < obs.size(); ++k) {
    pred.noalias() = q.transpose() * alpha;
    for (std::size_t j = 0; j < su; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      g(jj) = 0.0;
      if (!(pred(jj) > 0.0)) continue;
      const Dual2 gd = window_density_derivs(w, theta, j, obs[k]);
      g(jj) = gd.value();
      if (gd.value() > 0.0) {
        const Dual2 l = log(gd);
        le_grad[j] = l.grad();
        le_hess[j] = l.hess();
      }
    }
    const Eigen::VectorXd weights = pred.cwiseProduct(g);
    const double c = weights.sum();
    if (!(c > 0.0)) throw ZeroLikelihoodError("zero likelihood: score is undefined", k + 1);
    out.loglik += std::log(c);

    for (std::size_t j = 0; j < su; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      nt_mean[j] = Eigen::VectorXd::Zero(d);
      nt_cov[j] = Eigen::MatrixXd::Zero(d, d);
      nh_mean[j] = Eigen::MatrixXd::Zero(d, d);
      if (!(weights(jj) > 0.0)) continue;
      // Backward kernel b(i | j) = alpha_i q_ij / pred_j.
      for (std::size_t i = 0; i < su; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const double b = alpha(ii) * q(ii, jj) / pred(jj);
        if (b <= 0.0) continue;
        nt_mean[j] += b * (t_mean[i] + lq_grad[i * su + j] + le_grad[j]);
        nh_mean[j] += b * (h_mean[i] + lq_hess[i * su + j] + le_hess[j]);
      }
      for (std::size_t i = 0; i < su; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const double b = alpha(ii) * q(ii, jj) / pred(jj);
        if (b <= 0.0) continue;
        const Eigen::VectorXd u = t_mean[i] + lq_grad[i * su + j] + le_grad[j] - nt_mean[j];
        nt_cov[j] += b * (t_cov[i] + u * u.transpose());
      }
    }
    alpha = weights / c;
    std::swap(t_mean, nt_mean);
    std::swap(t_cov, nt_cov);
    std::swap(h_mean, nh_mean);

    if (keep_increments) {
      Eigen::VectorXd sc = Eigen::VectorXd::Zero(d);
      for (std::size_t j = 0; j < su; ++j) sc += alpha(static_cast<Eigen::Index>(j)) * t_mean[j];
      out.score_increments.push_back(sc - prev_score);
      prev_score = sc;
    }
  }

  out.score = Eigen::VectorXd::Zero(d);
  for (std::size_t j = 0; j < su; ++j) out.score += alpha(static_cast<Eigen::Index>(j)) * t_mean[j];
  Eigen::MatrixXd expected_hess = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd var = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t j = 0; j < su; ++j) {
    const double a = alpha(static_cast<Eigen::Index>(j));
    if (a <= 0.0) continue;
    const Eigen::VectorXd u = t_mean[j] - out.score;
    expected_hess += a * h_mean[j];
    var += a * (t_cov[j] + u * u.transpose());
  }
  const Eigen::MatrixXd hess = expected_hess + var;
  out.observed_information = -0.5 * (hess + hess.transpose());
  return out;
}

Eigen::VectorXd score(const HmmSpec& spec, const Params& theta, double epsilon, std::span<const double> obs) {
  return loglik_derivatives(spec, theta, epsilon, obs).score;
}

Eigen::MatrixXd observed_information(const HmmSpec& spec, const Params& theta, double epsilon,
                                     std::span<const double> obs) {
  return loglik_derivatives(spec, theta, epsilon, obs).observed_information;
}

SurfaceEstimate relative_surface(const HmmSpec& spec, const std::vector<Params>& theta_grid,
                                 const Params& theta_star, double epsilon, std::span<const double> obs,
                                 bool with_derivatives) {
  if (obs.empty()) throw DomainError("relative_surface: no observations");
  SurfaceEstimate out;
  out.theta_grid = theta_grid;
  out.n = obs.size();
  out.epsilon = epsilon;
  const double ref = log_likelihood_value(spec, theta_star, epsilon, obs);
  if (!std::isfinite(ref)) throw ZeroLikelihoodError("relative_surface: reference likelihood is zero", 0);
  const double n = static_cast<double>(obs.size());
  for (const Params& t : theta_grid) {
    const double ll = log_likelihood_value(spec, t, epsilon, obs);
    const bool ok = std::isfinite(ll);
    out.valid.push_back(ok);
    out.values.push_back(ok ? (ll - ref) / n : -kInf);
    if (!with_derivatives) continue;
    if (ok) {
      const LoglikDerivatives dv = loglik_derivatives(spec, t, epsilon, obs);
      out.gradients.push_back(dv.score / n);
      out.hessians.push_back(-dv.observed_information / n);
    } else {
      out.gradients.push_back(Eigen::VectorXd::Constant(spec.dim(), kNaN));
      out.hessians.push_back(Eigen::MatrixXd::Constant(spec.dim(), spec.dim(), kNaN));
    }
  }
  return out;
}

}  // namespace abc_hmm
