#include "abc_hmm/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "abc_hmm/errors.hpp"
#include "abc_hmm/numerics.hpp"

namespace abc_hmm {

namespace {

std::string format_params(const Params& theta) {
  std::ostringstream os;
  os << "(";
  for (Eigen::Index i = 0; i < theta.size(); ++i) os << (i ? ", " : "") << theta(i);
  os << ")";
  return os.str();
}

template <class T>
T gaussian_density(const T& mu, const T& sigma, double y) {
  const T z = (y - mu) / sigma;
  return normal_pdf(z) / sigma;
}

template <class T>
T gaussian_mass(const T& mu, const T& sigma, double lo, double hi) {
  return normal_interval(T((lo - mu) / sigma), T((hi - mu) / sigma));
}

template <class T>
T uniform_density(const T& lo, const T& hi, double y) {
  if (y < value_of(lo) || y > value_of(hi)) return T(lift(0.0, lo));
  return 1.0 / (hi - lo);
}

template <class T>
T uniform_mass(const T& lo, const T& hi, double a, double b) {
  const T left = max_by_value(lo, lift(a, lo));
  const T right = min_by_value(hi, lift(b, hi));
  if (value_of(right) <= value_of(left)) return T(lift(0.0, lo));
  return (right - left) / (hi - lo);
}

}  // namespace

// ---------------------------------------------------------------------------

ParamSpace::ParamSpace(Params lo, Params hi) : lower(std::move(lo)), upper(std::move(hi)) {
  if (lower.size() == 0 || lower.size() != upper.size()) {
    throw DomainError("parameter box: lower and upper must be nonempty and of equal length");
  }
  for (Eigen::Index i = 0; i < lower.size(); ++i) {
    if (!(lower(i) < upper(i))) {
      throw DomainError("parameter box: empty range in coordinate " + std::to_string(i));
    }
  }
}

bool ParamSpace::contains(const Params& theta) const {
  if (theta.size() != dim()) return false;
  for (Eigen::Index i = 0; i < dim(); ++i) {
    if (!(theta(i) >= lower(i) && theta(i) <= upper(i))) return false;
  }
  return true;
}

void ParamSpace::require_contains(const Params& theta) const {
  if (theta.size() != dim()) {
    throw DomainError("theta has dimension " + std::to_string(theta.size()) + ", expected " +
                      std::to_string(dim()));
  }
  for (Eigen::Index i = 0; i < dim(); ++i) {
    if (!(theta(i) >= lower(i))) {
      throw DomainError("theta[" + std::to_string(i) + "] = " + std::to_string(theta(i)) +
                        " below lower bound " + std::to_string(lower(i)));
    }
    if (!(theta(i) <= upper(i))) {
      throw DomainError("theta[" + std::to_string(i) + "] = " + std::to_string(theta(i)) +
                        " above upper bound " + std::to_string(upper(i)));
    }
  }
}

MeasureDescriptor MeasureDescriptor::counting(std::vector<double> atoms) {
  for (std::size_t i = 1; i < atoms.size(); ++i) {
    if (!(atoms[i - 1] < atoms[i])) {
      throw DomainError("counting measure atoms must be strictly increasing");
    }
  }
  MeasureDescriptor m;
  m.kind = MeasureKind::CountingAtoms;
  m.atoms = std::move(atoms);
  return m;
}

std::size_t MeasureDescriptor::count_in(double lo, double hi) const {
  const auto first = std::lower_bound(atoms.begin(), atoms.end(), lo);
  const auto last = std::upper_bound(atoms.begin(), atoms.end(), hi);
  return last > first ? static_cast<std::size_t>(last - first) : 0;
}

double ParamExpr::eval(const Params& theta) const {
  switch (kind) {
    case Kind::Constant:
      return constant;
    case Kind::Identity:
      return theta(index);
    case Kind::Sqrt:
      return std::sqrt(theta(index));
  }
  return constant;
}

Dual2 ParamExpr::eval_dual(const Params& theta) const {
  const Eigen::Index d = theta.size();
  switch (kind) {
    case Kind::Constant:
      return Dual2::constant(constant, d);
    case Kind::Identity:
      return Dual2::variable(theta(index), index, d);
    case Kind::Sqrt:
      return sqrt(Dual2::variable(theta(index), index, d));
  }
  return Dual2::constant(constant, d);
}

// ---------------------------------------------------------------------------

double EmissionFamily::interval_mass(const Params&, std::size_t, double, double) const {
  throw NumericalError("emission family has no closed-form interval mass");
}

Dual2 EmissionFamily::interval_mass_derivs(const Params&, std::size_t, double, double) const {
  throw NumericalError("emission family has no closed-form interval mass");
}

Params EmissionFamily::score(const Params& theta, std::size_t x, double y) const {
  const Dual2 g = density_derivs(theta, x, y);
  if (!(g.value() > 0.0)) throw ZeroLikelihoodError("score undefined where the density vanishes", 0);
  return g.grad() / g.value();
}

// ---------------------------------------------------------------------------

GaussianEmission::GaussianEmission(std::vector<ParamExpr> means, std::vector<ParamExpr> sds)
    : means_(std::move(means)), sds_(std::move(sds)) {
  if (means_.empty() || means_.size() != sds_.size()) {
    throw DomainError("gaussian emission: need one mean and one sd per state");
  }
}

double GaussianEmission::density(const Params& theta, std::size_t x, double y) const {
  return gaussian_density(means_[x].eval(theta), sds_[x].eval(theta), y);
}

Dual2 GaussianEmission::density_derivs(const Params& theta, std::size_t x, double y) const {
  return gaussian_density(means_[x].eval_dual(theta), sds_[x].eval_dual(theta), y);
}

double GaussianEmission::interval_mass(const Params& theta, std::size_t x, double lo, double hi) const {
  return gaussian_mass(means_[x].eval(theta), sds_[x].eval(theta), lo, hi);
}

Dual2 GaussianEmission::interval_mass_derivs(const Params& theta, std::size_t x, double lo, double hi) const {
  return gaussian_mass(means_[x].eval_dual(theta), sds_[x].eval_dual(theta), lo, hi);
}

double GaussianEmission::sample(const Params& theta, std::size_t x, Rng& rng) const {
  return means_[x].eval(theta) + sds_[x].eval(theta) * standard_normal(rng);
}

std::pair<double, double> GaussianEmission::support(const Params& theta, std::size_t x) const {
  const double mu = means_[x].eval(theta);
  const double sd = sds_[x].eval(theta);
  return {mu - 12.0 * sd, mu + 12.0 * sd};
}

// ---------------------------------------------------------------------------

DiscreteAtomsEmission::DiscreteAtomsEmission(std::vector<std::vector<Atom>> atoms_per_state, Eigen::Index dim,
                                             double truncation_tail)
    : dim_(dim), tail_(truncation_tail) {
  if (atoms_per_state.empty()) throw DomainError("discrete emission: no states");
  std::vector<double> all;
  for (auto& atoms : atoms_per_state) {
    State s;
    s.base_prefix.push_back(0.0);
    s.coeff_prefix.push_back(Params::Zero(dim));
    for (std::size_t i = 0; i < atoms.size(); ++i) {
      if (atoms[i].coeff.size() == 0) atoms[i].coeff = Params::Zero(dim);
      if (atoms[i].coeff.size() != dim) throw DomainError("discrete emission: coefficient dimension mismatch");
      if (i > 0 && !(atoms[i - 1].location < atoms[i].location)) {
        throw DomainError("discrete emission: atom locations must be strictly increasing");
      }
      s.locations.push_back(atoms[i].location);
      s.base_prefix.push_back(s.base_prefix.back() + atoms[i].base);
      s.coeff_prefix.push_back(s.coeff_prefix.back() + atoms[i].coeff);
      all.push_back(atoms[i].location);
    }
    s.atoms = std::move(atoms);
    states_.push_back(std::move(s));
  }
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  measure_ = MeasureDescriptor::counting(std::move(all));
}

std::pair<std::size_t, std::size_t> DiscreteAtomsEmission::range(const State& s, double lo, double hi) const {
  const auto first = std::lower_bound(s.locations.begin(), s.locations.end(), lo);
  const auto last = std::upper_bound(s.locations.begin(), s.locations.end(), hi);
  const auto f = static_cast<std::size_t>(first - s.locations.begin());
  const auto l = static_cast<std::size_t>(last - s.locations.begin());
  return {f, std::max(f, l)};
}

double DiscreteAtomsEmission::density(const Params& theta, std::size_t x, double y) const {
  return interval_mass(theta, x, y, y);
}

Dual2 DiscreteAtomsEmission::density_derivs(const Params& theta, std::size_t x, double y) const {
  return interval_mass_derivs(theta, x, y, y);
}

double DiscreteAtomsEmission::interval_mass(const Params& theta, std::size_t x, double lo, double hi) const {
  const State& s = states_[x];
  const auto [f, l] = range(s, lo, hi);
  return (s.base_prefix[l] - s.base_prefix[f]) + (s.coeff_prefix[l] - s.coeff_prefix[f]).dot(theta);
}

Dual2 DiscreteAtomsEmission::interval_mass_derivs(const Params& theta, std::size_t x, double lo,
                                                  double hi) const {
  const State& s = states_[x];
  const auto [f, l] = range(s, lo, hi);
  const Params c = s.coeff_prefix[l] - s.coeff_prefix[f];
  // Affine in theta: gradient c, zero Hessian.
  return Dual2::make((s.base_prefix[l] - s.base_prefix[f]) + c.dot(theta), c,
                     ParamMatrix::Zero(theta.size(), theta.size()));
}

double DiscreteAtomsEmission::sample(const Params& theta, std::size_t x, Rng& rng) const {
  const State& s = states_[x];
  const double total = *total_mass(theta, x);
  double u = uniform01(rng) * total;
  for (const Atom& a : s.atoms) {
    const double m = a.base + a.coeff.dot(theta);
    if (u < m) return a.location;
    u -= m;
  }
  return s.atoms.back().location;
}

std::pair<double, double> DiscreteAtomsEmission::support(const Params&, std::size_t x) const {
  const State& s = states_[x];
  return {s.locations.front(), s.locations.back()};
}

std::optional<double> DiscreteAtomsEmission::total_mass(const Params& theta, std::size_t x) const {
  const State& s = states_[x];
  return s.base_prefix.back() + s.coeff_prefix.back().dot(theta);
}

// ---------------------------------------------------------------------------

UniformEmission::UniformEmission(std::vector<ParamExpr> lows, std::vector<ParamExpr> highs)
    : lows_(std::move(lows)), highs_(std::move(highs)) {
  if (lows_.empty() || lows_.size() != highs_.size()) {
    throw DomainError("uniform emission: need one interval per state");
  }
}

double UniformEmission::density(const Params& theta, std::size_t x, double y) const {
  return uniform_density(lows_[x].eval(theta), highs_[x].eval(theta), y);
}

Dual2 UniformEmission::density_derivs(const Params& theta, std::size_t x, double y) const {
  return uniform_density(lows_[x].eval_dual(theta), highs_[x].eval_dual(theta), y);
}

double UniformEmission::interval_mass(const Params& theta, std::size_t x, double lo, double hi) const {
  return uniform_mass(lows_[x].eval(theta), highs_[x].eval(theta), lo, hi);
}

Dual2 UniformEmission::interval_mass_derivs(const Params& theta, std::size_t x, double lo, double hi) const {
  return uniform_mass(lows_[x].eval_dual(theta), highs_[x].eval_dual(theta), lo, hi);
}

double UniformEmission::sample(const Params& theta, std::size_t x, Rng& rng) const {
  const double lo = lows_[x].eval(theta);
  const double hi = highs_[x].eval(theta);
  return lo + (hi - lo) * uniform01(rng);
}

std::pair<double, double> UniformEmission::support(const Params& theta, std::size_t x) const {
  return {lows_[x].eval(theta), highs_[x].eval(theta)};
}

// ---------------------------------------------------------------------------

TransitionFn constant_transition(Eigen::MatrixXd matrix) {
  return [m = std::move(matrix)](const Params& theta) {
    DualMatrix out;
    out.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(Dual2::constant(m(i, j), theta.size()));
    }
    return out;
  };
}

TransitionFn bound_transition(Eigen::MatrixXd base, std::vector<TransitionBinding> bindings) {
  for (const auto& b : bindings) {
    if (b.from == b.to) throw DomainError("transition binding cannot target a diagonal entry");
    if (b.from >= static_cast<std::size_t>(base.rows()) || b.to >= static_cast<std::size_t>(base.cols())) {
      throw DomainError("transition binding out of range");
    }
  }
  return [base = std::move(base), bindings = std::move(bindings)](const Params& theta) {
    const auto s = static_cast<std::size_t>(base.rows());
    const Eigen::Index d = theta.size();
    DualMatrix out;
    out.reserve(s * s);
    for (std::size_t i = 0; i < s; ++i) {
      for (std::size_t j = 0; j < s; ++j) out.push_back(Dual2::constant(base(i, j), d));
    }
    std::vector<bool> bound_row(s, false);
    for (const auto& b : bindings) {
      out[b.from * s + b.to] = Dual2::variable(theta(b.param), b.param, d);
      bound_row[b.from] = true;
    }
    for (std::size_t i = 0; i < s; ++i) {
      if (!bound_row[i]) continue;
      Dual2 rest = Dual2::constant(1.0, d);
      for (std::size_t j = 0; j < s; ++j) {
        if (j != i) rest -= out[i * s + j];
      }
      out[i * s + i] = rest;
    }
    return out;
  };
}

// ---------------------------------------------------------------------------

std::vector<Params> box_grid(const ParamSpace& space, std::size_t points) {
  const Eigen::Index d = space.dim();
  std::vector<Params> grid;
  std::vector<std::size_t> idx(static_cast<std::size_t>(d), 0);
  const std::size_t p = std::max<std::size_t>(points, 1);
  while (true) {
    Params t(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      const double frac = p == 1 ? 0.5 : static_cast<double>(idx[static_cast<std::size_t>(i)]) / (p - 1);
      t(i) = space.lower(i) + frac * (space.upper(i) - space.lower(i));
    }
    grid.push_back(t);
    Eigen::Index k = d - 1;
    while (k >= 0 && ++idx[static_cast<std::size_t>(k)] == p) {
      idx[static_cast<std::size_t>(k)] = 0;
      --k;
    }
    if (k < 0) break;
  }
  return grid;
}

ValidationReport validate_spec(const HmmSpec& spec, std::size_t grid_points, double tolerance) {
  if (spec.theta_space.dim() == 0 || spec.theta_space.lower.size() != spec.theta_space.upper.size()) {
    throw DomainError("parameter box is empty");
  }
  for (Eigen::Index i = 0; i < spec.theta_space.dim(); ++i) {
    if (!(spec.theta_space.lower(i) < spec.theta_space.upper(i))) {
      throw DomainError("parameter box is empty in coordinate " + std::to_string(i));
    }
  }
  if (!spec.emission || !spec.transition) throw DomainError("spec has no emission or transition");

  ValidationReport report;
  auto flag = [&](const Params& t, std::string what) {
    report.passed = false;
    report.issues.push_back({t, std::move(what)});
  };

  const std::size_t s = spec.n_states;
  if (spec.emission->n_states() != s) {
    flag(Params(), "emission has " + std::to_string(spec.emission->n_states()) + " states, spec has " +
                       std::to_string(s));
  }
  if (static_cast<std::size_t>(spec.initial_dist.size()) != s) {
    flag(Params(), "initial distribution has wrong length");
  } else {
    if ((spec.initial_dist.array() < 0.0).any()) flag(Params(), "initial distribution has a negative entry");
    if (std::abs(spec.initial_dist.sum() - 1.0) > tolerance) {
      flag(Params(), "initial distribution sums to " + std::to_string(spec.initial_dist.sum()));
    }
  }

  const auto grid = box_grid(spec.theta_space, grid_points);
  report.grid_size = grid.size();
  for (const Params& t : grid) {
    const DualMatrix q = spec.transition(t);
    if (q.size() != s * s) {
      flag(t, "transition builder returned " + std::to_string(q.size()) + " entries");
      continue;
    }
    for (std::size_t i = 0; i < s; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < s; ++j) {
        const double v = q[i * s + j].value();
        if (!std::isfinite(v) || v < 0.0) {
          flag(t, "transition row " + std::to_string(i) + " entry " + std::to_string(j) + " = " +
                      std::to_string(v));
        }
        row += v;
      }
      if (std::abs(row - 1.0) > tolerance) {
        flag(t, "transition row " + std::to_string(i) + " sums to " + std::to_string(row));
      }
    }
    for (std::size_t x = 0; x < std::min(s, spec.emission->n_states()); ++x) {
      if (auto total = spec.emission->total_mass(t, x)) {
        if (std::abs(*total - 1.0) > tolerance) {
          flag(t, "emission masses of state " + std::to_string(x) + " sum to " + std::to_string(*total));
        }
      }
      const auto [lo, hi] = spec.emission->support(t, x);
      std::vector<double> probes;
      if (spec.dominating_measure().kind == MeasureKind::CountingAtoms) {
        probes = spec.dominating_measure().atoms;
      } else {
        for (int k = 0; k <= 32; ++k) probes.push_back(lo + (hi - lo) * k / 32.0);
      }
      for (double y : probes) {
        const double g = spec.emission->density(t, x, y);
        if (!std::isfinite(g) || g < 0.0) {
          flag(t, "emission density of state " + std::to_string(x) + " at y = " + std::to_string(y) +
                      " is " + std::to_string(g));
          break;
        }
      }
    }
  }
  return report;
}

Eigen::MatrixXd transition_matrix(const HmmSpec& spec, const Params& theta) {
  spec.theta_space.require_contains(theta);
  const std::size_t s = spec.n_states;
  const DualMatrix q = spec.transition(theta);
  if (q.size() != s * s) throw NumericalError("transition builder returned a matrix of the wrong size");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s));
  for (std::size_t i = 0; i < s; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < s; ++j) {
      const double v = q[i * s + j].value();
      if (!(v >= 0.0)) {
        throw NumericalError("transition row " + std::to_string(i) + " has negative entry at theta " +
                             format_params(theta));
      }
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      row += v;
    }
    if (std::abs(row - 1.0) > 1e-9) {
      throw NumericalError("transition row " + std::to_string(i) + " sums to " + std::to_string(row) +
                           " at theta " + format_params(theta));
    }
  }
  return m;
}

namespace {

std::size_t draw_categorical(const double* probs, std::size_t n, Rng& rng) {
  double u = uniform01(rng);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (u < probs[i]) return i;
    u -= probs[i];
  }
  return n - 1;
}

}  // namespace

Trajectory simulate(const HmmSpec& spec, const Params& theta, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw DomainError("simulate: n must be >= 1");
  spec.theta_space.require_contains(theta);
  const Eigen::MatrixXd q = transition_matrix(spec, theta);
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = q;
  Rng rng(seed);
  Trajectory t;
  t.theta_used = theta;
  t.seed = seed;
  t.hidden.reserve(n + 1);
  t.observed.reserve(n);
  const std::size_t s = spec.n_states;
  t.hidden.push_back(draw_categorical(spec.initial_dist.data(), s, rng));
  for (std::size_t k = 1; k <= n; ++k) {
    const std::size_t prev = t.hidden.back();
    const std::size_t x = s == 1 ? 0 : draw_categorical(rows.data() + prev * s, s, rng);
    t.hidden.push_back(x);
    t.observed.push_back(spec.emission->sample(theta, x, rng));
  }
  return t;
}

double emission_density(const HmmSpec& spec, const Params& theta, std::size_t x, double y) {
  if (x >= spec.n_states) {
    throw DomainError("state index " + std::to_string(x) + " out of range (n_states = " +
                      std::to_string(spec.n_states) + ")");
  }
  return spec.emission->density(theta, x, y);
}

// ---------------------------------------------------------------------------

Params make_params(std::initializer_list<double> values) {
  Params p(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double v : values) p(i++) = v;
  return p;
}

HmmSpec gaussian_location_spec(double sigma, double lower, double upper) {
  HmmSpec spec;
  spec.family = "gaussian_location";
  spec.n_states = 1;
  spec.transition = constant_transition(Eigen::MatrixXd::Ones(1, 1));
  spec.emission = std::make_shared<GaussianEmission>(std::vector{ParamExpr::param(0)},
                                                     std::vector{ParamExpr::fixed(sigma)});
  spec.initial_dist = Eigen::VectorXd::Ones(1);
  spec.theta_space = ParamSpace(make_params({lower}), make_params({upper}));
  return spec;
}

HmmSpec gaussian_scale_spec(double mean, double lower, double upper) {
  HmmSpec spec;
  spec.family = "gaussian_scale";
  spec.n_states = 1;
  spec.transition = constant_transition(Eigen::MatrixXd::Ones(1, 1));
  spec.emission = std::make_shared<GaussianEmission>(std::vector{ParamExpr::fixed(mean)},
                                                     std::vector{ParamExpr::sqrt_param(0)});
  spec.initial_dist = Eigen::VectorXd::Ones(1);
  spec.theta_space = ParamSpace(make_params({lower}), make_params({upper}));
  return spec;
}

HmmSpec gaussian_hmm2_spec(Eigen::Vector2d means, Eigen::Vector2d sds, double lower, double upper) {
  HmmSpec spec;
  spec.family = "gaussian_hmm2";
  spec.n_states = 2;
  spec.transition = bound_transition(Eigen::MatrixXd::Identity(2, 2), {{0, 1, 0}, {1, 0, 1}});
  spec.emission = std::make_shared<GaussianEmission>(
      std::vector{ParamExpr::fixed(means(0)), ParamExpr::fixed(means(1))},
      std::vector{ParamExpr::fixed(sds(0)), ParamExpr::fixed(sds(1))});
  spec.initial_dist = Eigen::Vector2d(0.5, 0.5);
  spec.theta_space = ParamSpace(make_params({lower, lower}), make_params({upper, upper}));
  return spec;
}

HmmSpec dyadic_spec(int truncation, double lower, double upper) {
  if (truncation < 1) throw DomainError("dyadic spec: truncation must be >= 1");
  std::vector<Atom> atoms;
  for (int k = 0; k < truncation; ++k) {
    const double w = 3.0 * std::pow(4.0, -(k + 1));
    // pi1 atom 4^-k with mass theta * w; pi2 atom 4^-k / 2 with mass (1 - theta) * w.
    atoms.push_back({std::pow(4.0, -k), 0.0, make_params({w})});
    atoms.push_back({0.5 * std::pow(4.0, -k), w, make_params({-w})});
  }
  std::sort(atoms.begin(), atoms.end(), [](const Atom& a, const Atom& b) { return a.location < b.location; });
  HmmSpec spec;
  spec.family = "dyadic";
  spec.n_states = 1;
  spec.transition = constant_transition(Eigen::MatrixXd::Ones(1, 1));
  spec.emission = std::make_shared<DiscreteAtomsEmission>(std::vector<std::vector<Atom>>{std::move(atoms)}, 1,
                                                          std::pow(4.0, -truncation));
  spec.initial_dist = Eigen::VectorXd::Ones(1);
  spec.theta_space = ParamSpace(make_params({lower}), make_params({upper}));
  return spec;
}

HmmSpec uniform_scale_spec(double lower, double upper) {
  HmmSpec spec;
  spec.family = "uniform_scale";
  spec.n_states = 1;
  spec.transition = constant_transition(Eigen::MatrixXd::Ones(1, 1));
  spec.emission = std::make_shared<UniformEmission>(std::vector{ParamExpr::fixed(0.0)},
                                                    std::vector{ParamExpr::param(0)});
  spec.initial_dist = Eigen::VectorXd::Ones(1);
  spec.theta_space = ParamSpace(make_params({lower}), make_params({upper}));
  return spec;
}

}  // namespace abc_hmm
