#pragma once

// Parameterized hidden Markov model families with a finite hidden state space
// and scalar observations: construction, validation, simulation and raw
// emission evaluation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "abc_hmm/dual.hpp"
#include "abc_hmm/random.hpp"

namespace abc_hmm {

/// Compact box of admissible parameters.
struct ParamSpace {
  Params lower;
  Params upper;

  ParamSpace() = default;
  ParamSpace(Params lo, Params hi);

  Eigen::Index dim() const { return lower.size(); }
  bool contains(const Params& theta) const;
  /// Throws DomainError naming the first violated bound.
  void require_contains(const Params& theta) const;
};

enum class MeasureKind { Lebesgue1D, CountingAtoms };

/// Dominating measure for the observation density.
struct MeasureDescriptor {
  MeasureKind kind = MeasureKind::Lebesgue1D;
  /// Strictly increasing atom locations (CountingAtoms only).
  std::vector<double> atoms;

  static MeasureDescriptor lebesgue() { return {}; }
  static MeasureDescriptor counting(std::vector<double> atoms);

  /// Number of atoms in the closed interval [lo, hi].
  std::size_t count_in(double lo, double hi) const;
};

enum class EmissionKind { GaussianPerState, DiscreteAtoms, UniformInterval, Custom };

/// Scalar expression of the parameter vector: a constant, theta[i] or sqrt(theta[i]).
struct ParamExpr {
  enum class Kind { Constant, Identity, Sqrt };
  Kind kind = Kind::Constant;
  double constant = 0.0;
  int index = 0;

  static ParamExpr fixed(double c) { return {Kind::Constant, c, 0}; }
  static ParamExpr param(int i) { return {Kind::Identity, 0.0, i}; }
  static ParamExpr sqrt_param(int i) { return {Kind::Sqrt, 0.0, i}; }

  double eval(const Params& theta) const;
  Dual2 eval_dual(const Params& theta) const;
};

/// Family of emission densities g_theta(y | x) with respect to a dominating
/// measure. Densities and interval masses come in two flavours: plain values
/// and Dual2 values carrying theta-gradients and Hessians.
class EmissionFamily {
 public:
  virtual ~EmissionFamily() = default;

  virtual EmissionKind kind() const = 0;
  virtual std::size_t n_states() const = 0;
  virtual const MeasureDescriptor& dominating_measure() const = 0;

  virtual double density(const Params& theta, std::size_t x, double y) const = 0;
  virtual Dual2 density_derivs(const Params& theta, std::size_t x, double y) const = 0;

  /// True when interval_mass has a closed form. Otherwise the windowed
  /// density falls back to adaptive quadrature of `density`.
  virtual bool has_closed_form_mass() const { return false; }
  /// Integral of g_theta(. | x) over [lo, hi] against the dominating measure.
  virtual double interval_mass(const Params& theta, std::size_t x, double lo, double hi) const;
  virtual Dual2 interval_mass_derivs(const Params& theta, std::size_t x, double lo, double hi) const;

  virtual double sample(const Params& theta, std::size_t x, Rng& rng) const = 0;

  /// Interval outside of which the density is negligible (< 1e-30).
  virtual std::pair<double, double> support(const Params& theta, std::size_t x) const = 0;

  /// Total mass for finite-support (atomic) families, if truncated.
  virtual std::optional<double> total_mass(const Params&, std::size_t) const { return std::nullopt; }
  /// Upper bound on probability mass dropped by truncation.
  virtual double truncation_tail() const { return 0.0; }

  /// grad_theta log g_theta(y | x).
  Params score(const Params& theta, std::size_t x, double y) const;
};

/// Per-state Gaussian emissions N(mean_x(theta), sd_x(theta)^2).
class GaussianEmission final : public EmissionFamily {
 public:
  GaussianEmission(std::vector<ParamExpr> means, std::vector<ParamExpr> sds);

  EmissionKind kind() const override { return EmissionKind::GaussianPerState; }
  std::size_t n_states() const override { return means_.size(); }
  const MeasureDescriptor& dominating_measure() const override { return measure_; }
  double density(const Params& theta, std::size_t x, double y) const override;
  Dual2 density_derivs(const Params& theta, std::size_t x, double y) const override;
  bool has_closed_form_mass() const override { return true; }
  double interval_mass(const Params& theta, std::size_t x, double lo, double hi) const override;
  Dual2 interval_mass_derivs(const Params& theta, std::size_t x, double lo, double hi) const override;
  double sample(const Params& theta, std::size_t x, Rng& rng) const override;
  std::pair<double, double> support(const Params& theta, std::size_t x) const override;

  const ParamExpr& mean(std::size_t x) const { return means_.at(x); }
  const ParamExpr& sd(std::size_t x) const { return sds_.at(x); }

 private:
  std::vector<ParamExpr> means_;
  std::vector<ParamExpr> sds_;
  MeasureDescriptor measure_;
};

/// One atom of a discrete emission: mass = base + coeff . theta.
struct Atom {
  double location = 0.0;
  double base = 0.0;
  Params coeff;
};

/// Finitely many atoms per state with masses affine in theta.
class DiscreteAtomsEmission final : public EmissionFamily {
 public:
  /// atoms_per_state[x] must be strictly increasing in location.
  DiscreteAtomsEmission(std::vector<std::vector<Atom>> atoms_per_state, Eigen::Index dim,
                        double truncation_tail = 0.0);

  EmissionKind kind() const override { return EmissionKind::DiscreteAtoms; }
  std::size_t n_states() const override { return states_.size(); }
  const MeasureDescriptor& dominating_measure() const override { return measure_; }
  double density(const Params& theta, std::size_t x, double y) const override;
  Dual2 density_derivs(const Params& theta, std::size_t x, double y) const override;
  bool has_closed_form_mass() const override { return true; }
  double interval_mass(const Params& theta, std::size_t x, double lo, double hi) const override;
  Dual2 interval_mass_derivs(const Params& theta, std::size_t x, double lo, double hi) const override;
  double sample(const Params& theta, std::size_t x, Rng& rng) const override;
  std::pair<double, double> support(const Params& theta, std::size_t x) const override;
  std::optional<double> total_mass(const Params& theta, std::size_t x) const override;
  double truncation_tail() const override { return tail_; }

  const std::vector<Atom>& atoms(std::size_t x) const { return states_.at(x).atoms; }

 private:
  struct State {
    std::vector<Atom> atoms;
    std::vector<double> locations;
    // Prefix sums over atoms: base and coefficient vectors.
    std::vector<double> base_prefix;
    std::vector<Params> coeff_prefix;
  };
  // Index range [first, last) of atoms inside [lo, hi].
  std::pair<std::size_t, std::size_t> range(const State& s, double lo, double hi) const;

  std::vector<State> states_;
  Eigen::Index dim_;
  double tail_;
  MeasureDescriptor measure_;
};

/// Per-state uniform emissions on [lo_x(theta), hi_x(theta)].
class UniformEmission final : public EmissionFamily {
 public:
  UniformEmission(std::vector<ParamExpr> lows, std::vector<ParamExpr> highs);

  EmissionKind kind() const override { return EmissionKind::UniformInterval; }
  std::size_t n_states() const override { return lows_.size(); }
  const MeasureDescriptor& dominating_measure() const override { return measure_; }
  double density(const Params& theta, std::size_t x, double y) const override;
  Dual2 density_derivs(const Params& theta, std::size_t x, double y) const override;
  bool has_closed_form_mass() const override { return true; }
  double interval_mass(const Params& theta, std::size_t x, double lo, double hi) const override;
  Dual2 interval_mass_derivs(const Params& theta, std::size_t x, double lo, double hi) const override;
  double sample(const Params& theta, std::size_t x, Rng& rng) const override;
  std::pair<double, double> support(const Params& theta, std::size_t x) const override;

 private:
  std::vector<ParamExpr> lows_;
  std::vector<ParamExpr> highs_;
  MeasureDescriptor measure_;
};

/// Row-major |X| x |X| transition matrix with parameter derivatives.
using DualMatrix = std::vector<Dual2>;
using TransitionFn = std::function<DualMatrix(const Params&)>;

/// Transition entry q(from, to) = theta[param]; the diagonal of each bound row
/// absorbs the remaining mass.
struct TransitionBinding {
  std::size_t from = 0;
  std::size_t to = 0;
  int param = 0;
};

TransitionFn constant_transition(Eigen::MatrixXd matrix);
TransitionFn bound_transition(Eigen::MatrixXd base, std::vector<TransitionBinding> bindings);

/// A parameterized HMM family.
struct HmmSpec {
  std::string family;
  std::size_t n_states = 1;
  TransitionFn transition;
  std::shared_ptr<const EmissionFamily> emission;
  Eigen::VectorXd initial_dist;
  ParamSpace theta_space;

  Eigen::Index dim() const { return theta_space.dim(); }
  const MeasureDescriptor& dominating_measure() const { return emission->dominating_measure(); }
};

struct Trajectory {
  std::vector<std::size_t> hidden;  // x_0 .. x_n
  std::vector<double> observed;     // y_1 .. y_n
  Params theta_used;
  std::uint64_t seed = 0;
};

/// Tensor grid with `points` equally spaced values per coordinate (endpoints
/// included), last coordinate varying fastest.
std::vector<Params> box_grid(const ParamSpace& space, std::size_t points);

struct ValidationIssue {
  Params theta;
  std::string what;
};

struct ValidationReport {
  bool passed = true;
  std::size_t grid_size = 0;
  std::vector<ValidationIssue> issues;
};

/// Checks the spec invariants over a theta grid with `grid_points` points per
/// coordinate: stochastic rows, emission mass for atomic families, finite
/// densities, initial distribution. Throws DomainError for an empty box.
ValidationReport validate_spec(const HmmSpec& spec, std::size_t grid_points, double tolerance = 1e-12);

/// Draws x_0 ~ initial_dist, x_k ~ q_theta(x_{k-1}, .), y_k ~ g_theta(. | x_k).
Trajectory simulate(const HmmSpec& spec, const Params& theta, std::size_t n, std::uint64_t seed);

double emission_density(const HmmSpec& spec, const Params& theta, std::size_t x, double y);

/// Numeric transition matrix; throws NumericalError naming a non-stochastic row.
Eigen::MatrixXd transition_matrix(const HmmSpec& spec, const Params& theta);

// ---------------------------------------------------------------------------
// Built-in families.

/// Single state, N(theta, sigma^2).
HmmSpec gaussian_location_spec(double sigma = 1.0, double lower = -10.0, double upper = 10.0);
/// Single state, N(mean, theta): theta is the variance.
HmmSpec gaussian_scale_spec(double mean = 0.0, double lower = 0.25, double upper = 4.0);
/// Two states with Gaussian emissions; theta = (q(0,1), q(1,0)).
HmmSpec gaussian_hmm2_spec(Eigen::Vector2d means = {-1.0, 1.0}, Eigen::Vector2d sds = {1.0, 1.0},
                           double lower = 0.05, double upper = 0.95);
/// Single state mixture theta*pi1 + (1-theta)*pi2 on dyadic atoms,
/// pi1(4^-k) = pi2(4^-k / 2) = 3/4^(k+1), truncated at k < truncation.
HmmSpec dyadic_spec(int truncation = 20, double lower = 0.25, double upper = 0.75);
/// Single state, Uniform[0, theta].
HmmSpec uniform_scale_spec(double lower = 0.5, double upper = 2.0);

/// Builds a Params vector from an initializer list.
Params make_params(std::initializer_list<double> values);

}  // namespace abc_hmm
