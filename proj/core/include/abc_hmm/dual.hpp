#pragma once

// Second-order forward-mode differentiation over a small parameter vector.
//
// A Dual2 carries a value together with its gradient and Hessian with respect
// to the model parameters. Emission and transition families are written once
// as templates over the scalar type and instantiated with `double` for the
// likelihood hot path and with `Dual2` for scores and observed information.

#include <cmath>
#include <utility>

#include <Eigen/Core>

namespace abc_hmm {

inline constexpr int kMaxParams = 6;

using Params = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxParams, 1>;
using ParamMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxParams, kMaxParams>;

class Dual2 {
 public:
  Dual2() = default;

  static Dual2 constant(double value, Eigen::Index dim) {
    Dual2 d;
    d.value_ = value;
    d.grad_ = Params::Zero(dim);
    d.hess_ = ParamMatrix::Zero(dim, dim);
    return d;
  }

  static Dual2 make(double value, Params grad, ParamMatrix hess) {
    Dual2 d;
    d.value_ = value;
    d.grad_ = std::move(grad);
    d.hess_ = std::move(hess);
    return d;
  }

  /// The independent variable theta[index].
  static Dual2 variable(double value, Eigen::Index index, Eigen::Index dim) {
    Dual2 d = constant(value, dim);
    d.grad_(index) = 1.0;
    return d;
  }

  double value() const { return value_; }
  const Params& grad() const { return grad_; }
  const ParamMatrix& hess() const { return hess_; }
  Eigen::Index dim() const { return grad_.size(); }

  /// f(u) given f, f' and f'' evaluated at u.value().
  Dual2 apply(double f, double df, double d2f) const {
    Dual2 r;
    r.value_ = f;
    r.grad_ = df * grad_;
    r.hess_ = d2f * grad_ * grad_.transpose() + df * hess_;
    return r;
  }

  Dual2& operator+=(const Dual2& o) {
    value_ += o.value_;
    grad_ += o.grad_;
    hess_ += o.hess_;
    return *this;
  }
  Dual2& operator-=(const Dual2& o) {
    value_ -= o.value_;
    grad_ -= o.grad_;
    hess_ -= o.hess_;
    return *this;
  }
  Dual2& operator*=(double s) {
    value_ *= s;
    grad_ *= s;
    hess_ *= s;
    return *this;
  }
  Dual2& operator+=(double s) {
    value_ += s;
    return *this;
  }

  friend Dual2 operator+(Dual2 a, const Dual2& b) { return a += b; }
  friend Dual2 operator-(Dual2 a, const Dual2& b) { return a -= b; }
  friend Dual2 operator+(Dual2 a, double s) { return a += s; }
  friend Dual2 operator+(double s, Dual2 a) { return a += s; }
  friend Dual2 operator-(Dual2 a, double s) { return a += -s; }
  friend Dual2 operator-(double s, const Dual2& a) { return -a + s; }
  friend Dual2 operator*(Dual2 a, double s) { return a *= s; }
  friend Dual2 operator*(double s, Dual2 a) { return a *= s; }
  friend Dual2 operator/(Dual2 a, double s) { return a *= 1.0 / s; }
  friend Dual2 operator-(Dual2 a) { return a *= -1.0; }

  friend Dual2 operator*(const Dual2& a, const Dual2& b) {
    Dual2 r;
    r.value_ = a.value_ * b.value_;
    r.grad_ = a.value_ * b.grad_ + b.value_ * a.grad_;
    r.hess_ = a.value_ * b.hess_ + b.value_ * a.hess_ + a.grad_ * b.grad_.transpose() +
              b.grad_ * a.grad_.transpose();
    return r;
  }

  friend Dual2 inverse(const Dual2& b) {
    const double v = b.value_;
    return b.apply(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v));
  }
  friend Dual2 operator/(const Dual2& a, const Dual2& b) { return a * inverse(b); }
  friend Dual2 operator/(double s, const Dual2& b) { return s * inverse(b); }

  friend bool operator<(const Dual2& a, const Dual2& b) { return a.value_ < b.value_; }

 private:
  double value_ = 0.0;
  Params grad_;
  ParamMatrix hess_;
};

inline double value_of(double x) { return x; }
inline double value_of(const Dual2& x) { return x.value(); }

inline Dual2 log(const Dual2& u) {
  const double v = u.value();
  return u.apply(std::log(v), 1.0 / v, -1.0 / (v * v));
}

inline Dual2 exp(const Dual2& u) {
  const double e = std::exp(u.value());
  return u.apply(e, e, e);
}

inline Dual2 sqrt(const Dual2& u) {
  const double s = std::sqrt(u.value());
  return u.apply(s, 0.5 / s, -0.25 / (s * u.value()));
}

/// Lifts a plain scalar into the scalar type T with the dimension of `like`.
template <class T>
T lift(double c, const T& like);

template <>
inline double lift<double>(double c, const double&) {
  return c;
}

template <>
inline Dual2 lift<Dual2>(double c, const Dual2& like) {
  return Dual2::constant(c, like.dim());
}

template <class T>
const T& min_by_value(const T& a, const T& b) {
  return value_of(b) < value_of(a) ? b : a;
}

template <class T>
const T& max_by_value(const T& a, const T& b) {
  return value_of(a) < value_of(b) ? b : a;
}

}  // namespace abc_hmm
