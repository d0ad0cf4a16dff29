#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace abc_hmm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An argument lies outside the admissible domain (theta outside the box,
/// state index out of range, negative tolerance, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A counting-measure ball around an observation contains no atom, so the
/// windowed density is undefined (0/0) rather than zero.
class ZeroBallMeasureError : public Error {
 public:
  ZeroBallMeasureError(double y, double epsilon)
      : Error("zero ball measure: no atom of the dominating measure in [" +
              std::to_string(y - epsilon) + ", " + std::to_string(y + epsilon) + "]"),
        y_(y),
        epsilon_(epsilon) {}

  double y() const noexcept { return y_; }
  double epsilon() const noexcept { return epsilon_; }

 private:
  double y_;
  double epsilon_;
};

/// The data has zero likelihood, so derivative-based quantities are undefined.
class ZeroLikelihoodError : public Error {
 public:
  ZeroLikelihoodError(const std::string& what, std::size_t step) : Error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Numerical failure: non-positive-definite information, empty objective, ...
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Invalid run configuration. `path` is the JSON field path (e.g. "model.theta[1]").
class ConfigError : public Error {
 public:
  ConfigError(std::string path, const std::string& message)
      : Error(path.empty() ? message : path + ": " + message), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// A file could not be read or written.
class IoError : public Error {
 public:
  IoError(std::string path, const std::string& message) : Error(message + ": " + path), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace abc_hmm
