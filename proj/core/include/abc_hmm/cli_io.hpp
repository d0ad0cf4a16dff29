#pragma once

// Run configuration, validation, and artifact emission for the command-line
// front end. JSON is parsed strictly: unknown fields are rejected with their
// field path, and malformed text reports line and column.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "abc_hmm/asymptotics_lab.hpp"
#include "abc_hmm/estimators.hpp"
#include "abc_hmm/model.hpp"

namespace abc_hmm {

std::string library_version();

struct ModelConfig {
  std::string family;
  std::vector<double> theta;
  /// Family-specific constants (sigma, mean, lower, upper, ...), defaults filled in.
  std::map<std::string, double> options;

  HmmSpec build() const;
  bool operator==(const ModelConfig&) const = default;
};

struct MleOptions {
  std::size_t grid_points = 64;
  double x_tol = 1e-6;
  bool refine = true;
  bool score_refine = false;
  int max_sweeps = 10;
  std::string backend = "exact-window";
  std::size_t smc_particles = 10000;

  MleConfig to_config(std::uint64_t master_seed) const;
  bool operator==(const MleOptions&) const = default;
};

struct PriorOptions {
  std::string kind = "flat";  // flat | normal
  std::vector<double> mean;
  std::vector<double> sd;

  Prior build() const;
  bool operator==(const PriorOptions&) const = default;
};

struct PosteriorOptions {
  std::size_t grid_points = 201;
  PriorOptions prior;
  bool operator==(const PosteriorOptions&) const = default;
};

/// Study block. Only the fields belonging to `name` are accepted and echoed.
struct StudyOptions {
  std::string name;  // dyadic-gradient | bias-rate | surface-convergence | clt | bvm | optimal-eps
  std::vector<int> k_list{0, 1, 2, 3};
  int truncation = 20;
  std::vector<double> epsilon_list;
  std::vector<std::size_t> n_list;
  double grid_lower = 0.0;  // surface-convergence theta grid; defaults to the model box
  double grid_upper = 0.0;
  std::size_t grid_points = 0;  // surface grid (default 50) or bvm posterior grid (default 801)
  std::size_t replications = 0;  // clt default 500, optimal-eps default 100
  std::size_t n = 2000;          // clt sample size
  double quadrature_tol = 1e-10;
  double min_bias = 1e-9;
  double half_width_sd = 8.0;
  std::optional<std::vector<double>> theta_star_eps;  // clt

  bool operator==(const StudyOptions&) const = default;
};

struct RunConfig {
  std::string command;  // simulate | loglik | mle | posterior | study
  ModelConfig model;
  double epsilon = 0.0;
  std::size_t n = 100;
  std::optional<std::vector<double>> obs;
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  MleOptions mle;
  PosteriorOptions posterior;
  std::optional<StudyOptions> study;

  bool operator==(const RunConfig&) const = default;
};

/// Parses and validates a JSON document. Throws ConfigError with a field path
/// or a line/column position.
RunConfig parse_config(const std::string& json_text);
RunConfig parse_config_file(const std::filesystem::path& path);

/// Canonical JSON with defaults applied; parse_config(to_json(c)) == c.
std::string to_json(const RunConfig& config, int indent = 2);

/// Shortest decimal that parses back to the same double.
std::string format_double(double v);

struct RunOutput {
  StudyResult table;
  /// Vector-valued results (theta_hat, posterior mean, ...) reported next to the scalar metrics.
  std::map<std::string, std::vector<double>> vectors;
};

/// Executes a validated config and returns its table plus summary.
RunOutput execute(const RunConfig& config);

/// RFC 4180 table with a header row; written atomically.
void emit_csv(const StudyResult& result, const std::filesystem::path& path);

/// summary.json body: metrics (non-finite values as null), flags, row seeds,
/// master seed, library version and the canonical config echo.
std::string summary_json(const RunConfig& config, const RunOutput& out);

/// Writes rows.csv, summary.json and log.txt under config.output_dir.
/// Returns the process exit status; on failure writes error JSON to
/// `error_stream` (and error.json when the directory is writable).
int run(const RunConfig& config, std::ostream& error_stream);

/// Machine-readable description of an in-flight exception.
std::string error_json(const std::exception& e, const std::string& context = {});

/// Exit status for an exception type (2 config, 3 domain/numerical, 4 I/O, 1 other).
int exit_code_for(const std::exception& e);

}  // namespace abc_hmm
