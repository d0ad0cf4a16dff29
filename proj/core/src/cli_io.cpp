#include "abc_hmm/cli_io.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "abc_hmm/errors.hpp"
#include "abc_hmm/exact_inference.hpp"
#include "abc_hmm/numerics.hpp"
#include "abc_hmm/parallel.hpp"
#include "abc_hmm/random.hpp"

#ifndef ABC_HMM_VERSION
#define ABC_HMM_VERSION "0.0.0"
#endif

namespace abc_hmm {

using json = nlohmann::ordered_json;

std::string library_version() { return ABC_HMM_VERSION; }

namespace {

// ---------------------------------------------------------------------------
// Schema tables

const std::map<std::string, std::map<std::string, double>>& family_defaults() {
  static const std::map<std::string, std::map<std::string, double>> table{
      {"gaussian_location", {{"sigma", 1.0}, {"lower", -10.0}, {"upper", 10.0}}},
      {"gaussian_scale", {{"mean", 0.0}, {"lower", 0.25}, {"upper", 4.0}}},
      {"gaussian_hmm2",
       {{"mean0", -1.0}, {"mean1", 1.0}, {"sd0", 1.0}, {"sd1", 1.0}, {"lower", 0.05}, {"upper", 0.95}}},
      {"dyadic", {{"truncation", 20.0}, {"lower", 0.25}, {"upper", 0.75}}},
      {"uniform_scale", {{"lower", 0.5}, {"upper", 2.0}}},
  };
  return table;
}

const std::vector<std::string> kCommands{"simulate", "loglik", "mle", "posterior", "study"};

const std::map<std::string, std::vector<std::string>>& study_fields() {
  static const std::map<std::string, std::vector<std::string>> table{
      {"dyadic-gradient", {"name", "k_list", "truncation"}},
      {"bias-rate", {"name", "epsilon_list", "quadrature_tol", "min_bias"}},
      {"surface-convergence", {"name", "epsilon_list", "n_list", "grid_lower", "grid_upper", "grid_points"}},
      {"clt", {"name", "n", "replications", "theta_star_eps"}},
      {"bvm", {"name", "n_list", "grid_points", "half_width_sd"}},
      {"optimal-eps", {"name", "n_list", "epsilon_list", "replications"}},
  };
  return table;
}

std::string canonical_study_name(std::string s) {
  std::replace(s.begin(), s.end(), '_', '-');
  return s;
}

// ---------------------------------------------------------------------------
// Strict readers

std::string join_path(const std::string& base, const std::string& key) { return base.empty() ? key : base + "." + key; }

void require_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
}

void reject_unknown(const json& obj, const std::string& path, const std::vector<std::string>& allowed) {
  for (const auto& [key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(join_path(path, key), "unknown field");
    }
  }
}

double as_double(const json& v, const std::string& path) {
  if (!v.is_number()) throw ConfigError(path, "expected a number");
  return v.get<double>();
}

std::uint64_t as_u64(const json& v, const std::string& path) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer()) throw ConfigError(path, "must be >= 0");
  throw ConfigError(path, "expected a non-negative integer");
}

int as_int(const json& v, const std::string& path) {
  if (!v.is_number_integer()) throw ConfigError(path, "expected an integer");
  const auto x = v.get<std::int64_t>();
  if (x < -1'000'000'000 || x > 1'000'000'000) throw ConfigError(path, "integer out of range");
  return static_cast<int>(x);
}

bool as_bool(const json& v, const std::string& path) {
  if (!v.is_boolean()) throw ConfigError(path, "expected true or false");
  return v.get<bool>();
}

std::string as_string(const json& v, const std::string& path) {
  if (!v.is_string()) throw ConfigError(path, "expected a string");
  return v.get<std::string>();
}

template <class T, class F>
std::vector<T> as_list(const json& v, const std::string& path, F item) {
  if (!v.is_array()) throw ConfigError(path, "expected an array");
  std::vector<T> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(item(v[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

std::vector<double> as_doubles(const json& v, const std::string& path) {
  return as_list<double>(v, path, as_double);
}

std::vector<std::size_t> as_sizes(const json& v, const std::string& path) {
  return as_list<std::size_t>(v, path, [](const json& x, const std::string& p) {
    return static_cast<std::size_t>(as_u64(x, p));
  });
}

// Fetches obj[key] when present.
const json* field(const json& obj, const char* key) {
  const auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

void require_positive_list(const std::vector<double>& v, const std::string& path, bool allow_zero) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i]) || v[i] < 0.0 || (!allow_zero && v[i] == 0.0)) {
      throw ConfigError(path + "[" + std::to_string(i) + "]", allow_zero ? "must be >= 0" : "must be > 0");
    }
  }
}

// ---------------------------------------------------------------------------
// Sections

ModelConfig parse_model(const json& j, const std::string& path) {
  require_object(j, path);
  ModelConfig m;
  const json* fam = field(j, "family");
  if (!fam) throw ConfigError(join_path(path, "family"), "required field missing");
  m.family = as_string(*fam, join_path(path, "family"));
  const auto& table = family_defaults();
  const auto it = table.find(m.family);
  if (it == table.end()) throw ConfigError(join_path(path, "family"), "unknown family '" + m.family + "'");

  std::vector<std::string> allowed{"family", "theta"};
  for (const auto& [k, _] : it->second) allowed.push_back(k);
  reject_unknown(j, path, allowed);

  m.options = it->second;
  for (auto& [k, v] : m.options) {
    if (const json* x = field(j, k.c_str())) {
      v = k == "truncation" ? as_int(*x, join_path(path, k)) : as_double(*x, join_path(path, k));
    }
  }
  if (const json* t = field(j, "theta")) {
    m.theta = as_doubles(*t, join_path(path, "theta"));
  } else {
    throw ConfigError(join_path(path, "theta"), "required field missing");
  }

  HmmSpec spec;
  try {
    spec = m.build();
  } catch (const Error& e) {
    throw ConfigError(path, e.what());
  }
  if (static_cast<Eigen::Index>(m.theta.size()) != spec.dim()) {
    throw ConfigError(join_path(path, "theta"), "expected " + std::to_string(spec.dim()) + " value(s)");
  }
  for (std::size_t i = 0; i < m.theta.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    if (!(m.theta[i] >= spec.theta_space.lower(ii) && m.theta[i] <= spec.theta_space.upper(ii))) {
      throw ConfigError(join_path(path, "theta") + "[" + std::to_string(i) + "]",
                        "outside the parameter box [" + format_double(spec.theta_space.lower(ii)) + ", " +
                            format_double(spec.theta_space.upper(ii)) + "]");
    }
  }
  return m;
}

MleOptions parse_mle(const json& j, const std::string& path) {
  require_object(j, path);
  reject_unknown(j, path, {"grid_points", "x_tol", "refine", "score_refine", "max_sweeps", "backend", "smc_particles"});
  MleOptions m;
  if (const json* x = field(j, "grid_points")) m.grid_points = as_u64(*x, join_path(path, "grid_points"));
  if (const json* x = field(j, "x_tol")) m.x_tol = as_double(*x, join_path(path, "x_tol"));
  if (const json* x = field(j, "refine")) m.refine = as_bool(*x, join_path(path, "refine"));
  if (const json* x = field(j, "score_refine")) m.score_refine = as_bool(*x, join_path(path, "score_refine"));
  if (const json* x = field(j, "max_sweeps")) m.max_sweeps = as_int(*x, join_path(path, "max_sweeps"));
  if (const json* x = field(j, "backend")) m.backend = as_string(*x, join_path(path, "backend"));
  if (const json* x = field(j, "smc_particles")) m.smc_particles = as_u64(*x, join_path(path, "smc_particles"));
  if (m.grid_points < 2) throw ConfigError(join_path(path, "grid_points"), "must be >= 2");
  if (!(m.x_tol > 0.0)) throw ConfigError(join_path(path, "x_tol"), "must be > 0");
  if (m.max_sweeps < 1) throw ConfigError(join_path(path, "max_sweeps"), "must be >= 1");
  if (m.smc_particles < 2) throw ConfigError(join_path(path, "smc_particles"), "must be >= 2");
  try {
    m.backend = to_string(backend_from_string(m.backend));
  } catch (const Error& e) {
    throw ConfigError(join_path(path, "backend"), e.what());
  }
  return m;
}

PriorOptions parse_prior(const json& j, const std::string& path) {
  require_object(j, path);
  reject_unknown(j, path, {"kind", "mean", "sd"});
  PriorOptions p;
  if (const json* x = field(j, "kind")) p.kind = as_string(*x, join_path(path, "kind"));
  if (p.kind == "flat") {
    if (field(j, "mean") || field(j, "sd")) throw ConfigError(path, "flat prior takes no mean or sd");
    return p;
  }
  if (p.kind != "normal") throw ConfigError(join_path(path, "kind"), "expected 'flat' or 'normal'");
  const json* mean = field(j, "mean");
  const json* sd = field(j, "sd");
  if (!mean) throw ConfigError(join_path(path, "mean"), "required field missing");
  if (!sd) throw ConfigError(join_path(path, "sd"), "required field missing");
  p.mean = as_doubles(*mean, join_path(path, "mean"));
  p.sd = as_doubles(*sd, join_path(path, "sd"));
  if (p.mean.size() != p.sd.size() || p.mean.empty()) throw ConfigError(path, "mean and sd must have equal nonzero length");
  require_positive_list(p.sd, join_path(path, "sd"), false);
  return p;
}

PosteriorOptions parse_posterior(const json& j, const std::string& path) {
  require_object(j, path);
  reject_unknown(j, path, {"grid_points", "prior"});
  PosteriorOptions p;
  if (const json* x = field(j, "grid_points")) p.grid_points = as_u64(*x, join_path(path, "grid_points"));
  if (const json* x = field(j, "prior")) p.prior = parse_prior(*x, join_path(path, "prior"));
  if (p.grid_points < 2) throw ConfigError(join_path(path, "grid_points"), "must be >= 2");
  return p;
}

StudyOptions parse_study(const json& j, const std::string& path, const HmmSpec* spec) {
  require_object(j, path);
  StudyOptions s;
  const json* name = field(j, "name");
  if (!name) throw ConfigError(join_path(path, "name"), "required field missing");
  s.name = canonical_study_name(as_string(*name, join_path(path, "name")));
  const auto it = study_fields().find(s.name);
  if (it == study_fields().end()) throw ConfigError(join_path(path, "name"), "unknown study '" + s.name + "'");
  reject_unknown(j, path, it->second);
  const auto p = [&](const char* k) { return join_path(path, k); };

  if (const json* x = field(j, "k_list")) s.k_list = as_list<int>(*x, p("k_list"), as_int);
  if (const json* x = field(j, "truncation")) s.truncation = as_int(*x, p("truncation"));
  if (const json* x = field(j, "epsilon_list")) s.epsilon_list = as_doubles(*x, p("epsilon_list"));
  if (const json* x = field(j, "n_list")) s.n_list = as_sizes(*x, p("n_list"));
  if (const json* x = field(j, "grid_lower")) s.grid_lower = as_double(*x, p("grid_lower"));
  if (const json* x = field(j, "grid_upper")) s.grid_upper = as_double(*x, p("grid_upper"));
  if (const json* x = field(j, "grid_points")) s.grid_points = as_u64(*x, p("grid_points"));
  if (const json* x = field(j, "replications")) s.replications = as_u64(*x, p("replications"));
  if (const json* x = field(j, "n")) s.n = as_u64(*x, p("n"));
  if (const json* x = field(j, "quadrature_tol")) s.quadrature_tol = as_double(*x, p("quadrature_tol"));
  if (const json* x = field(j, "min_bias")) s.min_bias = as_double(*x, p("min_bias"));
  if (const json* x = field(j, "half_width_sd")) s.half_width_sd = as_double(*x, p("half_width_sd"));
  if (const json* x = field(j, "theta_star_eps")) s.theta_star_eps = as_doubles(*x, p("theta_star_eps"));

  const auto need_list = [&](bool empty, const char* key) {
    if (empty) throw ConfigError(p(key), "required nonempty list");
  };
  if (s.name == "dyadic-gradient") {
    need_list(s.k_list.empty(), "k_list");
    for (std::size_t i = 0; i < s.k_list.size(); ++i) {
      if (s.k_list[i] < 0) throw ConfigError(p("k_list") + "[" + std::to_string(i) + "]", "must be >= 0");
    }
  } else if (s.name == "bias-rate") {
    if (s.epsilon_list.size() < 4) throw ConfigError(p("epsilon_list"), "needs at least 4 values");
    require_positive_list(s.epsilon_list, p("epsilon_list"), false);
    if (!(s.quadrature_tol > 0.0)) throw ConfigError(p("quadrature_tol"), "must be > 0");
    if (!(s.min_bias >= 0.0)) throw ConfigError(p("min_bias"), "must be >= 0");
  } else if (s.name == "surface-convergence") {
    need_list(s.epsilon_list.empty(), "epsilon_list");
    need_list(s.n_list.empty(), "n_list");
    require_positive_list(s.epsilon_list, p("epsilon_list"), true);
    if (!std::is_sorted(s.n_list.begin(), s.n_list.end()) || s.n_list.front() == 0) {
      throw ConfigError(p("n_list"), "must be positive and increasing");
    }
    if (s.grid_points == 0) s.grid_points = 50;
    if (!field(j, "grid_lower")) s.grid_lower = spec->theta_space.lower(0);
    if (!field(j, "grid_upper")) s.grid_upper = spec->theta_space.upper(0);
    if (spec->dim() != 1) throw ConfigError(path, "surface-convergence needs a one-parameter family");
    if (!(s.grid_lower >= spec->theta_space.lower(0) && s.grid_upper <= spec->theta_space.upper(0) &&
          s.grid_lower < s.grid_upper)) {
      throw ConfigError(p("grid_lower"), "grid must be a nonempty interval inside the parameter box");
    }
  } else if (s.name == "clt") {
    if (s.replications == 0) s.replications = 500;
    if (s.replications < 200) throw ConfigError(p("replications"), "must be >= 200");
    if (s.n < 2) throw ConfigError(p("n"), "must be >= 2");
    if (s.theta_star_eps && static_cast<Eigen::Index>(s.theta_star_eps->size()) != spec->dim()) {
      throw ConfigError(p("theta_star_eps"), "expected " + std::to_string(spec->dim()) + " value(s)");
    }
  } else if (s.name == "bvm") {
    if (s.n_list.empty()) s.n_list = {500, 2000, 8000};
    if (s.grid_points == 0) s.grid_points = 801;
    if (s.grid_points < 3) throw ConfigError(p("grid_points"), "must be >= 3");
    if (!(s.half_width_sd > 0.0)) throw ConfigError(p("half_width_sd"), "must be > 0");
    if (spec->dim() != 1) throw ConfigError(path, "bvm needs a one-parameter family");
  } else if (s.name == "optimal-eps") {
    if (s.n_list.empty()) s.n_list = {1000, 10000, 100000};
    if (s.replications == 0) s.replications = 100;
    need_list(s.epsilon_list.empty(), "epsilon_list");
    require_positive_list(s.epsilon_list, p("epsilon_list"), false);
    if (s.replications < 100) throw ConfigError(p("replications"), "must be >= 100");
  }
  return s;
}

json study_to_json(const StudyOptions& s) {
  json j;
  for (const std::string& key : study_fields().at(s.name)) {
    if (key == "name") j[key] = s.name;
    else if (key == "k_list") j[key] = s.k_list;
    else if (key == "truncation") j[key] = s.truncation;
    else if (key == "epsilon_list") j[key] = s.epsilon_list;
    else if (key == "n_list") j[key] = s.n_list;
    else if (key == "grid_lower") j[key] = s.grid_lower;
    else if (key == "grid_upper") j[key] = s.grid_upper;
    else if (key == "grid_points") j[key] = s.grid_points;
    else if (key == "replications") j[key] = s.replications;
    else if (key == "n") j[key] = s.n;
    else if (key == "quadrature_tol") j[key] = s.quadrature_tol;
    else if (key == "min_bias") j[key] = s.min_bias;
    else if (key == "half_width_sd") j[key] = s.half_width_sd;
    else if (key == "theta_star_eps" && s.theta_star_eps) j[key] = *s.theta_star_eps;
  }
  return j;
}

json model_to_json(const ModelConfig& m) {
  json j;
  j["family"] = m.family;
  j["theta"] = m.theta;
  for (const auto& [k, v] : m.options) {
    if (k == "truncation") j[k] = static_cast<int>(v);
    else j[k] = v;
  }
  return j;
}

json config_to_json(const RunConfig& c) {
  json j;
  j["command"] = c.command;
  j["model"] = model_to_json(c.model);
  j["epsilon"] = c.epsilon;
  j["n"] = c.n;
  if (c.obs) j["obs"] = *c.obs;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["mle"] = {{"grid_points", c.mle.grid_points}, {"x_tol", c.mle.x_tol},
              {"refine", c.mle.refine},           {"score_refine", c.mle.score_refine},
              {"max_sweeps", c.mle.max_sweeps},   {"backend", c.mle.backend},
              {"smc_particles", c.mle.smc_particles}};
  json prior{{"kind", c.posterior.prior.kind}};
  if (c.posterior.prior.kind == "normal") {
    prior["mean"] = c.posterior.prior.mean;
    prior["sd"] = c.posterior.prior.sd;
  }
  j["posterior"] = {{"grid_points", c.posterior.grid_points}, {"prior", prior}};
  if (c.study) j["study"] = study_to_json(*c.study);
  return j;
}

std::string describe_position(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

RunConfig parse_json(const json& j) {
  require_object(j, "");
  reject_unknown(j, "", {"command", "model", "epsilon", "n", "obs", "seed", "output_dir", "mle", "posterior", "study"});
  RunConfig c;
  const json* cmd = field(j, "command");
  if (!cmd) throw ConfigError("command", "required field missing");
  c.command = as_string(*cmd, "command");
  if (std::find(kCommands.begin(), kCommands.end(), c.command) == kCommands.end()) {
    throw ConfigError("command", "unknown command '" + c.command + "'");
  }

  const json* study = field(j, "study");
  if (c.command == "study" && !study) throw ConfigError("study", "required for command 'study'");
  if (c.command != "study" && study) throw ConfigError("study", "only valid with command 'study'");

  if (const json* m = field(j, "model")) {
    c.model = parse_model(*m, "model");
  } else if (study && study->is_object() && study->contains("name") && (*study)["name"].is_string() &&
             canonical_study_name((*study)["name"].get<std::string>()) == "dyadic-gradient") {
    // The dyadic check fixes its own model: theta* = 1/2.
    c.model = parse_model(json{{"family", "dyadic"}, {"theta", {0.5}}}, "model");
  } else {
    throw ConfigError("model", "required field missing");
  }

  if (const json* x = field(j, "epsilon")) c.epsilon = as_double(*x, "epsilon");
  if (!(c.epsilon >= 0.0) || !std::isfinite(c.epsilon)) throw ConfigError("epsilon", "epsilon must be ≥ 0");
  if (const json* x = field(j, "n")) c.n = as_u64(*x, "n");
  if (const json* x = field(j, "obs")) c.obs = as_doubles(*x, "obs");
  if (const json* x = field(j, "seed")) c.seed = as_u64(*x, "seed");
  if (const json* x = field(j, "output_dir")) c.output_dir = as_string(*x, "output_dir");
  if (c.output_dir.empty()) throw ConfigError("output_dir", "must be nonempty");
  if (const json* x = field(j, "mle")) c.mle = parse_mle(*x, "mle");
  if (const json* x = field(j, "posterior")) c.posterior = parse_posterior(*x, "posterior");
  if (c.posterior.prior.kind == "normal" &&
      static_cast<Eigen::Index>(c.posterior.prior.mean.size()) != c.model.build().dim()) {
    throw ConfigError("posterior.prior.mean", "length must match the parameter dimension");
  }
  if (study) {
    const HmmSpec spec = c.model.build();
    c.study = parse_study(*study, "study", &spec);
    if (c.study->name == "dyadic-gradient" && c.model.family != "dyadic") {
      throw ConfigError("model.family", "dyadic-gradient runs on the dyadic family");
    }
  }
  if (c.command == "simulate" && c.n == 0) throw ConfigError("n", "must be >= 1");
  return c;
}

// ---------------------------------------------------------------------------
// Output helpers

void write_atomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path.string(), "cannot open for writing");
    out << content;
    out.flush();
    if (!out) throw IoError(path.string(), "write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError(path.string(), "rename failed (" + ec.message() + ")");
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

Params to_params(const std::vector<double>& v) { return Eigen::Map<const Params>(v.data(), static_cast<Eigen::Index>(v.size())); }

std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

std::vector<double> observations(const RunConfig& c, const HmmSpec& spec) {
  if (c.obs) return *c.obs;
  return simulate(spec, to_params(c.model.theta), c.n, derive_seed(c.seed, "data", 0)).observed;
}

StudyResult run_study(const RunConfig& c, const HmmSpec& spec) {
  const StudyOptions& s = *c.study;
  const Params theta = to_params(c.model.theta);
  if (s.name == "dyadic-gradient") {
    DyadicGradientConfig cfg;
    cfg.k_list = s.k_list;
    cfg.truncation = s.truncation;
    return dyadic_gradient_check(cfg);
  }
  if (s.name == "bias-rate") {
    BiasRateConfig cfg;
    cfg.theta_star = theta;
    cfg.epsilon_list = s.epsilon_list;
    cfg.method.quadrature_tol = s.quadrature_tol;
    cfg.method.seed = c.seed;
    cfg.min_bias = s.min_bias;
    return bias_rate_study(spec, cfg);
  }
  if (s.name == "surface-convergence") {
    SurfaceConvergenceConfig cfg;
    cfg.theta_star = theta;
    cfg.epsilon_list = s.epsilon_list;
    cfg.n_list = s.n_list;
    cfg.theta_grid = box_grid(ParamSpace(make_params({s.grid_lower}), make_params({s.grid_upper})), s.grid_points);
    cfg.seed = c.seed;
    return surface_convergence_study(spec, cfg);
  }
  if (s.name == "clt") {
    CltConfig cfg;
    cfg.theta_star = theta;
    cfg.epsilon = c.epsilon;
    cfg.n = s.n;
    cfg.replications = s.replications;
    cfg.seed = c.seed;
    cfg.mle = c.mle.to_config(c.seed);
    if (s.theta_star_eps) cfg.theta_star_eps = to_params(*s.theta_star_eps);
    return clt_study(spec, cfg);
  }
  if (s.name == "bvm") {
    BvmConfig cfg;
    cfg.theta_star = theta;
    cfg.epsilon = c.epsilon;
    cfg.n_list = s.n_list;
    cfg.prior = c.posterior.prior.build();
    cfg.seed = c.seed;
    cfg.grid_points = s.grid_points;
    cfg.half_width_sd = s.half_width_sd;
    cfg.mle = c.mle.to_config(c.seed);
    return bvm_study(spec, cfg);
  }
  OptimalEpsConfig cfg;
  cfg.theta_star = theta;
  cfg.n_list = s.n_list;
  cfg.epsilon_grid = s.epsilon_list;
  cfg.replications = s.replications;
  cfg.seed = c.seed;
  cfg.mle = c.mle.to_config(c.seed);
  return optimal_eps_study(spec, cfg);
}

std::vector<std::string> theta_columns(Eigen::Index d) {
  std::vector<std::string> cols;
  for (Eigen::Index i = 0; i < d; ++i) cols.push_back("theta_" + std::to_string(i));
  return cols;
}

}  // namespace

// ---------------------------------------------------------------------------

HmmSpec ModelConfig::build() const {
  const auto o = [&](const char* k) { return options.at(k); };
  if (family == "gaussian_location") {
    if (!(o("sigma") > 0.0)) throw DomainError("sigma must be > 0");
    return gaussian_location_spec(o("sigma"), o("lower"), o("upper"));
  }
  if (family == "gaussian_scale") return gaussian_scale_spec(o("mean"), o("lower"), o("upper"));
  if (family == "gaussian_hmm2") {
    if (!(o("sd0") > 0.0 && o("sd1") > 0.0)) throw DomainError("sd0 and sd1 must be > 0");
    return gaussian_hmm2_spec({o("mean0"), o("mean1")}, {o("sd0"), o("sd1")}, o("lower"), o("upper"));
  }
  if (family == "dyadic") return dyadic_spec(static_cast<int>(o("truncation")), o("lower"), o("upper"));
  if (family == "uniform_scale") return uniform_scale_spec(o("lower"), o("upper"));
  throw DomainError("unknown family '" + family + "'");
}

MleConfig MleOptions::to_config(std::uint64_t master_seed) const {
  MleConfig c;
  c.grid_points = grid_points;
  c.x_tol = x_tol;
  c.refine = refine;
  c.score_refine = score_refine;
  c.max_sweeps = max_sweeps;
  c.backend = backend_from_string(backend);
  c.smc_particles = smc_particles;
  c.smc_seed = derive_seed(master_seed, "mle-smc", 0);
  return c;
}

Prior PriorOptions::build() const {
  if (kind == "flat") return Prior::flat();
  return Prior::normal(to_params(mean), to_params(sd));
}

RunConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError("", "malformed JSON at " + describe_position(json_text, e.byte == 0 ? 0 : e.byte - 1) + ": " +
                              e.what());
  }
  return parse_json(j);
}

RunConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot read config");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_json(const RunConfig& config, int indent) { return config_to_json(config).dump(indent); }

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

RunOutput execute(const RunConfig& c) {
  const HmmSpec spec = c.model.build();
  const Params theta = to_params(c.model.theta);
  RunOutput out;
  StudyResult& t = out.table;
  t.study_name = c.command;

  if (c.command == "simulate") {
    const std::uint64_t seed = derive_seed(c.seed, "simulate", 0);
    const Trajectory traj = simulate(spec, theta, c.n, seed);
    t.columns = {"t", "hidden", "observed"};
    for (std::size_t i = 0; i < c.n; ++i) {
      t.rows.push_back({static_cast<double>(i + 1), static_cast<double>(traj.hidden[i + 1]), traj.observed[i]});
      t.row_seeds.push_back(seed);
    }
    t.summary["n"] = static_cast<double>(c.n);
    t.summary["mean_observed"] = sample_mean(traj.observed);
    return out;
  }

  if (c.command == "study") {
    out.table = run_study(c, spec);
    return out;
  }

  const std::vector<double> obs = observations(c, spec);
  if (obs.empty()) throw DomainError("no observations (obs is empty and n = 0)");

  if (c.command == "loglik") {
    const LoglikResult r = log_likelihood(spec, theta, c.epsilon, obs);
    t.columns = {"step", "log_increment", "cumulative"};
    double cum = 0.0;
    for (std::size_t i = 0; i < r.per_step.size(); ++i) {
      cum += r.per_step[i];
      t.rows.push_back({static_cast<double>(i + 1), r.per_step[i], cum});
      t.row_seeds.push_back(c.obs ? 0 : derive_seed(c.seed, "data", 0));
    }
    t.summary["loglik"] = r.loglik;
    t.summary["n"] = static_cast<double>(obs.size());
    if (r.zero_step) {
      t.summary["zero_step"] = static_cast<double>(*r.zero_step);
      t.flags["zero_likelihood"] = "every state has zero weight at step " + std::to_string(*r.zero_step);
    }
    return out;
  }

  if (c.command == "mle") {
    const MleResult r = abc_mle(spec, c.epsilon, obs, c.mle.to_config(c.seed));
    t.columns = theta_columns(spec.dim());
    t.columns.insert(t.columns.begin(), "evaluation");
    t.columns.push_back("loglik");
    for (std::size_t i = 0; i < r.optimizer_trace.size(); ++i) {
      std::vector<double> row{static_cast<double>(i)};
      for (Eigen::Index k = 0; k < spec.dim(); ++k) row.push_back(r.optimizer_trace[i].theta(k));
      row.push_back(r.optimizer_trace[i].loglik);
      t.rows.push_back(std::move(row));
      t.row_seeds.push_back(c.obs ? 0 : derive_seed(c.seed, "data", 0));
    }
    out.vectors["theta_hat"] = to_vector(r.theta_hat);
    t.summary["loglik_at_hat"] = r.loglik_at_hat;
    t.summary["evaluations"] = static_cast<double>(r.evaluations);
    t.summary["on_boundary"] = r.on_boundary ? 1.0 : 0.0;
    if (r.on_boundary) t.flags["on_boundary"] = "estimate within 2 x_tol of the parameter box";
    return out;
  }

  // posterior
  PosteriorConfig pc;
  pc.grid_points = c.posterior.grid_points;
  const PosteriorGrid g = abc_posterior(spec, c.epsilon, obs, c.posterior.prior.build(), pc);
  t.columns = theta_columns(spec.dim());
  t.columns.push_back("log_unnorm");
  t.columns.push_back("weight");
  for (std::size_t i = 0; i < g.theta_grid.size(); ++i) {
    std::vector<double> row = to_vector(g.theta_grid[i]);
    row.push_back(g.log_unnorm[i]);
    row.push_back(g.weights[i]);
    t.rows.push_back(std::move(row));
    t.row_seeds.push_back(c.obs ? 0 : derive_seed(c.seed, "data", 0));
  }
  out.vectors["mode"] = to_vector(g.mode);
  out.vectors["mean"] = to_vector(g.mean);
  out.vectors["sd"] = to_vector(g.covariance.diagonal().cwiseSqrt());
  return out;
}

void emit_csv(const StudyResult& result, const std::filesystem::path& path) {
  if (result.rows.empty()) throw DomainError("emit_csv: no rows to write");
  std::string s;
  for (std::size_t i = 0; i < result.columns.size(); ++i) {
    if (i) s += ',';
    s += csv_field(result.columns[i]);
  }
  s += "\r\n";
  for (const auto& row : result.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) s += ',';
      s += format_double(row[i]);
    }
    s += "\r\n";
  }
  write_atomic(path, s);
}

std::string error_json(const std::exception& e, const std::string& context) {
  json j;
  std::string type = "error";
  if (const auto* ce = dynamic_cast<const ConfigError*>(&e)) {
    type = "config_error";
    j["path"] = ce->path();
  } else if (const auto* io = dynamic_cast<const IoError*>(&e)) {
    type = "io_error";
    j["path"] = io->path();
  } else if (dynamic_cast<const ZeroBallMeasureError*>(&e)) {
    type = "zero_ball_measure";
  } else if (const auto* zl = dynamic_cast<const ZeroLikelihoodError*>(&e)) {
    type = "zero_likelihood";
    j["step"] = zl->step();
  } else if (dynamic_cast<const NumericalError*>(&e)) {
    type = "numerical_error";
  } else if (dynamic_cast<const DomainError*>(&e)) {
    type = "domain_error";
  }
  j["type"] = type;
  j["message"] = e.what();
  if (!context.empty()) j["context"] = context;
  return json{{"error", j}}.dump();
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const IoError*>(&e)) return 4;
  if (dynamic_cast<const Error*>(&e)) return 3;
  return 1;
}

std::string summary_json(const RunConfig& config, const RunOutput& out) {
  json metrics = json::object();
  for (const auto& [k, v] : out.table.summary) metrics[k] = v;
  for (const auto& [k, v] : out.vectors) metrics[k] = v;
  json summary;
  summary["command"] = config.command;
  summary["study"] = config.study ? json(config.study->name) : json(nullptr);
  summary["columns"] = out.table.columns;
  summary["metrics"] = metrics;
  summary["flags"] = json::object();
  for (const auto& [k, v] : out.table.flags) summary["flags"][k] = v;
  summary["row_seeds"] = out.table.row_seeds;
  summary["seed"] = config.seed;
  summary["version"] = library_version();
  summary["config"] = config_to_json(config);
  return summary.dump(2) + "\n";
}

int run(const RunConfig& config, std::ostream& error_stream) {
  const std::filesystem::path dir(config.output_dir);
  const std::string context = config.study ? "study " + config.study->name : "command " + config.command;
  const auto started = std::chrono::steady_clock::now();
  try {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError(dir.string(), "cannot create output directory (" + ec.message() + ")");

    const RunOutput out = execute(config);
    emit_csv(out.table, dir / "rows.csv");
    write_atomic(dir / "summary.json", summary_json(config, out));

    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    std::ostringstream log;
    log << "abc-hmm " << library_version() << "\n"
        << context << "\n"
        << "seed " << config.seed << "\n"
        << "threads " << default_thread_count() << "\n"
        << "rows " << out.table.rows.size() << "\n"
        << "elapsed_s " << elapsed << "\n";
    for (const auto& [k, v] : out.table.flags) log << "flag " << k << ": " << v << "\n";
    write_atomic(dir / "log.txt", log.str());
    return 0;
  } catch (const std::exception& e) {
    const std::string body = error_json(e, context);
    error_stream << body << "\n";
    std::error_code ec;
    if (std::filesystem::is_directory(dir, ec)) {
      try {
        write_atomic(dir / "error.json", body + "\n");
      } catch (const std::exception&) {
      }
    }
    return exit_code_for(e);
  }
}

}  // namespace abc_hmm
