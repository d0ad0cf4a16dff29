// abc-hmm <command> [--config path | inline flags] --out dir --seed N

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "abc_hmm/cli_io.hpp"
#include "abc_hmm/errors.hpp"

namespace {

using json = nlohmann::ordered_json;

struct Flags {
  std::string config_path;
  std::string inline_json;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> family;
  std::vector<double> theta;
  std::optional<double> epsilon;
  std::optional<std::size_t> n;
  std::vector<double> obs;
  // mle / posterior
  std::optional<std::size_t> grid_points;
  std::optional<std::string> backend;
  std::optional<std::string> prior;
  // study
  std::string study_name;
  std::vector<int> k_list;
  std::optional<int> truncation;
  std::vector<double> epsilon_list;
  std::vector<std::size_t> n_list;
  std::optional<std::size_t> replications;
  bool dry_run = false;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--json", f.inline_json, "inline JSON run configuration");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--family", f.family, "model family");
  cmd->add_option("--theta", f.theta, "true parameter (comma separated)")->delimiter(',');
  cmd->add_option("--epsilon", f.epsilon, "ABC tolerance");
  cmd->add_option("--obs", f.obs, "observations (comma separated)")->delimiter(',');
  cmd->add_flag("--dry-run", f.dry_run, "validate and print the canonical config without running");
}

json load_base(const Flags& f) {
  if (!f.config_path.empty() && !f.inline_json.empty()) {
    throw abc_hmm::ConfigError("", "use either --config or --json, not both");
  }
  std::string text = "{}";
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path, std::ios::binary);
    if (!in) throw abc_hmm::IoError(f.config_path, "cannot read config");
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  } else if (!f.inline_json.empty()) {
    text = f.inline_json;
  }
  // Validate syntax through the library so errors carry a position.
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    abc_hmm::parse_config(text);  // throws the annotated ConfigError
    throw;
  }
}

std::string merged_config(const std::string& command, const Flags& f) {
  json j = load_base(f);
  if (!j.is_object()) throw abc_hmm::ConfigError("", "expected an object");
  j["command"] = command;
  if (f.out) j["output_dir"] = *f.out;
  if (f.seed) j["seed"] = *f.seed;
  if (f.family || !f.theta.empty()) {
    if (!j.contains("model") || !j["model"].is_object()) j["model"] = json::object();
    if (f.family) {
      if (j["model"].value("family", "") != *f.family) j["model"] = json::object();
      j["model"]["family"] = *f.family;
    }
    if (!f.theta.empty()) j["model"]["theta"] = f.theta;
  }
  if (f.epsilon) j["epsilon"] = *f.epsilon;
  if (!f.obs.empty()) j["obs"] = f.obs;

  if (command == "simulate" || command == "loglik" || command == "mle" || command == "posterior") {
    if (f.n) j["n"] = *f.n;
  }
  if (command == "mle") {
    if (f.grid_points) j["mle"]["grid_points"] = *f.grid_points;
    if (f.backend) j["mle"]["backend"] = *f.backend;
  }
  if (command == "posterior") {
    if (f.grid_points) j["posterior"]["grid_points"] = *f.grid_points;
    if (f.prior) j["posterior"]["prior"] = {{"kind", *f.prior}};
  }
  if (command == "study") {
    if (!j.contains("study") || !j["study"].is_object()) j["study"] = json::object();
    json& s = j["study"];
    if (!f.study_name.empty()) s["name"] = f.study_name;
    if (!f.k_list.empty()) s["k_list"] = f.k_list;
    if (f.truncation) s["truncation"] = *f.truncation;
    if (!f.epsilon_list.empty()) s["epsilon_list"] = f.epsilon_list;
    if (!f.n_list.empty()) s["n_list"] = f.n_list;
    if (f.replications) s["replications"] = *f.replications;
    if (f.n) s["n"] = *f.n;
    if (f.grid_points) s["grid_points"] = *f.grid_points;
    if (f.prior) j["posterior"]["prior"] = {{"kind", *f.prior}};
  }
  return j.dump();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ABC parameter estimation for hidden Markov models"};
  app.set_version_flag("--version", abc_hmm::library_version());
  app.require_subcommand(1);
  Flags f;

  auto* simulate = app.add_subcommand("simulate", "simulate a trajectory");
  add_common(simulate, f);
  simulate->add_option("--n", f.n, "trajectory length");

  auto* loglik = app.add_subcommand("loglik", "windowed log-likelihood");
  add_common(loglik, f);
  loglik->add_option("--n", f.n, "simulated length when --obs is absent");

  auto* mle = app.add_subcommand("mle", "ABC maximum likelihood estimate");
  add_common(mle, f);
  mle->add_option("--n", f.n, "simulated length when --obs is absent");
  mle->add_option("--grid-points", f.grid_points, "grid points per coordinate");
  mle->add_option("--backend", f.backend, "exact-window or smc");

  auto* posterior = app.add_subcommand("posterior", "grid ABC posterior");
  add_common(posterior, f);
  posterior->add_option("--n", f.n, "simulated length when --obs is absent");
  posterior->add_option("--grid-points", f.grid_points, "grid points per coordinate");
  posterior->add_option("--prior", f.prior, "flat or normal (normal needs mean/sd in the config)");

  auto* study = app.add_subcommand("study", "asymptotic study");
  add_common(study, f);
  study->add_option("name", f.study_name, "dyadic-gradient | bias-rate | surface-convergence | clt | bvm | optimal-eps");
  study->add_option("--k", f.k_list, "dyadic k values")->delimiter(',');
  study->add_option("--truncation", f.truncation, "dyadic truncation K");
  study->add_option("--epsilon-list", f.epsilon_list, "tolerances")->delimiter(',');
  study->add_option("--n-list", f.n_list, "sample sizes")->delimiter(',');
  study->add_option("--replications", f.replications, "Monte Carlo replications");
  study->add_option("--n", f.n, "sample size (clt)");
  study->add_option("--grid-points", f.grid_points, "theta grid size");
  study->add_option("--prior", f.prior, "prior kind (bvm)");

  CLI11_PARSE(app, argc, argv);

  const std::string command = app.get_subcommands().front()->get_name();
  abc_hmm::RunConfig config;
  try {
    config = abc_hmm::parse_config(merged_config(command, f));
  } catch (const std::exception& e) {
    std::cerr << abc_hmm::error_json(e, "configuration") << "\n";
    return abc_hmm::exit_code_for(e);
  }
  if (f.dry_run) {
    std::cout << abc_hmm::to_json(config) << "\n";
    return 0;
  }
  const int status = abc_hmm::run(config, std::cerr);
  if (status == 0) std::cout << config.output_dir << "\n";
  return status;
}
