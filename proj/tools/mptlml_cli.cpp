#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "mptlml/mptlml.h"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  int workers = 0;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "Random seed (overrides the config)");
  sub->add_option("--out", c.out, "Output directory (overrides the config)");
  sub->add_option("--workers", c.workers, "Worker threads (overrides the config)")->check(CLI::PositiveNumber);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked pre-training scores and log-marginal likelihood experiments"};
  app.set_version_flag("--version", std::string(mpt_version()));
  app.require_subcommand(1);

  const char* names[] = {"gen-data", "convergence", "train", "train-bernoulli", "curve", "area-import"};
  const char* about[] = {
      "Generate a synthetic PPCA or Bernoulli dataset",
      "Cumulative and fixed-rate estimators versus the exact LML",
      "Train PPCA on the masked objective while tracking the exact LML",
      "Train the Bernoulli linear model with MPT and with the ELBO",
      "MPT curves and their areas for parameter checkpoints",
      "Area under an imported curve CSV",
  };
  Common common;
  std::string curve_file;
  for (int i = 0; i < 6; ++i) {
    CLI::App* sub = app.add_subcommand(names[i], about[i]);
    add_common(sub, common);
    if (std::string(names[i]) == "area-import") sub->add_option("file", curve_file, "Curve CSV")->check(CLI::ExistingFile);
  }
  CLI11_PARSE(app, argc, argv);

  const std::string command = app.get_subcommands().front()->get_name();
  std::string config = common.config.empty() ? std::string("{}") : slurp(common.config);
  if (!curve_file.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(config);
    } catch (const nlohmann::json::parse_error& e) {
      std::cerr << "error: config is not valid JSON: " << e.what() << "\n";
      return 2;
    }
    if (!j.is_object()) {
      std::cerr << "error: config must be a JSON object\n";
      return 2;
    }
    j["file"] = curve_file;
    config = j.dump();
  }

  const int code = mpt_run_experiment(command.c_str(), config.c_str(), common.out.empty() ? nullptr : common.out.c_str(),
                                      common.seed.has_value(), common.seed.value_or(0), common.workers);
  const std::string message = mpt_last_error();
  if (code != 0)
    std::cerr << "error: " << (message.empty() ? "run failed" : message) << " (exit " << code << ")\n";
  return code;
}
