#include "mlmatvamp/experiment.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <string>

int main(int argc, char** argv) {
  CLI::App app{"Multi-layer matrix VAMP: simulation, state evolution, comparison and diagnostics"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  int trials = 0;
  int threads = 0;
  for (const char* name : {"simulate", "se", "compare", "diagnose"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "experiment config (JSON, schema 1)")->required();
    sub->add_option("--out", out_dir, "output directory")->required();
    sub->add_option("--seed", seed, "master seed (overrides the config)");
    sub->add_option("--trials", trials, "trials per sweep point (overrides the config)")->check(CLI::PositiveNumber);
    sub->add_option("--threads", threads, "worker threads (overrides the config)")->check(CLI::PositiveNumber);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  const CLI::App* sub = app.get_subcommands().front();
  try {
    mlmv::ExperimentConfig cfg = mlmv::load_experiment_config(config_path);
    if (sub->count("--seed")) cfg.seed = seed;
    if (sub->count("--trials")) cfg.trials = trials;
    if (sub->count("--threads")) cfg.threads = threads;
    cfg.validate();
    std::cerr << command << ": config " << cfg.hash() << ", seed " << cfg.seed << '\n';
    if (command == "simulate") return mlmv::cmd_simulate(cfg, out_dir, std::cerr);
    if (command == "se") return mlmv::cmd_se(cfg, out_dir, std::cerr);
    if (command == "compare") return mlmv::cmd_compare(cfg, out_dir, std::cerr);
    return mlmv::cmd_diagnose(cfg, out_dir, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << command << ": " << e.what() << '\n';
    return mlmv::exit_code_for(e);
  }
}
