#pragma once

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "fedprotip/config.hpp"
#include "fedprotip/results.hpp"

namespace fedprotip::harness {

// Runs every requested method variant against one shared stream/partition and
// writes the full artifact set under out_dir.
inline void run_simulation(const ExperimentConfig& cfg,
                           const std::filesystem::path& out_dir) {
  const data::TaskStream stream = make_stream(cfg);
  const data::PartitionPlan plan = make_plan(cfg, stream);
  const nn::ModelSpec spec = make_model_spec(cfg, stream);

  std::filesystem::create_directories(out_dir);
  std::vector<ResultBundle> bundles;
  for (Method method : cfg.methods) {
    const fedcl::TrainingConfig training = make_training_config(cfg, method);
    const auto result =
        fedcl::run_experiment(stream, plan, spec, training, cfg.eval_modes);
    ResultBundle bundle = make_bundle(method, result, cfg.clients);
    emit_results(bundle, out_dir / method_name(method));
    bundles.push_back(std::move(bundle));
  }
  write_metrics_csv(bundles, out_dir / "metrics.csv");
  write_config_echo(cfg, out_dir / "config_echo.toml");
}

inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"federated continual learning simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "results";
  std::string results_dir;
  std::uint64_t seed_override = 0;
  bool seed_given = false;
  std::vector<std::string> method_names;

  auto* simulate = app.add_subcommand(
      "simulate", "run the configured experiment and emit CSV artifacts");
  simulate->add_option("--config", config_path, "experiment config file")
      ->required();
  simulate->add_option("--out", out_dir, "output directory");
  simulate->add_option("--seed", seed_override, "override the [run] seed")
      ->each([&](const std::string&) { seed_given = true; });
  simulate->add_option("--method", method_names,
                       "method to run (repeatable; overrides the config)");

  auto* gen_data = app.add_subcommand(
      "gen-data", "generate the task stream and export it as CSV");
  gen_data->add_option("--config", config_path, "experiment config file")
      ->required();
  gen_data->add_option("--out", out_dir, "output directory")->required();

  auto* verify = app.add_subcommand(
      "verify", "re-check invariants over an emitted results directory");
  verify->add_option("--results", results_dir, "results directory")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (simulate->parsed()) {
      ExperimentConfig cfg = load_experiment_config(config_path);
      if (seed_given) cfg.seed = seed_override;
      if (!method_names.empty()) {
        cfg.methods.clear();
        for (const auto& name : method_names)
          cfg.methods.push_back(parse_method(name));
      }
      cfg.validate();
      run_simulation(cfg, out_dir);
      std::cout << "wrote " << (std::filesystem::path(out_dir) / "metrics.csv").string()
                << "\n";
      return 0;
    }
    if (gen_data->parsed()) {
      const ExperimentConfig cfg = load_experiment_config(config_path);
      const data::TaskStream stream = make_stream(cfg);
      data::export_stream(stream, out_dir);
      std::cout << "exported " << stream.tasks.size() << " tasks to "
                << out_dir << "\n";
      return 0;
    }
    if (verify->parsed()) {
      const auto problems = verify_results(results_dir);
      for (const auto& p : problems) std::cerr << "verify: " << p << "\n";
      if (problems.empty()) {
        std::cout << "verify: ok\n";
        return 0;
      }
      return 1;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace fedprotip::harness
