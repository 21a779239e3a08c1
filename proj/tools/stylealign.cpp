// Command-line driver: one subcommand per pipeline stage.
//
//   stylealign <subcommand> [--config run.json] [--set key=value]... [--seed N] --out RUN_DIR
//
// On failure a single JSON error record is written to stderr and the exit
// status identifies the error class.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "stylealign/pipeline.hpp"

namespace {

int exit_code_for(const std::string& kind) {
  if (kind == "config_error") return 2;
  if (kind == "invalid_input" || kind == "parse_error") return 3;
  if (kind == "missing_artifact") return 4;
  if (kind == "numerical_error") return 5;
  if (kind == "io_error") return 6;
  return 1;
}

int report_error(const std::string& subcommand, const std::string& kind, const std::string& message) {
  nlohmann::json rec = {{"status", "error"}, {"subcommand", subcommand}, {"kind", kind}, {"message", message}};
  std::cerr << rec.dump() << std::endl;
  return exit_code_for(kind);
}

}  // namespace

int main(int argc, char** argv) {
  using namespace stylealign;

  CLI::App app{"Style-translation augmentation for facial landmark detection"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;

  using Stage = fs::path (*)(const RunConfig&, const fs::path&);
  const std::vector<std::tuple<std::string, std::string, Stage>> stages = {
      {"synth", "Generate the procedural face benchmark", &cmd_synth},
      {"train-disentangler", "Train the style/structure autoencoder", &cmd_train_disentangler},
      {"augment", "Render k style translations per training face", &cmd_augment},
      {"train-detector", "Train the landmark detector on real + synthetic faces", &cmd_train_detector},
      {"evaluate", "Score the detector on the test split", &cmd_evaluate},
      {"ablate-k", "Detector NME for each number of styles k", &cmd_ablate_k},
      {"ablate-loss", "Detector NME for each disentangler loss variant", &cmd_ablate_loss},
      {"plot", "Draw CED and ablation figures from earlier outputs", &cmd_plot},
  };
  std::vector<std::pair<CLI::App*, Stage>> subs;
  for (const auto& [name, help, fn] : stages) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "JSON run configuration");
    sub->add_option("--set", overrides, "Override a config value, e.g. --set detector.epochs=5")->take_all();
    sub->add_option("--seed", seed, "Root seed (overrides the config)");
    sub->add_option("--out", out_dir, "Run directory")->required();
    subs.emplace_back(sub, fn);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Error& e) {
    return report_error("", "usage_error", e.what());
  }

  for (const auto& [sub, fn] : subs) {
    if (!sub->parsed()) continue;
    const std::string name = sub->get_name();
    try {
      RunConfig cfg = load_run_config(config_path, overrides);
      if (seed) cfg.seed = *seed;
      const auto dir = fn(cfg, out_dir);
      std::cout << nlohmann::json{{"status", "ok"}, {"subcommand", name}, {"output", dir.string()}}.dump()
                << std::endl;
      return 0;
    } catch (const Error& e) {
      return report_error(name, e.kind(), e.what());
    } catch (const std::exception& e) {
      return report_error(name, "internal_error", e.what());
    }
  }
  return report_error("", "usage_error", "no subcommand given");
}
