// Command-line front end: expand, generate, label, export, visualize.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "diffuforge/backend.hpp"
#include "diffuforge/error.hpp"
#include "diffuforge/pipeline.hpp"

namespace fs = std::filesystem;
using namespace diffuforge;

namespace {

struct Globals {
  std::string config_path;
  std::string out_dir;
  std::string log_level = "info";
};

PipelineConfig require_config(const Globals& g) {
  if (g.config_path.empty()) throw ValidationError("--config is required for this command");
  PipelineConfig config = load_config(g.config_path);
  apply_environment(config);
  if (!g.out_dir.empty()) config.output = g.out_dir;
  return config;
}

// label/export/visualize only need the dataset root.
fs::path dataset_root(const Globals& g) {
  if (!g.out_dir.empty()) return g.out_dir;
  if (!g.config_path.empty()) {
    const PipelineConfig config = load_config(g.config_path);
    if (!config.output.empty()) return config.output;
  }
  throw ValidationError("no dataset root: pass --out or a --config with \"output\"");
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("diffuforge"));
  spdlog::set_pattern("%Y-%m-%dT%H:%M:%S.%e %l %v");

  CLI::App app{"Synthetic dataset generation and labeling"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "Pipeline configuration (JSON)");
  app.add_option("--out", g.out_dir, "Dataset root; overrides the config \"output\"");
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error, off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "critical", "off"}));

  auto* expand = app.add_subcommand("expand", "List expanded prompts without generating");
  auto* generate = app.add_subcommand("generate", "Generate images and heatmaps into the dataset root");
  auto* label = app.add_subcommand("label", "Attach instances to every record");
  std::string mode = "unsupervised";
  std::string predictions;
  label->add_option("--mode", mode, "unsupervised, supervised or hybrid");
  label->add_option("--predictions", predictions, "External prediction file (JSON)");
  auto* exporter = app.add_subcommand("export", "Write label files");
  std::vector<std::string> formats{"coco", "yolo", "masks"};
  exporter->add_option("--formats", formats, "Any of coco, yolo, masks")->delimiter(',');
  auto* visualize = app.add_subcommand("visualize", "Render overlay images");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }
  spdlog::set_level(spdlog::level::from_str(g.log_level));

  try {
    if (expand->parsed()) return cmd_expand(require_config(g), std::cout);
    if (generate->parsed()) {
      const PipelineConfig config = require_config(g);
      if (config.output.empty()) throw ValidationError("no dataset root: pass --out or set \"output\"");
      auto backend = make_backend(config.backend);
      return cmd_generate(config, config.output, *backend);
    }
    if (label->parsed()) {
      std::optional<fs::path> pred;
      if (!predictions.empty()) pred = predictions;
      return cmd_label(dataset_root(g), label_mode_from_string(mode), pred);
    }
    if (exporter->parsed()) return cmd_export(dataset_root(g), formats);
    if (visualize->parsed()) return cmd_visualize(dataset_root(g));
  } catch (const ValidationErrors& e) {
    for (const auto& m : e.messages()) spdlog::error("{}", m);
    return kExitValidation;
  } catch (const BackendError& e) {
    spdlog::error("{}", e.what());
    return kExitBackend;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitValidation;
  }
  return kExitValidation;
}
