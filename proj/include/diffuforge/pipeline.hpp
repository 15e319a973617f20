#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffuforge/backend.hpp"
#include "diffuforge/labeler.hpp"
#include "diffuforge/supervised.hpp"
#include "diffuforge/templating.hpp"

namespace diffuforge {

enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitBackend = 2, kExitPartial = 3 };

struct BackendConfig {
  enum class Kind { synthetic, remote };
  Kind kind = Kind::synthetic;
  std::string endpoint;
  int concurrency = 4;
  int timeout_s = 300;
};

/// Generation settings; the top-level block provides defaults and each
/// template may override any field under its own "generation" key.
struct GenerationSettings {
  TaskKind task = TaskKind::text_to_image;
  int width = 512;
  int height = 512;
  int steps = 30;
  double guidance = 7.5;
  std::optional<double> strength;
  std::optional<std::filesystem::path> init_image;
  std::optional<std::filesystem::path> mask_image;
  std::vector<InversionToken> inversion_tokens;
};

struct PipelineConfig {
  std::string dataset_id = "dataset";
  std::filesystem::path output;
  BackendConfig backend;
  GenerationSettings generation;
  LabelerParams labeling;
  MergePolicy merge;
  std::size_t expansion_cap = kDefaultExpansionCap;
  std::vector<PromptTemplate> templates;
  /// Resolved settings, parallel to `templates`.
  std::vector<GenerationSettings> template_settings;
  /// Compact dump of the parsed document; hashed into the manifest.
  std::string canonical;
};

/// Validates the whole document and reports every problem at once through
/// ValidationErrors. Relative paths resolve against `base_dir`.
PipelineConfig parse_config(const nlohmann::ordered_json& document, const std::filesystem::path& base_dir);
PipelineConfig load_config(const std::filesystem::path& path);

/// Applies the DIFFUFORGE_ENDPOINT override when set.
void apply_environment(PipelineConfig& config);

nlohmann::ordered_json labeling_to_json(const LabelerParams& params, const MergePolicy& merge);
/// Missing keys keep their defaults.
void labeling_from_json(const nlohmann::ordered_json& raw, LabelerParams& params, MergePolicy& merge);

/// Settings for one template after applying its overrides.
const GenerationSettings& resolve_generation(const PipelineConfig& config, const std::string& template_id);

std::unique_ptr<DiffusionBackend> make_backend(const BackendConfig& config);

/// Prints `template_id<TAB>bindings<TAB>prompt` per expanded prompt.
int cmd_expand(const PipelineConfig& config, std::ostream& out);

/// Expands, generates, and writes images, heatmaps and the manifest under
/// `root`. Failed requests are logged and skipped.
int cmd_generate(const PipelineConfig& config, const std::filesystem::path& root, DiffusionBackend& backend);

enum class LabelMode { unsupervised, supervised, hybrid };
LabelMode label_mode_from_string(const std::string& text);

int cmd_label(const std::filesystem::path& root, LabelMode mode,
              const std::optional<std::filesystem::path>& predictions);

/// Known formats: coco, yolo, masks.
int cmd_export(const std::filesystem::path& root, const std::vector<std::string>& formats);

int cmd_visualize(const std::filesystem::path& root);

/// Current time as ISO-8601 UTC.
std::string utc_timestamp();

}  // namespace diffuforge
