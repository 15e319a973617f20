#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffuforge/raster.hpp"

namespace diffuforge {

/// Dataset root layout.
namespace layout {
inline constexpr const char* kImages = "images";
inline constexpr const char* kHeatmaps = "heatmaps";
inline constexpr const char* kCoco = "labels_coco.json";
inline constexpr const char* kYolo = "labels_yolo";
inline constexpr const char* kMasks = "masks";
inline constexpr const char* kOverlays = "overlays";
inline constexpr const char* kManifest = "manifest.json";
}  // namespace layout

struct Manifest {
  std::string dataset_id;
  std::string created_at;     // ISO-8601 UTC
  std::string config_digest;  // sha256 of the canonical configuration
  std::string backend_id;
  /// Labeling parameters captured at generation time so that labeling can
  /// run from the dataset root alone.
  nlohmann::ordered_json labeling;
  std::vector<DatasetRecord> records;

  /// Throws ValidationError on duplicate image ids.
  void validate() const;

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

nlohmann::ordered_json to_json(const LabeledInstance& instance);
LabeledInstance instance_from_json(const nlohmann::json& raw);
nlohmann::ordered_json to_json(const Manifest& manifest);
Manifest manifest_from_json(const nlohmann::json& raw);

void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);

/// Stable class-token to id mapping. Ids start at 1 so that 0 can mean
/// background in label maps.
class ClassRegistry {
 public:
  ClassRegistry() = default;
  explicit ClassRegistry(std::vector<std::string> names);
  /// Sorted distinct class tokens of every instance and token of interest.
  static ClassRegistry from_records(const std::vector<DatasetRecord>& records);

  /// Throws ValidationError for unregistered tokens.
  int id(const std::string& token) const;
  const std::vector<std::string>& names() const noexcept { return names_; }
  std::size_t size() const noexcept { return names_.size(); }

 private:
  std::vector<std::string> names_;
  std::map<std::string, int> ids_;
};

/// Throws ValidationError when a box or polygon vertex leaves the image.
void check_geometry(const DatasetRecord& record);

/// COCO-style document. Polygons keep their pixel-center vertices;
/// `area` sums the pixel-corner areas of the polygons (bbox area when there
/// are none); scores live in the "diffuforge_score" extension key.
nlohmann::ordered_json coco_document(const std::vector<DatasetRecord>& records, const ClassRegistry& registry);
void write_coco(const std::vector<DatasetRecord>& records, const ClassRegistry& registry,
                const std::filesystem::path& out_path);

struct CocoImageLabels {
  std::string file_name;
  int width = 0;
  int height = 0;
  std::vector<LabeledInstance> instances;
};
std::vector<CocoImageLabels> read_coco(const nlohmann::json& document);

/// `class cx cy w h`, normalized, six decimals. YOLO class ids are the
/// registry ids minus one.
std::string yolo_line(int class_id, const BoundingBox& bbox, int image_width, int image_height);
/// Inverse of yolo_line; returns the class id and a box rounded to pixels.
std::pair<int, BoundingBox> parse_yolo_line(const std::string& line, int image_width, int image_height);
/// One `<image_id>.txt` per record plus `classes.txt`.
void write_yolo(const std::vector<DatasetRecord>& records, const ClassRegistry& registry,
                const std::filesystem::path& out_dir);

/// Class-id label map; higher-scoring instances paint over lower ones.
std::vector<std::uint8_t> semantic_label_map(const DatasetRecord& record, const ClassRegistry& registry);
/// One 8-bit `<image_id>.png` per record. Throws above 255 classes.
void write_semantic_masks(const std::vector<DatasetRecord>& records, const ClassRegistry& registry,
                          const std::filesystem::path& out_dir);

}  // namespace diffuforge
