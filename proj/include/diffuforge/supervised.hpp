#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffuforge/raster.hpp"

namespace diffuforge {

/// Predictions of an external segmentation model for one image, already
/// converted to labeled instances (source = supervised, score = confidence).
struct ExternalPrediction {
  std::string image_id;
  std::vector<LabeledInstance> instances;
};

struct ImageSize {
  int width = 0;
  int height = 0;
};

enum class MergeMode { supervised_only, unsupervised_only, prefer_supervised };

const char* to_string(MergeMode mode);
MergeMode merge_mode_from_string(const std::string& text);

struct MergePolicy {
  double confidence_floor = 0.5;
  double match_iou = 0.5;
  MergeMode mode = MergeMode::prefer_supervised;
  /// Throws ValidationError unless both thresholds lie in [0,1].
  void validate() const;
};

/// Uncompressed column-major run lengths, first run is background.
/// Throws ValidationError when the runs do not cover height*width exactly.
BinaryMask decode_rle(int height, int width, const std::vector<long long>& counts);

/// Parses a prediction document: one `{ "image_id", "instances": [...] }`
/// object or a list of them. Each instance carries "class", "confidence"
/// and exactly one of "polygon" ([[x,y],...]) or "rle"
/// ({"size": [h, w], "counts": [...]}). RLE masks are traced into outer
/// polygons. Instances below `confidence_floor` are dropped. Errors name
/// the image and instance index.
std::vector<ExternalPrediction> parse_predictions(const nlohmann::json& document,
                                                  const std::map<std::string, ImageSize>& images,
                                                  double confidence_floor);

/// Reads and parses a prediction file; an empty file yields no predictions.
std::vector<ExternalPrediction> ingest_predictions(const std::filesystem::path& path,
                                                   const std::map<std::string, ImageSize>& images,
                                                   double confidence_floor);

/// Combines labels of one image.
///
/// prefer_supervised: supervised instances are visited by descending
/// confidence and greedily matched to the unmatched unsupervised instance
/// with the highest bbox IoU >= match_iou (classes need not agree). A
/// matched unsupervised instance is replaced in place by its supervised
/// counterpart. Unmatched unsupervised instances survive only when no
/// supervised instance shares their class. Unmatched supervised instances
/// follow, in input order.
std::vector<LabeledInstance> merge_labels(const std::vector<LabeledInstance>& unsupervised,
                                          const std::vector<LabeledInstance>& supervised, const MergePolicy& policy);

}  // namespace diffuforge
