#include "diffuforge/supervised.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "diffuforge/error.hpp"
#include "diffuforge/geometry.hpp"
#include "diffuforge/labeler.hpp"

namespace diffuforge {

const char* to_string(MergeMode mode) {
  switch (mode) {
    case MergeMode::supervised_only: return "supervised_only";
    case MergeMode::unsupervised_only: return "unsupervised_only";
    case MergeMode::prefer_supervised: return "prefer_supervised";
  }
  return "prefer_supervised";
}

MergeMode merge_mode_from_string(const std::string& text) {
  if (text == "supervised_only") return MergeMode::supervised_only;
  if (text == "unsupervised_only") return MergeMode::unsupervised_only;
  if (text == "prefer_supervised") return MergeMode::prefer_supervised;
  throw ValidationError(fmt::format("unknown merge mode '{}'", text));
}

void MergePolicy::validate() const {
  if (!(confidence_floor >= 0.0 && confidence_floor <= 1.0)) throw ValidationError("confidence_floor must lie in [0,1]");
  if (!(match_iou >= 0.0 && match_iou <= 1.0)) throw ValidationError("match_iou must lie in [0,1]");
}

BinaryMask decode_rle(int height, int width, const std::vector<long long>& counts) {
  if (height < 1 || width < 1) throw ValidationError(fmt::format("RLE size {}x{} is invalid", height, width));
  const long long total = static_cast<long long>(height) * width;
  long long covered = 0;
  for (long long run : counts) {
    if (run < 0) throw ValidationError("RLE run lengths must be >= 0");
    covered += run;
  }
  if (covered != total) {
    throw ValidationError(fmt::format("RLE runs cover {} pixels, size {}x{} needs {}", covered, height, width, total));
  }
  BinaryMask mask(width, height);
  long long pos = 0;
  bool foreground = false;
  for (long long run : counts) {
    if (foreground) {
      for (long long i = pos; i < pos + run; ++i) mask.set(static_cast<int>(i / height), static_cast<int>(i % height));
    }
    pos += run;
    foreground = !foreground;
  }
  return mask;
}

namespace {

LabeledInstance parse_instance(const nlohmann::json& raw, const ImageSize& size, const std::string& where) {
  auto fail = [&](const std::string& msg) { return ValidationError(fmt::format("{}: {}", where, msg)); };
  if (!raw.is_object()) throw fail("instance must be an object");
  LabeledInstance inst;
  inst.source = LabelSource::supervised;
  if (!raw.contains("class") || !raw["class"].is_string() || raw["class"].get<std::string>().empty()) {
    throw fail("needs a non-empty string \"class\"");
  }
  inst.class_token = raw["class"].get<std::string>();
  if (!raw.contains("confidence") || !raw["confidence"].is_number()) throw fail("needs a numeric \"confidence\"");
  inst.score = raw["confidence"].get<double>();
  if (!(inst.score >= 0.0 && inst.score <= 1.0)) throw fail("confidence must lie in [0,1]");

  const bool has_polygon = raw.contains("polygon") && !raw["polygon"].is_null();
  const bool has_rle = raw.contains("rle") && !raw["rle"].is_null();
  if (has_polygon == has_rle) throw fail("needs exactly one of \"polygon\" or \"rle\"");

  if (has_polygon) {
    const auto& pts = raw["polygon"];
    if (!pts.is_array() || pts.size() < 3) throw fail("malformed geometry: polygon needs >= 3 points");
    Polygon poly;
    for (const auto& p : pts) {
      if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
        throw fail("malformed geometry: polygon points must be [x, y]");
      }
      const double x = p[0].get<double>();
      const double y = p[1].get<double>();
      if (!(x >= 0.0 && y >= 0.0 && x <= size.width - 1 && y <= size.height - 1)) {
        throw fail(fmt::format("polygon point ({}, {}) lies outside the {}x{} image", x, y, size.width, size.height));
      }
      poly.vertices.push_back({x, y});
    }
    inst.bbox = fit_bbox(poly);
    inst.polygons.push_back(std::move(poly));
    return inst;
  }

  const auto& rle = raw["rle"];
  if (!rle.is_object() || !rle.contains("size") || !rle.contains("counts") || !rle["size"].is_array() ||
      rle["size"].size() != 2 || !rle["counts"].is_array()) {
    throw fail("malformed geometry: rle needs \"size\": [h, w] and \"counts\": [...]");
  }
  if (!rle["size"][0].is_number_integer() || !rle["size"][1].is_number_integer()) {
    throw fail("malformed geometry: rle size must be integers");
  }
  const int h = rle["size"][0].get<int>();
  const int w = rle["size"][1].get<int>();
  if (h != size.height || w != size.width) {
    throw fail(fmt::format("rle size {}x{} does not match the {}x{} image", h, w, size.height, size.width));
  }
  std::vector<long long> counts;
  for (const auto& c : rle["counts"]) {
    if (!c.is_number_integer()) throw fail("malformed geometry: rle counts must be integers");
    counts.push_back(c.get<long long>());
  }
  BinaryMask mask;
  try {
    mask = decode_rle(h, w, counts);
  } catch (const ValidationError& e) {
    throw fail(fmt::format("RLE length mismatch: {}", e.what()));
  }
  if (mask.count() == 0) throw fail("malformed geometry: rle mask is empty");
  for (const auto& component : extract_components(mask, 0.0)) {
    if (auto poly = trace_contour(component.mask)) inst.polygons.push_back(std::move(*poly));
  }
  inst.bbox = fit_bbox(mask);
  return inst;
}

}  // namespace

std::vector<ExternalPrediction> parse_predictions(const nlohmann::json& document,
                                                  const std::map<std::string, ImageSize>& images,
                                                  double confidence_floor) {
  std::vector<nlohmann::json> entries;
  if (document.is_null()) return {};
  if (document.is_array()) {
    entries.assign(document.begin(), document.end());
  } else {
    entries.push_back(document);
  }

  std::vector<ExternalPrediction> out;
  for (std::size_t e = 0; e < entries.size(); ++e) {
    const auto& entry = entries[e];
    if (!entry.is_object() || !entry.contains("image_id") || !entry["image_id"].is_string()) {
      throw ValidationError(fmt::format("prediction entry {} needs a string \"image_id\"", e));
    }
    ExternalPrediction pred;
    pred.image_id = entry["image_id"].get<std::string>();
    const auto size = images.find(pred.image_id);
    if (size == images.end()) {
      throw ValidationError(fmt::format("prediction entry {}: unknown image_id '{}'", e, pred.image_id));
    }
    if (!entry.contains("instances") || !entry["instances"].is_array()) {
      throw ValidationError(fmt::format("image '{}': \"instances\" must be a list", pred.image_id));
    }
    const auto& instances = entry["instances"];
    for (std::size_t i = 0; i < instances.size(); ++i) {
      LabeledInstance inst =
          parse_instance(instances[i], size->second, fmt::format("image '{}' instance {}", pred.image_id, i));
      if (inst.score < confidence_floor) continue;
      pred.instances.push_back(std::move(inst));
    }
    out.push_back(std::move(pred));
  }
  return out;
}

std::vector<ExternalPrediction> ingest_predictions(const std::filesystem::path& path,
                                                   const std::map<std::string, ImageSize>& images,
                                                   double confidence_floor) {
  std::ifstream in(path);
  if (!in) throw ValidationError(fmt::format("cannot open predictions file {}", path.string()));
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); })) return {};
  nlohmann::json document;
  try {
    document = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return parse_predictions(document, images, confidence_floor);
}

std::vector<LabeledInstance> merge_labels(const std::vector<LabeledInstance>& unsupervised,
                                          const std::vector<LabeledInstance>& supervised, const MergePolicy& policy) {
  policy.validate();
  if (policy.mode == MergeMode::supervised_only) return supervised;
  if (policy.mode == MergeMode::unsupervised_only) return unsupervised;

  std::vector<std::size_t> order(supervised.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return supervised[a].score > supervised[b].score; });

  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> replaced_by(unsupervised.size(), kNone);
  std::vector<bool> sup_matched(supervised.size(), false);
  for (std::size_t s : order) {
    std::size_t best = kNone;
    double best_iou = -1.0;
    for (std::size_t u = 0; u < unsupervised.size(); ++u) {
      if (replaced_by[u] != kNone) continue;
      const double iou = bbox_iou(supervised[s].bbox, unsupervised[u].bbox);
      if (iou >= policy.match_iou && iou > best_iou) {
        best = u;
        best_iou = iou;
      }
    }
    if (best != kNone) {
      replaced_by[best] = s;
      sup_matched[s] = true;
    }
  }

  std::set<std::string> supervised_classes;
  for (const auto& inst : supervised) supervised_classes.insert(inst.class_token);

  std::vector<LabeledInstance> out;
  for (std::size_t u = 0; u < unsupervised.size(); ++u) {
    if (replaced_by[u] != kNone) {
      out.push_back(supervised[replaced_by[u]]);
    } else if (!supervised_classes.count(unsupervised[u].class_token)) {
      out.push_back(unsupervised[u]);
    }
  }
  for (std::size_t s = 0; s < supervised.size(); ++s) {
    if (!sup_matched[s]) out.push_back(supervised[s]);
  }
  return out;
}

}  // namespace diffuforge
