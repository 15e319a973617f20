#include "diffuforge/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "diffuforge/codec.hpp"
#include "diffuforge/error.hpp"
#include "diffuforge/geometry.hpp"

namespace diffuforge {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

// Integral coordinates are written as JSON integers; everything else keeps
// full double precision.
ojson number(double v) {
  if (v == std::floor(v) && std::abs(v) < 9.0e15) return static_cast<long long>(v);
  return v;
}

ojson flat_polygon(const Polygon& polygon) {
  ojson flat = ojson::array();
  for (const auto& p : polygon.vertices) {
    flat.push_back(number(p.x));
    flat.push_back(number(p.y));
  }
  return flat;
}

Polygon polygon_from_flat(const nlohmann::json& flat) {
  if (!flat.is_array() || flat.size() % 2 != 0) throw FormatError("polygon must be a flat list of x, y pairs");
  Polygon poly;
  for (std::size_t i = 0; i < flat.size(); i += 2) poly.vertices.push_back({flat[i].get<double>(), flat[i + 1].get<double>()});
  return poly;
}

ojson bbox_json(const BoundingBox& b) { return ojson::array({b.x, b.y, b.width, b.height}); }

BoundingBox bbox_from_json(const nlohmann::json& raw) {
  if (!raw.is_array() || raw.size() != 4) throw FormatError("bbox must be [x, y, w, h]");
  return BoundingBox{raw[0].get<int>(), raw[1].get<int>(), raw[2].get<int>(), raw[3].get<int>()};
}

ojson object_json(const SyntheticObject& o) {
  return ojson{{"token", o.token},         {"center_x", o.center_x},     {"center_y", o.center_y},
               {"semi_major", o.semi_major}, {"semi_minor", o.semi_minor}, {"rotation", o.rotation},
               {"bbox", bbox_json(o.bbox)}};
}

SyntheticObject object_from_json(const nlohmann::json& raw) {
  SyntheticObject o;
  o.token = raw.at("token").get<std::string>();
  o.center_x = raw.at("center_x").get<double>();
  o.center_y = raw.at("center_y").get<double>();
  o.semi_major = raw.at("semi_major").get<double>();
  o.semi_minor = raw.at("semi_minor").get<double>();
  o.rotation = raw.at("rotation").get<double>();
  o.bbox = bbox_from_json(raw.at("bbox"));
  return o;
}

}  // namespace

// ---------------------------------------------------------------------------
// Manifest

void Manifest::validate() const {
  std::set<std::string> seen;
  for (const auto& r : records) {
    if (!seen.insert(r.image_id).second) throw ValidationError(fmt::format("duplicate image_id '{}'", r.image_id));
  }
}

ojson to_json(const LabeledInstance& inst) {
  ojson polygons = ojson::array();
  for (const auto& p : inst.polygons) polygons.push_back(flat_polygon(p));
  return ojson{{"class", inst.class_token},
               {"source", to_string(inst.source)},
               {"score", inst.score},
               {"bbox", bbox_json(inst.bbox)},
               {"polygons", std::move(polygons)}};
}

LabeledInstance instance_from_json(const nlohmann::json& raw) {
  LabeledInstance inst;
  inst.class_token = raw.at("class").get<std::string>();
  inst.source = label_source_from_string(raw.at("source").get<std::string>());
  inst.score = raw.at("score").get<double>();
  inst.bbox = bbox_from_json(raw.at("bbox"));
  for (const auto& p : raw.at("polygons")) inst.polygons.push_back(polygon_from_flat(p));
  return inst;
}

ojson to_json(const Manifest& m) {
  ojson records = ojson::array();
  for (const auto& r : m.records) {
    ojson instances = ojson::array();
    for (const auto& inst : r.instances) instances.push_back(to_json(inst));
    ojson heatmaps = ojson::object();
    for (const auto& [token, path] : r.heatmap_paths) heatmaps[token] = path;
    ojson bindings = ojson::object();
    for (const auto& [k, v] : r.provenance.attribute_bindings) bindings[k] = v;
    ojson truth = ojson::array();
    for (const auto& o : r.ground_truth) truth.push_back(object_json(o));
    records.push_back(ojson{{"image_id", r.image_id},
                            {"image_path", r.image_path},
                            {"width", r.width},
                            {"height", r.height},
                            {"prompt", r.prompt},
                            {"negative_prompt", r.negative_prompt},
                            {"tokens", r.tokens},
                            {"heatmaps", std::move(heatmaps)},
                            {"provenance",
                             {{"template_id", r.provenance.template_id},
                              {"attribute_bindings", std::move(bindings)},
                              {"seed", r.provenance.seed},
                              {"task", to_string(r.provenance.task)},
                              {"backend_id", r.provenance.backend_id}}},
                            {"instances", std::move(instances)},
                            {"ground_truth", std::move(truth)}});
  }
  return ojson{{"dataset_id", m.dataset_id},
               {"created_at", m.created_at},
               {"config_digest", m.config_digest},
               {"backend_id", m.backend_id},
               {"labeling", m.labeling},
               {"records", std::move(records)}};
}

Manifest manifest_from_json(const nlohmann::json& raw) {
  Manifest m;
  try {
    m.dataset_id = raw.at("dataset_id").get<std::string>();
    m.created_at = raw.at("created_at").get<std::string>();
    m.config_digest = raw.at("config_digest").get<std::string>();
    m.backend_id = raw.at("backend_id").get<std::string>();
    if (raw.contains("labeling")) m.labeling = ojson::parse(raw["labeling"].dump());
    for (const auto& r : raw.at("records")) {
      DatasetRecord rec;
      rec.image_id = r.at("image_id").get<std::string>();
      rec.image_path = r.at("image_path").get<std::string>();
      rec.width = r.at("width").get<int>();
      rec.height = r.at("height").get<int>();
      rec.prompt = r.at("prompt").get<std::string>();
      rec.negative_prompt = r.value("negative_prompt", std::string());
      rec.tokens = r.at("tokens").get<std::vector<std::string>>();
      for (const auto& [token, path] : r.at("heatmaps").items()) rec.heatmap_paths[token] = path.get<std::string>();
      const auto& p = r.at("provenance");
      rec.provenance.template_id = p.at("template_id").get<std::string>();
      for (const auto& [k, v] : p.at("attribute_bindings").items()) rec.provenance.attribute_bindings[k] = v.get<std::string>();
      rec.provenance.seed = p.at("seed").get<std::uint64_t>();
      rec.provenance.task = task_kind_from_string(p.at("task").get<std::string>());
      rec.provenance.backend_id = p.at("backend_id").get<std::string>();
      for (const auto& inst : r.at("instances")) rec.instances.push_back(instance_from_json(inst));
      if (r.contains("ground_truth")) {
        for (const auto& o : r["ground_truth"]) rec.ground_truth.push_back(object_from_json(o));
      }
      m.records.push_back(std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("malformed manifest: {}", e.what()));
  }
  m.validate();
  return m;
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
  manifest.validate();
  write_file_text(path, to_json(manifest).dump(2) + "\n");
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("cannot open manifest {}", path.string()));
  try {
    return manifest_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

// ---------------------------------------------------------------------------
// Classes and geometry checks

ClassRegistry::ClassRegistry(std::vector<std::string> names) : names_(std::move(names)) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (!ids_.emplace(names_[i], static_cast<int>(i) + 1).second) {
      throw ValidationError(fmt::format("class '{}' registered twice", names_[i]));
    }
  }
}

ClassRegistry ClassRegistry::from_records(const std::vector<DatasetRecord>& records) {
  std::set<std::string> names;
  for (const auto& r : records) {
    names.insert(r.tokens.begin(), r.tokens.end());
    for (const auto& inst : r.instances) names.insert(inst.class_token);
  }
  return ClassRegistry(std::vector<std::string>(names.begin(), names.end()));
}

int ClassRegistry::id(const std::string& token) const {
  const auto it = ids_.find(token);
  if (it == ids_.end()) throw ValidationError(fmt::format("class '{}' is not registered", token));
  return it->second;
}

void check_geometry(const DatasetRecord& r) {
  for (std::size_t i = 0; i < r.instances.size(); ++i) {
    const auto& inst = r.instances[i];
    if (!inst.bbox.fits(r.width, r.height)) {
      throw ValidationError(fmt::format("image '{}' instance {}: bbox [{}, {}, {}, {}] lies outside the {}x{} image",
                                        r.image_id, i, inst.bbox.x, inst.bbox.y, inst.bbox.width, inst.bbox.height,
                                        r.width, r.height));
    }
    for (const auto& poly : inst.polygons) {
      for (const auto& p : poly.vertices) {
        if (!(p.x >= 0.0 && p.y >= 0.0 && p.x <= r.width - 1 && p.y <= r.height - 1)) {
          throw ValidationError(fmt::format("image '{}' instance {}: vertex ({}, {}) lies outside the {}x{} image",
                                            r.image_id, i, p.x, p.y, r.width, r.height));
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// COCO

ojson coco_document(const std::vector<DatasetRecord>& records, const ClassRegistry& registry) {
  ojson images = ojson::array();
  ojson annotations = ojson::array();
  ojson categories = ojson::array();
  for (const auto& name : registry.names()) categories.push_back({{"id", registry.id(name)}, {"name", name}});

  long long annotation_id = 1;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    check_geometry(r);
    const int image_id = static_cast<int>(i) + 1;
    images.push_back({{"id", image_id}, {"file_name", r.image_path}, {"width", r.width}, {"height", r.height}});
    for (const auto& inst : r.instances) {
      ojson segmentation = ojson::array();
      double area = 0.0;
      for (const auto& poly : inst.polygons) {
        segmentation.push_back(flat_polygon(poly));
        area += pixel_area(poly);
      }
      if (inst.polygons.empty()) area = static_cast<double>(inst.bbox.area());
      annotations.push_back({{"id", annotation_id++},
                             {"image_id", image_id},
                             {"category_id", registry.id(inst.class_token)},
                             {"segmentation", std::move(segmentation)},
                             {"bbox", bbox_json(inst.bbox)},
                             {"area", number(area)},
                             {"iscrowd", 0},
                             {"diffuforge_score", inst.score},
                             {"diffuforge_source", to_string(inst.source)}});
    }
  }
  return ojson{{"images", std::move(images)}, {"annotations", std::move(annotations)}, {"categories", std::move(categories)}};
}

void write_coco(const std::vector<DatasetRecord>& records, const ClassRegistry& registry, const fs::path& out_path) {
  write_file_text(out_path, coco_document(records, registry).dump(2) + "\n");
}

std::vector<CocoImageLabels> read_coco(const nlohmann::json& doc) {
  std::vector<CocoImageLabels> out;
  try {
    std::map<int, std::string> names;
    for (const auto& c : doc.at("categories")) names[c.at("id").get<int>()] = c.at("name").get<std::string>();
    std::map<int, std::size_t> index;
    for (const auto& img : doc.at("images")) {
      index[img.at("id").get<int>()] = out.size();
      out.push_back({img.at("file_name").get<std::string>(), img.at("width").get<int>(), img.at("height").get<int>(), {}});
    }
    for (const auto& a : doc.at("annotations")) {
      LabeledInstance inst;
      const int cat = a.at("category_id").get<int>();
      if (!names.count(cat)) throw FormatError(fmt::format("annotation refers to unknown category {}", cat));
      inst.class_token = names[cat];
      for (const auto& seg : a.at("segmentation")) inst.polygons.push_back(polygon_from_flat(seg));
      inst.bbox = bbox_from_json(a.at("bbox"));
      inst.score = a.value("diffuforge_score", 1.0);
      inst.source = label_source_from_string(a.value("diffuforge_source", std::string("supervised")));
      const auto it = index.find(a.at("image_id").get<int>());
      if (it == index.end()) throw FormatError("annotation refers to an unknown image");
      out[it->second].instances.push_back(std::move(inst));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("malformed COCO document: {}", e.what()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// YOLO

std::string yolo_line(int class_id, const BoundingBox& b, int image_width, int image_height) {
  const double cx = (b.x + b.width / 2.0) / image_width;
  const double cy = (b.y + b.height / 2.0) / image_height;
  return fmt::format("{} {:.6f} {:.6f} {:.6f} {:.6f}", class_id, cx, cy, double(b.width) / image_width,
                     double(b.height) / image_height);
}

std::pair<int, BoundingBox> parse_yolo_line(const std::string& line, int image_width, int image_height) {
  std::istringstream in(line);
  int class_id = 0;
  double cx = 0, cy = 0, w = 0, h = 0;
  if (!(in >> class_id >> cx >> cy >> w >> h)) throw FormatError(fmt::format("malformed YOLO line '{}'", line));
  const double pw = w * image_width;
  const double ph = h * image_height;
  BoundingBox b;
  b.x = static_cast<int>(std::lround(cx * image_width - pw / 2.0));
  b.y = static_cast<int>(std::lround(cy * image_height - ph / 2.0));
  b.width = static_cast<int>(std::lround(pw));
  b.height = static_cast<int>(std::lround(ph));
  return {class_id, b};
}

void write_yolo(const std::vector<DatasetRecord>& records, const ClassRegistry& registry, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::string classes;
  for (const auto& name : registry.names()) classes += name + "\n";
  write_file_text(out_dir / "classes.txt", classes);
  for (const auto& r : records) {
    check_geometry(r);
    std::string text;
    for (const auto& inst : r.instances) text += yolo_line(registry.id(inst.class_token) - 1, inst.bbox, r.width, r.height) + "\n";
    write_file_text(out_dir / (r.image_id + ".txt"), text);
  }
}

// ---------------------------------------------------------------------------
// Semantic masks

std::vector<std::uint8_t> semantic_label_map(const DatasetRecord& r, const ClassRegistry& registry) {
  if (registry.size() > 255) throw ValidationError(fmt::format("{} classes exceed the 255 an 8-bit mask can hold", registry.size()));
  check_geometry(r);
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(r.width) * r.height, 0);
  std::vector<std::size_t> order(r.instances.size());
  std::iota(order.begin(), order.end(), 0);
  // Ascending score so the best instance is painted last.
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return r.instances[a].score < r.instances[b].score; });
  for (std::size_t idx : order) {
    const auto& inst = r.instances[idx];
    const auto value = static_cast<std::uint8_t>(registry.id(inst.class_token));
    BinaryMask fill = inst.polygons.empty() ? BinaryMask(r.width, r.height) : rasterize(inst.polygons, r.width, r.height);
    if (inst.polygons.empty()) {
      for (int y = inst.bbox.y; y <= inst.bbox.y_max(); ++y) {
        for (int x = inst.bbox.x; x <= inst.bbox.x_max(); ++x) fill.set(x, y);
      }
    }
    for (int y = 0; y < r.height; ++y) {
      for (int x = 0; x < r.width; ++x) {
        if (fill.at(x, y)) labels[static_cast<std::size_t>(y) * r.width + x] = value;
      }
    }
  }
  return labels;
}

void write_semantic_masks(const std::vector<DatasetRecord>& records, const ClassRegistry& registry, const fs::path& out_dir) {
  if (registry.size() > 255) throw ValidationError(fmt::format("{} classes exceed the 255 an 8-bit mask can hold", registry.size()));
  fs::create_directories(out_dir);
  for (const auto& r : records) {
    const auto labels = semantic_label_map(r, registry);
    write_file_bytes(out_dir / (r.image_id + ".png"), encode_png_gray(r.width, r.height, labels));
  }
}

}  // namespace diffuforge
