#include "diffuforge/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <ostream>
#include <cctype>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "diffuforge/codec.hpp"
#include "diffuforge/dataset.hpp"
#include "diffuforge/heatmap.hpp"
#include "diffuforge/overlay.hpp"

namespace diffuforge {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

// Collects config problems under a path prefix.
class Problems {
 public:
  void add(std::string message) { messages_.push_back(std::move(message)); }
  bool empty() const { return messages_.empty(); }
  std::vector<std::string> take() { return std::move(messages_); }

 private:
  std::vector<std::string> messages_;
};

template <typename T>
void read_number(const ojson& obj, const char* key, T& out, Problems& problems, const std::string& where,
                 double min_value, double max_value) {
  if (!obj.contains(key) || obj[key].is_null()) return;
  const auto& v = obj[key];
  const bool ok = std::is_integral_v<T> ? v.is_number_integer() : v.is_number();
  if (!ok) {
    problems.add(fmt::format("{}.{} must be {}", where, key, std::is_integral_v<T> ? "an integer" : "a number"));
    return;
  }
  const double d = v.template get<double>();
  if (!(d >= min_value && d <= max_value)) {
    problems.add(fmt::format("{}.{} = {} is outside [{}, {}]", where, key, d, min_value, max_value));
    return;
  }
  out = v.template get<T>();
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

void parse_generation(const ojson& raw, const fs::path& base_dir, GenerationSettings& g, Problems& problems,
                      const std::string& where) {
  if (raw.is_null()) return;
  if (!raw.is_object()) {
    problems.add(where + " must be an object");
    return;
  }
  if (raw.contains("task")) {
    try {
      g.task = task_kind_from_string(raw["task"].is_string() ? raw["task"].get<std::string>() : "");
    } catch (const ValidationError& e) {
      problems.add(fmt::format("{}.task: {}", where, e.what()));
    }
  }
  read_number(raw, "width", g.width, problems, where, 8, 8192);
  read_number(raw, "height", g.height, problems, where, 8, 8192);
  if (g.width % 8 != 0 || g.height % 8 != 0) {
    problems.add(fmt::format("{}: width and height must be multiples of 8, got {}x{}", where, g.width, g.height));
  }
  read_number(raw, "steps", g.steps, problems, where, 1, 1e6);
  read_number(raw, "guidance", g.guidance, problems, where, 1e-9, 1e6);
  if (raw.contains("strength") && !raw["strength"].is_null()) {
    double s = 0.0;
    read_number(raw, "strength", s, problems, where, 0.0, 1.0);
    g.strength = s;
  }
  for (const char* key : {"init_image", "mask_image"}) {
    if (!raw.contains(key) || raw[key].is_null()) continue;
    if (!raw[key].is_string()) {
      problems.add(fmt::format("{}.{} must be a path", where, key));
      continue;
    }
    const fs::path p = resolve(base_dir, raw[key].get<std::string>());
    if (!fs::exists(p)) problems.add(fmt::format("{}.{}: file {} does not exist", where, key, p.string()));
    (std::string_view(key) == "init_image" ? g.init_image : g.mask_image) = p;
  }
  if (raw.contains("inversion_tokens")) {
    const auto& list = raw["inversion_tokens"];
    if (!list.is_array()) {
      problems.add(where + ".inversion_tokens must be a list");
    } else {
      g.inversion_tokens.clear();
      for (std::size_t i = 0; i < list.size(); ++i) {
        const auto& e = list[i];
        if (!e.is_object() || !e.contains("token") || !e["token"].is_string() || !e.contains("embedding") ||
            !e["embedding"].is_string()) {
          problems.add(fmt::format("{}.inversion_tokens[{}] needs string \"token\" and \"embedding\"", where, i));
          continue;
        }
        const fs::path p = resolve(base_dir, e["embedding"].get<std::string>());
        if (!fs::exists(p)) {
          problems.add(fmt::format("{}.inversion_tokens[{}]: embedding file {} does not exist", where, i, p.string()));
        }
        g.inversion_tokens.push_back({e["token"].get<std::string>(), p});
      }
    }
  }
}

void check_task_fields(const GenerationSettings& g, Problems& problems, const std::string& where) {
  const bool needs_init = g.task != TaskKind::text_to_image;
  if (needs_init && !g.init_image) problems.add(fmt::format("{}: task {} needs init_image", where, to_string(g.task)));
  if (needs_init && !g.strength) problems.add(fmt::format("{}: task {} needs strength", where, to_string(g.task)));
  if (g.task == TaskKind::inpaint && !g.mask_image) problems.add(where + ": task inpaint needs mask_image");
}

template <typename Fn>
void parallel_for(std::size_t count, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) fn(i);
    });
  }
}

std::string sanitize(const std::string& token) {
  std::string out;
  for (unsigned char c : token) out += (std::isalnum(c) || c == '-' || c == '_') ? static_cast<char>(c) : '_';
  return out.empty() ? std::string("token") : out;
}

std::size_t hardware_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

ojson labeling_to_json(const LabelerParams& params, const MergePolicy& merge) {
  const auto& se = params.morphology.structuring_element;
  ojson cells = ojson::array();
  bool full = true;
  for (int dy = -se.radius(); dy <= se.radius(); ++dy) {
    for (int dx = -se.radius(); dx <= se.radius(); ++dx) {
      cells.push_back(se.at(dx, dy) ? 1 : 0);
      full = full && se.at(dx, dy);
    }
  }
  ojson out{{"structuring_element", se.side()}};
  if (!full) out["structuring_cells"] = std::move(cells);
  out["open_iterations"] = params.morphology.open_iterations;
  out["close_iterations"] = params.morphology.close_iterations;
  out["score_weights"] = {{"area", params.weights.area}, {"intensity", params.weights.intensity}};
  out["min_area_fraction"] = params.min_area_fraction;
  out["merge"] = {{"confidence_floor", merge.confidence_floor}, {"match_iou", merge.match_iou}};
  return out;
}

namespace {

void parse_labeling(const ojson& raw, LabelerParams& params, MergePolicy& merge, Problems& problems) {
  const std::string where = "labeling";
  if (raw.is_null()) return;
  if (!raw.is_object()) {
    problems.add("labeling must be an object");
    return;
  }
  int side = params.morphology.structuring_element.side();
  read_number(raw, "structuring_element", side, problems, where, 1, 99);
  try {
    if (raw.contains("structuring_cells")) {
      params.morphology.structuring_element =
          StructuringElement(side, raw["structuring_cells"].get<std::vector<std::uint8_t>>());
    } else {
      params.morphology.structuring_element = StructuringElement::square(side);
    }
  } catch (const std::exception& e) {
    problems.add(fmt::format("labeling.structuring_element: {}", e.what()));
  }
  read_number(raw, "open_iterations", params.morphology.open_iterations, problems, where, 0, 100);
  read_number(raw, "close_iterations", params.morphology.close_iterations, problems, where, 0, 100);
  read_number(raw, "min_area_fraction", params.min_area_fraction, problems, where, 0.0, 1.0);
  if (raw.contains("score_weights")) {
    const auto& w = raw["score_weights"];
    read_number(w, "area", params.weights.area, problems, where + ".score_weights", 0.0, 1.0);
    read_number(w, "intensity", params.weights.intensity, problems, where + ".score_weights", 0.0, 1.0);
    try {
      params.weights.validate();
    } catch (const ValidationError& e) {
      problems.add(fmt::format("labeling.score_weights: {}", e.what()));
    }
  }
  if (raw.contains("merge")) {
    const auto& m = raw["merge"];
    read_number(m, "confidence_floor", merge.confidence_floor, problems, where + ".merge", 0.0, 1.0);
    read_number(m, "match_iou", merge.match_iou, problems, where + ".merge", 0.0, 1.0);
  }
}

}  // namespace

void labeling_from_json(const ojson& raw, LabelerParams& params, MergePolicy& merge) {
  Problems problems;
  parse_labeling(raw, params, merge, problems);
  if (!problems.empty()) throw ValidationErrors(problems.take());
}

PipelineConfig parse_config(const ojson& doc, const fs::path& base_dir) {
  PipelineConfig config;
  Problems problems;
  if (!doc.is_object()) throw ValidationError("configuration must be a JSON object");
  config.canonical = doc.dump();

  if (doc.contains("dataset_id")) {
    if (doc["dataset_id"].is_string() && !doc["dataset_id"].get<std::string>().empty()) {
      config.dataset_id = doc["dataset_id"].get<std::string>();
    } else {
      problems.add("dataset_id must be a non-empty string");
    }
  }
  if (doc.contains("output")) {
    if (doc["output"].is_string()) {
      config.output = resolve(base_dir, doc["output"].get<std::string>());
    } else {
      problems.add("output must be a path string");
    }
  }

  if (doc.contains("backend")) {
    const auto& b = doc["backend"];
    if (!b.is_object()) {
      problems.add("backend must be an object");
    } else {
      const std::string kind = b.value("kind", std::string("synthetic"));
      if (kind == "synthetic") {
        config.backend.kind = BackendConfig::Kind::synthetic;
      } else if (kind == "remote") {
        config.backend.kind = BackendConfig::Kind::remote;
      } else {
        problems.add(fmt::format("backend.kind '{}' must be synthetic or remote", kind));
      }
      if (b.contains("endpoint")) {
        if (b["endpoint"].is_string()) {
          config.backend.endpoint = b["endpoint"].get<std::string>();
        } else {
          problems.add("backend.endpoint must be a string");
        }
      }
      read_number(b, "concurrency", config.backend.concurrency, problems, "backend", 1, 1024);
      read_number(b, "timeout_s", config.backend.timeout_s, problems, "backend", 1, 86400);
    }
  }
  if (doc.contains("generation")) parse_generation(doc["generation"], base_dir, config.generation, problems, "generation");
  if (doc.contains("labeling")) parse_labeling(doc["labeling"], config.labeling, config.merge, problems);
  read_number(doc, "expansion_cap", config.expansion_cap, problems, "config", 1, 1e12);

  if (!doc.contains("templates") || !doc["templates"].is_array() || doc["templates"].empty()) {
    problems.add("templates must be a non-empty list");
  } else {
    std::set<std::string> ids;
    for (std::size_t i = 0; i < doc["templates"].size(); ++i) {
      try {
        PromptTemplate t = parse_template(doc["templates"][i]);
        if (!ids.insert(t.template_id).second) problems.add(fmt::format("template id '{}' is used twice", t.template_id));
        if (!t.count && t.combination_count() > config.expansion_cap) {
          problems.add(fmt::format("template '{}' expands to {} prompts, above the cap of {}; set \"count\" to sample",
                                   t.template_id, t.combination_count(), config.expansion_cap));
        }
        GenerationSettings g = config.generation;
        const std::string where = fmt::format("template '{}' generation", t.template_id);
        parse_generation(t.generation, base_dir, g, problems, where);
        check_task_fields(g, problems, where);
        config.templates.push_back(std::move(t));
        config.template_settings.push_back(std::move(g));
      } catch (const ValidationErrors& e) {
        for (const auto& m : e.messages()) problems.add(fmt::format("templates[{}]: {}", i, m));
      } catch (const ValidationError& e) {
        problems.add(fmt::format("templates[{}]: {}", i, e.what()));
      }
    }
  }

  if (!problems.empty()) throw ValidationErrors(problems.take());
  return config;
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(fmt::format("cannot open configuration {}", path.string()));
  ojson doc;
  try {
    doc = ojson::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return parse_config(doc, path.parent_path());
}

void apply_environment(PipelineConfig& config) {
  if (const char* endpoint = std::getenv("DIFFUFORGE_ENDPOINT"); endpoint && *endpoint) {
    config.backend.endpoint = endpoint;
  }
}

const GenerationSettings& resolve_generation(const PipelineConfig& config, const std::string& template_id) {
  for (std::size_t i = 0; i < config.templates.size() && i < config.template_settings.size(); ++i) {
    if (config.templates[i].template_id == template_id) return config.template_settings[i];
  }
  throw ValidationError(fmt::format("unknown template '{}'", template_id));
}

std::unique_ptr<DiffusionBackend> make_backend(const BackendConfig& config) {
  if (config.kind == BackendConfig::Kind::synthetic) return std::make_unique<SyntheticBackend>();
  if (config.endpoint.empty()) {
    throw ValidationError("remote backend needs backend.endpoint or DIFFUFORGE_ENDPOINT");
  }
  RemoteOptions options;
  options.timeout = std::chrono::seconds(config.timeout_s);
  options.concurrency = config.concurrency;
  return std::make_unique<RemoteBackend>(config.endpoint, options);
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_expand(const PipelineConfig& config, std::ostream& out) {
  for (const auto& t : config.templates) {
    for (const auto& p : expand_configured(t, config.expansion_cap)) {
      ojson bindings = ojson::object();
      for (const auto& [k, v] : p.bindings) bindings[k] = v;
      out << p.template_id << '\t' << bindings.dump() << '\t' << p.text << '\n';
    }
  }
  return kExitOk;
}

int cmd_generate(const PipelineConfig& config, const fs::path& root, DiffusionBackend& backend) {
  struct Job {
    const PromptTemplate* tmpl;
    std::size_t template_index;
    ExpandedPrompt prompt;
    std::string image_id;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  std::vector<GenerationSettings> settings;
  for (std::size_t ti = 0; ti < config.templates.size(); ++ti) {
    const auto& t = config.templates[ti];
    settings.push_back(resolve_generation(config, t.template_id));
    const auto prompts = expand_configured(t, config.expansion_cap);
    const std::uint64_t base_seed = t.seed.value_or(0);
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      jobs.push_back({&t, ti, prompts[i], fmt::format("{}_{:05d}", t.template_id, i), base_seed + i});
    }
  }

  fs::create_directories(root / layout::kImages);
  fs::create_directories(root / layout::kHeatmaps);

  // Init images and masks are shared per template.
  std::vector<std::optional<ImageRaster>> init_images(settings.size());
  std::vector<std::optional<BinaryMask>> masks(settings.size());
  for (std::size_t i = 0; i < settings.size(); ++i) {
    if (settings[i].init_image) init_images[i] = decode_png_rgb(read_file_bytes(*settings[i].init_image));
    if (settings[i].mask_image) masks[i] = mask_from_png(read_file_bytes(*settings[i].mask_image));
  }

  std::vector<std::optional<DatasetRecord>> records(jobs.size());
  std::atomic<std::size_t> failures{0};
  spdlog::info("generate: {} requests via backend {}", jobs.size(), backend.id());

  parallel_for(jobs.size(), static_cast<std::size_t>(config.backend.concurrency), [&](std::size_t i) {
    const Job& job = jobs[i];
    const GenerationSettings& g = settings[job.template_index];
    try {
      GenerationRequest request;
      request.task = g.task;
      request.prompt = job.prompt;
      request.seed = job.seed;
      request.width = g.width;
      request.height = g.height;
      request.steps = g.steps;
      request.guidance = g.guidance;
      request.strength = g.task == TaskKind::text_to_image ? std::nullopt : g.strength;
      request.init_image = init_images[job.template_index];
      request.mask_image = masks[job.template_index];
      request.inversion_tokens = g.inversion_tokens;

      const GenerationResult result = backend.generate(request);

      DatasetRecord rec;
      rec.image_id = job.image_id;
      rec.image_path = fmt::format("{}/{}.png", layout::kImages, job.image_id);
      rec.width = result.image.width();
      rec.height = result.image.height();
      rec.prompt = job.prompt.text;
      rec.negative_prompt = job.prompt.negative_text.value_or("");
      rec.tokens = job.prompt.tokens_of_interest;
      write_file_bytes(root / rec.image_path, encode_png_rgb(result.image));
      for (std::size_t k = 0; k < rec.tokens.size(); ++k) {
        const auto& token = rec.tokens[k];
        const std::string rel = fmt::format("{}/{}__{}_{}.hm32", layout::kHeatmaps, job.image_id, k, sanitize(token));
        write_hm32(root / rel, result.heatmaps.at(token).raster());
        rec.heatmap_paths[token] = rel;
      }
      rec.provenance = {job.tmpl->template_id, job.prompt.bindings, job.seed, g.task, result.backend_id};
      rec.ground_truth = result.ground_truth;
      records[i] = std::move(rec);
      spdlog::debug("template_id={} seed={} image_id={} generated", job.tmpl->template_id, job.seed, job.image_id);
    } catch (const std::exception& e) {
      ++failures;
      spdlog::error("template_id={} seed={} image_id={} failed: {}", job.tmpl->template_id, job.seed, job.image_id,
                    e.what());
    }
  });

  Manifest manifest;
  manifest.dataset_id = config.dataset_id;
  manifest.created_at = utc_timestamp();
  manifest.config_digest = sha256_hex(config.canonical);
  manifest.backend_id = backend.id();
  manifest.labeling = labeling_to_json(config.labeling, config.merge);
  for (auto& r : records) {
    if (r) manifest.records.push_back(std::move(*r));
  }
  write_manifest(root / layout::kManifest, manifest);

  const std::size_t failed = failures.load();
  spdlog::info("generate: {} succeeded, {} failed", manifest.records.size(), failed);
  if (failed == 0) return kExitOk;
  return manifest.records.empty() ? kExitBackend : kExitPartial;
}

LabelMode label_mode_from_string(const std::string& text) {
  if (text == "unsupervised") return LabelMode::unsupervised;
  if (text == "supervised") return LabelMode::supervised;
  if (text == "hybrid") return LabelMode::hybrid;
  throw ValidationError(fmt::format("unknown label mode '{}' (expected unsupervised, supervised or hybrid)", text));
}

int cmd_label(const fs::path& root, LabelMode mode, const std::optional<fs::path>& predictions) {
  Manifest manifest = read_manifest(root / layout::kManifest);
  LabelerParams params;
  MergePolicy policy;
  labeling_from_json(manifest.labeling, params, policy);

  std::map<std::string, std::vector<LabeledInstance>> supervised;
  if (mode != LabelMode::unsupervised) {
    if (!predictions) throw ValidationError("supervised and hybrid labeling need --predictions");
    std::map<std::string, ImageSize> sizes;
    for (const auto& r : manifest.records) sizes[r.image_id] = {r.width, r.height};
    const auto preds = ingest_predictions(*predictions, sizes, policy.confidence_floor);
    if (preds.empty()) spdlog::warn("label: predictions file {} holds no predictions", predictions->string());
    for (const auto& p : preds) {
      auto& list = supervised[p.image_id];
      list.insert(list.end(), p.instances.begin(), p.instances.end());
    }
  }

  std::vector<std::string> errors(manifest.records.size());
  parallel_for(manifest.records.size(), hardware_workers(), [&](std::size_t i) {
    DatasetRecord& rec = manifest.records[i];
    try {
      std::vector<LabeledInstance> unsup;
      if (mode != LabelMode::supervised) {
        std::map<std::string, Heatmap> heatmaps;
        for (const auto& token : rec.tokens) {
          const auto it = rec.heatmap_paths.find(token);
          if (it == rec.heatmap_paths.end() || !fs::exists(root / it->second)) {
            throw ValidationError(fmt::format("image '{}': missing heatmap for token '{}'", rec.image_id, token));
          }
          heatmaps.emplace(token, normalize_heatmap(read_hm32(root / it->second)));
        }
        unsup = label_heatmaps(rec.tokens, heatmaps, params);
      }
      const auto sup_it = supervised.find(rec.image_id);
      const std::vector<LabeledInstance> sup = sup_it == supervised.end() ? std::vector<LabeledInstance>{} : sup_it->second;
      MergePolicy p = policy;
      p.mode = mode == LabelMode::unsupervised ? MergeMode::unsupervised_only
               : mode == LabelMode::supervised ? MergeMode::supervised_only
                                               : MergeMode::prefer_supervised;
      rec.instances = merge_labels(unsup, sup, p);
      spdlog::debug("template_id={} seed={} image_id={} labeled {} instances", rec.provenance.template_id,
                    rec.provenance.seed, rec.image_id, rec.instances.size());
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  std::vector<std::string> messages;
  for (auto& e : errors) {
    if (!e.empty()) messages.push_back(std::move(e));
  }
  if (!messages.empty()) throw ValidationErrors(std::move(messages));

  write_manifest(root / layout::kManifest, manifest);
  std::size_t total = 0;
  for (const auto& r : manifest.records) total += r.instances.size();
  spdlog::info("label: {} instances over {} records", total, manifest.records.size());
  return kExitOk;
}

int cmd_export(const fs::path& root, const std::vector<std::string>& formats) {
  for (const auto& f : formats) {
    if (f != "coco" && f != "yolo" && f != "masks") {
      throw ValidationError(fmt::format("unknown export format '{}' (expected coco, yolo or masks)", f));
    }
  }
  const Manifest manifest = read_manifest(root / layout::kManifest);
  const ClassRegistry registry = ClassRegistry::from_records(manifest.records);
  for (const auto& f : formats) {
    if (f == "coco") write_coco(manifest.records, registry, root / layout::kCoco);
    if (f == "yolo") write_yolo(manifest.records, registry, root / layout::kYolo);
    if (f == "masks") write_semantic_masks(manifest.records, registry, root / layout::kMasks);
    spdlog::info("export: wrote {} for {} records", f, manifest.records.size());
  }
  return kExitOk;
}

int cmd_visualize(const fs::path& root) {
  const Manifest manifest = read_manifest(root / layout::kManifest);
  fs::create_directories(root / layout::kOverlays);
  std::vector<std::string> errors(manifest.records.size());
  parallel_for(manifest.records.size(), hardware_workers(), [&](std::size_t i) {
    const auto& rec = manifest.records[i];
    try {
      const ImageRaster image = decode_png_rgb(read_file_bytes(root / rec.image_path));
      std::optional<Heatmap> combined;
      FloatRaster max_map(image.width(), image.height(), 0.0f);
      bool any = false;
      for (const auto& [token, rel] : rec.heatmap_paths) {
        if (!fs::exists(root / rel)) continue;
        const Heatmap h = normalize_heatmap(read_hm32(root / rel));
        if (h.width() != image.width() || h.height() != image.height()) continue;
        for (std::size_t k = 0; k < max_map.size(); ++k) {
          max_map.values()[k] = std::max(max_map.values()[k], h.raster().values()[k]);
        }
        any = true;
      }
      if (any) combined = Heatmap(std::move(max_map));
      const ImageRaster overlay = render_overlay(image, rec.instances, combined);
      write_file_bytes(root / layout::kOverlays / (rec.image_id + ".png"), encode_png_rgb(overlay));
    } catch (const std::exception& e) {
      errors[i] = fmt::format("image '{}': {}", rec.image_id, e.what());
    }
  });
  std::vector<std::string> messages;
  for (auto& e : errors) {
    if (!e.empty()) messages.push_back(std::move(e));
  }
  if (!messages.empty()) throw ValidationErrors(std::move(messages));
  spdlog::info("visualize: wrote {} overlays", manifest.records.size());
  return kExitOk;
}

}  // namespace diffuforge
