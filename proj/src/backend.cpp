#include "diffuforge/backend.hpp"

#include <array>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <fmt/format.h>
#include <httplib.h>

#include "diffuforge/codec.hpp"
#include "diffuforge/heatmap.hpp"

namespace diffuforge {

BackendError::BackendError(Kind kind, const std::string& message, std::string template_id,
                           std::uint64_t seed)
    : Error(fmt::format("[{}] {} (template_id={}, seed={})", to_string(kind), message,
                        template_id.empty() ? "-" : template_id, seed)),
      kind_(kind),
      template_id_(std::move(template_id)),
      seed_(seed) {}

const char* to_string(BackendError::Kind kind) {
  switch (kind) {
    case BackendError::Kind::invalid_request: return "invalid_request";
    case BackendError::Kind::unavailable: return "unavailable";
    case BackendError::Kind::status: return "status";
    case BackendError::Kind::protocol: return "protocol";
    case BackendError::Kind::dimension_mismatch: return "dimension_mismatch";
  }
  return "unknown";
}

void validate_request(const GenerationRequest& r) {
  auto fail = [&](const std::string& msg) {
    throw BackendError(BackendError::Kind::invalid_request, msg, r.prompt.template_id, r.seed);
  };
  if (r.width < 8 || r.height < 8 || r.width % 8 != 0 || r.height % 8 != 0) {
    fail(fmt::format("width and height must be positive multiples of 8, got {}x{}", r.width, r.height));
  }
  if (r.steps <= 0) fail("steps must be positive");
  if (!(r.guidance > 0.0)) fail("guidance must be positive");
  const bool needs_init = r.task != TaskKind::text_to_image;
  if (needs_init && !r.init_image) fail(fmt::format("{} requires init_image", to_string(r.task)));
  if (!needs_init && r.init_image) fail("text_to_image does not take init_image");
  if (r.task == TaskKind::inpaint && !r.mask_image) fail("inpaint requires mask_image");
  if (r.task != TaskKind::inpaint && r.mask_image) fail(fmt::format("{} does not take mask_image", to_string(r.task)));
  if (needs_init != r.strength.has_value()) {
    fail(needs_init ? fmt::format("{} requires strength", to_string(r.task))
                    : std::string("text_to_image does not take strength"));
  }
  if (r.strength && !(*r.strength >= 0.0 && *r.strength <= 1.0)) fail("strength must lie in [0,1]");
  if (r.init_image && (r.init_image->width() != r.width || r.init_image->height() != r.height)) {
    fail(fmt::format("init_image is {}x{}, request is {}x{}", r.init_image->width(), r.init_image->height(),
                     r.width, r.height));
  }
  if (r.mask_image && (r.mask_image->width() != r.width || r.mask_image->height() != r.height)) {
    fail(fmt::format("mask_image is {}x{}, request is {}x{}", r.mask_image->width(), r.mask_image->height(),
                     r.width, r.height));
  }
  for (const auto& inv : r.inversion_tokens) {
    if (inv.token.empty()) fail("inversion token must be non-empty");
  }
}

void validate_result(const GenerationResult& result) {
  const auto& r = result.echo;
  if (result.image.width() != r.width || result.image.height() != r.height) {
    throw BackendError(BackendError::Kind::dimension_mismatch,
                       fmt::format("image is {}x{}, requested {}x{}", result.image.width(),
                                   result.image.height(), r.width, r.height),
                       r.prompt.template_id, r.seed);
  }
  for (const auto& token : r.prompt.tokens_of_interest) {
    const auto it = result.heatmaps.find(token);
    if (it == result.heatmaps.end()) {
      throw BackendError(BackendError::Kind::protocol, fmt::format("missing heatmap for token '{}'", token),
                         r.prompt.template_id, r.seed);
    }
    if (it->second.width() != r.width || it->second.height() != r.height) {
      throw BackendError(BackendError::Kind::dimension_mismatch,
                         fmt::format("heatmap for '{}' is {}x{}, image is {}x{}", token, it->second.width(),
                                     it->second.height(), r.width, r.height),
                         r.prompt.template_id, r.seed);
    }
  }
}

GenerationResult DiffusionBackend::generate(const GenerationRequest& request) {
  validate_request(request);
  GenerationResult result = do_generate(request);
  validate_result(result);
  return result;
}

// ---------------------------------------------------------------------------
// Synthetic backend

double ellipse_radius(const SyntheticObject& o, double x, double y) {
  const double dx = x - o.center_x;
  const double dy = y - o.center_y;
  const double c = std::cos(o.rotation);
  const double s = std::sin(o.rotation);
  const double u = (dx * c + dy * s) / o.semi_major;
  const double v = (-dx * s + dy * c) / o.semi_minor;
  return std::sqrt(u * u + v * v);
}

double synthetic_heat(double radius) {
  if (radius <= 1.0) return 1.0 - 0.5 * radius * radius;
  const double d = (radius - 1.0) / 0.1;
  return 0.5 * std::exp(-d * d);
}

namespace {

std::uint64_t request_digest(const GenerationRequest& r) {
  std::string key = fmt::format("{}|{}|{}x{}", to_string(r.task), r.prompt.text, r.width, r.height);
  for (const auto& t : r.prompt.tokens_of_interest) key += "|" + t;
  const std::string hex = sha256_hex(key);
  return std::stoull(hex.substr(0, 16), nullptr, 16);
}

BinaryMask ellipse_mask(const SyntheticObject& o, int width, int height) {
  BinaryMask m(width, height);
  for (int y = o.bbox.y; y <= o.bbox.y_max(); ++y) {
    for (int x = o.bbox.x; x <= o.bbox.x_max(); ++x) {
      if (ellipse_radius(o, x, y) <= 1.0) m.set(x, y);
    }
  }
  return m;
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < a.bits().size(); ++i) {
    inter += a.bits()[i] & b.bits()[i];
    uni += a.bits()[i] | b.bits()[i];
  }
  return uni == 0 ? 0.0 : double(inter) / double(uni);
}

SyntheticObject place_ellipse(std::mt19937_64& rng, const std::string& token, int width, int height) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double side = std::min(width, height);
  SyntheticObject o;
  o.token = token;
  o.semi_major = std::max(2.0, side * (0.10 + 0.12 * unit(rng)));
  o.semi_minor = std::max(1.5, o.semi_major * (0.55 + 0.45 * unit(rng)));
  o.rotation = std::numbers::pi * unit(rng);
  const double c = std::cos(o.rotation);
  const double s = std::sin(o.rotation);
  const double ex = std::sqrt(o.semi_major * o.semi_major * c * c + o.semi_minor * o.semi_minor * s * s);
  const double ey = std::sqrt(o.semi_major * o.semi_major * s * s + o.semi_minor * o.semi_minor * c * c);
  const int margin_x = static_cast<int>(std::ceil(ex)) + 1;
  const int margin_y = static_cast<int>(std::ceil(ey)) + 1;
  const int lo_x = std::min(margin_x, width / 2);
  const int hi_x = std::max(lo_x, width - 1 - margin_x);
  const int lo_y = std::min(margin_y, height / 2);
  const int hi_y = std::max(lo_y, height - 1 - margin_y);
  // Integer centers put a pixel exactly at the heatmap peak.
  o.center_x = lo_x + std::floor(unit(rng) * (hi_x - lo_x + 1));
  o.center_y = lo_y + std::floor(unit(rng) * (hi_y - lo_y + 1));

  int x0 = width, y0 = height, x1 = -1, y1 = -1;
  for (int y = std::max(0, int(o.center_y - ey) - 1); y <= std::min(height - 1, int(o.center_y + ey) + 1); ++y) {
    for (int x = std::max(0, int(o.center_x - ex) - 1); x <= std::min(width - 1, int(o.center_x + ex) + 1); ++x) {
      if (ellipse_radius(o, x, y) <= 1.0) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
    }
  }
  o.bbox = BoundingBox{x0, y0, x1 - x0 + 1, y1 - y0 + 1};
  return o;
}

std::array<std::uint8_t, 3> random_color(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> channel(0, 255);
  return {static_cast<std::uint8_t>(channel(rng)), static_cast<std::uint8_t>(channel(rng)),
          static_cast<std::uint8_t>(channel(rng))};
}

}  // namespace

GenerationResult SyntheticBackend::do_generate(const GenerationRequest& r) {
  std::mt19937_64 rng(r.seed ^ request_digest(r));
  const int w = r.width;
  const int h = r.height;

  ImageRaster render(w, h);
  const auto top = random_color(rng);
  const auto bottom = random_color(rng);
  for (int y = 0; y < h; ++y) {
    const double t = h > 1 ? double(y) / (h - 1) : 0.0;
    for (int x = 0; x < w; ++x) {
      auto* px = render.pixel(x, y);
      for (int c = 0; c < 3; ++c) px[c] = static_cast<std::uint8_t>(std::lround(top[c] + (bottom[c] - top[c]) * t));
    }
  }

  GenerationResult result;
  std::vector<BinaryMask> placed;
  for (const auto& token : r.prompt.tokens_of_interest) {
    SyntheticObject best;
    BinaryMask best_mask;
    double best_overlap = 2.0;
    for (int attempt = 0; attempt < 200 && best_overlap >= 0.1; ++attempt) {
      SyntheticObject candidate = place_ellipse(rng, token, w, h);
      BinaryMask mask = ellipse_mask(candidate, w, h);
      double overlap = 0.0;
      for (const auto& other : placed) overlap = std::max(overlap, mask_iou(mask, other));
      if (overlap < best_overlap) {
        best_overlap = overlap;
        best = std::move(candidate);
        best_mask = std::move(mask);
      }
    }
    const auto color = random_color(rng);
    for (int y = best.bbox.y; y <= best.bbox.y_max(); ++y) {
      for (int x = best.bbox.x; x <= best.bbox.x_max(); ++x) {
        if (best_mask.at(x, y)) std::copy(color.begin(), color.end(), render.pixel(x, y));
      }
    }
    FloatRaster heat(w, h);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) heat.at(x, y) = static_cast<float>(synthetic_heat(ellipse_radius(best, x, y)));
    }
    result.heatmaps.emplace(token, Heatmap(std::move(heat)));
    placed.push_back(std::move(best_mask));
    result.ground_truth.push_back(std::move(best));
  }

  if (r.task == TaskKind::text_to_image) {
    result.image = std::move(render);
  } else {
    const double s = *r.strength;
    ImageRaster out = *r.init_image;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (r.task == TaskKind::inpaint && !r.mask_image->at(x, y)) continue;
        auto* px = out.pixel(x, y);
        const auto* src = render.pixel(x, y);
        for (int c = 0; c < 3; ++c) px[c] = static_cast<std::uint8_t>(std::lround(px[c] * (1.0 - s) + src[c] * s));
      }
    }
    result.image = std::move(out);
  }
  result.echo = r;
  result.backend_id = id();
  return result;
}

// ---------------------------------------------------------------------------
// Wire protocol

nlohmann::ordered_json encode_wire_request(const GenerationRequest& r) {
  nlohmann::ordered_json body;
  body["task"] = to_string(r.task);
  body["prompt"] = r.prompt.text;
  if (r.prompt.negative_text) body["negative_prompt"] = *r.prompt.negative_text;
  body["seed"] = r.seed;
  body["width"] = r.width;
  body["height"] = r.height;
  body["steps"] = r.steps;
  body["guidance"] = r.guidance;
  if (r.strength) body["strength"] = *r.strength;
  if (r.init_image) body["init_image_png_b64"] = base64_encode(encode_png_rgb(*r.init_image));
  if (r.mask_image) body["mask_png_b64"] = base64_encode(mask_to_png(*r.mask_image));
  body["tokens_of_interest"] = r.prompt.tokens_of_interest;
  auto inversions = nlohmann::ordered_json::array();
  for (const auto& inv : r.inversion_tokens) {
    std::vector<std::uint8_t> bytes;
    try {
      bytes = read_file_bytes(inv.embedding_ref);
    } catch (const Error& e) {
      throw BackendError(BackendError::Kind::invalid_request,
                         fmt::format("embedding for '{}': {}", inv.token, e.what()), r.prompt.template_id, r.seed);
    }
    inversions.push_back({{"token", inv.token}, {"embedding_b64", base64_encode(bytes)}});
  }
  body["inversion_tokens"] = std::move(inversions);
  return body;
}

namespace {

const nlohmann::json& require(const nlohmann::json& obj, const std::string& field, const std::string& path,
                              const GenerationRequest& r) {
  if (!obj.is_object() || !obj.contains(field)) {
    throw BackendError(BackendError::Kind::protocol, fmt::format("response lacks field '{}'", path),
                       r.prompt.template_id, r.seed);
  }
  return obj[field];
}

std::vector<std::uint8_t> require_b64(const nlohmann::json& obj, const std::string& field, const std::string& path,
                                      const GenerationRequest& r) {
  const auto& v = require(obj, field, path, r);
  if (!v.is_string()) {
    throw BackendError(BackendError::Kind::protocol, fmt::format("field '{}' must be a string", path),
                       r.prompt.template_id, r.seed);
  }
  try {
    return base64_decode(v.get<std::string>());
  } catch (const FormatError& e) {
    throw BackendError(BackendError::Kind::protocol, fmt::format("field '{}': {}", path, e.what()),
                       r.prompt.template_id, r.seed);
  }
}

int require_dim(const nlohmann::json& obj, const std::string& field, const std::string& path,
                const GenerationRequest& r) {
  const auto& v = require(obj, field, path, r);
  if (!v.is_number_integer() || v.get<long long>() < 1 || v.get<long long>() > 65536) {
    throw BackendError(BackendError::Kind::protocol, fmt::format("field '{}' must be a positive integer", path),
                       r.prompt.template_id, r.seed);
  }
  return v.get<int>();
}

}  // namespace

GenerationResult decode_wire_response(const nlohmann::json& body, const GenerationRequest& r) {
  auto protocol = [&](const std::string& msg) {
    return BackendError(BackendError::Kind::protocol, msg, r.prompt.template_id, r.seed);
  };
  GenerationResult result;
  result.echo = r;

  const auto png = require_b64(body, "image_png_b64", "image_png_b64", r);
  try {
    result.image = decode_png_rgb(png);
  } catch (const Error& e) {
    throw protocol(fmt::format("field 'image_png_b64': {}", e.what()));
  }
  if (result.image.width() != r.width || result.image.height() != r.height) {
    throw BackendError(BackendError::Kind::dimension_mismatch,
                       fmt::format("image is {}x{}, requested {}x{}", result.image.width(), result.image.height(),
                                   r.width, r.height),
                       r.prompt.template_id, r.seed);
  }

  const auto& backend_id = require(body, "backend_id", "backend_id", r);
  if (!backend_id.is_string()) throw protocol("field 'backend_id' must be a string");
  result.backend_id = backend_id.get<std::string>();

  const auto& entries = require(body, "heatmaps", "heatmaps", r);
  if (!entries.is_array()) throw protocol("field 'heatmaps' must be a list");
  std::map<std::string, std::vector<FloatRaster>> raw_maps;
  std::map<std::string, FloatRaster> aggregated;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const std::string path = fmt::format("heatmaps[{}]", i);
    const auto& token = require(e, "token", path + ".token", r);
    if (!token.is_string()) throw protocol(fmt::format("field '{}.token' must be a string", path));
    const int w = require_dim(e, "width", path + ".width", r);
    const int h = require_dim(e, "height", path + ".height", r);
    const auto bytes = require_b64(e, "data_b64", path + ".data_b64", r);
    const auto& pre = require(e, "pre_aggregated", path + ".pre_aggregated", r);
    if (!pre.is_boolean()) throw protocol(fmt::format("field '{}.pre_aggregated' must be a boolean", path));
    FloatRaster map;
    try {
      map = decode_f32_le(bytes, w, h);
    } catch (const FormatError& err) {
      throw protocol(fmt::format("field '{}.data_b64': {}", path, err.what()));
    }
    const auto name = token.get<std::string>();
    if (pre.get<bool>()) {
      if (w != r.width || h != r.height) {
        throw BackendError(BackendError::Kind::dimension_mismatch,
                           fmt::format("pre-aggregated heatmap '{}' is {}x{}, image is {}x{}", name, w, h, r.width,
                                       r.height),
                           r.prompt.template_id, r.seed);
      }
      if (aggregated.count(name) || raw_maps.count(name)) {
        throw protocol(fmt::format("token '{}' mixes or repeats pre-aggregated heatmaps", name));
      }
      aggregated.emplace(name, std::move(map));
    } else {
      if (aggregated.count(name)) throw protocol(fmt::format("token '{}' mixes pre-aggregated and raw heatmaps", name));
      raw_maps[name].push_back(std::move(map));
    }
  }

  for (const auto& token : r.prompt.tokens_of_interest) {
    try {
      if (const auto it = aggregated.find(token); it != aggregated.end()) {
        result.heatmaps.emplace(token, normalize_heatmap(it->second));
      } else if (const auto raw = raw_maps.find(token); raw != raw_maps.end()) {
        result.heatmaps.emplace(token, aggregate_heatmaps(raw->second, r.width, r.height));
      } else {
        throw protocol(fmt::format("missing heatmap for token '{}'", token));
      }
    } catch (const ValidationError& e) {
      throw protocol(fmt::format("heatmap for token '{}': {}", token, e.what()));
    }
  }
  return result;
}

GenerationRequest decode_wire_request(const nlohmann::json& body) {
  GenerationRequest r;
  try {
    r.task = task_kind_from_string(body.at("task").get<std::string>());
    r.prompt.text = body.at("prompt").get<std::string>();
    if (body.contains("negative_prompt")) r.prompt.negative_text = body["negative_prompt"].get<std::string>();
    r.seed = body.at("seed").get<std::uint64_t>();
    r.width = body.at("width").get<int>();
    r.height = body.at("height").get<int>();
    r.steps = body.at("steps").get<int>();
    r.guidance = body.at("guidance").get<double>();
    if (body.contains("strength")) r.strength = body["strength"].get<double>();
    if (body.contains("init_image_png_b64")) {
      r.init_image = decode_png_rgb(base64_decode(body["init_image_png_b64"].get<std::string>()));
    }
    if (body.contains("mask_png_b64")) r.mask_image = mask_from_png(base64_decode(body["mask_png_b64"].get<std::string>()));
    r.prompt.tokens_of_interest = body.at("tokens_of_interest").get<std::vector<std::string>>();
    for (const auto& inv : body.at("inversion_tokens")) {
      r.inversion_tokens.push_back({inv.at("token").get<std::string>(), inv.at("embedding_b64").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("malformed generate request: {}", e.what()));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Remote client

RemoteBackend::RemoteBackend(std::string endpoint, RemoteOptions options)
    : endpoint_(std::move(endpoint)),
      options_(options),
      in_flight_(std::make_unique<std::counting_semaphore<>>(std::max(1, options.concurrency))) {
  while (!endpoint_.empty() && endpoint_.back() == '/') endpoint_.pop_back();
  if (endpoint_.empty()) throw ValidationError("remote endpoint must not be empty");
}

GenerationResult RemoteBackend::do_generate(const GenerationRequest& r) {
  const std::string payload = encode_wire_request(r).dump();

  in_flight_->acquire();
  struct Release {
    std::counting_semaphore<>* s;
    ~Release() { s->release(); }
  } release{in_flight_.get()};

  httplib::Client client(endpoint_);
  if (!client.is_valid()) {
    throw BackendError(BackendError::Kind::unavailable, fmt::format("invalid endpoint '{}'", endpoint_),
                       r.prompt.template_id, r.seed);
  }
  client.set_connection_timeout(options_.timeout);
  client.set_read_timeout(options_.timeout);
  client.set_write_timeout(options_.timeout);

  httplib::Result response;
  // One retry for transport failures; protocol problems are not retried.
  for (int attempt = 0; attempt < 2; ++attempt) {
    response = client.Post("/v1/generate", payload, "application/json");
    if (response) break;
  }
  if (!response) {
    throw BackendError(BackendError::Kind::unavailable,
                       fmt::format("POST {}/v1/generate failed: {}", endpoint_, httplib::to_string(response.error())),
                       r.prompt.template_id, r.seed);
  }
  if (response->status < 200 || response->status >= 300) {
    throw BackendError(BackendError::Kind::status,
                       fmt::format("POST {}/v1/generate returned HTTP {}: {}", endpoint_, response->status,
                                   response->body.substr(0, 200)),
                       r.prompt.template_id, r.seed);
  }
  nlohmann::json body;
  try {
    body = nlohmann::json::parse(response->body);
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(BackendError::Kind::protocol, fmt::format("response is not JSON: {}", e.what()),
                       r.prompt.template_id, r.seed);
  }
  return decode_wire_response(body, r);
}

}  // namespace diffuforge
