#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffuforge/error.hpp"
#include "diffuforge/raster.hpp"
#include "diffuforge/templating.hpp"

namespace diffuforge {

/// Textual-inversion embedding attached to a request. The file is
/// forwarded as opaque bytes; the pipeline never interprets it.
struct InversionToken {
  std::string token;
  std::filesystem::path embedding_ref;
  friend bool operator==(const InversionToken&, const InversionToken&) = default;
};

struct GenerationRequest {
  TaskKind task = TaskKind::text_to_image;
  ExpandedPrompt prompt;
  std::uint64_t seed = 0;
  int width = 512;
  int height = 512;
  int steps = 30;
  double guidance = 7.5;
  std::optional<ImageRaster> init_image;  // image_to_image, inpaint
  std::optional<BinaryMask> mask_image;   // inpaint
  std::optional<double> strength;         // present iff task != text_to_image
  std::vector<InversionToken> inversion_tokens;

  friend bool operator==(const GenerationRequest&, const GenerationRequest&) = default;
};

struct GenerationResult {
  ImageRaster image;
  std::map<std::string, Heatmap> heatmaps;  // token -> map at image size
  GenerationRequest echo;
  std::string backend_id;
  /// Only the synthetic backend fills this.
  std::vector<SyntheticObject> ground_truth;
};

class BackendError : public Error {
 public:
  enum class Kind {
    invalid_request,    // precondition failed before dispatch
    unavailable,        // transport failure or timeout
    status,             // non-success HTTP status
    protocol,           // malformed or incomplete response
    dimension_mismatch  // response geometry disagrees with the request
  };

  BackendError(Kind kind, const std::string& message, std::string template_id = {},
               std::uint64_t seed = 0);

  Kind kind() const noexcept { return kind_; }
  const std::string& template_id() const noexcept { return template_id_; }
  std::uint64_t seed() const noexcept { return seed_; }

 private:
  Kind kind_;
  std::string template_id_;
  std::uint64_t seed_;
};

const char* to_string(BackendError::Kind kind);

/// Throws BackendError(invalid_request) when a task-conditional field is
/// missing or extra, dimensions are not multiples of 8, or steps/guidance
/// are not positive.
void validate_request(const GenerationRequest& request);

/// Throws BackendError(protocol | dimension_mismatch) unless every token of
/// interest has a heatmap at the image size.
void validate_result(const GenerationResult& result);

class DiffusionBackend {
 public:
  virtual ~DiffusionBackend() = default;

  /// Validates the request, dispatches, and validates the result.
  GenerationResult generate(const GenerationRequest& request);
  virtual std::string id() const = 0;

 protected:
  virtual GenerationResult do_generate(const GenerationRequest& request) = 0;
};

/// Deterministic stand-in for a diffusion model. Each token of interest is
/// drawn as a seeded ellipse, with a heatmap that is 1 at the ellipse
/// center, 0.5 on its rim and decays quickly outside.
class SyntheticBackend final : public DiffusionBackend {
 public:
  std::string id() const override { return "synthetic-v1"; }

 protected:
  GenerationResult do_generate(const GenerationRequest& request) override;
};

/// Normalized elliptical radius of (x, y): 1 on the rim of `object`.
double ellipse_radius(const SyntheticObject& object, double x, double y);
/// Heatmap profile used by the synthetic backend as a function of the
/// normalized radius.
double synthetic_heat(double radius);

struct RemoteOptions {
  std::chrono::seconds timeout{300};
  int concurrency = 4;
};

/// Client for the `/v1/generate` wire protocol.
class RemoteBackend final : public DiffusionBackend {
 public:
  RemoteBackend(std::string endpoint, RemoteOptions options = {});

  std::string id() const override { return "remote:" + endpoint_; }
  const std::string& endpoint() const noexcept { return endpoint_; }

 protected:
  GenerationResult do_generate(const GenerationRequest& request) override;

 private:
  std::string endpoint_;
  RemoteOptions options_;
  std::unique_ptr<std::counting_semaphore<>> in_flight_;
};

/// Request body for POST /v1/generate. Reads inversion embedding files.
nlohmann::ordered_json encode_wire_request(const GenerationRequest& request);

/// Decodes a response body, aggregating unaggregated heatmap lists and
/// normalizing pre-aggregated ones.
GenerationResult decode_wire_response(const nlohmann::json& body, const GenerationRequest& request);

/// Inverse of encode_wire_request, for servers and tests. Embedding bytes
/// are not materialized; `embedding_ref` holds the base64 text.
GenerationRequest decode_wire_request(const nlohmann::json& body);

}  // namespace diffuforge
