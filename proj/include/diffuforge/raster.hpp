#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace diffuforge {

// Image coordinates: x grows right, y grows down, (0,0) is the top-left
// pixel center. All rasters are row-major.

/// 8-bit RGB image.
class ImageRaster {
 public:
  ImageRaster() = default;
  ImageRaster(int width, int height);
  ImageRaster(int width, int height, std::vector<std::uint8_t> rgb);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return width_ == 0; }

  const std::uint8_t* pixel(int x, int y) const { return &rgb_[index(x, y)]; }
  std::uint8_t* pixel(int x, int y) { return &rgb_[index(x, y)]; }
  const std::vector<std::uint8_t>& bytes() const noexcept { return rgb_; }

  friend bool operator==(const ImageRaster&, const ImageRaster&) = default;

 private:
  std::size_t index(int x, int y) const {
    return (static_cast<std::size_t>(y) * width_ + x) * 3;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> rgb_;
};

/// Scalar float raster with arbitrary range.
class FloatRaster {
 public:
  FloatRaster() = default;
  FloatRaster(int width, int height, float fill = 0.0f);
  FloatRaster(int width, int height, std::vector<float> values);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return values_.size(); }

  float at(int x, int y) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  float& at(int x, int y) { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  const std::vector<float>& values() const noexcept { return values_; }
  std::vector<float>& values() noexcept { return values_; }

  friend bool operator==(const FloatRaster&, const FloatRaster&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<float> values_;
};

/// Per-token attribution surface with values in [0,1].
///
/// A degenerate heatmap came from a constant input and is all zeros; the
/// labeler emits no instances for it.
class Heatmap {
 public:
  Heatmap() = default;
  /// Validates that every value is finite and inside [0,1].
  explicit Heatmap(FloatRaster values, bool degenerate = false);

  int width() const noexcept { return raster_.width(); }
  int height() const noexcept { return raster_.height(); }
  float at(int x, int y) const { return raster_.at(x, y); }
  const FloatRaster& raster() const noexcept { return raster_; }
  bool degenerate() const noexcept { return degenerate_; }

  friend bool operator==(const Heatmap&, const Heatmap&) = default;

 private:
  FloatRaster raster_;
  bool degenerate_ = false;
};

/// Boolean raster, true = foreground.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int width, int height, bool fill = false);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }

  bool at(int x, int y) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int x, int y, bool v = true) {
    bits_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0;
  }
  /// Out-of-range coordinates read as `outside`.
  bool at_or(int x, int y, bool outside) const {
    if (x < 0 || y < 0 || x >= width_ || y >= height_) return outside;
    return at(x, y);
  }

  std::size_t count() const;
  BinaryMask complement() const;
  const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Axis-aligned box in the pixel-count convention: it covers columns
/// x .. x+width-1 and rows y .. y+height-1.
struct BoundingBox {
  int x = 0;
  int y = 0;
  int width = 1;
  int height = 1;

  long long area() const noexcept { return static_cast<long long>(width) * height; }
  int x_max() const noexcept { return x + width - 1; }
  int y_max() const noexcept { return y + height - 1; }
  bool fits(int image_width, int image_height) const noexcept {
    return width >= 1 && height >= 1 && x >= 0 && y >= 0 && x_max() < image_width &&
           y_max() < image_height;
  }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

/// Closed ring of pixel-center vertices (implicitly closed, last != first).
/// Traced outer contours run counter-clockwise on screen (y down), which
/// is a negative signed shoelace area in raw coordinates.
struct Polygon {
  std::vector<Point> vertices;
  friend bool operator==(const Polygon&, const Polygon&) = default;
};

enum class LabelSource { unsupervised, supervised };

const char* to_string(LabelSource source);
LabelSource label_source_from_string(const std::string& text);

struct LabeledInstance {
  std::string class_token;
  std::vector<Polygon> polygons;
  BoundingBox bbox;
  double score = 0.0;
  LabelSource source = LabelSource::unsupervised;

  friend bool operator==(const LabeledInstance&, const LabeledInstance&) = default;
};

enum class TaskKind { text_to_image, image_to_image, inpaint };

const char* to_string(TaskKind task);
/// Throws ValidationError for unknown names.
TaskKind task_kind_from_string(const std::string& text);

struct Provenance {
  std::string template_id;
  std::map<std::string, std::string> attribute_bindings;
  std::uint64_t seed = 0;
  TaskKind task = TaskKind::text_to_image;
  std::string backend_id;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

/// Ground truth of one object drawn by the synthetic backend.
struct SyntheticObject {
  std::string token;
  double center_x = 0.0;
  double center_y = 0.0;
  double semi_major = 0.0;
  double semi_minor = 0.0;
  double rotation = 0.0;  // radians
  BoundingBox bbox;       // tight box of pixels inside the ellipse

  friend bool operator==(const SyntheticObject&, const SyntheticObject&) = default;
};

struct DatasetRecord {
  std::string image_id;
  std::string image_path;  // relative to the dataset root
  int width = 0;
  int height = 0;
  std::string prompt;
  std::string negative_prompt;
  std::vector<std::string> tokens;
  std::map<std::string, std::string> heatmap_paths;  // token -> relative path
  std::vector<LabeledInstance> instances;
  Provenance provenance;
  std::vector<SyntheticObject> ground_truth;

  friend bool operator==(const DatasetRecord&, const DatasetRecord&) = default;
};

}  // namespace diffuforge
