#include "diffuforge/raster.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "diffuforge/error.hpp"

namespace diffuforge {

ValidationErrors::ValidationErrors(std::vector<std::string> messages)
    : ValidationError([&] {
        std::string joined;
        for (const auto& m : messages) {
          if (!joined.empty()) joined += "; ";
          joined += m;
        }
        return joined;
      }()),
      messages_(std::move(messages)) {}

namespace {

void check_dimensions(int width, int height, const char* what) {
  if (width < 1 || height < 1) {
    throw ValidationError(fmt::format("{} dimensions must be >= 1, got {}x{}", what, width, height));
  }
}

}  // namespace

ImageRaster::ImageRaster(int width, int height) : width_(width), height_(height) {
  check_dimensions(width, height, "image");
  rgb_.assign(static_cast<std::size_t>(width) * height * 3, 0);
}

ImageRaster::ImageRaster(int width, int height, std::vector<std::uint8_t> rgb)
    : width_(width), height_(height), rgb_(std::move(rgb)) {
  check_dimensions(width, height, "image");
  if (rgb_.size() != static_cast<std::size_t>(width) * height * 3) {
    throw ValidationError(fmt::format("image buffer holds {} bytes, expected {}", rgb_.size(),
                                      static_cast<std::size_t>(width) * height * 3));
  }
}

FloatRaster::FloatRaster(int width, int height, float fill) : width_(width), height_(height) {
  check_dimensions(width, height, "raster");
  values_.assign(static_cast<std::size_t>(width) * height, fill);
}

FloatRaster::FloatRaster(int width, int height, std::vector<float> values)
    : width_(width), height_(height), values_(std::move(values)) {
  check_dimensions(width, height, "raster");
  if (values_.size() != static_cast<std::size_t>(width) * height) {
    throw ValidationError(fmt::format("raster holds {} values, expected {}", values_.size(),
                                      static_cast<std::size_t>(width) * height));
  }
}

Heatmap::Heatmap(FloatRaster values, bool degenerate)
    : raster_(std::move(values)), degenerate_(degenerate) {
  const auto& v = raster_.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i]) || v[i] < 0.0f || v[i] > 1.0f) {
      throw ValidationError(fmt::format("heatmap value {} at ({}, {}) is outside [0,1]", v[i],
                                        i % raster_.width(), i / raster_.width()));
    }
  }
}

BinaryMask::BinaryMask(int width, int height, bool fill) : width_(width), height_(height) {
  check_dimensions(width, height, "mask");
  bits_.assign(static_cast<std::size_t>(width) * height, fill ? 1 : 0);
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1));
}

BinaryMask BinaryMask::complement() const {
  BinaryMask out = *this;
  for (auto& b : out.bits_) b = b ? 0 : 1;
  return out;
}

const char* to_string(LabelSource source) {
  return source == LabelSource::supervised ? "supervised" : "unsupervised";
}

LabelSource label_source_from_string(const std::string& text) {
  if (text == "supervised") return LabelSource::supervised;
  if (text == "unsupervised") return LabelSource::unsupervised;
  throw ValidationError(fmt::format("unknown label source '{}'", text));
}

const char* to_string(TaskKind task) {
  switch (task) {
    case TaskKind::text_to_image: return "text_to_image";
    case TaskKind::image_to_image: return "image_to_image";
    case TaskKind::inpaint: return "inpaint";
  }
  return "text_to_image";
}

TaskKind task_kind_from_string(const std::string& text) {
  if (text == "text_to_image") return TaskKind::text_to_image;
  if (text == "image_to_image") return TaskKind::image_to_image;
  if (text == "inpaint") return TaskKind::inpaint;
  throw ValidationError(fmt::format("unknown task '{}'", text));
}

}  // namespace diffuforge
