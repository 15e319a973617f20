#include "diffuforge/heatmap.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

#include "diffuforge/error.hpp"

namespace diffuforge {

Heatmap normalize_heatmap(const FloatRaster& raw) {
  const auto& v = raw.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw ValidationError(fmt::format("non-finite heatmap value at ({}, {})", i % raw.width(),
                                        i / raw.width()));
    }
  }
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (hi == lo) {
    return Heatmap(FloatRaster(raw.width(), raw.height(), 0.0f), true);
  }
  const double range = hi - lo;
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::clamp(static_cast<float>((v[i] - lo) / range), 0.0f, 1.0f);
  }
  return Heatmap(FloatRaster(raw.width(), raw.height(), std::move(out)));
}

FloatRaster upscale_bilinear(const FloatRaster& src, int target_width, int target_height) {
  if (target_width < 1 || target_height < 1) {
    throw ValidationError(
        fmt::format("resample target must be >= 1x1, got {}x{}", target_width, target_height));
  }
  FloatRaster out(target_width, target_height);
  const double sx = target_width > 1 ? double(src.width() - 1) / (target_width - 1) : 0.0;
  const double sy = target_height > 1 ? double(src.height() - 1) / (target_height - 1) : 0.0;
  for (int y = 0; y < target_height; ++y) {
    const double fy = y * sy;
    const int y0 = std::min(static_cast<int>(fy), src.height() - 1);
    const int y1 = std::min(y0 + 1, src.height() - 1);
    const double ty = fy - y0;
    for (int x = 0; x < target_width; ++x) {
      const double fx = x * sx;
      const int x0 = std::min(static_cast<int>(fx), src.width() - 1);
      const int x1 = std::min(x0 + 1, src.width() - 1);
      const double tx = fx - x0;
      const double top = src.at(x0, y0) + (double(src.at(x1, y0)) - src.at(x0, y0)) * tx;
      const double bottom = src.at(x0, y1) + (double(src.at(x1, y1)) - src.at(x0, y1)) * tx;
      out.at(x, y) = static_cast<float>(top + (bottom - top) * ty);
    }
  }
  return out;
}

Heatmap aggregate_heatmaps(std::span<const FloatRaster> maps, int target_width, int target_height) {
  if (maps.empty()) throw ValidationError("cannot aggregate an empty list of heatmaps");
  // Accumulate in double so the sum does not depend on the input order
  // beyond the last bit.
  std::vector<double> sum(static_cast<std::size_t>(target_width) * target_height, 0.0);
  for (const auto& map : maps) {
    const FloatRaster scaled = (map.width() == target_width && map.height() == target_height)
                                   ? map
                                   : upscale_bilinear(map, target_width, target_height);
    const auto& v = scaled.values();
    for (std::size_t i = 0; i < v.size(); ++i) sum[i] += v[i];
  }
  std::vector<float> as_float(sum.begin(), sum.end());
  return normalize_heatmap(FloatRaster(target_width, target_height, std::move(as_float)));
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes[offset + i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_hm32(const FloatRaster& raster) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + raster.size() * 4);
  put_u32(out, static_cast<std::uint32_t>(raster.width()));
  put_u32(out, static_cast<std::uint32_t>(raster.height()));
  for (float f : raster.values()) put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

FloatRaster decode_f32_le(std::span<const std::uint8_t> bytes, int width, int height) {
  const std::size_t expected = static_cast<std::size_t>(width) * height * 4;
  if (width < 1 || height < 1 || bytes.size() != expected) {
    throw FormatError(fmt::format("float payload holds {} bytes, expected {} for {}x{}",
                                  bytes.size(), expected, width, height));
  }
  std::vector<float> values(static_cast<std::size_t>(width) * height);
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = std::bit_cast<float>(get_u32(bytes, i * 4));
  }
  return FloatRaster(width, height, std::move(values));
}

FloatRaster decode_hm32(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw FormatError("hm32 header truncated");
  const std::uint32_t width = get_u32(bytes, 0);
  const std::uint32_t height = get_u32(bytes, 4);
  if (width == 0 || height == 0 || width > (1u << 16) || height > (1u << 16)) {
    throw FormatError(fmt::format("hm32 header has invalid dimensions {}x{}", width, height));
  }
  return decode_f32_le(bytes.subspan(8), static_cast<int>(width), static_cast<int>(height));
}

void write_hm32(const std::filesystem::path& path, const FloatRaster& raster) {
  const auto bytes = encode_hm32(raster);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot open {} for writing", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(fmt::format("failed writing {}", path.string()));
}

FloatRaster read_hm32(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot open {}", path.string()));
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_hm32(bytes);
  } catch (const FormatError& e) {
    throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

}  // namespace diffuforge
