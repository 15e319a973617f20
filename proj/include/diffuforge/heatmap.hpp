#pragma once

#include <filesystem>
#include <span>

#include "diffuforge/raster.hpp"

namespace diffuforge {

/// Min-max normalization to [0,1]. A constant raster yields all zeros with
/// the degenerate flag set. Throws ValidationError naming the (x, y) of the
/// first non-finite value.
Heatmap normalize_heatmap(const FloatRaster& raw);

/// Align-corners bilinear resampling: output corners reproduce input
/// corners exactly. Downscaling is allowed.
FloatRaster upscale_bilinear(const FloatRaster& src, int target_width, int target_height);

/// Resamples every map to the target size, sums them elementwise with
/// uniform weights and normalizes the sum.
Heatmap aggregate_heatmaps(std::span<const FloatRaster> maps, int target_width, int target_height);

// .hm32 interchange: u32 width, u32 height, then width*height f32 values,
// all little-endian, row-major.
std::vector<std::uint8_t> encode_hm32(const FloatRaster& raster);
FloatRaster decode_hm32(std::span<const std::uint8_t> bytes);
void write_hm32(const std::filesystem::path& path, const FloatRaster& raster);
FloatRaster read_hm32(const std::filesystem::path& path);

/// Decodes a bare row-major little-endian f32 payload of known dimensions.
FloatRaster decode_f32_le(std::span<const std::uint8_t> bytes, int width, int height);

}  // namespace diffuforge
