#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "diffuforge/raster.hpp"

namespace diffuforge {

using Rgb = std::array<std::uint8_t, 3>;

/// Fixed blue-cyan-green-yellow-red ramp over [0,1].
Rgb heat_color(float value);

/// Deterministic color for a class token.
Rgb class_color(std::string_view token);

/// Visualization: optional heatmap blended at weight 0.4, then polygon and
/// bbox outlines in the class color, then a "class score" caption above
/// each box. With no instances and no heatmap the input is returned as is.
ImageRaster render_overlay(const ImageRaster& image, const std::vector<LabeledInstance>& instances,
                           const std::optional<Heatmap>& heatmap = std::nullopt);

/// Draws text with the built-in 3x5 pixel font; unknown glyphs render as '?'.
void draw_text(ImageRaster& image, int x, int y, std::string_view text, int scale, const Rgb& color);

}  // namespace diffuforge
