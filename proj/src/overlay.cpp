#include "diffuforge/overlay.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>

#include <fmt/format.h>

#include "diffuforge/error.hpp"

namespace diffuforge {

namespace {

struct Glyph {
  char c;
  const char* rows;  // 5 rows of 3 cells, 'X' = ink
};

// clang-format off
constexpr Glyph kFont[] = {
  {'0', "XXXX.XX.XX.XXXX"}, {'1', ".X.XX..X..X.XXX"}, {'2', "XXX..XXXXX..XXX"},
  {'3', "XXX..XXXX..XXXX"}, {'4', "X.XX.XXXX..X..X"}, {'5', "XXXX..XXX..XXXX"},
  {'6', "XXXX..XXXX.XXXX"}, {'7', "XXX..X..X..X..X"}, {'8', "XXXX.XXXXX.XXXX"},
  {'9', "XXXX.XXXX..XXXX"},
  {'a', ".X.X.XXXXX.XX.X"}, {'b', "XX.X.XXX.X.XXX."}, {'c', "XXXX..X..X..XXX"},
  {'d', "XX.X.XX.XX.XXX."}, {'e', "XXXX..XX.X..XXX"}, {'f', "XXXX..XX.X..X.."},
  {'g', "XXXX..X.XX.XXXX"}, {'h', "X.XX.XXXXX.XX.X"}, {'i', "XXX.X..X..X.XXX"},
  {'j', "..X..X..XX.XXXX"}, {'k', "X.XX.XXX.X.XX.X"}, {'l', "X..X..X..X..XXX"},
  {'m', "X.XXXXXXXX.XX.X"}, {'n', "XX.X.XX.XX.XX.X"}, {'o', "XXXX.XX.XX.XXXX"},
  {'p', "XXXX.XXXXX..X.."}, {'q', "XXXX.XX.XXXX..X"}, {'r', "XX.X.XXX.X.XX.X"},
  {'s', "XXXX..XXX..XXXX"}, {'t', "XXX.X..X..X..X."}, {'u', "X.XX.XX.XX.XXXX"},
  {'v', "X.XX.XX.XX.X.X."}, {'w', "X.XX.XXXXXXXX.X"}, {'x', "X.XX.X.X.X.XX.X"},
  {'y', "X.XX.X.X..X..X."}, {'z', "XXX..X.X.X..XXX"},
  {'.', "............X.."}, {'-', "......XXX......"}, {'_', "............XXX"},
  {'<', "..X.X.X...X...X"}, {'>', "X...X...X.X.X.."}, {' ', "..............."},
  {'?', "XXX..X.X.....X."},
};
// clang-format on

const char* glyph_rows(char c) {
  const char lower = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (const auto& g : kFont) {
    if (g.c == lower) return g.rows;
  }
  return glyph_rows('?');
}

void put(ImageRaster& image, int x, int y, const Rgb& color) {
  if (x < 0 || y < 0 || x >= image.width() || y >= image.height()) return;
  std::copy(color.begin(), color.end(), image.pixel(x, y));
}

void line(ImageRaster& image, int x0, int y0, int x1, int y1, const Rgb& color) {
  const int dx = std::abs(x1 - x0);
  const int dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1;
  const int sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    put(image, x0, y0, color);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

}  // namespace

Rgb heat_color(float value) {
  static constexpr std::array<Rgb, 5> kStops = {{{0, 0, 255}, {0, 255, 255}, {0, 255, 0}, {255, 255, 0}, {255, 0, 0}}};
  const double v = std::clamp(static_cast<double>(value), 0.0, 1.0) * (kStops.size() - 1);
  const std::size_t i = std::min(static_cast<std::size_t>(v), kStops.size() - 2);
  const double t = v - double(i);
  Rgb out;
  for (int c = 0; c < 3; ++c) {
    out[c] = static_cast<std::uint8_t>(std::lround(kStops[i][c] + (kStops[i + 1][c] - kStops[i][c]) * t));
  }
  return out;
}

Rgb class_color(std::string_view token) {
  std::uint32_t h = 2166136261u;
  for (unsigned char c : token) h = (h ^ c) * 16777619u;
  // Keep at least one bright channel so outlines stay visible.
  Rgb color{static_cast<std::uint8_t>(h & 0xFF), static_cast<std::uint8_t>((h >> 8) & 0xFF),
            static_cast<std::uint8_t>((h >> 16) & 0xFF)};
  color[(h >> 24) % 3] = 255;
  return color;
}

void draw_text(ImageRaster& image, int x, int y, std::string_view text, int scale, const Rgb& color) {
  for (std::size_t k = 0; k < text.size(); ++k) {
    const char* rows = glyph_rows(text[k]);
    const int ox = x + static_cast<int>(k) * 4 * scale;
    for (int gy = 0; gy < 5; ++gy) {
      for (int gx = 0; gx < 3; ++gx) {
        if (rows[gy * 3 + gx] != 'X') continue;
        for (int sy = 0; sy < scale; ++sy) {
          for (int sx = 0; sx < scale; ++sx) put(image, ox + gx * scale + sx, y + gy * scale + sy, color);
        }
      }
    }
  }
}

ImageRaster render_overlay(const ImageRaster& image, const std::vector<LabeledInstance>& instances,
                           const std::optional<Heatmap>& heatmap) {
  ImageRaster out = image;
  if (heatmap) {
    if (heatmap->width() != image.width() || heatmap->height() != image.height()) {
      throw ValidationError("overlay heatmap dimensions differ from the image");
    }
    for (int y = 0; y < image.height(); ++y) {
      for (int x = 0; x < image.width(); ++x) {
        const Rgb heat = heat_color(heatmap->at(x, y));
        auto* px = out.pixel(x, y);
        for (int c = 0; c < 3; ++c) px[c] = static_cast<std::uint8_t>(std::lround(0.6 * px[c] + 0.4 * heat[c]));
      }
    }
  }

  const int scale = std::max(1, std::min(image.width(), image.height()) / 160);
  for (const auto& inst : instances) {
    const Rgb color = class_color(inst.class_token);
    for (const auto& poly : inst.polygons) {
      const auto& v = poly.vertices;
      for (std::size_t i = 0; i < v.size(); ++i) {
        const auto& a = v[i];
        const auto& b = v[(i + 1) % v.size()];
        line(out, static_cast<int>(std::lround(a.x)), static_cast<int>(std::lround(a.y)),
             static_cast<int>(std::lround(b.x)), static_cast<int>(std::lround(b.y)), color);
      }
    }
    const BoundingBox& b = inst.bbox;
    line(out, b.x, b.y, b.x_max(), b.y, color);
    line(out, b.x_max(), b.y, b.x_max(), b.y_max(), color);
    line(out, b.x_max(), b.y_max(), b.x, b.y_max(), color);
    line(out, b.x, b.y_max(), b.x, b.y, color);

    const std::string caption = fmt::format("{} {:.2f}", inst.class_token, inst.score);
    const int text_h = 5 * scale;
    const int text_y = b.y - text_h - 2 >= 0 ? b.y - text_h - 2 : b.y + 2;
    const int text_w = static_cast<int>(caption.size()) * 4 * scale;
    for (int y = text_y - 1; y < text_y + text_h + 1; ++y) {
      for (int x = b.x; x < b.x + text_w + 1; ++x) put(out, x, y, Rgb{0, 0, 0});
    }
    draw_text(out, b.x + 1, text_y, caption, scale, color);
  }
  return out;
}

}  // namespace diffuforge
