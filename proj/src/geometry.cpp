#include "diffuforge/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "diffuforge/error.hpp"

namespace diffuforge {

double signed_area(const Polygon& polygon) {
  const auto& v = polygon.vertices;
  double twice = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto& a = v[i];
    const auto& b = v[(i + 1) % v.size()];
    twice += a.x * b.y - b.x * a.y;
  }
  return twice / 2.0;
}

namespace {

bool is_lattice(const Polygon& polygon) {
  return std::all_of(polygon.vertices.begin(), polygon.vertices.end(), [](const Point& p) {
    return p.x == std::floor(p.x) && p.y == std::floor(p.y);
  });
}

}  // namespace

long long boundary_lattice_points(const Polygon& polygon) {
  const auto& v = polygon.vertices;
  long long total = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto& a = v[i];
    const auto& b = v[(i + 1) % v.size()];
    total += std::gcd(static_cast<long long>(std::llabs(std::llround(b.x - a.x))),
                      static_cast<long long>(std::llabs(std::llround(b.y - a.y))));
  }
  return total;
}

double pixel_area(const Polygon& polygon) {
  const double shoelace = std::abs(signed_area(polygon));
  if (!is_lattice(polygon)) return shoelace;
  // Pick's theorem: interior + boundary = A + B/2 + 1.
  return shoelace + static_cast<double>(boundary_lattice_points(polygon)) / 2.0 + 1.0;
}

bool contains(const Polygon& polygon, double x, double y) {
  const auto& v = polygon.vertices;
  if (v.empty()) return false;
  bool inside = false;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    const auto& a = v[j];
    const auto& b = v[i];
    // On-segment test first so boundary pixels always count.
    const double cross = (b.x - a.x) * (y - a.y) - (b.y - a.y) * (x - a.x);
    if (std::abs(cross) < 1e-9 && x >= std::min(a.x, b.x) - 1e-9 && x <= std::max(a.x, b.x) + 1e-9 &&
        y >= std::min(a.y, b.y) - 1e-9 && y <= std::max(a.y, b.y) + 1e-9) {
      return true;
    }
    if ((a.y > y) != (b.y > y)) {
      const double xi = a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (x < xi) inside = !inside;
    }
  }
  return inside;
}

BinaryMask rasterize(std::span<const Polygon> polygons, int width, int height) {
  BinaryMask out(width, height);
  for (const auto& poly : polygons) {
    if (poly.vertices.empty()) continue;
    const BoundingBox box = fit_bbox(poly);
    const int x0 = std::max(0, box.x);
    const int y0 = std::max(0, box.y);
    const int x1 = std::min(width - 1, box.x_max());
    const int y1 = std::min(height - 1, box.y_max());
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        if (!out.at(x, y) && contains(poly, x, y)) out.set(x, y);
      }
    }
  }
  return out;
}

BoundingBox fit_bbox(std::span<const Polygon> polygons) {
  double x0 = std::numeric_limits<double>::infinity();
  double y0 = x0;
  double x1 = -x0;
  double y1 = -x0;
  for (const auto& poly : polygons) {
    for (const auto& p : poly.vertices) {
      x0 = std::min(x0, p.x);
      y0 = std::min(y0, p.y);
      x1 = std::max(x1, p.x);
      y1 = std::max(y1, p.y);
    }
  }
  if (x0 > x1) throw ValidationError("cannot fit a box around empty geometry");
  const int ix0 = static_cast<int>(std::floor(x0));
  const int iy0 = static_cast<int>(std::floor(y0));
  return BoundingBox{ix0, iy0, static_cast<int>(std::floor(x1)) - ix0 + 1,
                     static_cast<int>(std::floor(y1)) - iy0 + 1};
}

BoundingBox fit_bbox(const Polygon& polygon) { return fit_bbox(std::span(&polygon, 1)); }

BoundingBox fit_bbox(const BinaryMask& mask) {
  int x0 = mask.width(), y0 = mask.height(), x1 = -1, y1 = -1;
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (!mask.at(x, y)) continue;
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
    }
  }
  if (x1 < 0) throw ValidationError("cannot fit a box around an empty mask");
  return BoundingBox{x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

double bbox_iou(const BoundingBox& a, const BoundingBox& b) {
  const int ix0 = std::max(a.x, b.x);
  const int iy0 = std::max(a.y, b.y);
  const int ix1 = std::min(a.x_max(), b.x_max());
  const int iy1 = std::min(a.y_max(), b.y_max());
  const long long inter =
      (ix1 >= ix0 && iy1 >= iy0) ? static_cast<long long>(ix1 - ix0 + 1) * (iy1 - iy0 + 1) : 0;
  const long long uni = a.area() + b.area() - inter;
  return uni > 0 ? double(inter) / double(uni) : 0.0;
}

}  // namespace diffuforge
