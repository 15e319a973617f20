#include "diffuforge/labeler.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include <fmt/format.h>

#include "diffuforge/error.hpp"
#include "diffuforge/geometry.hpp"
#include "diffuforge/heatmap.hpp"

namespace diffuforge {

// ---------------------------------------------------------------------------
// Otsu

namespace {

int bin_of(float v) {
  return std::clamp(static_cast<int>(std::floor(static_cast<double>(v) * 255.0)), 0, 255);
}

}  // namespace

Histogram256 quantize(const Heatmap& heatmap) {
  Histogram256 hist{};
  for (float v : heatmap.raster().values()) ++hist[bin_of(v)];
  return hist;
}

OtsuResult otsu_from_histogram(const Histogram256& histogram) {
  OtsuResult result;
  result.histogram = histogram;
  double total = 0.0;
  double total_mass = 0.0;
  for (int i = 0; i < 256; ++i) {
    total += double(histogram[i]);
    total_mass += double(i) * double(histogram[i]);
  }
  if (total == 0.0) return result;

  double n0 = 0.0;
  double mass0 = 0.0;
  double best = -1.0;
  for (int t = 0; t < 255; ++t) {
    n0 += double(histogram[t]);
    mass0 += double(t) * double(histogram[t]);
    const double n1 = total - n0;
    double variance = 0.0;
    if (n0 > 0.0 && n1 > 0.0) {
      const double w0 = n0 / total;
      const double w1 = n1 / total;
      const double diff = mass0 / n0 - (total_mass - mass0) / n1;
      variance = w0 * w1 * diff * diff;
    }
    if (variance > best && (best <= 0.0 || variance > best * (1.0 + 1e-9))) {
      best = variance;
      result.threshold = t;
    }
  }
  result.between_class_variance = std::max(best, 0.0);
  result.has_foreground = best > 0.0;
  return result;
}

OtsuResult otsu_threshold(const Heatmap& heatmap) {
  if (heatmap.degenerate()) {
    OtsuResult result;
    result.histogram = quantize(heatmap);
    return result;
  }
  return otsu_from_histogram(quantize(heatmap));
}

BinaryMask threshold_mask(const Heatmap& heatmap, int threshold) {
  BinaryMask mask(heatmap.width(), heatmap.height());
  for (int y = 0; y < heatmap.height(); ++y) {
    for (int x = 0; x < heatmap.width(); ++x) {
      if (bin_of(heatmap.at(x, y)) > threshold) mask.set(x, y);
    }
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Morphology

StructuringElement StructuringElement::square(int side) {
  if (side < 1 || side % 2 == 0) throw ValidationError(fmt::format("structuring element side must be odd and >= 1, got {}", side));
  return StructuringElement(side, std::vector<std::uint8_t>(static_cast<std::size_t>(side) * side, 1));
}

StructuringElement::StructuringElement(int side, std::vector<std::uint8_t> cells)
    : side_(side), cells_(std::move(cells)) {
  if (side < 1 || side % 2 == 0) throw ValidationError(fmt::format("structuring element side must be odd and >= 1, got {}", side));
  if (cells_.size() != static_cast<std::size_t>(side) * side) {
    throw ValidationError("structuring element cell count does not match its side");
  }
}

bool StructuringElement::symmetric() const {
  const int r = radius();
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      if (at(dx, dy) != at(-dx, -dy)) return false;
    }
  }
  return true;
}

BinaryMask erode(const BinaryMask& mask, const StructuringElement& se, Border outside) {
  const bool out_value = outside == Border::foreground;
  const int r = se.radius();
  BinaryMask out(mask.width(), mask.height());
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      bool keep = true;
      for (int dy = -r; dy <= r && keep; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          if (se.at(dx, dy) && !mask.at_or(x + dx, y + dy, out_value)) {
            keep = false;
            break;
          }
        }
      }
      if (keep) out.set(x, y);
    }
  }
  return out;
}

BinaryMask dilate(const BinaryMask& mask, const StructuringElement& se, Border outside) {
  const bool out_value = outside == Border::foreground;
  const int r = se.radius();
  BinaryMask out(mask.width(), mask.height());
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      bool hit = false;
      for (int dy = -r; dy <= r && !hit; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          // Reflected element: p is set when some q with p - q in the mask.
          if (se.at(dx, dy) && mask.at_or(x - dx, y - dy, out_value)) {
            hit = true;
            break;
          }
        }
      }
      if (hit) out.set(x, y);
    }
  }
  return out;
}

BinaryMask open(const BinaryMask& mask, const StructuringElement& se, int iterations) {
  BinaryMask m = mask;
  for (int i = 0; i < iterations; ++i) m = erode(m, se);
  for (int i = 0; i < iterations; ++i) m = dilate(m, se);
  return m;
}

BinaryMask close(const BinaryMask& mask, const StructuringElement& se, int iterations) {
  if (iterations <= 0) return mask;
  const int pad = se.radius() * iterations;
  BinaryMask canvas(mask.width() + 2 * pad, mask.height() + 2 * pad);
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (mask.at(x, y)) canvas.set(x + pad, y + pad);
    }
  }
  for (int i = 0; i < iterations; ++i) canvas = dilate(canvas, se);
  for (int i = 0; i < iterations; ++i) canvas = erode(canvas, se);
  BinaryMask out(mask.width(), mask.height());
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (canvas.at(x + pad, y + pad)) out.set(x, y);
    }
  }
  return out;
}

BinaryMask refine_mask(const BinaryMask& mask, const MorphologyParams& params) {
  if (params.open_iterations < 0 || params.close_iterations < 0) {
    throw ValidationError("morphology iteration counts must be >= 0");
  }
  return close(open(mask, params.structuring_element, params.open_iterations), params.structuring_element,
               params.close_iterations);
}

// ---------------------------------------------------------------------------
// Components

namespace {

constexpr int kDx[8] = {1, 1, 0, -1, -1, -1, 0, 1};
constexpr int kDy[8] = {0, 1, 1, 1, 0, -1, -1, -1};

}  // namespace

std::vector<Component> extract_components(const BinaryMask& mask, double min_area_fraction) {
  const int w = mask.width();
  const int h = mask.height();
  const double min_area = min_area_fraction * double(w) * double(h);
  std::vector<int> label(static_cast<std::size_t>(w) * h, -1);
  std::vector<Component> out;
  std::vector<std::pair<int, int>> pixels;
  std::deque<std::pair<int, int>> queue;

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * w + x;
      if (!mask.at(x, y) || label[idx] >= 0) continue;
      pixels.clear();
      label[idx] = 1;
      queue.emplace_back(x, y);
      while (!queue.empty()) {
        const auto [cx, cy] = queue.front();
        queue.pop_front();
        pixels.emplace_back(cx, cy);
        for (int d = 0; d < 8; ++d) {
          const int nx = cx + kDx[d];
          const int ny = cy + kDy[d];
          if (nx < 0 || ny < 0 || nx >= w || ny >= h || !mask.at(nx, ny)) continue;
          const std::size_t nidx = static_cast<std::size_t>(ny) * w + nx;
          if (label[nidx] >= 0) continue;
          label[nidx] = 1;
          queue.emplace_back(nx, ny);
        }
      }
      if (double(pixels.size()) < min_area) continue;
      Component c;
      c.mask = BinaryMask(w, h);
      c.area = pixels.size();
      c.first_x = x;
      c.first_y = y;
      int x0 = w, y0 = h, x1 = -1, y1 = -1;
      for (const auto& [px, py] : pixels) {
        c.mask.set(px, py);
        x0 = std::min(x0, px);
        y0 = std::min(y0, py);
        x1 = std::max(x1, px);
        y1 = std::max(y1, py);
      }
      c.bbox = BoundingBox{x0, y0, x1 - x0 + 1, y1 - y0 + 1};
      out.push_back(std::move(c));
    }
  }
  // Discovery order is already raster order of first pixels.
  std::stable_sort(out.begin(), out.end(), [](const Component& a, const Component& b) { return a.area > b.area; });
  return out;
}

// ---------------------------------------------------------------------------
// Border following

std::vector<Point> trace_border(const BinaryMask& component) {
  const int w = component.width();
  const int h = component.height();
  int sx = -1;
  int sy = -1;
  for (int y = 0; y < h && sx < 0; ++y) {
    for (int x = 0; x < w; ++x) {
      if (component.at(x, y)) {
        sx = x;
        sy = y;
        break;
      }
    }
  }
  if (sx < 0) return {};

  auto direction_of = [](int dx, int dy) {
    for (int d = 0; d < 8; ++d) {
      if (kDx[d] == dx && kDy[d] == dy) return d;
    }
    return -1;
  };

  struct Step {
    int x, y, backtrack;
    bool found;
  };
  // Moore-neighbor step: sweep around (x, y) starting just after the
  // backtrack neighbor, in decreasing direction index (counter-clockwise on
  // screen), and stop at the first foreground pixel.
  auto step = [&](int x, int y, int backtrack) -> Step {
    for (int k = 1; k <= 8; ++k) {
      const int d = ((backtrack - k) % 8 + 8) % 8;
      const int nx = x + kDx[d];
      const int ny = y + kDy[d];
      if (component.at_or(nx, ny, false)) {
        const int prev = (d + 1) % 8;
        const int bx = x + kDx[prev];
        const int by = y + kDy[prev];
        return {nx, ny, direction_of(bx - nx, by - ny), true};
      }
    }
    return {x, y, backtrack, false};
  };

  std::vector<Point> chain{{double(sx), double(sy)}};
  const Step first = step(sx, sy, 4);  // west of the start is background
  if (!first.found) return chain;

  int px = first.x;
  int py = first.y;
  int back = first.backtrack;
  const std::size_t limit = 4 * static_cast<std::size_t>(w) * h + 8;
  for (std::size_t guard = 0; guard < limit; ++guard) {
    const Step next = step(px, py, back);
    if (px == sx && py == sy && next.x == first.x && next.y == first.y) break;
    chain.push_back({double(px), double(py)});
    px = next.x;
    py = next.y;
    back = next.backtrack;
  }
  return chain;
}

std::vector<Point> collapse_collinear(const std::vector<Point>& chain) {
  if (chain.size() < 3) return chain;
  std::vector<Point> out;
  const std::size_t n = chain.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point& prev = chain[(i + n - 1) % n];
    const Point& cur = chain[i];
    const Point& next = chain[(i + 1) % n];
    const double in_x = cur.x - prev.x, in_y = cur.y - prev.y;
    const double out_x = next.x - cur.x, out_y = next.y - cur.y;
    if (in_x == out_x && in_y == out_y) continue;
    out.push_back(cur);
  }
  return out;
}

std::optional<Polygon> trace_contour(const BinaryMask& component) {
  Polygon polygon{collapse_collinear(trace_border(component))};
  if (polygon.vertices.size() < 3 || signed_area(polygon) == 0.0) return std::nullopt;
  return polygon;
}

// ---------------------------------------------------------------------------
// Scoring

void ScoreWeights::validate() const {
  if (!(area >= 0.0) || !(intensity >= 0.0) || std::abs(area + intensity - 1.0) > 1e-9) {
    throw ValidationError(fmt::format("score weights must be >= 0 and sum to 1, got {} + {}", area, intensity));
  }
}

double score_instance(const BinaryMask& component, const BoundingBox& bbox, const Heatmap& heatmap,
                      const ScoreWeights& weights) {
  if (component.width() != heatmap.width() || component.height() != heatmap.height()) {
    throw ValidationError("component and heatmap dimensions differ");
  }
  if (!bbox.fits(heatmap.width(), heatmap.height())) throw ValidationError("bbox lies outside the heatmap");
  double sum = 0.0;
  std::size_t count = 0;
  for (int y = bbox.y; y <= bbox.y_max(); ++y) {
    for (int x = bbox.x; x <= bbox.x_max(); ++x) {
      if (!component.at(x, y)) continue;
      sum += heatmap.at(x, y);
      ++count;
    }
  }
  if (count == 0) throw ValidationError("cannot score an empty component");
  const double area_fraction = double(bbox.area()) / (double(heatmap.width()) * heatmap.height());
  const double score = weights.area * area_fraction + weights.intensity * (sum / double(count));
  return std::clamp(score, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// End-to-end

namespace {

struct Foreground {
  Heatmap normalized;
  std::vector<Component> components;
};

std::optional<Foreground> foreground_components(const Heatmap& heatmap, const LabelerParams& params) {
  Heatmap normalized = normalize_heatmap(heatmap.raster());
  if (normalized.degenerate()) return std::nullopt;
  const OtsuResult otsu = otsu_threshold(normalized);
  if (!otsu.has_foreground) return std::nullopt;
  const BinaryMask refined = refine_mask(threshold_mask(normalized, otsu.threshold), params.morphology);
  return Foreground{std::move(normalized), extract_components(refined, params.min_area_fraction)};
}

}  // namespace

std::vector<LabeledInstance> label_heatmaps(const std::vector<std::string>& tokens,
                                            const std::map<std::string, Heatmap>& heatmaps,
                                            const LabelerParams& params) {
  params.weights.validate();
  std::vector<LabeledInstance> out;
  for (const auto& token : tokens) {
    const auto it = heatmaps.find(token);
    if (it == heatmaps.end()) throw ValidationError(fmt::format("no heatmap for token '{}'", token));
    auto fg = foreground_components(it->second, params);
    if (!fg) continue;
    for (const auto& c : fg->components) {
      LabeledInstance inst;
      inst.class_token = token;
      if (auto polygon = trace_contour(c.mask)) inst.polygons.push_back(std::move(*polygon));
      inst.bbox = c.bbox;
      inst.score = score_instance(c.mask, c.bbox, fg->normalized, params.weights);
      inst.source = LabelSource::unsupervised;
      out.push_back(std::move(inst));
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const LabeledInstance& a, const LabeledInstance& b) { return a.score > b.score; });
  return out;
}

std::vector<LabeledInstance> label_unsupervised(const GenerationResult& result, const LabelerParams& params) {
  return label_heatmaps(result.echo.prompt.tokens_of_interest, result.heatmaps, params);
}

BinaryMask semantic_mask(const Heatmap& heatmap, const LabelerParams& params) {
  BinaryMask out(heatmap.width(), heatmap.height());
  const auto fg = foreground_components(heatmap, params);
  if (!fg) return out;
  for (const auto& c : fg->components) {
    for (int y = c.bbox.y; y <= c.bbox.y_max(); ++y) {
      for (int x = c.bbox.x; x <= c.bbox.x_max(); ++x) {
        if (c.mask.at(x, y)) out.set(x, y);
      }
    }
  }
  return out;
}

}  // namespace diffuforge
