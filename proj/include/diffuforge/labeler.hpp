#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "diffuforge/backend.hpp"
#include "diffuforge/raster.hpp"

namespace diffuforge {

// ---------------------------------------------------------------------------
// Otsu thresholding

using Histogram256 = std::array<std::uint64_t, 256>;

struct OtsuResult {
  int threshold = 0;  // foreground = bins strictly above this, 0..254
  double between_class_variance = 0.0;
  Histogram256 histogram{};
  /// False when no split separates two classes (single populated bin or a
  /// degenerate heatmap). Callers emit zero instances in that case.
  bool has_foreground = false;
};

/// Bins values as floor(v * 255), clamped to [0, 255].
Histogram256 quantize(const Heatmap& heatmap);

/// Picks t in [0, 254] maximizing w0 * w1 * (mu0 - mu1)^2, where class 0
/// holds bins <= t. Ties (within 1e-9 relative) go to the lowest t.
OtsuResult otsu_from_histogram(const Histogram256& histogram);

OtsuResult otsu_threshold(const Heatmap& heatmap);

/// Pixels whose bin is strictly greater than `threshold`.
BinaryMask threshold_mask(const Heatmap& heatmap, int threshold);

// ---------------------------------------------------------------------------
// Binary morphology

/// Odd-sided square neighborhood centered on the origin.
class StructuringElement {
 public:
  static StructuringElement square(int side);
  /// `cells` is row-major side*side; side must be odd and >= 1.
  StructuringElement(int side, std::vector<std::uint8_t> cells);

  int side() const noexcept { return side_; }
  int radius() const noexcept { return side_ / 2; }
  bool at(int dx, int dy) const { return cells_[static_cast<std::size_t>(dy + radius()) * side_ + dx + radius()] != 0; }
  bool symmetric() const;

 private:
  int side_ = 1;
  std::vector<std::uint8_t> cells_;
};

/// Value assumed for pixels outside the raster.
enum class Border { background, foreground };

BinaryMask erode(const BinaryMask& mask, const StructuringElement& se, Border outside = Border::background);
BinaryMask dilate(const BinaryMask& mask, const StructuringElement& se, Border outside = Border::background);

/// Erosion `iterations` times, then dilation `iterations` times.
BinaryMask open(const BinaryMask& mask, const StructuringElement& se, int iterations = 1);
/// Dilation then erosion, evaluated on a canvas padded so that growth past
/// the image edge is not clipped before the erosion (outside stays
/// background).
BinaryMask close(const BinaryMask& mask, const StructuringElement& se, int iterations = 1);

struct MorphologyParams {
  StructuringElement structuring_element = StructuringElement::square(3);
  int open_iterations = 1;
  int close_iterations = 1;
};

/// Opening followed by closing.
BinaryMask refine_mask(const BinaryMask& mask, const MorphologyParams& params);

// ---------------------------------------------------------------------------
// Components and contours

struct Component {
  BinaryMask mask;  // full image size, only this component set
  std::size_t area = 0;
  BoundingBox bbox;
  int first_x = 0;  // top-left-most pixel in raster order
  int first_y = 0;
};

constexpr double kDefaultMinAreaFraction = 0.001;

/// 8-connected foreground components with area >= min_area_fraction of the
/// image, largest first, ties broken by raster order of the first pixel.
std::vector<Component> extract_components(const BinaryMask& mask,
                                          double min_area_fraction = kDefaultMinAreaFraction);

/// Pixel centers along the outer border, starting at the top-left-most
/// pixel and running counter-clockwise on screen. A lone pixel yields a
/// one-element chain.
std::vector<Point> trace_border(const BinaryMask& component);

/// Drops every chain point whose incoming and outgoing moves coincide.
std::vector<Point> collapse_collinear(const std::vector<Point>& chain);

/// Outer contour with the simple chain approximation. Returns nullopt for
/// degenerate components (a single pixel or a line with zero area); the
/// caller keeps such instances with a bbox only.
std::optional<Polygon> trace_contour(const BinaryMask& component);

// ---------------------------------------------------------------------------
// Scoring and the end-to-end labeler

struct ScoreWeights {
  double area = 0.5;
  double intensity = 0.5;
  /// Throws ValidationError unless both are >= 0 and sum to 1.
  void validate() const;
};

/// area * (bbox area / image area) + intensity * mean(heatmap over component).
double score_instance(const BinaryMask& component, const BoundingBox& bbox, const Heatmap& heatmap,
                      const ScoreWeights& weights);

struct LabelerParams {
  MorphologyParams morphology;
  ScoreWeights weights;
  double min_area_fraction = kDefaultMinAreaFraction;
};

/// Labels each token's heatmap: normalize, Otsu, refine, components,
/// contour, box, score. Tokens are processed in the given order; instances
/// are returned by descending score.
std::vector<LabeledInstance> label_heatmaps(const std::vector<std::string>& tokens,
                                            const std::map<std::string, Heatmap>& heatmaps,
                                            const LabelerParams& params);

std::vector<LabeledInstance> label_unsupervised(const GenerationResult& result, const LabelerParams& params);

/// Union of the refined foreground for one heatmap, empty when degenerate.
BinaryMask semantic_mask(const Heatmap& heatmap, const LabelerParams& params);

}  // namespace diffuforge
