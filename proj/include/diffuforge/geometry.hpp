#pragma once

#include <span>

#include "diffuforge/raster.hpp"

namespace diffuforge {

/// Signed shoelace area in raw (x right, y down) coordinates. Rings that
/// run counter-clockwise on screen come out negative.
double signed_area(const Polygon& polygon);

/// Area of the pixel-corner ring around a lattice polygon of pixel-center
/// vertices, i.e. the number of pixel centers inside or on the polygon
/// (interior + boundary lattice points). Polygons with non-integer
/// vertices fall back to the plain shoelace area.
double pixel_area(const Polygon& polygon);

/// Number of lattice points on the ring (sum of per-edge gcd steps).
long long boundary_lattice_points(const Polygon& polygon);

/// Point-in-polygon with boundary points counted as inside.
bool contains(const Polygon& polygon, double x, double y);

/// Pixels whose centers lie inside or on any of the polygons.
BinaryMask rasterize(std::span<const Polygon> polygons, int width, int height);

/// Tight pixel-count box around all vertices (floor of min, floor of max).
/// Throws ValidationError when there are no vertices.
BoundingBox fit_bbox(std::span<const Polygon> polygons);
BoundingBox fit_bbox(const Polygon& polygon);
/// Tight box around the foreground. Throws ValidationError on an empty mask.
BoundingBox fit_bbox(const BinaryMask& mask);

double bbox_iou(const BoundingBox& a, const BoundingBox& b);

}  // namespace diffuforge
