// Deformed-configuration geometry: element quads, point location with
// bilinear inversion, rasterized image volume (each covered point counted
// once, so overlaps do not double-count), the volume-vs-image defect that
// certifies global injectivity, and boundary clearance monitoring.
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "varistep/grid.hpp"

namespace varistep {

// Rigid container holding both phases; walls are no-slip for the fluid.
struct Box {
  double lx = 3.0;
  double ly = 2.0;
};

struct DeformedGeometry {
  // Per solid cell: deformed corners in the order (p00, p10, p11, p01)
  // and axis-aligned bounds (xmin, xmax, ymin, ymax).
  std::vector<std::array<Vec2, 4>> quad;
  std::vector<std::array<double, 4>> bbox;
  double xmin = 0, xmax = 0, ymin = 0, ymax = 0;  // bounds of the whole image
};

// Builds the per-cell quads; throws DegenerateElement if any quad has a
// non-positive signed (shoelace) area.
DeformedGeometry build_deformed_geometry(const SolidGrid& g, const Field& eta);

// Even-odd (crossing parity) point-in-polygon test on one element quad.
bool point_in_quad(const std::array<Vec2, 4>& q, Vec2 p);

struct RefLoc {
  int ci = 0, cj = 0;  // containing cell
  Vec2 uv;             // local coordinates in [0,1]^2
};

// Finds the element containing p and inverts the bilinear map by Newton
// iteration. Returns nullopt if p lies outside the deformed image.
std::optional<RefLoc> locate_in_image(const SolidGrid& g, const DeformedGeometry& geo, Vec2 p);

// Like locate_in_image but always answers: for points slightly outside the
// image it returns the element and clamped local coordinates minimizing the
// distance to p (continuous extension of boundary values).
RefLoc locate_nearest(const SolidGrid& g, const DeformedGeometry& geo, Vec2 p);

// Integral of det(grad eta) over the reference body. For bilinear elements
// the per-cell integral equals the shoelace area of the deformed quad, so
// this is exact (no quadrature error).
double deformed_volume(const SolidGrid& g, const Field& eta);

// Area of the image set eta(S) measured on a supersampled raster of the
// container box. A point covered by several elements counts once.
double image_volume(const DeformedGeometry& geo, const Box& box, int raster_nx, int raster_ny,
                    int supersample);

struct CnReport {
  double defect = 0;      // integral of det - image area  (>= -tol always; ~0 iff injective)
  double tol = 0;         // raster resolution limit: 2 * deformed perimeter * cell size
  double volume = 0;      // integral of det(grad eta)
  double image = 0;       // measured image area
  double perimeter = 0;   // length of the deformed boundary polyline
};

// Compares the integrated Jacobian with the covered area; a defect well
// above tol means the map folds over itself (self-interpenetration).
CnReport ciarlet_necas(const SolidGrid& g, const Field& eta, const Box& box, int raster_nx,
                       int raster_ny, int supersample);

struct ClearanceReport {
  double self_distance = 0;  // min distance between non-adjacent boundary samples
  double wall_distance = 0;  // min distance from the deformed boundary to the walls
};

// Samples the deformed boundary with the given loop; two samples are
// "non-adjacent" when their reference arc separation (circular) exceeds
// adjacency_frac * perimeter.
ClearanceReport boundary_clearance(const SolidGrid& g, const BoundaryLoop& loop, const Field& eta,
                                   const Box& box, double adjacency_frac = 0.2);

}  // namespace varistep
