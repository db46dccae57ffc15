// Reference grid for the solid body and finite-difference jets.
//
// The solid occupies the rectangle [0,lx] x [0,ly] discretized by nx x ny
// nodes. A deformation is a per-node position field. All integrals use
// midpoint quadrature on the (nx-1) x (ny-1) cells; the jet of a field at a
// cell center carries the value, the first gradient (exact for quadratics)
// and the symmetric second gradient (exact for cubics via 4-point midpoint
// stencils, one-sided variants at the two boundary cell columns/rows).
#pragma once

#include <vector>

#include "varistep/common.hpp"

namespace varistep {

struct SolidGrid {
  int nx = 17, ny = 17;       // node counts per axis (>= 2)
  double lx = 1.0, ly = 1.0;  // reference rectangle extents
  // Pinned nodes (positions held fixed at prescribed values). Default: bottom edge.
  std::vector<std::uint8_t> pinned;

  int nodes() const { return nx * ny; }
  int node(int i, int j) const { return j * nx + i; }
  int cells_x() const { return nx - 1; }
  int cells_y() const { return ny - 1; }
  int cells() const { return cells_x() * cells_y(); }
  int cell(int i, int j) const { return j * cells_x() + i; }
  double dx() const { return lx / (nx - 1); }
  double dy() const { return ly / (ny - 1); }
  double cell_area() const { return dx() * dy(); }
  Vec2 ref_pos(int i, int j) const { return {i * dx(), j * dy()}; }
  bool is_boundary(int i, int j) const { return i == 0 || j == 0 || i == nx - 1 || j == ny - 1; }
};

// Build a grid with the bottom edge (j = 0) pinned.
SolidGrid make_solid_grid(int nx, int ny, double lx = 1.0, double ly = 1.0);

using Field = std::vector<Vec2>;  // one Vec2 per node, index = grid.node(i,j)

Field identity_field(const SolidGrid& g);
Field translated_field(const SolidGrid& g, Vec2 shift);

// First and second gradient of a field at one cell center.
// G[c] holds (d2/dxx, d2/dxdy, d2/dyy) of component c; the mixed entry is
// stored once and counts twice in Frobenius norms.
struct CellJet {
  Vec2 value;        // bilinear average of the 4 corner values
  Mat2 F;            // F(c,d) = d(field_c)/d(x_d)
  double G[2][3] = {{0, 0, 0}, {0, 0, 0}};
};

// Jets for every cell, row-major cell order. Grids with nx < 4 (or ny < 4)
// have no valid second-difference stencil along that axis; those G entries
// stay zero. (The energy's second-gradient term is then absent, which keeps
// tiny cross-check instances self-consistent.)
void compute_jets(const SolidGrid& g, const Field& f, std::vector<CellJet>& out);

// Derivative of some scalar objective with respect to one cell's jet entries
// (the mixed G entry is differentiated with respect to its single stored slot).
struct CellJetAdjoint {
  Mat2 dF;
  double dG[2][3] = {{0, 0, 0}, {0, 0, 0}};
};

// Scatter-add per-cell derivatives through the jet stencils (transpose of
// compute_jets in the F/G slots): grad[node] += chain of dF and dG.
void accumulate_jet_adjoint(const SolidGrid& g, const std::vector<CellJetAdjoint>& adj,
                            Field& grad);

// Third-difference stencil sum  ||grad^3 f||^2  (per-axis pure thirds plus
// mixed ones with multinomial weights) under the same midpoint quadrature
// convention; returns 0 on grids too small for any stencil.
double third_diff_norm2(const SolidGrid& g, const Field& f);
// grad += coeff * d(third_diff_norm2)/d(f)
void third_diff_norm2_grad(const SolidGrid& g, const Field& f, double coeff, Field& grad);

// Discrete W^{1,2} norm squared: sum over cells of (|value|^2 + |F|^2) * area.
double w12_norm2(const SolidGrid& g, const Field& f);

// Dirichlet-boundary trace helpers ---------------------------------------

// Uniformly spaced sample points along the full reference boundary loop
// (counter-clockwise from the origin corner), per_edge_segment samples per
// node-to-node segment. Returns reference points and their arc-length
// positions; used by the self-distance monitor.
struct BoundaryLoop {
  std::vector<Vec2> ref_points;
  std::vector<double> arc;    // reference arc length at each sample
  double perimeter = 0.0;
};
BoundaryLoop boundary_loop(const SolidGrid& g, int per_segment = 4);

// Evaluate a nodal field at a reference point by bilinear interpolation.
Vec2 eval_bilinear(const SolidGrid& g, const Field& f, Vec2 ref);

}  // namespace varistep
