// Lagrangian tracking of the fluid flow map: markers seeded at fluid cell
// centers carry their seeding position, the current image point, the flow-map
// gradient (updated multiplicatively with the interpolated velocity
// gradient), a quadrature weight, and the velocity they were last transported
// with.  The explicit update x <- x + tau * v(x), J <- (I + tau grad v(x)) J
// matches the discrete flow-map composition used by the time stepping.
#pragma once

#include <vector>

#include "varistep/fluid.hpp"

namespace varistep {

struct MarkerSet {
  std::vector<Vec2> origin;   // seeding positions (reference for this epoch)
  std::vector<Vec2> pos;      // current positions
  std::vector<Mat2> J;        // flow-map gradient at the marker
  std::vector<double> weight; // quadrature weight (seed cell area)
  std::vector<Vec2> w;        // tracked velocity target (previous scale)

  int size() const { return static_cast<int>(pos.size()); }
  void push(Vec2 p, double wt, Vec2 vel) {
    origin.push_back(p);
    pos.push_back(p);
    J.push_back(Mat2::identity());
    weight.push_back(wt);
    w.push_back(vel);
  }
  void clear() {
    origin.clear();
    pos.clear();
    J.clear();
    weight.clear();
    w.clear();
  }
};

// One marker per fluid cell (center), weight = cell area, zero velocity.
MarkerSet seed_markers(const FluidGrid& fg, const std::vector<std::uint8_t>& cell_solid);

struct AdvanceReport {
  double min_det = 1.0;
  double max_det = 1.0;
};

// Explicit transport of all markers by the staggered field (u, v) over one
// step tau; updates positions and gradients, returns the det(J) range.
// Throws MarkerEscaped if a marker leaves the container by more than 1e-9
// (smaller overshoots are clamped to the wall).
AdvanceReport advance_markers(MarkerSet& ms, const FluidGrid& fg, const std::vector<double>& u,
                              const std::vector<double>& v, double tau);

// Inverts one explicit transport step: solves z + tau*v(z) = pos by fixed
// point iteration (iters applications), used for reversibility checks.
Vec2 backward_step(const FluidGrid& fg, const std::vector<double>& u,
                   const std::vector<double>& v, double tau, Vec2 pos, int iters);

}  // namespace varistep
