// Incompressible viscous flow on a staggered (MAC) grid over the container
// box, coupled to the deformed solid as interior Dirichlet data.  The whole
// velocity objective is a sum of weighted squared linear samples plus a
// linear force term, minimized subject to per-cell divergence constraints.
// One sparse factorization per time step serves every evaluation during the
// outer solid descent; the gradient with respect to the solid velocity is
// the interface traction pulled back through the frozen interpolation
// weights (exact envelope derivative of the partially-minimized objective).
#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "varistep/grid.hpp"
#include "varistep/raster.hpp"

namespace varistep {

struct FluidGrid {
  int mx = 48, my = 32;  // pressure cells
  double lx = 3.0, ly = 2.0;
  bool periodic_x = false;

  double hx() const { return lx / mx; }
  double hy() const { return ly / my; }
  // u lives on vertical faces: columns 0..mx (0..mx-1 when periodic), rows 0..my-1.
  int ucols() const { return periodic_x ? mx : mx + 1; }
  int nu() const { return ucols() * my; }
  int iu(int i, int j) const { return j * ucols() + i; }
  // v lives on horizontal faces: columns 0..mx-1, rows 0..my.
  int nv() const { return mx * (my + 1); }
  int iv(int i, int j) const { return j * mx + i; }
  int ncells() const { return mx * my; }
  int cell(int i, int j) const { return j * mx + i; }
  Vec2 u_pos(int i, int j) const { return {i * hx(), (j + 0.5) * hy()}; }
  Vec2 v_pos(int i, int j) const { return {(i + 0.5) * hx(), j * hy()}; }
  Vec2 cell_center(int i, int j) const { return {(i + 0.5) * hx(), (j + 0.5) * hy()}; }
};

enum class FaceKind : std::uint8_t { Free, Wall, Solid };

struct MarkerLoad {
  Vec2 pos;       // current (deformed) position, inside the fluid region
  Vec2 target;    // velocity to track (previous-scale average)
  double kin_w;   // weight on |v(pos) - target|^2
  Vec2 force;     // linear load: + force . v(pos)
};

struct FluidOptions {
  double visc_coeff = 0.0;  // weight on the strain-rate sample sum
  double reg_coeff = 0.0;   // weight on per-axis third-difference samples
  // Eulerian body force integrated over fluid cells with the given weight:
  // contributes + cell_force_coeff * area * f(center) . v(center).
  double cell_force_coeff = 0.0;
  std::function<Vec2(Vec2)> body_force;
  std::vector<MarkerLoad> markers;
};

struct FluidSolution {
  std::vector<double> u, v;  // all faces, prescribed values included
  double value = 0;          // optimal objective (quadratic - linear parts)
  double visc = 0;           // strain-rate sample sum times visc_coeff
  double reg = 0;            // third-difference sample sum times reg_coeff
  double kin = 0;            // marker tracking term
  double work = 0;           // linear force term actually attained
  double div_defect = 0;     // largest boundary-data incompatibility removed
  double korn_ratio = 0;     // full-gradient sum / strain sum (diagnostic)
};

// Geometry, classification and factorization are frozen at construction
// (explicit treatment of the configuration); solve() costs one backsolve.
class FluidStep {
 public:
  // sg/eta may be null: no solid, the box is all fluid.
  FluidStep(const FluidGrid& fg, const SolidGrid* sg, const Field* eta, const FluidOptions& opt);
  ~FluidStep();
  FluidStep(FluidStep&&) noexcept;
  FluidStep& operator=(FluidStep&&) noexcept;

  // Minimizes the fluid objective for solid boundary velocity b (ignored
  // when there is no solid).  If grad_b is non-null the envelope gradient
  // d(value)/db is accumulated into it.  If sol is non-null the full
  // velocity field and the term-by-term breakdown are written.
  double eval(const Field& b, Field* grad_b, FluidSolution* sol) const;

  const std::vector<FaceKind>& u_kind() const;
  const std::vector<FaceKind>& v_kind() const;
  const std::vector<std::uint8_t>& cell_solid() const;
  int free_dofs() const;
  // One nodal coefficient field per fluid component; the dot product with a
  // boundary velocity b gives the net volume rate the prescribed interface
  // data pushes into that component.  Admissible coupled motions keep these
  // fluxes at zero (the container is rigid and the fluid incompressible), so
  // time steppers add a penalty on them.
  const std::vector<Field>& interface_flux_coeffs() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Bilinear interpolation of a staggered velocity field (and its spatial
// gradient) at an arbitrary point of the box.  Wall values are honoured by
// reflection; outside points are clamped to the box.  The gradient's
// diagonal comes from the containing pressure cell, so its trace equals that
// cell's discrete divergence (zero wherever continuity is enforced); the
// off-diagonal shear entries are node-lattice bilinear.
Vec2 interp_velocity(const FluidGrid& fg, const std::vector<double>& u,
                     const std::vector<double>& v, Vec2 p);
Mat2 interp_velocity_gradient(const FluidGrid& fg, const std::vector<double>& u,
                              const std::vector<double>& v, Vec2 p);

}  // namespace varistep
