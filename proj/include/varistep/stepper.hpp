// Time-stepping drivers built on iterated incremental minimization.
//
// Four modes share one loop:
//   parabolic_solid   minimize  E(eta) + tau R(eta_k, b) - tau <f, b>
//   parabolic_fsi     ... + tau * (viscous Stokes envelope coupled through
//                     the interface velocity b)
//   hyperbolic_solid  regularized energy/dissipation plus the delayed
//                     inertial term (tau rho_s / 2h) |b - w|^2, where w is
//                     the velocity produced one acceleration window earlier
//   hyperbolic_fsi    ... + fluid inertial tracking on transported markers
//                     and the flow-map update Phi <- (id + tau v) o Phi
// with b = (eta - eta_k) / tau and the geometry/coupling frozen at eta_k.
//
// Each step starts the inner minimizer at the null increment, so the
// accepted objective value never exceeds the value of standing still; the
// ledger slack columns certify exactly that comparison (plus the delayed
// kinetic budget in hyperbolic modes) and are re-checked row by row as the
// run proceeds.  Acceleration windows of n_slots = h/tau steps are chained
// by handing each produced velocity to the matching slot of the next window
// (markers carry their sampled velocities with them; newly seeded markers
// start with zero history).
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "varistep/energy.hpp"
#include "varistep/fluid.hpp"
#include "varistep/flowmap.hpp"
#include "varistep/grid.hpp"
#include "varistep/ledger.hpp"
#include "varistep/minimize.hpp"
#include "varistep/raster.hpp"

namespace varistep {

enum class SchemeMode { parabolic_solid, parabolic_fsi, hyperbolic_solid, hyperbolic_fsi };

const char* mode_name(SchemeMode m);
std::optional<SchemeMode> mode_from_name(const std::string& s);

enum class StopReason { completed, collision, det_drift };
const char* stop_name(StopReason r);

// Serializable body-force description: a constant field plus an optional
// Gaussian bump, both switched on inside [t_on, t_off).
struct ForceSpec {
  Vec2 constant{0, 0};
  Vec2 bump{0, 0};
  Vec2 bump_center{0, 0};
  double bump_radius = 0;
  double t_on = 0;
  double t_off = kInf;

  Vec2 eval(double t, Vec2 p) const;
  bool zero() const;
};

struct SchemeConfig {
  SchemeMode mode = SchemeMode::parabolic_solid;
  SolidGrid grid;  // reference body with pinning (see make_solid_grid)
  Box box;
  MaterialParams mat;
  RegParams reg;

  double tau = 5e-3;
  double h = 0;  // acceleration window, hyperbolic modes only (tau <= h/4)
  double T_end = 0.1;

  Vec2 place{1.0, 0.5};   // translation of the reference body into the box
  bool relax_init = false;  // settle to an energy-critical state before stepping
  Field eta0;      // explicit initial deformation (overrides place when set)
  Field eta_vel0;  // explicit initial solid velocity (overrides vel0_shear)
  Vec2 vel0_shear{0, 0};  // initial velocity profile vel0_shear * (y / ly)
  double v0_vortex = 0;   // initial fluid velocity: v0 * curl of the box bump

  int fluid_mx = 96, fluid_my = 64;
  ForceSpec force;

  MinimizeOptions minopts;
  double ineq_tol_scale = 1e-8;  // ledger tolerance = scale * (1 + |E_h(0)|)
  double collision_stop = 0.1;   // stop when boundary clearance drops below
  double detJ_lo = 0.5, detJ_hi = 2.0;  // flow-map gradient guard band
  int snapshot_stride = 1;              // deformation snapshots every k steps
  int cn_raster_x = 240, cn_raster_y = 160, cn_supersample = 2;
  int backward_iters = 2;  // fixed-point sweeps in the return-accuracy check
};

// All rule violations in one pass (empty means valid).
std::vector<std::string> config_violations(const SchemeConfig& cfg);

struct EpochSummary {
  int epoch = 0;
  double t_end = 0;
  // Descent-certified window inequality: energy drop + dissipation against
  // the previous window's kinetic budget plus work.
  double slack_certified = 0;
  // Doubled-dissipation form with kinetic moving averages on both sides
  // (the stationarity-based inequality; reported and checked by acceptance).
  double slack_sharp = 0;
  double momentum_defect = 0;  // Lagrangian-vs-Eulerian transfer residual
  double flow_return_err = 0;  // forward-backward marker return error
};

struct TrajectoryRecord {
  LedgerMeta meta;
  std::vector<LedgerRow> rows;
  std::vector<double> snap_times;
  std::vector<Field> snapshots;
  std::vector<EpochSummary> epochs;

  StopReason stop = StopReason::completed;
  double stop_time = 0;
  std::string stop_detail;
  long long null_steps = 0;  // steps accepted as "stand still" (no descent found)
  double max_korn_ratio = 0;

  Field eta_final;
  FluidGrid fgrid;
  std::vector<double> u_final, v_final;      // final fluid field (FSI modes)
  std::vector<std::uint8_t> cell_solid_final;
  MarkerSet markers_final;                   // hyperbolic FSI only
};

// Runs the configured scheme to T_end or the first stop; every ledger row is
// slack-checked as it is appended (InequalityViolation on failure).
TrajectoryRecord run_scheme(const SchemeConfig& cfg);

// Plain energy descent over the free nodes (no force, no dissipation);
// used to produce critical starting states.
Field relax_solid(const SolidGrid& g, const MaterialParams& mat, const Field& start,
                  const MinimizeOptions& opt);

// Nodal trapezoid quadrature of |f|^2 over the reference body (exact for the
// bilinear interpolant); the convention behind every kinetic/work pairing.
double nodal_norm2(const SolidGrid& g, const Field& f);

}  // namespace varistep
