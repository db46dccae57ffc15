#include "varistep/stepper.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <utility>

namespace varistep {

const char* mode_name(SchemeMode m) {
  switch (m) {
    case SchemeMode::parabolic_solid: return "parabolic_solid";
    case SchemeMode::parabolic_fsi: return "parabolic_fsi";
    case SchemeMode::hyperbolic_solid: return "hyperbolic_solid";
    case SchemeMode::hyperbolic_fsi: return "hyperbolic_fsi";
  }
  return "unknown";
}

std::optional<SchemeMode> mode_from_name(const std::string& s) {
  for (SchemeMode m : {SchemeMode::parabolic_solid, SchemeMode::parabolic_fsi,
                       SchemeMode::hyperbolic_solid, SchemeMode::hyperbolic_fsi}) {
    if (s == mode_name(m)) return m;
  }
  return std::nullopt;
}

const char* stop_name(StopReason r) {
  switch (r) {
    case StopReason::completed: return "completed";
    case StopReason::collision: return "collision";
    case StopReason::det_drift: return "det_drift";
  }
  return "unknown";
}

Vec2 ForceSpec::eval(double t, Vec2 p) const {
  if (t < t_on || t >= t_off) return {0, 0};
  Vec2 f = constant;
  if (bump_radius > 0 && (bump.x != 0 || bump.y != 0)) {
    const double dx = p.x - bump_center.x;
    const double dy = p.y - bump_center.y;
    const double s = std::exp(-(dx * dx + dy * dy) / (2.0 * bump_radius * bump_radius));
    f += bump * s;
  }
  return f;
}

bool ForceSpec::zero() const {
  return constant.x == 0 && constant.y == 0 && bump.x == 0 && bump.y == 0;
}

namespace {

// Trapezoid weight of one node (exact integral of the bilinear interpolant).
double node_w(const SolidGrid& g, int i, int j) {
  double w = g.dx() * g.dy();
  if (i == 0 || i == g.nx - 1) w *= 0.5;
  if (j == 0 || j == g.ny - 1) w *= 0.5;
  return w;
}

// Weight of the quadratic penalty on the net interface flux (the volume rate
// the solid boundary pushes into each fluid component).  Order one suffices:
// the penalty is not tau-scaled, so the equilibrium residual is O(tau)
// regardless of the exact weight.
constexpr double kFluxPenalty = 10.0;

}  // namespace

double nodal_norm2(const SolidGrid& g, const Field& f) {
  double s = 0;
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) s += node_w(g, i, j) * f[g.node(i, j)].norm2();
  }
  return s;
}

std::vector<std::string> config_violations(const SchemeConfig& c) {
  std::vector<std::string> out;
  const bool hyper =
      c.mode == SchemeMode::hyperbolic_solid || c.mode == SchemeMode::hyperbolic_fsi;
  const bool fsi = c.mode == SchemeMode::parabolic_fsi || c.mode == SchemeMode::hyperbolic_fsi;

  if (c.grid.nx < 2 || c.grid.ny < 2) out.push_back("grid: need at least 2x2 nodes");
  if (!(c.grid.lx > 0) || !(c.grid.ly > 0)) out.push_back("grid: extents must be positive");
  if (static_cast<int>(c.grid.pinned.size()) != c.grid.nodes())
    out.push_back("grid: pinned mask does not match the node count");
  if (!(c.box.lx > 0) || !(c.box.ly > 0)) out.push_back("box: extents must be positive");

  if (!(c.tau > 0)) out.push_back("tau must be positive");
  if (!(c.T_end > 0)) out.push_back("T_end must be positive");
  long long steps = 0;
  if (c.tau > 0 && c.T_end > 0) {
    steps = std::llround(c.T_end / c.tau);
    if (steps < 1 || std::abs(c.T_end - static_cast<double>(steps) * c.tau) > 1e-9 * c.T_end)
      out.push_back("T_end must be a whole number of steps tau");
  }
  long long slots = 1;
  if (hyper) {
    if (!(c.h > 0)) {
      out.push_back("h must be positive in hyperbolic modes");
    } else if (c.tau > 0) {
      const double r = c.h / c.tau;
      slots = std::llround(r);
      if (slots < 1 || std::abs(r - static_cast<double>(slots)) > 1e-9 * r)
        out.push_back("h must be an integer multiple of tau");
      else if (slots < 4)
        out.push_back("need tau <= h/4 (at least four velocity steps per window)");
      if (slots >= 1 && steps >= 1 && steps % slots != 0)
        out.push_back("T_end must be a whole number of acceleration windows h");
    }
  }
  if (!(c.reg.a0 > 0) || !(c.reg.a0 < 1))
    out.push_back("energy regularizer exponent: need 0 < a0 < 1");
  if (c.reg.k0 != 3) out.push_back("only the third-order regularizer (k0 = 3) is wired");

  if (!(c.mat.mu > 0) || c.mat.lam < 0) out.push_back("material: need mu > 0 and lam >= 0");
  if (!(c.mat.q > 2)) out.push_back("material: second-gradient exponent q must exceed 2");
  else if (!(c.mat.a > 2 * c.mat.q / (c.mat.q - 2)))
    out.push_back("material: barrier exponent needs a > qn/(q-n), i.e. a > 2q/(q-2) in 2-D");
  if (c.mat.w_svk < 0 || !(c.mat.w_bar > 0) || !(c.mat.w_reg > 0))
    out.push_back("material: weights need w_svk >= 0, w_bar > 0, w_reg > 0");
  if (!(c.mat.rho_s > 0)) out.push_back("material: solid density must be positive");
  if (fsi && (!(c.mat.rho_f > 0) || !(c.mat.nu > 0)))
    out.push_back("material: fluid density and viscosity must be positive");

  if (fsi && (c.fluid_mx < 4 || c.fluid_my < 4))
    out.push_back("fluid grid: need at least 4x4 cells");

  if (!c.eta0.empty()) {
    if (static_cast<int>(c.eta0.size()) != c.grid.nodes())
      out.push_back("eta0 does not match the node count");
  } else if (!(c.place.x > 0) || !(c.place.y > 0) || !(c.place.x + c.grid.lx < c.box.lx) ||
             !(c.place.y + c.grid.ly < c.box.ly)) {
    out.push_back("initial placement must keep the body strictly inside the container");
  }
  if (!c.eta_vel0.empty()) {
    if (static_cast<int>(c.eta_vel0.size()) != c.grid.nodes()) {
      out.push_back("eta_vel0 does not match the node count");
    } else if (static_cast<int>(c.grid.pinned.size()) == c.grid.nodes()) {
      for (int n = 0; n < c.grid.nodes(); ++n) {
        if (c.grid.pinned[n] && c.eta_vel0[n].norm2() > 0) {
          out.push_back("initial velocity must vanish at pinned nodes");
          break;
        }
      }
    }
  }

  if (c.collision_stop < 0) out.push_back("collision_stop must be non-negative");
  if (!(c.detJ_lo > 0) || !(c.detJ_lo < 1) || !(c.detJ_hi > 1))
    out.push_back("flow-map guard band needs 0 < detJ_lo < 1 < detJ_hi");
  if (c.snapshot_stride < 0) out.push_back("snapshot_stride must be non-negative");
  if (c.cn_raster_x < 16 || c.cn_raster_y < 16 || c.cn_supersample < 1)
    out.push_back("injectivity raster too coarse (need >= 16x16, supersample >= 1)");
  if (c.backward_iters < 1) out.push_back("backward_iters must be at least 1");
  if (c.minopts.max_iters < 1 || !(c.minopts.grad_tol > 0))
    out.push_back("inner solver needs max_iters >= 1 and grad_tol > 0");
  if (!(c.ineq_tol_scale > 0)) out.push_back("ineq_tol_scale must be positive");
  return out;
}

Field relax_solid(const SolidGrid& g, const MaterialParams& mat, const Field& start,
                  const MinimizeOptions& opt) {
  std::vector<int> free_nodes;
  for (int n = 0; n < g.nodes(); ++n) {
    if (!g.pinned[n]) free_nodes.push_back(n);
  }
  const size_t nf = free_nodes.size();
  std::vector<double> x(2 * nf);
  for (size_t k = 0; k < nf; ++k) {
    x[2 * k] = start[free_nodes[k]].x;
    x[2 * k + 1] = start[free_nodes[k]].y;
  }
  Field eta = start;
  Field grad(g.nodes());
  Objective f = [&](const std::vector<double>& xx, std::vector<double>* gg) -> double {
    for (size_t k = 0; k < nf; ++k) {
      eta[free_nodes[k]] = {xx[2 * k], xx[2 * k + 1]};
    }
    const double E = energy(g, eta, mat);
    if (gg) {
      std::fill(grad.begin(), grad.end(), Vec2{});
      energy_grad(g, eta, mat, grad);
      for (size_t k = 0; k < nf; ++k) {
        (*gg)[2 * k] = grad[free_nodes[k]].x;
        (*gg)[2 * k + 1] = grad[free_nodes[k]].y;
      }
    }
    return E;
  };
  try {
    minimize_lbfgs(f, x, opt);
  } catch (const LineSearchStall&) {
    // Already at a point where no descent direction helps: keep the start.
  }
  Field outf = start;
  for (size_t k = 0; k < nf; ++k) {
    outf[free_nodes[k]] = {x[2 * k], x[2 * k + 1]};
  }
  return outf;
}

namespace {

struct Runner {
  const SchemeConfig& cfg;
  const SolidGrid& g;
  bool hyper = false, fsi = false;
  int N = 1;
  long long steps = 0;
  double tau = 0, h = 0;

  std::vector<int> free_nodes;
  Field eta;    // accepted deformation
  Field etav0;  // initial solid velocity
  Field try_eta, try_b, grad_full, fluid_grad;
  std::vector<Field> wslot;    // delayed solid velocity per slot
  std::vector<double> s_sol;   // ring of nodal |b|^2 (solid kinetic samples)
  std::vector<double> s_flu;   // ring of marker-quadrature |v|^2 samples

  FluidGrid fg;
  MarkerSet ms;
  std::vector<std::vector<Vec2>> mslot;  // [slot][marker] delayed fluid velocity
  std::vector<double> u_now, v_now;
  std::vector<std::vector<double>> epoch_u, epoch_v;
  std::vector<std::uint8_t> last_mask;

  BoundaryLoop loop;
  LedgerChecker checker;
  TrajectoryRecord out;

  double t = 0;
  double momentum_defect_stage = 0;

  explicit Runner(const SchemeConfig& c) : cfg(c), g(c.grid) {}

  Vec2 mom_test(Vec2 p) const {  // fixed smooth pairing field for diagnostics
    const double s = std::sin(M_PI * p.x / cfg.box.lx) * std::sin(M_PI * p.y / cfg.box.ly);
    return {s, 0.7 * s};
  }

  void pack(const Field& f, std::vector<double>& x) const {
    x.resize(2 * free_nodes.size());
    for (size_t k = 0; k < free_nodes.size(); ++k) {
      x[2 * k] = f[free_nodes[k]].x;
      x[2 * k + 1] = f[free_nodes[k]].y;
    }
  }
  void unpack(const std::vector<double>& x, Field& f) const {
    for (size_t k = 0; k < free_nodes.size(); ++k) {
      f[free_nodes[k]] = {x[2 * k], x[2 * k + 1]};
    }
  }

  double solid_kinetic_sample(const Field& b) const { return nodal_norm2(g, b); }

  double marker_kinetic_sample(const std::vector<Vec2>& smpl) const {
    double s = 0;
    for (int m = 0; m < ms.size(); ++m) s += ms.weight[m] * smpl[m].norm2();
    return s;
  }

  std::vector<std::uint8_t> classify_cells(const DeformedGeometry& geo) const {
    std::vector<std::uint8_t> mask(fg.ncells(), 0);
    for (int j = 0; j < fg.my; ++j) {
      for (int i = 0; i < fg.mx; ++i) {
        if (locate_in_image(g, geo, fg.cell_center(i, j))) mask[fg.cell(i, j)] = 1;
      }
    }
    return mask;
  }

  void setup() {
    auto viol = config_violations(cfg);
    if (!viol.empty()) {
      std::string msg = "invalid configuration:";
      for (const auto& v : viol) msg += "\n  - " + v;
      throw ValidationError(msg);
    }
    hyper = cfg.mode == SchemeMode::hyperbolic_solid || cfg.mode == SchemeMode::hyperbolic_fsi;
    fsi = cfg.mode == SchemeMode::parabolic_fsi || cfg.mode == SchemeMode::hyperbolic_fsi;
    if (hyper) {
      N = static_cast<int>(std::llround(cfg.h / cfg.tau));
      h = cfg.h;
      tau = h / N;  // snap so the window is exactly N steps
    } else {
      N = 1;
      h = 0;
      tau = cfg.tau;
    }
    steps = std::llround(cfg.T_end / cfg.tau);

    for (int n = 0; n < g.nodes(); ++n) {
      if (!g.pinned[n]) free_nodes.push_back(n);
    }
    if (free_nodes.empty()) throw ValidationError("all nodes pinned: nothing to evolve");

    eta = cfg.eta0.empty() ? translated_field(g, cfg.place) : cfg.eta0;
    if (cfg.relax_init) eta = relax_solid(g, cfg.mat, eta, cfg.minopts);

    const double E0p = energy(g, eta, cfg.mat);
    if (!is_finite(E0p))
      throw ValidationError("initial deformation has a non-positive Jacobian somewhere");
    const double Eh0 = hyper ? energy_reg(g, eta, cfg.mat, h, cfg.reg) : E0p;

    loop = boundary_loop(g, 4);
    const CnReport cn0 =
        ciarlet_necas(g, eta, cfg.box, cfg.cn_raster_x, cfg.cn_raster_y, cfg.cn_supersample);
    if (cn0.defect > cn0.tol)
      throw ValidationError("initial deformation is not injective (overlap defect " +
                            fmt_g17(cn0.defect) + " above raster tolerance " + fmt_g17(cn0.tol) +
                            ")");
    const ClearanceReport cl0 = boundary_clearance(g, loop, eta, cfg.box);
    const double dist0 = std::min(cl0.self_distance, cl0.wall_distance);
    if (dist0 < cfg.collision_stop)
      throw ValidationError("initial clearance " + fmt_g17(dist0) +
                            " is already below the stop threshold " +
                            fmt_g17(cfg.collision_stop));

    // Initial solid velocity.
    etav0.assign(g.nodes(), Vec2{});
    if (!cfg.eta_vel0.empty()) {
      etav0 = cfg.eta_vel0;
    } else if (cfg.vel0_shear.x != 0 || cfg.vel0_shear.y != 0) {
      for (int j = 0; j < g.ny; ++j) {
        for (int i = 0; i < g.nx; ++i) {
          if (!g.pinned[g.node(i, j)])
            etav0[g.node(i, j)] = cfg.vel0_shear * (g.ref_pos(i, j).y / g.ly);
        }
      }
    }

    try_eta = eta;
    try_b.assign(g.nodes(), Vec2{});
    grad_full.assign(g.nodes(), Vec2{});
    fluid_grad.assign(g.nodes(), Vec2{});

    double kf0 = 0;
    if (fsi) {
      fg = FluidGrid{};
      fg.mx = cfg.fluid_mx;
      fg.my = cfg.fluid_my;
      fg.lx = cfg.box.lx;
      fg.ly = cfg.box.ly;
      u_now.assign(fg.nu(), 0.0);
      v_now.assign(fg.nv(), 0.0);
      last_mask.assign(fg.ncells(), 0);
      if (hyper) {
        const DeformedGeometry geo = build_deformed_geometry(g, eta);
        const auto mask = classify_cells(geo);
        ms = seed_markers(fg, mask);
        for (int m = 0; m < ms.size(); ++m) ms.w[m] = init_fluid_velocity(ms.pos[m]);
        mslot.assign(N, std::vector<Vec2>(ms.size()));
        for (int k = 0; k < N; ++k) {
          for (int m = 0; m < ms.size(); ++m) mslot[k][m] = ms.w[m];
        }
        kf0 = marker_kinetic_sample(ms.w);
        epoch_u.assign(N, {});
        epoch_v.assign(N, {});
      }
    }
    if (hyper) {
      wslot.assign(N, etav0);
      s_sol.assign(N, solid_kinetic_sample(etav0));
      s_flu.assign(N, kf0);
    }

    // Ledger metadata and the initial row.
    LedgerMeta meta;
    meta.mode = mode_name(cfg.mode);
    meta.tau = tau;
    meta.h = h;
    meta.rho_s = cfg.mat.rho_s;
    meta.rho_f = fsi ? cfg.mat.rho_f : 0.0;
    meta.n_slots = N;
    meta.E0 = Eh0;
    meta.ineq_tol = cfg.ineq_tol_scale * (1.0 + std::abs(Eh0));
    meta.cn_tol = 2.0 * cn0.tol;  // headroom for moderate perimeter growth

    LedgerRow r0;
    r0.step = 0;
    r0.t = 0;
    r0.E = E0p;
    r0.E_h = Eh0;
    r0.kin_avg_solid = hyper ? 0.5 * cfg.mat.rho_s * s_sol[0] : 0.0;
    r0.kin_avg_fluid = (hyper && fsi) ? 0.5 * cfg.mat.rho_f * s_flu[0] : 0.0;
    r0.cn_defect = cn0.defect;
    r0.min_det_eta = min_det(g, eta);
    r0.max_detJ_drift = 0;
    r0.self_distance = dist0;
    checker.init(meta, r0);

    out.meta = meta;
    out.rows.push_back(r0);
    out.snap_times.push_back(0);
    out.snapshots.push_back(eta);
    out.fgrid = fg;
  }

  Vec2 init_fluid_velocity(Vec2 p) const {
    if (cfg.v0_vortex == 0) return {0, 0};
    // curl of psi = sin(pi x / lx) sin(pi y / ly): divergence-free, no-slip.
    const double kx = M_PI / cfg.box.lx, ky = M_PI / cfg.box.ly;
    return {cfg.v0_vortex * ky * std::sin(kx * p.x) * std::cos(ky * p.y),
            -cfg.v0_vortex * kx * std::cos(kx * p.x) * std::sin(ky * p.y)};
  }

  // One step; returns false when the trajectory must stop after this row.
  bool step(long long k) {
    const int r = static_cast<int>(k % N);
    const double t_mid = t + 0.5 * tau;
    const bool have_force = !cfg.force.zero();
    auto fmid = [&](Vec2 p) { return cfg.force.eval(t_mid, p); };
    const Field& w = hyper ? wslot[r] : etav0;  // etav0 unused when parabolic

    std::optional<FluidStep> fs;
    if (fsi) {
      FluidOptions fopt;
      fopt.visc_coeff = 0.5 * cfg.mat.nu;
      if (hyper) {
        fopt.reg_coeff = 0.5 * h;
        fopt.markers.reserve(ms.size());
        for (int m = 0; m < ms.size(); ++m) {
          MarkerLoad ml;
          ml.pos = ms.pos[m];
          ml.target = mslot[r][m];
          ml.kin_w = 0.5 * cfg.mat.rho_f / h * ms.weight[m];
          ml.force = have_force ? (cfg.mat.rho_f * ms.weight[m]) * fmid(ms.pos[m]) : Vec2{};
          fopt.markers.push_back(ml);
        }
      } else if (have_force) {
        fopt.cell_force_coeff = cfg.mat.rho_f;
        fopt.body_force = fmid;
      }
      fs.emplace(fg, &g, &eta, fopt);
      last_mask = fs->cell_solid();
    }

    const double inert_c = hyper ? tau * cfg.mat.rho_s / (2.0 * h) : 0.0;
    Objective obj = [&](const std::vector<double>& xx, std::vector<double>* gg) -> double {
      unpack(xx, try_eta);
      for (int n = 0; n < g.nodes(); ++n) try_b[n] = (try_eta[n] - eta[n]) * (1.0 / tau);
      const double Ev = hyper ? energy_reg(g, try_eta, cfg.mat, h, cfg.reg)
                              : energy(g, try_eta, cfg.mat);
      if (!is_finite(Ev)) return kInf;
      double val = Ev + tau * (hyper ? dissipation_reg(g, eta, try_b, h)
                                     : dissipation(g, eta, try_b));
      if (hyper || have_force) {
        for (int j = 0; j < g.ny; ++j) {
          for (int i = 0; i < g.nx; ++i) {
            const int n = g.node(i, j);
            const double wn = node_w(g, i, j);
            if (hyper) val += inert_c * wn * (try_b[n] - w[n]).norm2();
            if (have_force) val -= tau * cfg.mat.rho_s * wn * fmid(eta[n]).dot(try_b[n]);
          }
        }
      }
      if (gg) {
        std::fill(grad_full.begin(), grad_full.end(), Vec2{});
        if (hyper) {
          energy_reg_grad(g, try_eta, cfg.mat, h, cfg.reg, grad_full);
          dissipation_reg_grad_b(g, eta, try_b, h, grad_full);
        } else {
          energy_grad(g, try_eta, cfg.mat, grad_full);
          dissipation_grad_b(g, eta, try_b, grad_full);
        }
        if (hyper || have_force) {
          for (int j = 0; j < g.ny; ++j) {
            for (int i = 0; i < g.nx; ++i) {
              const int n = g.node(i, j);
              const double wn = node_w(g, i, j);
              if (hyper) grad_full[n] += (cfg.mat.rho_s / h * wn) * (try_b[n] - w[n]);
              if (have_force) grad_full[n] -= (cfg.mat.rho_s * wn) * fmid(eta[n]);
            }
          }
        }
      }
      if (fs) {
        if (gg) {
          std::fill(fluid_grad.begin(), fluid_grad.end(), Vec2{});
          val += tau * fs->eval(try_b, &fluid_grad, nullptr);
          for (int n = 0; n < g.nodes(); ++n) grad_full[n] += fluid_grad[n];
        } else {
          val += tau * fs->eval(try_b, nullptr, nullptr);
        }
        // Net-flux admissibility penalty: the rigid container and the
        // incompressible fluid leave no room for net solid volume change.
        // The weight is deliberately not tau-scaled, so against the O(tau)
        // step forces the residual interface flux shrinks like tau and the
        // constraint hardens in the small-step limit.  The penalty vanishes
        // at the null increment, so every descent comparison is unchanged.
        for (const Field& fc : fs->interface_flux_coeffs()) {
          double phi = 0;
          for (int n = 0; n < g.nodes(); ++n) phi += fc[n].dot(try_b[n]);
          val += 0.5 * kFluxPenalty * phi * phi;
          if (gg) {
            const double cphi = kFluxPenalty * phi / tau;
            for (int n = 0; n < g.nodes(); ++n) grad_full[n] += cphi * fc[n];
          }
        }
      }
      if (gg) {
        gg->resize(2 * free_nodes.size());
        for (size_t kk = 0; kk < free_nodes.size(); ++kk) {
          (*gg)[2 * kk] = grad_full[free_nodes[kk]].x;
          (*gg)[2 * kk + 1] = grad_full[free_nodes[kk]].y;
        }
      }
      return val;
    };

    std::vector<double> x;
    pack(eta, x);
    double f_null = 0, f_final = 0;
    try {
      MinimizeReport rep = minimize_lbfgs(obj, x, cfg.minopts);
      f_null = rep.f0;
      f_final = rep.f1;
    } catch (const LineSearchStall&) {
      // No strict decrease from standing still: accept the null increment.
      pack(eta, x);
      f_null = f_final = obj(x, nullptr);
      ++out.null_steps;
    }
    if (!(f_final <= f_null + 1e-12 * (1.0 + std::abs(f_null))))
      throw InequalityViolation("step objective increased: start " + fmt_g17(f_null) +
                                " end " + fmt_g17(f_final));

    Field eta_new = eta;
    unpack(x, eta_new);
    Field b_new(g.nodes());
    for (int n = 0; n < g.nodes(); ++n) b_new[n] = (eta_new[n] - eta[n]) * (1.0 / tau);

    LedgerRow row;
    row.step = k + 1;
    row.t = static_cast<double>(k + 1) * tau;
    row.E = energy(g, eta_new, cfg.mat);
    row.E_h = hyper ? energy_reg(g, eta_new, cfg.mat, h, cfg.reg) : row.E;
    row.R_step = tau * (hyper ? dissipation_reg(g, eta, b_new, h) : dissipation(g, eta, b_new));

    double work = 0;
    if (have_force) {
      for (int j = 0; j < g.ny; ++j) {
        for (int i = 0; i < g.nx; ++i) {
          const int n = g.node(i, j);
          work += tau * cfg.mat.rho_s * node_w(g, i, j) * fmid(eta[n]).dot(b_new[n]);
        }
      }
    }

    std::vector<Vec2> smpl;  // fluid velocity at (pre-advance) marker positions
    AdvanceReport adv;
    if (fs) {
      FluidSolution sol;
      fs->eval(b_new, nullptr, &sol);
      u_now = sol.u;
      v_now = sol.v;
      row.fluid_diss = tau * (sol.visc + sol.reg);
      work += tau * sol.work;
      out.max_korn_ratio = std::max(out.max_korn_ratio, sol.korn_ratio);
      if (hyper) {
        epoch_u[r] = u_now;
        epoch_v[r] = v_now;
        smpl.resize(ms.size());
        for (int m = 0; m < ms.size(); ++m)
          smpl[m] = interp_velocity(fg, u_now, v_now, ms.pos[m]);
        if (r == N - 1) {
          // Solid part of the transfer diagnostic: nodal vs cell-midpoint
          // quadrature of the delayed momentum difference paired with a
          // fixed smooth field.
          double solid_nodal = 0, solid_cell = 0;
          for (int j = 0; j < g.ny; ++j) {
            for (int i = 0; i < g.nx; ++i) {
              const int n = g.node(i, j);
              solid_nodal += cfg.mat.rho_s * node_w(g, i, j) *
                             (b_new[n] - w[n]).dot(mom_test(eta[n]));
            }
          }
          std::vector<CellJet> jb, jw, je;
          compute_jets(g, b_new, jb);
          compute_jets(g, w, jw);
          compute_jets(g, eta, je);
          for (int c = 0; c < g.cells(); ++c) {
            solid_cell += cfg.mat.rho_s * g.cell_area() *
                          (jb[c].value - jw[c].value).dot(mom_test(je[c].value));
          }
          momentum_defect_stage = std::abs(solid_nodal - solid_cell);
        }
      }
    }
    row.work_f = work;

    if (hyper) {
      s_sol[r] = solid_kinetic_sample(b_new);
      double sum_s = 0;
      for (double s : s_sol) sum_s += s;
      row.kin_avg_solid = 0.5 * cfg.mat.rho_s * sum_s / N;
      if (fsi) {
        s_flu[r] = marker_kinetic_sample(smpl);
        double sum_f = 0;
        for (double s : s_flu) sum_f += s;
        row.kin_avg_fluid = 0.5 * cfg.mat.rho_f * sum_f / N;
      }
    }

    bool det_stop = false;
    if (fs && hyper) {
      if (r == N - 1) {
        // Fluid part of the transfer diagnostic before the slots rotate:
        // quadrature mismatch between seeding weights and transported volume.
        double fluid_def = 0;
        for (int m = 0; m < ms.size(); ++m) {
          fluid_def += cfg.mat.rho_f * ms.weight[m] * (ms.J[m].det() - 1.0) *
                       (smpl[m] - mslot[r][m]).dot(mom_test(ms.pos[m]));
        }
        momentum_defect_stage += std::abs(fluid_def);
      }
      adv = advance_markers(ms, fg, u_now, v_now, tau);
      const double drift = std::max(std::abs(adv.min_det - 1.0), std::abs(adv.max_det - 1.0));
      row.max_detJ_drift = std::max(out.rows.back().max_detJ_drift, drift);
      if (adv.min_det < cfg.detJ_lo || adv.max_det > cfg.detJ_hi) det_stop = true;
      for (int m = 0; m < ms.size(); ++m) mslot[r][m] = smpl[m];
    } else {
      row.max_detJ_drift = out.rows.back().max_detJ_drift;
    }
    if (hyper) wslot[r] = b_new;

    const CnReport cn =
        ciarlet_necas(g, eta_new, cfg.box, cfg.cn_raster_x, cfg.cn_raster_y, cfg.cn_supersample);
    if (cn.defect > cn.tol)
      throw InequalityViolation("overlap defect " + fmt_g17(cn.defect) +
                                " above raster tolerance " + fmt_g17(cn.tol) + " at step " +
                                std::to_string(k + 1));
    row.cn_defect = cn.defect;
    row.min_det_eta = min_det(g, eta_new);
    const ClearanceReport cl = boundary_clearance(g, loop, eta_new, cfg.box);
    row.self_distance = std::min(cl.self_distance, cl.wall_distance);

    checker.append(row);
    out.rows.push_back(row);
    eta = eta_new;
    t = row.t;
    if (cfg.snapshot_stride > 0 && (k + 1) % cfg.snapshot_stride == 0) {
      out.snap_times.push_back(t);
      out.snapshots.push_back(eta);
    }

    if (hyper && r == N - 1) close_epoch(k);

    if (row.self_distance < cfg.collision_stop) {
      out.stop = StopReason::collision;
      out.stop_time = t;
      out.stop_detail = "boundary clearance " + fmt_g17(row.self_distance) +
                        " fell below " + fmt_g17(cfg.collision_stop);
      return false;
    }
    if (det_stop) {
      out.stop = StopReason::det_drift;
      out.stop_time = t;
      out.stop_detail = "flow-map det range [" + fmt_g17(adv.min_det) + ", " +
                        fmt_g17(adv.max_det) + "] left the guard band";
      return false;
    }
    return true;
  }

  void close_epoch(long long k) {
    EpochSummary ep;
    ep.epoch = static_cast<int>((k + 1) / N);
    ep.t_end = t;
    const size_t i_end = out.rows.size() - 1;
    const size_t i_start = i_end - N;
    const LedgerRow& a = out.rows[i_start];
    const LedgerRow& b = out.rows[i_end];
    double sum_work = 0, sum_diss = 0, sum_single = 0;
    for (size_t i = i_start + 1; i <= i_end; ++i) {
      sum_work += out.rows[i].work_f;
      sum_diss += out.rows[i].R_step + out.rows[i].fluid_diss;
      sum_single += out.rows[i].slack_single;
    }
    ep.slack_certified = sum_single;
    ep.slack_sharp = (a.E_h + a.kin_avg_solid + a.kin_avg_fluid + sum_work) -
                     (b.E_h + b.kin_avg_solid + b.kin_avg_fluid + 2.0 * sum_diss);
    ep.momentum_defect = momentum_defect_stage;
    momentum_defect_stage = 0;

    if (fsi) {
      // Return accuracy of the window's flow map: run the stored fields
      // backwards and compare with the seeding positions.
      double err = 0;
      for (int m = 0; m < ms.size(); ++m) {
        Vec2 z = ms.pos[m];
        for (int s = N - 1; s >= 0; --s)
          z = backward_step(fg, epoch_u[s], epoch_v[s], tau, z, cfg.backward_iters);
        err = std::max(err, (z - ms.origin[m]).norm());
      }
      ep.flow_return_err = err;

      // Rebase the flow map for the next window: markers keep their sampled
      // velocity history, drop when swallowed by the solid image, and fresh
      // zero-history markers fill uncovered fluid cells.
      const DeformedGeometry geo = build_deformed_geometry(g, eta);
      std::vector<int> keep;
      keep.reserve(ms.size());
      for (int m = 0; m < ms.size(); ++m) {
        if (!locate_in_image(g, geo, ms.pos[m])) keep.push_back(m);
      }
      MarkerSet next;
      std::vector<std::vector<Vec2>> next_slot(N);
      for (int s = 0; s < N; ++s) next_slot[s].reserve(keep.size());
      for (int m : keep) {
        next.origin.push_back(ms.pos[m]);
        next.pos.push_back(ms.pos[m]);
        next.J.push_back(Mat2::identity());
        next.weight.push_back(ms.weight[m]);
        next.w.push_back(mslot[N - 1][m]);
        for (int s = 0; s < N; ++s) next_slot[s].push_back(mslot[s][m]);
      }
      std::vector<std::uint8_t> occupied(fg.ncells(), 0);
      for (const Vec2& p : next.pos) {
        const int ci = std::clamp(static_cast<int>(p.x / fg.hx()), 0, fg.mx - 1);
        const int cj = std::clamp(static_cast<int>(p.y / fg.hy()), 0, fg.my - 1);
        occupied[fg.cell(ci, cj)] = 1;
      }
      const auto mask = classify_cells(geo);
      for (int j = 0; j < fg.my; ++j) {
        for (int i = 0; i < fg.mx; ++i) {
          const int c = fg.cell(i, j);
          if (mask[c] || occupied[c]) continue;
          next.push(fg.cell_center(i, j), fg.hx() * fg.hy(), Vec2{});
          for (int s = 0; s < N; ++s) next_slot[s].push_back(Vec2{});
        }
      }
      ms = std::move(next);
      mslot = std::move(next_slot);
    }
    out.epochs.push_back(ep);
  }

  void finish() {
    if (out.snap_times.empty() || out.snap_times.back() != t) {
      out.snap_times.push_back(t);
      out.snapshots.push_back(eta);
    }
    out.eta_final = eta;
    if (fsi) {
      out.u_final = u_now;
      out.v_final = v_now;
      out.cell_solid_final = last_mask;
      if (hyper) out.markers_final = ms;
    }
    if (out.stop == StopReason::completed) out.stop_time = t;
  }
};

}  // namespace

TrajectoryRecord run_scheme(const SchemeConfig& cfg) {
  Runner r(cfg);
  r.setup();
  for (long long k = 0; k < r.steps; ++k) {
    if (!r.step(k)) break;
  }
  r.finish();
  return std::move(r.out);
}

}  // namespace varistep
