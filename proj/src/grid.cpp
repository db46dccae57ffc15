#include "varistep/grid.hpp"

#include <algorithm>
#include <cassert>
#include <cstdio>

namespace varistep {

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

SolidGrid make_solid_grid(int nx, int ny, double lx, double ly) {
  if (nx < 2 || ny < 2) throw ValidationError("solid grid needs at least 2x2 nodes");
  if (lx <= 0 || ly <= 0) throw ValidationError("solid grid extents must be positive");
  SolidGrid g;
  g.nx = nx;
  g.ny = ny;
  g.lx = lx;
  g.ly = ly;
  g.pinned.assign(static_cast<std::size_t>(nx) * ny, 0);
  for (int i = 0; i < nx; ++i) g.pinned[g.node(i, 0)] = 1;  // bottom edge held
  return g;
}

Field identity_field(const SolidGrid& g) {
  Field f(g.nodes());
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) f[g.node(i, j)] = g.ref_pos(i, j);
  return f;
}

Field translated_field(const SolidGrid& g, Vec2 shift) {
  Field f = identity_field(g);
  for (auto& p : f) p += shift;
  return f;
}

// 4-point midpoint stencils for the second derivative along one axis,
// evaluated at the midpoint of cell ic on an axis with n nodes. Returns the
// first node index of the stencil window and writes 4 coefficients (per unit
// spacing^2). Interior: nodes (ic-1..ic+2), coeffs (1,-1,-1,1)/2 — exact for
// cubics. At the first/last cell the window shifts and the coefficients come
// from the cubic interpolant's second derivative at the midpoint.
static int second_diff_stencil(int n, int ic, double c[4]) {
  assert(n >= 4);
  if (ic == 0) {
    c[0] = 1.5; c[1] = -3.5; c[2] = 2.5; c[3] = -0.5;
    return 0;
  }
  if (ic == n - 2) {
    c[0] = -0.5; c[1] = 2.5; c[2] = -3.5; c[3] = 1.5;
    return n - 4;
  }
  c[0] = 0.5; c[1] = -0.5; c[2] = -0.5; c[3] = 0.5;
  return ic - 1;
}

void compute_jets(const SolidGrid& g, const Field& f, std::vector<CellJet>& out) {
  assert(static_cast<int>(f.size()) == g.nodes());
  const int cx = g.cells_x(), cy = g.cells_y();
  out.assign(static_cast<std::size_t>(cx) * cy, CellJet{});
  const double dx = g.dx(), dy = g.dy();
  const double inv2dx = 1.0 / (2.0 * dx), inv2dy = 1.0 / (2.0 * dy);
  const double invdx2 = 1.0 / (dx * dx), invdy2 = 1.0 / (dy * dy);
  const double invdxdy = 1.0 / (dx * dy);
  const bool have_gx = g.nx >= 4, have_gy = g.ny >= 4;

  for (int j = 0; j < cy; ++j) {
    for (int i = 0; i < cx; ++i) {
      CellJet& jet = out[g.cell(i, j)];
      const Vec2 p00 = f[g.node(i, j)], p10 = f[g.node(i + 1, j)];
      const Vec2 p01 = f[g.node(i, j + 1)], p11 = f[g.node(i + 1, j + 1)];
      jet.value = (p00 + p10 + p01 + p11) * 0.25;
      // First gradient: transverse-averaged two-point differences, centered
      // at the cell midpoint (exact for quadratics).
      jet.F.m00 = (p10.x - p00.x + p11.x - p01.x) * inv2dx;
      jet.F.m10 = (p10.y - p00.y + p11.y - p01.y) * inv2dx;
      jet.F.m01 = (p01.x - p00.x + p11.x - p10.x) * inv2dy;
      jet.F.m11 = (p01.y - p00.y + p11.y - p10.y) * inv2dy;
      // Mixed second derivative from the compact cross difference.
      const Vec2 cross = (p11 - p01 - p10 + p00) * invdxdy;
      jet.G[0][1] = cross.x;
      jet.G[1][1] = cross.y;
      // Pure second derivatives: 4-point midpoint stencil along the axis,
      // averaged over the two transverse node lines.
      if (have_gx) {
        double c[4];
        const int i0 = second_diff_stencil(g.nx, i, c);
        double sx = 0.0, sy = 0.0;
        for (int k = 0; k < 4; ++k) {
          const Vec2 lo = f[g.node(i0 + k, j)], hi = f[g.node(i0 + k, j + 1)];
          sx += c[k] * 0.5 * (lo.x + hi.x);
          sy += c[k] * 0.5 * (lo.y + hi.y);
        }
        jet.G[0][0] = sx * invdx2;
        jet.G[1][0] = sy * invdx2;
      }
      if (have_gy) {
        double c[4];
        const int j0 = second_diff_stencil(g.ny, j, c);
        double sx = 0.0, sy = 0.0;
        for (int k = 0; k < 4; ++k) {
          const Vec2 lo = f[g.node(i, j0 + k)], hi = f[g.node(i + 1, j0 + k)];
          sx += c[k] * 0.5 * (lo.x + hi.x);
          sy += c[k] * 0.5 * (lo.y + hi.y);
        }
        jet.G[0][2] = sx * invdy2;
        jet.G[1][2] = sy * invdy2;
      }
    }
  }
}

void accumulate_jet_adjoint(const SolidGrid& g, const std::vector<CellJetAdjoint>& adj,
                            Field& grad) {
  assert(static_cast<int>(adj.size()) == g.cells());
  assert(static_cast<int>(grad.size()) == g.nodes());
  const int cx = g.cells_x(), cy = g.cells_y();
  const double dx = g.dx(), dy = g.dy();
  const double inv2dx = 1.0 / (2.0 * dx), inv2dy = 1.0 / (2.0 * dy);
  const double invdx2 = 1.0 / (dx * dx), invdy2 = 1.0 / (dy * dy);
  const double invdxdy = 1.0 / (dx * dy);
  const bool have_gx = g.nx >= 4, have_gy = g.ny >= 4;

  for (int j = 0; j < cy; ++j) {
    for (int i = 0; i < cx; ++i) {
      const CellJetAdjoint& a = adj[g.cell(i, j)];
      const int n00 = g.node(i, j), n10 = g.node(i + 1, j);
      const int n01 = g.node(i, j + 1), n11 = g.node(i + 1, j + 1);
      // F chain (x-derivative then y-derivative), per component.
      grad[n10].x += a.dF.m00 * inv2dx; grad[n11].x += a.dF.m00 * inv2dx;
      grad[n00].x -= a.dF.m00 * inv2dx; grad[n01].x -= a.dF.m00 * inv2dx;
      grad[n10].y += a.dF.m10 * inv2dx; grad[n11].y += a.dF.m10 * inv2dx;
      grad[n00].y -= a.dF.m10 * inv2dx; grad[n01].y -= a.dF.m10 * inv2dx;
      grad[n01].x += a.dF.m01 * inv2dy; grad[n11].x += a.dF.m01 * inv2dy;
      grad[n00].x -= a.dF.m01 * inv2dy; grad[n10].x -= a.dF.m01 * inv2dy;
      grad[n01].y += a.dF.m11 * inv2dy; grad[n11].y += a.dF.m11 * inv2dy;
      grad[n00].y -= a.dF.m11 * inv2dy; grad[n10].y -= a.dF.m11 * inv2dy;
      // Mixed G chain.
      grad[n11].x += a.dG[0][1] * invdxdy; grad[n00].x += a.dG[0][1] * invdxdy;
      grad[n01].x -= a.dG[0][1] * invdxdy; grad[n10].x -= a.dG[0][1] * invdxdy;
      grad[n11].y += a.dG[1][1] * invdxdy; grad[n00].y += a.dG[1][1] * invdxdy;
      grad[n01].y -= a.dG[1][1] * invdxdy; grad[n10].y -= a.dG[1][1] * invdxdy;
      // Pure G chains.
      if (have_gx) {
        double c[4];
        const int i0 = second_diff_stencil(g.nx, i, c);
        for (int k = 0; k < 4; ++k) {
          const double w = c[k] * 0.5 * invdx2;
          grad[g.node(i0 + k, j)].x += a.dG[0][0] * w;
          grad[g.node(i0 + k, j + 1)].x += a.dG[0][0] * w;
          grad[g.node(i0 + k, j)].y += a.dG[1][0] * w;
          grad[g.node(i0 + k, j + 1)].y += a.dG[1][0] * w;
        }
      }
      if (have_gy) {
        double c[4];
        const int j0 = second_diff_stencil(g.ny, j, c);
        for (int k = 0; k < 4; ++k) {
          const double w = c[k] * 0.5 * invdy2;
          grad[g.node(i, j0 + k)].x += a.dG[0][2] * w;
          grad[g.node(i + 1, j0 + k)].x += a.dG[0][2] * w;
          grad[g.node(i, j0 + k)].y += a.dG[1][2] * w;
          grad[g.node(i + 1, j0 + k)].y += a.dG[1][2] * w;
        }
      }
    }
  }
}

// --------------------------------------------------------------------------
// Third differences. Multinomial-weighted components (xxx,xxy,xyy,yyy) with
// weights (1,3,3,1); quadrature weight dx*dy per stencil window.

double third_diff_norm2(const SolidGrid& g, const Field& f) {
  const double dx = g.dx(), dy = g.dy();
  const double w = dx * dy;
  const double ix3 = 1.0 / (dx * dx * dx), iy3 = 1.0 / (dy * dy * dy);
  const double ix2y = 1.0 / (dx * dx * dy), ixy2 = 1.0 / (dx * dy * dy);
  double acc = 0.0;
  if (g.nx >= 4) {  // xxx
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i + 3 < g.nx; ++i) {
        const Vec2 d = (f[g.node(i + 3, j)] - 3.0 * f[g.node(i + 2, j)] +
                        3.0 * f[g.node(i + 1, j)] - f[g.node(i, j)]) * ix3;
        acc += w * d.norm2();
      }
  }
  if (g.ny >= 4) {  // yyy
    for (int j = 0; j + 3 < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) {
        const Vec2 d = (f[g.node(i, j + 3)] - 3.0 * f[g.node(i, j + 2)] +
                        3.0 * f[g.node(i, j + 1)] - f[g.node(i, j)]) * iy3;
        acc += w * d.norm2();
      }
  }
  if (g.nx >= 3 && g.ny >= 2) {  // xxy, weight 3
    for (int j = 0; j + 1 < g.ny; ++j)
      for (int i = 0; i + 2 < g.nx; ++i) {
        const Vec2 hi = f[g.node(i, j + 1)] - 2.0 * f[g.node(i + 1, j + 1)] + f[g.node(i + 2, j + 1)];
        const Vec2 lo = f[g.node(i, j)] - 2.0 * f[g.node(i + 1, j)] + f[g.node(i + 2, j)];
        const Vec2 d = (hi - lo) * ix2y;
        acc += 3.0 * w * d.norm2();
      }
  }
  if (g.ny >= 3 && g.nx >= 2) {  // xyy, weight 3
    for (int j = 0; j + 2 < g.ny; ++j)
      for (int i = 0; i + 1 < g.nx; ++i) {
        const Vec2 hi = f[g.node(i + 1, j)] - 2.0 * f[g.node(i + 1, j + 1)] + f[g.node(i + 1, j + 2)];
        const Vec2 lo = f[g.node(i, j)] - 2.0 * f[g.node(i, j + 1)] + f[g.node(i, j + 2)];
        const Vec2 d = (hi - lo) * ixy2;
        acc += 3.0 * w * d.norm2();
      }
  }
  return acc;
}

void third_diff_norm2_grad(const SolidGrid& g, const Field& f, double coeff, Field& grad) {
  assert(grad.size() == f.size());
  const double dx = g.dx(), dy = g.dy();
  const double w = dx * dy;
  const double ix3 = 1.0 / (dx * dx * dx), iy3 = 1.0 / (dy * dy * dy);
  const double ix2y = 1.0 / (dx * dx * dy), ixy2 = 1.0 / (dx * dy * dy);
  if (g.nx >= 4) {
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i + 3 < g.nx; ++i) {
        const Vec2 d = (f[g.node(i + 3, j)] - 3.0 * f[g.node(i + 2, j)] +
                        3.0 * f[g.node(i + 1, j)] - f[g.node(i, j)]) * ix3;
        const Vec2 s = d * (2.0 * w * coeff * ix3);
        grad[g.node(i + 3, j)] += s;
        grad[g.node(i + 2, j)] -= 3.0 * s;
        grad[g.node(i + 1, j)] += 3.0 * s;
        grad[g.node(i, j)] -= s;
      }
  }
  if (g.ny >= 4) {
    for (int j = 0; j + 3 < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) {
        const Vec2 d = (f[g.node(i, j + 3)] - 3.0 * f[g.node(i, j + 2)] +
                        3.0 * f[g.node(i, j + 1)] - f[g.node(i, j)]) * iy3;
        const Vec2 s = d * (2.0 * w * coeff * iy3);
        grad[g.node(i, j + 3)] += s;
        grad[g.node(i, j + 2)] -= 3.0 * s;
        grad[g.node(i, j + 1)] += 3.0 * s;
        grad[g.node(i, j)] -= s;
      }
  }
  if (g.nx >= 3 && g.ny >= 2) {
    for (int j = 0; j + 1 < g.ny; ++j)
      for (int i = 0; i + 2 < g.nx; ++i) {
        const Vec2 hi = f[g.node(i, j + 1)] - 2.0 * f[g.node(i + 1, j + 1)] + f[g.node(i + 2, j + 1)];
        const Vec2 lo = f[g.node(i, j)] - 2.0 * f[g.node(i + 1, j)] + f[g.node(i + 2, j)];
        const Vec2 d = (hi - lo) * ix2y;
        const Vec2 s = d * (2.0 * 3.0 * w * coeff * ix2y);
        grad[g.node(i, j + 1)] += s;
        grad[g.node(i + 1, j + 1)] -= 2.0 * s;
        grad[g.node(i + 2, j + 1)] += s;
        grad[g.node(i, j)] -= s;
        grad[g.node(i + 1, j)] += 2.0 * s;
        grad[g.node(i + 2, j)] -= s;
      }
  }
  if (g.ny >= 3 && g.nx >= 2) {
    for (int j = 0; j + 2 < g.ny; ++j)
      for (int i = 0; i + 1 < g.nx; ++i) {
        const Vec2 hi = f[g.node(i + 1, j)] - 2.0 * f[g.node(i + 1, j + 1)] + f[g.node(i + 1, j + 2)];
        const Vec2 lo = f[g.node(i, j)] - 2.0 * f[g.node(i, j + 1)] + f[g.node(i, j + 2)];
        const Vec2 d = (hi - lo) * ixy2;
        const Vec2 s = d * (2.0 * 3.0 * w * coeff * ixy2);
        grad[g.node(i + 1, j)] += s;
        grad[g.node(i + 1, j + 1)] -= 2.0 * s;
        grad[g.node(i + 1, j + 2)] += s;
        grad[g.node(i, j)] -= s;
        grad[g.node(i, j + 1)] += 2.0 * s;
        grad[g.node(i, j + 2)] -= s;
      }
  }
}

double w12_norm2(const SolidGrid& g, const Field& f) {
  std::vector<CellJet> jets;
  compute_jets(g, f, jets);
  const double w = g.cell_area();
  double acc = 0.0;
  for (const CellJet& jet : jets) acc += w * (jet.value.norm2() + jet.F.frob2());
  return acc;
}

BoundaryLoop boundary_loop(const SolidGrid& g, int per_segment) {
  assert(per_segment >= 1);
  BoundaryLoop loop;
  const double dx = g.dx(), dy = g.dy();
  // Corner-to-corner walk: bottom (left->right), right (up), top (right->left),
  // left (down). Each node-to-node segment contributes per_segment samples
  // (segment start included, end excluded; the loop closes on itself).
  auto emit = [&](Vec2 a, Vec2 b, double seg_len) {
    for (int s = 0; s < per_segment; ++s) {
      const double t = static_cast<double>(s) / per_segment;
      loop.ref_points.push_back({a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t});
      loop.arc.push_back(loop.perimeter + t * seg_len);
    }
    loop.perimeter += seg_len;
  };
  for (int i = 0; i + 1 < g.nx; ++i) emit(g.ref_pos(i, 0), g.ref_pos(i + 1, 0), dx);
  for (int j = 0; j + 1 < g.ny; ++j) emit(g.ref_pos(g.nx - 1, j), g.ref_pos(g.nx - 1, j + 1), dy);
  for (int i = g.nx - 1; i > 0; --i) emit(g.ref_pos(i, g.ny - 1), g.ref_pos(i - 1, g.ny - 1), dx);
  for (int j = g.ny - 1; j > 0; --j) emit(g.ref_pos(0, j), g.ref_pos(0, j - 1), dy);
  return loop;
}

Vec2 eval_bilinear(const SolidGrid& g, const Field& f, Vec2 ref) {
  // Clamp to the reference rectangle, then locate the containing cell.
  double rx = ref.x / g.dx(), ry = ref.y / g.dy();
  int i = static_cast<int>(rx), j = static_cast<int>(ry);
  if (i < 0) i = 0;
  if (j < 0) j = 0;
  if (i > g.nx - 2) i = g.nx - 2;
  if (j > g.ny - 2) j = g.ny - 2;
  double u = rx - i, v = ry - j;
  u = std::clamp(u, 0.0, 1.0);
  v = std::clamp(v, 0.0, 1.0);
  const Vec2 p00 = f[g.node(i, j)], p10 = f[g.node(i + 1, j)];
  const Vec2 p01 = f[g.node(i, j + 1)], p11 = f[g.node(i + 1, j + 1)];
  return p00 * ((1 - u) * (1 - v)) + p10 * (u * (1 - v)) + p01 * ((1 - u) * v) + p11 * (u * v);
}

}  // namespace varistep
