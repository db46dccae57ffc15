#include "varistep/raster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace varistep {

namespace {

double shoelace(const std::array<Vec2, 4>& q) {
  double s = 0.0;
  for (int k = 0; k < 4; ++k) {
    const Vec2& a = q[k];
    const Vec2& b = q[(k + 1) % 4];
    s += a.x * b.y - b.x * a.y;
  }
  return 0.5 * s;
}

}  // namespace

DeformedGeometry build_deformed_geometry(const SolidGrid& g, const Field& eta) {
  DeformedGeometry geo;
  const int cx = g.cells_x(), cy = g.cells_y();
  geo.quad.resize(static_cast<std::size_t>(cx) * cy);
  geo.bbox.resize(geo.quad.size());
  geo.xmin = geo.ymin = std::numeric_limits<double>::infinity();
  geo.xmax = geo.ymax = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < cy; ++j) {
    for (int i = 0; i < cx; ++i) {
      std::array<Vec2, 4>& q = geo.quad[g.cell(i, j)];
      q[0] = eta[g.node(i, j)];
      q[1] = eta[g.node(i + 1, j)];
      q[2] = eta[g.node(i + 1, j + 1)];
      q[3] = eta[g.node(i, j + 1)];
      if (!(shoelace(q) > 0.0))
        throw DegenerateElement("deformed element has non-positive area");
      std::array<double, 4>& b = geo.bbox[g.cell(i, j)];
      b[0] = std::min(std::min(q[0].x, q[1].x), std::min(q[2].x, q[3].x));
      b[1] = std::max(std::max(q[0].x, q[1].x), std::max(q[2].x, q[3].x));
      b[2] = std::min(std::min(q[0].y, q[1].y), std::min(q[2].y, q[3].y));
      b[3] = std::max(std::max(q[0].y, q[1].y), std::max(q[2].y, q[3].y));
      geo.xmin = std::min(geo.xmin, b[0]);
      geo.xmax = std::max(geo.xmax, b[1]);
      geo.ymin = std::min(geo.ymin, b[2]);
      geo.ymax = std::max(geo.ymax, b[3]);
    }
  }
  return geo;
}

bool point_in_quad(const std::array<Vec2, 4>& q, Vec2 p) {
  // Even-odd rule: count edge crossings of a ray going in +x from p.
  bool inside = false;
  for (int k = 0; k < 4; ++k) {
    const Vec2& a = q[k];
    const Vec2& b = q[(k + 1) % 4];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x_at = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
      if (p.x < x_at) inside = !inside;
    }
  }
  return inside;
}

std::optional<RefLoc> locate_in_image(const SolidGrid& g, const DeformedGeometry& geo, Vec2 p) {
  if (p.x < geo.xmin || p.x > geo.xmax || p.y < geo.ymin || p.y > geo.ymax) return std::nullopt;
  const int cx = g.cells_x(), cy = g.cells_y();
  for (int j = 0; j < cy; ++j) {
    for (int i = 0; i < cx; ++i) {
      const int c = g.cell(i, j);
      const std::array<double, 4>& b = geo.bbox[c];
      if (p.x < b[0] || p.x > b[1] || p.y < b[2] || p.y > b[3]) continue;
      if (!point_in_quad(geo.quad[c], p)) continue;
      // Invert the bilinear map x(u,v) = q0 + u e1 + v e2 + uv e3 by Newton.
      const std::array<Vec2, 4>& q = geo.quad[c];
      const Vec2 e1 = q[1] - q[0], e2 = q[3] - q[0], e3 = q[2] - q[1] - (q[3] - q[0]);
      Vec2 uv{0.5, 0.5};
      for (int it = 0; it < 30; ++it) {
        const Vec2 x = q[0] + e1 * uv.x + e2 * uv.y + e3 * (uv.x * uv.y);
        const Vec2 r = x - p;
        if (r.norm2() < 1e-28) break;
        const Mat2 J{e1.x + e3.x * uv.y, e2.x + e3.x * uv.x,
                     e1.y + e3.y * uv.y, e2.y + e3.y * uv.x};
        const double det = J.det();
        if (std::abs(det) < 1e-300) break;
        const Vec2 d{(J.m11 * r.x - J.m01 * r.y) / det, (-J.m10 * r.x + J.m00 * r.y) / det};
        uv -= d;
      }
      uv.x = std::clamp(uv.x, 0.0, 1.0);
      uv.y = std::clamp(uv.y, 0.0, 1.0);
      return RefLoc{i, j, uv};
    }
  }
  return std::nullopt;
}

RefLoc locate_nearest(const SolidGrid& g, const DeformedGeometry& geo, Vec2 p) {
  const int cx = g.cells_x(), cy = g.cells_y();
  RefLoc best;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (int j = 0; j < cy; ++j) {
    for (int i = 0; i < cx; ++i) {
      const int c = g.cell(i, j);
      const std::array<double, 4>& b = geo.bbox[c];
      // Cheap lower bound on the distance to this quad.
      const double ddx = std::max({b[0] - p.x, p.x - b[1], 0.0});
      const double ddy = std::max({b[2] - p.y, p.y - b[3], 0.0});
      if (ddx * ddx + ddy * ddy >= best_d2) continue;
      const std::array<Vec2, 4>& q = geo.quad[c];
      const Vec2 e1 = q[1] - q[0], e2 = q[3] - q[0], e3 = q[2] - q[1] - (q[3] - q[0]);
      Vec2 uv{0.5, 0.5};
      for (int it = 0; it < 30; ++it) {
        const Vec2 x = q[0] + e1 * uv.x + e2 * uv.y + e3 * (uv.x * uv.y);
        const Vec2 r = x - p;
        if (r.norm2() < 1e-28) break;
        const Mat2 J{e1.x + e3.x * uv.y, e2.x + e3.x * uv.x,
                     e1.y + e3.y * uv.y, e2.y + e3.y * uv.x};
        const double det = J.det();
        if (std::abs(det) < 1e-300) break;
        const Vec2 d{(J.m11 * r.x - J.m01 * r.y) / det, (-J.m10 * r.x + J.m00 * r.y) / det};
        uv -= d;
      }
      uv.x = std::clamp(uv.x, 0.0, 1.0);
      uv.y = std::clamp(uv.y, 0.0, 1.0);
      const Vec2 x = q[0] + e1 * uv.x + e2 * uv.y + e3 * (uv.x * uv.y);
      const double d2 = (x - p).norm2();
      if (d2 < best_d2) {
        best_d2 = d2;
        best = RefLoc{i, j, uv};
        if (best_d2 < 1e-24) return best;
      }
    }
  }
  return best;
}

double deformed_volume(const SolidGrid& g, const Field& eta) {
  const int cx = g.cells_x(), cy = g.cells_y();
  double vol = 0.0;
  for (int j = 0; j < cy; ++j)
    for (int i = 0; i < cx; ++i) {
      const std::array<Vec2, 4> q{eta[g.node(i, j)], eta[g.node(i + 1, j)],
                                  eta[g.node(i + 1, j + 1)], eta[g.node(i, j + 1)]};
      vol += shoelace(q);
    }
  return vol;
}

double image_volume(const DeformedGeometry& geo, const Box& box, int raster_nx, int raster_ny,
                    int supersample) {
  const int ss = supersample;
  const int sx = raster_nx * ss, sy = raster_ny * ss;
  const double hx = box.lx / sx, hy = box.ly / sy;
  std::vector<std::uint8_t> covered(static_cast<std::size_t>(sx) * sy, 0);
  for (std::size_t c = 0; c < geo.quad.size(); ++c) {
    const std::array<double, 4>& b = geo.bbox[c];
    int i0 = static_cast<int>(std::floor(b[0] / hx - 0.5));
    int i1 = static_cast<int>(std::ceil(b[1] / hx - 0.5));
    int j0 = static_cast<int>(std::floor(b[2] / hy - 0.5));
    int j1 = static_cast<int>(std::ceil(b[3] / hy - 0.5));
    i0 = std::max(i0, 0);
    j0 = std::max(j0, 0);
    i1 = std::min(i1, sx - 1);
    j1 = std::min(j1, sy - 1);
    for (int j = j0; j <= j1; ++j) {
      for (int i = i0; i <= i1; ++i) {
        std::uint8_t& flag = covered[static_cast<std::size_t>(j) * sx + i];
        if (flag) continue;
        const Vec2 p{(i + 0.5) * hx, (j + 0.5) * hy};
        if (point_in_quad(geo.quad[c], p)) flag = 1;
      }
    }
  }
  std::size_t n = 0;
  for (std::uint8_t f : covered) n += f;
  return static_cast<double>(n) * hx * hy;
}

CnReport ciarlet_necas(const SolidGrid& g, const Field& eta, const Box& box, int raster_nx,
                       int raster_ny, int supersample) {
  DeformedGeometry geo = build_deformed_geometry(g, eta);
  CnReport rep;
  rep.volume = deformed_volume(g, eta);
  rep.image = image_volume(geo, box, raster_nx, raster_ny, supersample);
  rep.defect = rep.volume - rep.image;
  // Deformed boundary length from the node polyline.
  double per = 0.0;
  auto seg = [&](int ia, int ja, int ib, int jb) {
    per += (eta[g.node(ib, jb)] - eta[g.node(ia, ja)]).norm();
  };
  for (int i = 0; i + 1 < g.nx; ++i) seg(i, 0, i + 1, 0);
  for (int j = 0; j + 1 < g.ny; ++j) seg(g.nx - 1, j, g.nx - 1, j + 1);
  for (int i = g.nx - 1; i > 0; --i) seg(i, g.ny - 1, i - 1, g.ny - 1);
  for (int j = g.ny - 1; j > 0; --j) seg(0, j, 0, j - 1);
  rep.perimeter = per;
  const double cell = std::max(box.lx / raster_nx, box.ly / raster_ny);
  rep.tol = 2.0 * per * cell;
  return rep;
}

ClearanceReport boundary_clearance(const SolidGrid& g, const BoundaryLoop& loop, const Field& eta,
                                   const Box& box, double adjacency_frac) {
  const std::size_t n = loop.ref_points.size();
  std::vector<Vec2> pos(n);
  for (std::size_t s = 0; s < n; ++s) pos[s] = eval_bilinear(g, eta, loop.ref_points[s]);
  ClearanceReport rep;
  rep.self_distance = std::numeric_limits<double>::infinity();
  rep.wall_distance = std::numeric_limits<double>::infinity();
  const double window = adjacency_frac * loop.perimeter;
  for (std::size_t s = 0; s < n; ++s) {
    const Vec2 p = pos[s];
    rep.wall_distance =
        std::min(rep.wall_distance,
                 std::min(std::min(p.x, box.lx - p.x), std::min(p.y, box.ly - p.y)));
    for (std::size_t t = s + 1; t < n; ++t) {
      double darc = std::abs(loop.arc[t] - loop.arc[s]);
      darc = std::min(darc, loop.perimeter - darc);  // circular separation
      if (darc <= window) continue;
      rep.self_distance = std::min(rep.self_distance, (pos[t] - pos[s]).norm());
    }
  }
  return rep;
}

}  // namespace varistep
