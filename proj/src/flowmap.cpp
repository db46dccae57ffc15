#include "varistep/flowmap.hpp"

#include <algorithm>
#include <cmath>

namespace varistep {

MarkerSet seed_markers(const FluidGrid& fg, const std::vector<std::uint8_t>& cell_solid) {
  MarkerSet ms;
  const double area = fg.hx() * fg.hy();
  for (int j = 0; j < fg.my; ++j)
    for (int i = 0; i < fg.mx; ++i)
      if (!cell_solid[fg.cell(i, j)]) ms.push(fg.cell_center(i, j), area, {0.0, 0.0});
  return ms;
}

AdvanceReport advance_markers(MarkerSet& ms, const FluidGrid& fg, const std::vector<double>& u,
                              const std::vector<double>& v, double tau) {
  AdvanceReport rep;
  rep.min_det = kInf;
  rep.max_det = -kInf;
  const double tol = 1e-9;
  for (int m = 0; m < ms.size(); ++m) {
    const Vec2 p = ms.pos[m];
    const Vec2 vel = interp_velocity(fg, u, v, p);
    const Mat2 gv = interp_velocity_gradient(fg, u, v, p);
    Vec2 q = p + vel * tau;
    if (q.x < -tol || q.x > fg.lx + tol || q.y < -tol || q.y > fg.ly + tol)
      throw MarkerEscaped("marker left the container");
    q.x = std::clamp(q.x, 0.0, fg.lx);
    q.y = std::clamp(q.y, 0.0, fg.ly);
    ms.pos[m] = q;
    const Mat2 step{1.0 + tau * gv.m00, tau * gv.m01, tau * gv.m10, 1.0 + tau * gv.m11};
    ms.J[m] = step * ms.J[m];
    const double det = ms.J[m].det();
    rep.min_det = std::min(rep.min_det, det);
    rep.max_det = std::max(rep.max_det, det);
  }
  if (ms.size() == 0) {
    rep.min_det = 1.0;
    rep.max_det = 1.0;
  }
  return rep;
}

Vec2 backward_step(const FluidGrid& fg, const std::vector<double>& u,
                   const std::vector<double>& v, double tau, Vec2 pos, int iters) {
  Vec2 z = pos;
  for (int it = 0; it < iters; ++it) {
    const Vec2 vel = interp_velocity(fg, u, v, z);
    z = pos - vel * tau;
  }
  z.x = std::clamp(z.x, 0.0, fg.lx);
  z.y = std::clamp(z.y, 0.0, fg.ly);
  return z;
}

}  // namespace varistep
