// Deformed-geometry oracles:
//  - shoelace volume is exact for affine maps (det * reference area);
//  - point location inverts the deformation up to Newton tolerance;
//  - the volume-vs-image defect is ~0 for injective maps and equals the
//    analytic double-covered area for a map that wraps an annulus 1.5 times;
//  - boundary clearance has closed forms for a translated square.
#include <cmath>
#include <random>

#include "doctest.h"
#include "varistep/raster.hpp"

using namespace varistep;

namespace {
const double kPi = 3.14159265358979323846;

Field annulus_wrap(const SolidGrid& g) {
  // (X, Y) -> center + r (cos th, sin th), r = 0.5 + 0.3 Y, th = pi/2 - 3 pi X.
  // Orientation-preserving (det = 0.9 pi r > 0) but covers half of the
  // annulus twice: swept area = 1.5 * annulus area.
  Field f(g.nodes());
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const Vec2 p = g.ref_pos(i, j);
      const double r = 0.5 + 0.3 * p.y;
      const double th = 0.5 * kPi - 3.0 * kPi * p.x;
      f[g.node(i, j)] = {1.5 + r * std::cos(th), 1.0 + r * std::sin(th)};
    }
  return f;
}
}  // namespace

TEST_CASE("deformed volume: exact for affine maps") {
  SolidGrid g = make_solid_grid(9, 7, 1.0, 1.0);
  CHECK(deformed_volume(g, identity_field(g)) == doctest::Approx(1.0).epsilon(1e-14));
  const Mat2 A{1.2, 0.3, -0.1, 0.8};
  Field f(g.nodes());
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) f[g.node(i, j)] = A * g.ref_pos(i, j) + Vec2{0.4, 0.2};
  CHECK(deformed_volume(g, f) == doctest::Approx(A.det()).epsilon(1e-13));
}

TEST_CASE("degenerate elements are rejected") {
  SolidGrid g = make_solid_grid(5, 5, 1.0, 1.0);
  Field f = identity_field(g);
  // Collapse one node onto a neighbour hard enough to flip a quad.
  f[g.node(2, 2)] = f[g.node(1, 1)] - Vec2{0.1, 0.1};
  CHECK_THROWS_AS(build_deformed_geometry(g, f), DegenerateElement);
}

TEST_CASE("point location inverts a smooth deformation") {
  SolidGrid g = make_solid_grid(9, 9, 1.0, 1.0);
  Field f(g.nodes());
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const Vec2 p = g.ref_pos(i, j);
      f[g.node(i, j)] = {1.0 + p.x + 0.1 * std::sin(p.y * 2.0),
                         0.5 + p.y + 0.08 * std::cos(p.x * 3.0)};
    }
  DeformedGeometry geo = build_deformed_geometry(g, f);
  std::mt19937 rng(21u);
  std::uniform_real_distribution<double> dist(0.05, 0.95);
  int located = 0;
  for (int t = 0; t < 50; ++t) {
    const Vec2 ref{dist(rng), dist(rng)};
    const Vec2 x = eval_bilinear(g, f, ref);
    auto loc = locate_in_image(g, geo, x);
    REQUIRE(loc.has_value());
    const Vec2 back{(loc->ci + loc->uv.x) * g.dx(), (loc->cj + loc->uv.y) * g.dy()};
    CHECK((back - ref).norm() < 1e-9);
    ++located;
  }
  REQUIRE(located == 50);
  // A point far outside the image is not located.
  CHECK_FALSE(locate_in_image(g, geo, Vec2{0.01, 0.01}).has_value());
}

TEST_CASE("injective map: defect below the raster tolerance") {
  SolidGrid g = make_solid_grid(17, 17, 1.0, 1.0);
  Box box;
  Field f = translated_field(g, {1.0, 0.5});
  CnReport rep = ciarlet_necas(g, f, box, 150, 100, 4);
  CHECK(rep.volume == doctest::Approx(1.0).epsilon(1e-13));
  CHECK(std::abs(rep.defect) <= rep.tol);
  CHECK(rep.tol < 0.2);  // the bound itself is meaningfully small
}

TEST_CASE("self-overlapping wrap: defect equals the double-covered area") {
  // Swept area = 1.5 * pi * (0.8^2 - 0.5^2); the image is the annulus once,
  // so the defect is half the annulus area = 0.5 * pi * 0.39 ~ 0.6126.
  SolidGrid g = make_solid_grid(33, 33, 1.0, 1.0);
  Box box;
  Field f = annulus_wrap(g);
  CnReport rep = ciarlet_necas(g, f, box, 300, 200, 4);
  const double annulus = kPi * (0.8 * 0.8 - 0.5 * 0.5);
  // Chord polygonization shrinks each angular sector by sin(dth)/dth; the
  // swept polygon area then has a closed form we can check tightly.
  const double dth = 3.0 * kPi / 32.0;
  CHECK(rep.volume == doctest::Approx(1.5 * annulus * std::sin(dth) / dth).epsilon(1e-3));
  CHECK(rep.defect == doctest::Approx(0.5 * annulus).epsilon(0.08));
  CHECK(rep.defect > rep.tol);  // flagged as non-injective
}

TEST_CASE("boundary clearance: translated unit square closed forms") {
  SolidGrid g = make_solid_grid(17, 17, 1.0, 1.0);
  Box box;
  BoundaryLoop loop = boundary_loop(g, 4);
  Field f = translated_field(g, {1.0, 0.5});
  ClearanceReport rep = boundary_clearance(g, loop, f, box, 0.2);
  // Square occupies [1,2] x [0.5,1.5] inside [0,3] x [0,2]: wall gap 0.5.
  CHECK(rep.wall_distance == doctest::Approx(0.5).epsilon(1e-12));
  // Minimal distance among sampled pairs with arc separation strictly over
  // 0.8: samples sit at multiples of 1/64, so the tightest corner pair is
  // t = s = 26/64 on the two adjacent edges.
  CHECK(rep.self_distance == doctest::Approx(0.40625 * std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("clearance detects an approaching fold") {
  // Bend the top edge of the square down toward the bottom edge: the
  // self distance between the top and bottom boundary shrinks accordingly.
  SolidGrid g = make_solid_grid(17, 17, 1.0, 1.0);
  Box box;
  BoundaryLoop loop = boundary_loop(g, 4);
  Field f(g.nodes());
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const Vec2 p = g.ref_pos(i, j);
      // Vertical squeeze keeping x: gap between images of top and bottom
      // shrinks to 0.2 at the squeezed spot.
      const double squeeze = 1.0 - 0.8 * p.y * std::exp(-8.0 * (p.x - 0.5) * (p.x - 0.5));
      f[g.node(i, j)] = {1.0 + p.x, 0.5 + p.y * squeeze};
    }
  ClearanceReport rep = boundary_clearance(g, loop, f, box, 0.2);
  CHECK(rep.self_distance < 0.25);
  CHECK(rep.self_distance > 0.1);
}
