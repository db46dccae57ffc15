#include "varistep/fluid.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <queue>

namespace varistep {

namespace {

// One weighted squared linear sample: w * (sum_k c[k]*vel[ext[k]] - r)^2.
struct Sample {
  double w = 0;
  double r = 0;
  int n = 0;
  int ext[4] = {0, 0, 0, 0};
  double c[4] = {0, 0, 0, 0};
  int tag = 0;  // 0 visc, 1 reg, 2 kin

  void add(int e, double coeff) {
    for (int k = 0; k < n; ++k) {
      if (ext[k] == e) {
        c[k] += coeff;
        return;
      }
    }
    ext[n] = e;
    c[n] = coeff;
    ++n;
  }
};

}  // namespace

struct FluidStep::Impl {
  FluidGrid fg;
  FluidOptions opt;
  bool has_solid = false;
  const SolidGrid* sg = nullptr;

  std::vector<FaceKind> ukind, vkind;
  std::vector<std::uint8_t> cellsolid;

  // Extended DOFs: u faces then v faces.  free_index >= 0 for unknowns.
  std::vector<int> free_index;
  std::vector<int> free_to_ext;
  int nf = 0;

  // Solid-face couplings: prescribed value = sum wts * b[node].comp.
  struct Coupling {
    int ext;
    int comp;  // 0 -> b.x, 1 -> b.y
    int node[4];
    double wt[4];
  };
  std::vector<Coupling> couplings;

  std::vector<Sample> samples;
  std::vector<int> mixed_samples;  // samples touching at least one prescribed face
  std::vector<double> fvec;        // linear force term over extended DOFs

  // Divergence constraints: one per fluid cell; flux entries over extended
  // DOFs.  Retained rows get a compact row id; one row per connected
  // component is dropped (its index kept for bookkeeping).
  struct FluxEntry {
    int ext;
    double coeff;
  };
  std::vector<std::vector<FluxEntry>> cell_flux;  // per fluid cell (dense over cells; empty if solid)
  std::vector<int> comp_of_cell;                  // -1 solid
  int n_comp = 0;
  std::vector<int> comp_size;
  std::vector<int> row_of_cell;  // -1 dropped or solid
  std::vector<Field> flux_coeffs;  // net prescribed flux per component, linear in b
  int nrows = 0;

  Eigen::SparseMatrix<double> K;
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  bool factorized = false;

  int ext_u(int i, int j) const { return fg.iu(i, j); }
  int ext_v(int i, int j) const { return fg.nu() + fg.iv(i, j); }

  // Adds the coefficient of the u value at logical row j (which may be a
  // ghost row reflected across the top/bottom wall).
  void add_u(Sample& s, int i, int j, double coeff) const {
    if (fg.periodic_x) i = (i % fg.mx + fg.mx) % fg.mx;
    if (j < 0) {
      j = -1 - j;
      coeff = -coeff;
    } else if (j >= fg.my) {
      j = 2 * fg.my - 1 - j;
      coeff = -coeff;
    }
    s.add(ext_u(i, j), coeff);
  }
  void add_v(Sample& s, int i, int j, double coeff) const {
    if (fg.periodic_x) {
      i = (i % fg.mx + fg.mx) % fg.mx;
    } else if (i < 0) {
      i = -1 - i;
      coeff = -coeff;
    } else if (i >= fg.mx) {
      i = 2 * fg.mx - 1 - i;
      coeff = -coeff;
    }
    s.add(ext_v(i, j), coeff);
  }

  // Bilinear sample of u at an arbitrary point, ghost-aware.
  void u_at(Sample& s, Vec2 p, double coeff) const {
    double gx = p.x / fg.hx();
    double gy = p.y / fg.hy() - 0.5;
    int i0 = static_cast<int>(std::floor(gx));
    int j0 = static_cast<int>(std::floor(gy));
    if (!fg.periodic_x) i0 = std::clamp(i0, 0, fg.ucols() - 2);
    if (j0 < -1) j0 = -1;
    if (j0 > fg.my - 1) j0 = fg.my - 1;
    const double fu = std::clamp(gx - i0, 0.0, 1.0), fv = std::clamp(gy - j0, 0.0, 1.0);
    add_u(s, i0, j0, coeff * (1 - fu) * (1 - fv));
    add_u(s, i0 + 1, j0, coeff * fu * (1 - fv));
    add_u(s, i0, j0 + 1, coeff * (1 - fu) * fv);
    add_u(s, i0 + 1, j0 + 1, coeff * fu * fv);
  }
  void v_at(Sample& s, Vec2 p, double coeff) const {
    double gx = p.x / fg.hx() - 0.5;
    double gy = p.y / fg.hy();
    int i0 = static_cast<int>(std::floor(gx));
    int j0 = static_cast<int>(std::floor(gy));
    if (!fg.periodic_x) {
      if (i0 < -1) i0 = -1;
      if (i0 > fg.mx - 1) i0 = fg.mx - 1;
    }
    j0 = std::clamp(j0, 0, fg.my - 1);
    const double fu = std::clamp(gx - i0, 0.0, 1.0), fv = std::clamp(gy - j0, 0.0, 1.0);
    add_v(s, i0, j0, coeff * (1 - fu) * (1 - fv));
    add_v(s, i0 + 1, j0, coeff * fu * (1 - fv));
    add_v(s, i0, j0 + 1, coeff * (1 - fu) * fv);
    add_v(s, i0 + 1, j0 + 1, coeff * fu * fv);
  }
};

FluidStep::FluidStep(const FluidGrid& fg, const SolidGrid* sg, const Field* eta,
                     const FluidOptions& opt)
    : impl_(std::make_unique<Impl>()) {
  Impl& im = *impl_;
  im.fg = fg;
  im.opt = opt;
  im.sg = sg;
  im.has_solid = (sg != nullptr && eta != nullptr);
  const int nu = fg.nu(), nv = fg.nv(), next = nu + nv;

  // ---- classification -----------------------------------------------------
  im.ukind.assign(nu, FaceKind::Free);
  im.vkind.assign(nv, FaceKind::Free);
  im.cellsolid.assign(fg.ncells(), 0);

  // Cells are solid when their center lies inside the deformed image; a face
  // is prescribed when any adjacent cell is solid.  The prescribed faces
  // then form the exact closed staircase boundary of the solid cell block,
  // which makes the divergence rows of each fluid component exactly
  // dependent (one per component is dropped) and rigid boundary data
  // exactly compatible.
  DeformedGeometry geo;
  if (im.has_solid) {
    geo = build_deformed_geometry(*sg, *eta);
    for (int j = 0; j < fg.my; ++j)
      for (int i = 0; i < fg.mx; ++i)
        if (locate_in_image(*sg, geo, fg.cell_center(i, j)))
          im.cellsolid[fg.cell(i, j)] = 1;
  }
  auto cell_solid_at = [&](int i, int j) {
    if (j < 0 || j >= fg.my) return false;
    if (fg.periodic_x)
      i = (i % fg.mx + fg.mx) % fg.mx;
    else if (i < 0 || i >= fg.mx)
      return false;
    return im.cellsolid[fg.cell(i, j)] != 0;
  };
  auto make_coupling = [&](int extdof, int comp, Vec2 p) {
    auto loc = locate_in_image(*sg, geo, p);
    const RefLoc rl = loc ? *loc : locate_nearest(*sg, geo, p);
    Impl::Coupling cp;
    cp.ext = extdof;
    cp.comp = comp;
    const double fu = rl.uv.x, fv = rl.uv.y;
    cp.node[0] = sg->node(rl.ci, rl.cj);
    cp.node[1] = sg->node(rl.ci + 1, rl.cj);
    cp.node[2] = sg->node(rl.ci, rl.cj + 1);
    cp.node[3] = sg->node(rl.ci + 1, rl.cj + 1);
    cp.wt[0] = (1 - fu) * (1 - fv);
    cp.wt[1] = fu * (1 - fv);
    cp.wt[2] = (1 - fu) * fv;
    cp.wt[3] = fu * fv;
    im.couplings.push_back(cp);
  };

  for (int j = 0; j < fg.my; ++j) {
    for (int i = 0; i < fg.ucols(); ++i) {
      const int e = fg.iu(i, j);
      if (!fg.periodic_x && (i == 0 || i == fg.mx)) {
        im.ukind[e] = FaceKind::Wall;
        continue;
      }
      if (cell_solid_at(i - 1, j) || cell_solid_at(i, j)) {
        im.ukind[e] = FaceKind::Solid;
        make_coupling(im.ext_u(i, j), 0, fg.u_pos(i, j));
      }
    }
  }
  for (int j = 0; j <= fg.my; ++j) {
    for (int i = 0; i < fg.mx; ++i) {
      const int e = fg.iv(i, j);
      if (j == 0 || j == fg.my) {
        im.vkind[e] = FaceKind::Wall;
        continue;
      }
      if (cell_solid_at(i, j - 1) || cell_solid_at(i, j)) {
        im.vkind[e] = FaceKind::Solid;
        make_coupling(im.ext_v(i, j), 1, fg.v_pos(i, j));
      }
    }
  }

  im.free_index.assign(next, -1);
  for (int e = 0; e < nu; ++e)
    if (im.ukind[e] == FaceKind::Free) {
      im.free_index[e] = im.nf++;
      im.free_to_ext.push_back(e);
    }
  for (int e = 0; e < nv; ++e)
    if (im.vkind[e] == FaceKind::Free) {
      im.free_index[nu + e] = im.nf++;
      im.free_to_ext.push_back(nu + e);
    }

  // ---- samples ------------------------------------------------------------
  const double hx = fg.hx(), hy = fg.hy(), area = hx * hy;
  auto cell_is_fluid = [&](int i, int j) {
    if (j < 0 || j >= fg.my) return false;
    if (fg.periodic_x)
      i = (i % fg.mx + fg.mx) % fg.mx;
    else if (i < 0 || i >= fg.mx)
      return false;
    return im.cellsolid[fg.cell(i, j)] == 0;
  };

  if (opt.visc_coeff > 0.0) {
    // Normal strain at fluid cell centers.
    for (int j = 0; j < fg.my; ++j) {
      for (int i = 0; i < fg.mx; ++i) {
        if (!cell_is_fluid(i, j)) continue;
        Sample sx;
        sx.w = opt.visc_coeff * area;
        sx.tag = 0;
        im.add_u(sx, i + 1, j, 1.0 / hx);
        im.add_u(sx, i, j, -1.0 / hx);
        im.samples.push_back(sx);
        Sample sy;
        sy.w = opt.visc_coeff * area;
        sy.tag = 0;
        im.add_v(sy, i, j + 1, 1.0 / hy);
        im.add_v(sy, i, j, -1.0 / hy);
        im.samples.push_back(sy);
      }
    }
    // Shear strain at nodes: 2 * eps_xy^2 weighted by the adjacent fluid
    // area; the sample stores 0.5 * (du/dy + dv/dx)^2 * (2*w) folded in.
    const int ni = fg.periodic_x ? fg.mx : fg.mx + 1;
    for (int j = 0; j <= fg.my; ++j) {
      for (int i = 0; i < ni; ++i) {
        double w_area = 0.0;
        for (int dj = -1; dj <= 0; ++dj)
          for (int di = -1; di <= 0; ++di)
            if (cell_is_fluid(i + di, j + dj)) w_area += 0.25 * area;
        if (w_area == 0.0) continue;
        Sample s;
        s.w = opt.visc_coeff * w_area * 0.5;
        s.tag = 0;
        im.add_u(s, i, j, 1.0 / hy);
        im.add_u(s, i, j - 1, -1.0 / hy);
        im.add_v(s, i, j, 1.0 / hx);
        im.add_v(s, i - 1, j, -1.0 / hx);
        im.samples.push_back(s);
      }
    }
  }

  if (opt.reg_coeff > 0.0) {
    // Pure-axis third differences of each component over all-free windows.
    auto free_u = [&](int i, int j) {
      return j >= 0 && j < fg.my && i >= 0 && i < fg.ucols() &&
             im.ukind[fg.iu(i, j)] == FaceKind::Free;
    };
    auto free_v = [&](int i, int j) {
      return j >= 0 && j <= fg.my && i >= 0 && i < fg.mx &&
             im.vkind[fg.iv(i, j)] == FaceKind::Free;
    };
    const double cx = 1.0 / (hx * hx * hx), cy = 1.0 / (hy * hy * hy);
    const double co[4] = {-1.0, 3.0, -3.0, 1.0};
    for (int j = 0; j < fg.my; ++j)
      for (int i = 0; i + 3 < fg.ucols(); ++i) {
        if (!(free_u(i, j) && free_u(i + 1, j) && free_u(i + 2, j) && free_u(i + 3, j))) continue;
        Sample s;
        s.w = opt.reg_coeff * area;
        s.tag = 1;
        for (int k = 0; k < 4; ++k) im.add_u(s, i + k, j, co[k] * cx);
        im.samples.push_back(s);
      }
    for (int j = 0; j + 3 < fg.my; ++j)
      for (int i = 0; i < fg.ucols(); ++i) {
        if (!(free_u(i, j) && free_u(i, j + 1) && free_u(i, j + 2) && free_u(i, j + 3))) continue;
        Sample s;
        s.w = opt.reg_coeff * area;
        s.tag = 1;
        for (int k = 0; k < 4; ++k) im.add_u(s, i, j + k, co[k] * cy);
        im.samples.push_back(s);
      }
    for (int j = 0; j <= fg.my; ++j)
      for (int i = 0; i + 3 < fg.mx; ++i) {
        if (!(free_v(i, j) && free_v(i + 1, j) && free_v(i + 2, j) && free_v(i + 3, j))) continue;
        Sample s;
        s.w = opt.reg_coeff * area;
        s.tag = 1;
        for (int k = 0; k < 4; ++k) im.add_v(s, i + k, j, co[k] * cx);
        im.samples.push_back(s);
      }
    for (int j = 0; j + 3 <= fg.my; ++j)
      for (int i = 0; i < fg.mx; ++i) {
        if (!(free_v(i, j) && free_v(i, j + 1) && free_v(i, j + 2) && free_v(i, j + 3))) continue;
        Sample s;
        s.w = opt.reg_coeff * area;
        s.tag = 1;
        for (int k = 0; k < 4; ++k) im.add_v(s, i, j + k, co[k] * cy);
        im.samples.push_back(s);
      }
  }

  im.fvec.assign(next, 0.0);
  for (const MarkerLoad& m : opt.markers) {
    if (m.kin_w > 0.0) {
      Sample su;
      su.w = m.kin_w;
      su.r = m.target.x;
      su.tag = 2;
      im.u_at(su, m.pos, 1.0);
      im.samples.push_back(su);
      Sample sv;
      sv.w = m.kin_w;
      sv.r = m.target.y;
      sv.tag = 2;
      im.v_at(sv, m.pos, 1.0);
      im.samples.push_back(sv);
    }
    if (m.force.x != 0.0 || m.force.y != 0.0) {
      Sample su;  // reuse the entry builder to collect interpolation weights
      im.u_at(su, m.pos, 1.0);
      for (int k = 0; k < su.n; ++k) im.fvec[su.ext[k]] += m.force.x * su.c[k];
      Sample sv;
      im.v_at(sv, m.pos, 1.0);
      for (int k = 0; k < sv.n; ++k) im.fvec[sv.ext[k]] += m.force.y * sv.c[k];
    }
  }
  if (opt.cell_force_coeff != 0.0 && opt.body_force) {
    for (int j = 0; j < fg.my; ++j)
      for (int i = 0; i < fg.mx; ++i) {
        if (!cell_is_fluid(i, j)) continue;
        const Vec2 f = opt.body_force(fg.cell_center(i, j));
        const double w = opt.cell_force_coeff * area;
        Sample su;
        im.add_u(su, i, j, 0.5);
        im.add_u(su, i + 1, j, 0.5);
        for (int k = 0; k < su.n; ++k) im.fvec[su.ext[k]] += w * f.x * su.c[k];
        Sample sv;
        im.add_v(sv, i, j, 0.5);
        im.add_v(sv, i, j + 1, 0.5);
        for (int k = 0; k < sv.n; ++k) im.fvec[sv.ext[k]] += w * f.y * sv.c[k];
      }
  }

  for (std::size_t s = 0; s < im.samples.size(); ++s) {
    for (int k = 0; k < im.samples[s].n; ++k)
      if (im.free_index[im.samples[s].ext[k]] < 0) {
        im.mixed_samples.push_back(static_cast<int>(s));
        break;
      }
  }

  // ---- divergence constraints --------------------------------------------
  im.cell_flux.assign(fg.ncells(), {});
  for (int j = 0; j < fg.my; ++j) {
    for (int i = 0; i < fg.mx; ++i) {
      if (im.cellsolid[fg.cell(i, j)]) continue;
      auto& fl = im.cell_flux[fg.cell(i, j)];
      const int ie = fg.periodic_x ? (i + 1) % fg.mx : i + 1;
      fl.push_back({im.ext_u(ie, j), hy});
      fl.push_back({im.ext_u(i, j), -hy});
      fl.push_back({im.ext_v(i, j + 1), hx});
      fl.push_back({im.ext_v(i, j), -hx});
    }
  }
  // Connected components of fluid cells (4-adjacency, wrap in x if periodic).
  im.comp_of_cell.assign(fg.ncells(), -1);
  for (int j = 0; j < fg.my; ++j) {
    for (int i = 0; i < fg.mx; ++i) {
      const int c0 = fg.cell(i, j);
      if (im.cellsolid[c0] || im.comp_of_cell[c0] >= 0) continue;
      const int id = im.n_comp++;
      int size = 0;
      std::queue<std::pair<int, int>> q;
      q.push({i, j});
      im.comp_of_cell[c0] = id;
      while (!q.empty()) {
        auto [ci, cj] = q.front();
        q.pop();
        ++size;
        const int d[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
        for (auto& dd : d) {
          int ni2 = ci + dd[0], nj = cj + dd[1];
          if (fg.periodic_x) ni2 = (ni2 % fg.mx + fg.mx) % fg.mx;
          if (ni2 < 0 || ni2 >= fg.mx || nj < 0 || nj >= fg.my) continue;
          const int cn = fg.cell(ni2, nj);
          if (im.cellsolid[cn] || im.comp_of_cell[cn] >= 0) continue;
          im.comp_of_cell[cn] = id;
          q.push({ni2, nj});
        }
      }
      im.comp_size.push_back(size);
    }
  }
  // Net prescribed-flux functional of each component: flux_k(b) =
  // sum_n flux_coeffs[k][n] . b[n], the total volume rate the solid-tracked
  // staircase pushes into component k.  The compatibility projection removes
  // this amount from the constraint data; exposing the functional lets the
  // coupled step penalize it (an incompressible component in a rigid
  // container cannot absorb net volume).
  im.flux_coeffs.assign(im.n_comp, Field(im.has_solid ? sg->nodes() : 0, Vec2{0, 0}));
  if (im.has_solid) {
    std::vector<int> coup_of_ext(next, -1);
    for (std::size_t ci = 0; ci < im.couplings.size(); ++ci)
      coup_of_ext[im.couplings[ci].ext] = static_cast<int>(ci);
    for (int c = 0; c < fg.ncells(); ++c) {
      const int comp = im.comp_of_cell[c];
      if (comp < 0) continue;
      for (const auto& fe : im.cell_flux[c]) {
        if (im.free_index[fe.ext] >= 0) continue;
        const int cid = coup_of_ext[fe.ext];
        if (cid < 0) continue;  // wall face: identically zero
        const auto& cp = im.couplings[cid];
        for (int k = 0; k < 4; ++k) {
          Vec2& fn = im.flux_coeffs[comp][cp.node[k]];
          (cp.comp == 0 ? fn.x : fn.y) += -fe.coeff * cp.wt[k];
        }
      }
    }
  }

  // Retain all rows except the last cell of each component.
  im.row_of_cell.assign(fg.ncells(), -1);
  std::vector<int> last_cell(im.n_comp, -1);
  for (int c = 0; c < fg.ncells(); ++c)
    if (im.comp_of_cell[c] >= 0) last_cell[im.comp_of_cell[c]] = c;
  for (int c = 0; c < fg.ncells(); ++c) {
    const int comp = im.comp_of_cell[c];
    if (comp < 0 || c == last_cell[comp]) continue;
    im.row_of_cell[c] = im.nrows++;
  }

  // ---- assemble and factorize the saddle-point matrix ---------------------
  const int nsys = im.nf + im.nrows;
  if (im.nf > 0) {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(im.samples.size() * 10 + im.nrows * 4 * 2 + im.nf);
    for (const Sample& s : im.samples) {
      for (int a = 0; a < s.n; ++a) {
        const int fa = im.free_index[s.ext[a]];
        if (fa < 0) continue;
        for (int b = 0; b < s.n; ++b) {
          const int fb = im.free_index[s.ext[b]];
          if (fb < 0) continue;
          trip.emplace_back(fa, fb, 2.0 * s.w * s.c[a] * s.c[b]);
        }
      }
    }
    for (int c = 0; c < fg.ncells(); ++c) {
      const int row = im.row_of_cell[c];
      if (row < 0) continue;
      for (const auto& fe : im.cell_flux[c]) {
        const int fi = im.free_index[fe.ext];
        if (fi < 0) continue;
        trip.emplace_back(im.nf + row, fi, fe.coeff);
        trip.emplace_back(fi, im.nf + row, fe.coeff);
      }
    }
    im.K.resize(nsys, nsys);
    im.K.setFromTriplets(trip.begin(), trip.end());
    im.K.makeCompressed();
    im.lu.analyzePattern(im.K);
    im.lu.factorize(im.K);
    if (im.lu.info() != Eigen::Success)
      throw SingularSystem("fluid saddle-point factorization failed");
    im.factorized = true;
  }
}

FluidStep::~FluidStep() = default;
FluidStep::FluidStep(FluidStep&&) noexcept = default;
FluidStep& FluidStep::operator=(FluidStep&&) noexcept = default;

const std::vector<FaceKind>& FluidStep::u_kind() const { return impl_->ukind; }
const std::vector<FaceKind>& FluidStep::v_kind() const { return impl_->vkind; }
const std::vector<std::uint8_t>& FluidStep::cell_solid() const { return impl_->cellsolid; }
int FluidStep::free_dofs() const { return impl_->nf; }
const std::vector<Field>& FluidStep::interface_flux_coeffs() const { return impl_->flux_coeffs; }

double FluidStep::eval(const Field& b, Field* grad_b, FluidSolution* sol) const {
  const Impl& im = *impl_;
  const FluidGrid& fg = im.fg;
  const int nu = fg.nu(), next = nu + fg.nv();

  // Prescribed values: walls 0, solid faces interpolated from b.
  std::vector<double> vel(next, 0.0);
  for (const auto& cp : im.couplings) {
    double val = 0.0;
    for (int k = 0; k < 4; ++k) {
      const Vec2& bn = b[cp.node[k]];
      val += cp.wt[k] * (cp.comp == 0 ? bn.x : bn.y);
    }
    vel[cp.ext] = val;
  }

  double div_defect = 0.0;
  if (im.nf > 0) {
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(im.nf + im.nrows);
    for (int fi = 0; fi < im.nf; ++fi) rhs[fi] = im.fvec[im.free_to_ext[fi]];
    // Affine contribution of prescribed faces through mixed samples:
    // d/dx [ w (L_f x + L_p p - r)^2 ] adds -2 w (L_p p - r) L_f to the rhs.
    for (int si : im.mixed_samples) {
      const Sample& s = im.samples[si];
      double off = -s.r;
      for (int k = 0; k < s.n; ++k)
        if (im.free_index[s.ext[k]] < 0) off += s.c[k] * vel[s.ext[k]];
      if (off == 0.0) continue;
      for (int k = 0; k < s.n; ++k) {
        const int fi = im.free_index[s.ext[k]];
        if (fi >= 0) rhs[fi] -= 2.0 * s.w * off * s.c[k];
      }
    }
    // Samples with r but no prescribed entries still shift the rhs.
    for (const Sample& s : im.samples) {
      if (s.r == 0.0) continue;
      bool mixed = false;
      for (int k = 0; k < s.n; ++k)
        if (im.free_index[s.ext[k]] < 0) mixed = true;
      if (mixed) continue;  // already handled above
      for (int k = 0; k < s.n; ++k) {
        const int fi = im.free_index[s.ext[k]];
        if (fi >= 0) rhs[fi] += 2.0 * s.w * s.r * s.c[k];
      }
    }
    // Constraint right-hand sides with the per-component compatibility
    // projection (incompatible prescribed data is spread uniformly).
    std::vector<double> crhs(fg.ncells(), 0.0);
    std::vector<double> comp_sum(im.n_comp, 0.0);
    for (int c = 0; c < fg.ncells(); ++c) {
      if (im.comp_of_cell[c] < 0) continue;
      double cc = 0.0;
      for (const auto& fe : im.cell_flux[c])
        if (im.free_index[fe.ext] < 0) cc -= fe.coeff * vel[fe.ext];
      crhs[c] = cc;
      comp_sum[im.comp_of_cell[c]] += cc;
    }
    for (int k = 0; k < im.n_comp; ++k)
      div_defect = std::max(div_defect, std::abs(comp_sum[k]));
    for (int c = 0; c < fg.ncells(); ++c) {
      const int comp = im.comp_of_cell[c];
      if (comp < 0) continue;
      crhs[c] -= comp_sum[comp] / im.comp_size[comp];
      const int row = im.row_of_cell[c];
      if (row >= 0) rhs[im.nf + row] = crhs[c];
    }

    const Eigen::VectorXd z = im.lu.solve(rhs);
    if (im.lu.info() != Eigen::Success) throw SingularSystem("fluid backsolve failed");
    for (int fi = 0; fi < im.nf; ++fi) vel[im.free_to_ext[fi]] = z[fi];

    if (grad_b != nullptr && im.has_solid) {
      // Component-mean multiplier (the projection makes only deviations
      // from the mean act on the prescribed data).
      std::vector<double> lam_mean(im.n_comp, 0.0);
      for (int c = 0; c < fg.ncells(); ++c) {
        const int row = im.row_of_cell[c];
        if (row >= 0) lam_mean[im.comp_of_cell[c]] += z[im.nf + row];
      }
      for (int k = 0; k < im.n_comp; ++k) lam_mean[k] /= im.comp_size[k];
      // Traction on prescribed faces: objective part + constraint part.
      std::vector<double> trac(next, 0.0);
      for (int si : im.mixed_samples) {
        const Sample& s = im.samples[si];
        double lv = -s.r;
        for (int k = 0; k < s.n; ++k) lv += s.c[k] * vel[s.ext[k]];
        const double t2 = 2.0 * s.w * lv;
        for (int k = 0; k < s.n; ++k)
          if (im.free_index[s.ext[k]] < 0) trac[s.ext[k]] += t2 * s.c[k];
      }
      for (int c = 0; c < fg.ncells(); ++c) {
        if (im.comp_of_cell[c] < 0) continue;
        const int row = im.row_of_cell[c];
        const double lam = (row >= 0 ? z[im.nf + row] : 0.0) - lam_mean[im.comp_of_cell[c]];
        for (const auto& fe : im.cell_flux[c])
          if (im.free_index[fe.ext] < 0) trac[fe.ext] += lam * fe.coeff;
      }
      for (int e = 0; e < next; ++e) trac[e] -= im.fvec[e] * (im.free_index[e] < 0 ? 1.0 : 0.0);
      for (const auto& cp : im.couplings) {
        const double t = trac[cp.ext];
        if (t == 0.0) continue;
        for (int k = 0; k < 4; ++k) {
          Vec2& gn = (*grad_b)[cp.node[k]];
          (cp.comp == 0 ? gn.x : gn.y) += t * cp.wt[k];
        }
      }
    }
  }

  // Objective value and breakdown from the full velocity field.
  double visc = 0.0, reg = 0.0, kin = 0.0;
  for (const Sample& s : im.samples) {
    double lv = -s.r;
    for (int k = 0; k < s.n; ++k) lv += s.c[k] * vel[s.ext[k]];
    const double val = s.w * lv * lv;
    if (s.tag == 0)
      visc += val;
    else if (s.tag == 1)
      reg += val;
    else
      kin += val;
  }
  double work = 0.0;
  for (int e = 0; e < next; ++e) work += im.fvec[e] * vel[e];
  const double value = visc + reg + kin - work;

  if (sol != nullptr) {
    sol->u.assign(vel.begin(), vel.begin() + nu);
    sol->v.assign(vel.begin() + nu, vel.end());
    sol->value = value;
    sol->visc = visc;
    sol->reg = reg;
    sol->kin = kin;
    sol->work = work;
    sol->div_defect = div_defect;
    // Korn diagnostic: integral of |grad v|^2 over the fluid region versus
    // the strain-rate integral recovered from the sample sum.
    if (im.opt.visc_coeff > 0.0 && visc > 0.0) {
      const double hx = fg.hx(), hy = fg.hy(), area = hx * hy;
      auto uv2 = [&](int e) { return vel[e]; };
      double full = 0.0;
      auto cell_is_fluid = [&](int i, int j) {
        if (j < 0 || j >= fg.my) return false;
        if (fg.periodic_x)
          i = (i % fg.mx + fg.mx) % fg.mx;
        else if (i < 0 || i >= fg.mx)
          return false;
        return im.cellsolid[fg.cell(i, j)] == 0;
      };
      auto uval = [&](int i, int j) -> double {
        if (fg.periodic_x) i = (i % fg.mx + fg.mx) % fg.mx;
        double sgn = 1.0;
        if (j < 0) {
          j = -1 - j;
          sgn = -1.0;
        } else if (j >= fg.my) {
          j = 2 * fg.my - 1 - j;
          sgn = -1.0;
        }
        return sgn * uv2(im.ext_u(i, j));
      };
      auto vval = [&](int i, int j) -> double {
        double sgn = 1.0;
        if (fg.periodic_x) {
          i = (i % fg.mx + fg.mx) % fg.mx;
        } else if (i < 0) {
          i = -1 - i;
          sgn = -1.0;
        } else if (i >= fg.mx) {
          i = 2 * fg.mx - 1 - i;
          sgn = -1.0;
        }
        return sgn * uv2(im.ext_v(i, j));
      };
      for (int j = 0; j < fg.my; ++j)
        for (int i = 0; i < fg.mx; ++i) {
          if (!cell_is_fluid(i, j)) continue;
          const double dudx = (uval(i + 1, j) - uval(i, j)) / hx;
          const double dvdy = (vval(i, j + 1) - vval(i, j)) / hy;
          full += area * (dudx * dudx + dvdy * dvdy);
        }
      const int ni = fg.periodic_x ? fg.mx : fg.mx + 1;
      for (int j = 0; j <= fg.my; ++j)
        for (int i = 0; i < ni; ++i) {
          double w_area = 0.0;
          for (int dj = -1; dj <= 0; ++dj)
            for (int di = -1; di <= 0; ++di)
              if (cell_is_fluid(i + di, j + dj)) w_area += 0.25 * area;
          if (w_area == 0.0) continue;
          const double dudy = (uval(i, j) - uval(i, j - 1)) / hy;
          const double dvdx = (vval(i, j) - vval(i - 1, j)) / hx;
          full += w_area * (dudy * dudy + dvdx * dvdx);
        }
      sol->korn_ratio = full / (visc / im.opt.visc_coeff);
    }
  }
  return value;
}

Vec2 interp_velocity(const FluidGrid& fg, const std::vector<double>& u,
                     const std::vector<double>& v, Vec2 p) {
  auto uval = [&](int i, int j) -> double {
    if (fg.periodic_x) i = (i % fg.mx + fg.mx) % fg.mx;
    double sgn = 1.0;
    if (j < 0) {
      j = -1 - j;
      sgn = -1.0;
    } else if (j >= fg.my) {
      j = 2 * fg.my - 1 - j;
      sgn = -1.0;
    }
    return sgn * u[fg.iu(i, j)];
  };
  auto vval = [&](int i, int j) -> double {
    double sgn = 1.0;
    if (fg.periodic_x) {
      i = (i % fg.mx + fg.mx) % fg.mx;
    } else if (i < 0) {
      i = -1 - i;
      sgn = -1.0;
    } else if (i >= fg.mx) {
      i = 2 * fg.mx - 1 - i;
      sgn = -1.0;
    }
    return sgn * v[fg.iv(i, j)];
  };
  const double hx = fg.hx(), hy = fg.hy();
  double gx = p.x / hx, gy = p.y / hy - 0.5;
  int i0 = static_cast<int>(std::floor(gx)), j0 = static_cast<int>(std::floor(gy));
  if (!fg.periodic_x) i0 = std::clamp(i0, 0, fg.ucols() - 2);
  j0 = std::clamp(j0, -1, fg.my - 1);
  double fu = std::clamp(gx - i0, 0.0, 1.0), fv = std::clamp(gy - j0, 0.0, 1.0);
  const double ux = (1 - fu) * ((1 - fv) * uval(i0, j0) + fv * uval(i0, j0 + 1)) +
                    fu * ((1 - fv) * uval(i0 + 1, j0) + fv * uval(i0 + 1, j0 + 1));
  gx = p.x / hx - 0.5;
  gy = p.y / hy;
  i0 = static_cast<int>(std::floor(gx));
  j0 = static_cast<int>(std::floor(gy));
  if (!fg.periodic_x) i0 = std::clamp(i0, -1, fg.mx - 1);
  j0 = std::clamp(j0, 0, fg.my - 1);
  fu = std::clamp(gx - i0, 0.0, 1.0);
  fv = std::clamp(gy - j0, 0.0, 1.0);
  const double vy = (1 - fu) * ((1 - fv) * vval(i0, j0) + fv * vval(i0, j0 + 1)) +
                    fu * ((1 - fv) * vval(i0 + 1, j0) + fv * vval(i0 + 1, j0 + 1));
  return {ux, vy};
}

Mat2 interp_velocity_gradient(const FluidGrid& fg, const std::vector<double>& u,
                              const std::vector<double>& v, Vec2 p) {
  // Each derivative lives on its natural lattice; interpolate bilinearly.
  const double hx = fg.hx(), hy = fg.hy();
  auto uval = [&](int i, int j) -> double {
    if (fg.periodic_x) i = (i % fg.mx + fg.mx) % fg.mx;
    double sgn = 1.0;
    if (j < 0) {
      j = -1 - j;
      sgn = -1.0;
    } else if (j >= fg.my) {
      j = 2 * fg.my - 1 - j;
      sgn = -1.0;
    }
    return sgn * u[fg.iu(i, j)];
  };
  auto vval = [&](int i, int j) -> double {
    double sgn = 1.0;
    if (fg.periodic_x) {
      i = (i % fg.mx + fg.mx) % fg.mx;
    } else if (i < 0) {
      i = -1 - i;
      sgn = -1.0;
    } else if (i >= fg.mx) {
      i = 2 * fg.mx - 1 - i;
      sgn = -1.0;
    }
    return sgn * v[fg.iv(i, j)];
  };
  // du/dy and dv/dx live on the node lattice and are interpolated
  // bilinearly.  The diagonal (normal-strain) entries are taken from the
  // pressure cell containing p: their sum is then the discrete divergence of
  // exactly that cell, which the saddle-point solve drives to zero for every
  // fluid cell, so transported Jacobians pick up no spurious volume change.
  auto dudy = [&](int i, int j) { return (uval(i, j) - uval(i, j - 1)) / hy; };
  auto dvdx = [&](int i, int j) { return (vval(i, j) - vval(i - 1, j)) / hx; };

  auto bilerp = [&](double gx, double gy, int imax, int jmax, auto&& f) {
    int i0 = static_cast<int>(std::floor(gx)), j0 = static_cast<int>(std::floor(gy));
    i0 = std::clamp(i0, 0, imax - 1);
    j0 = std::clamp(j0, 0, jmax - 1);
    const double a = std::clamp(gx - i0, 0.0, 1.0), bfrac = std::clamp(gy - j0, 0.0, 1.0);
    return (1 - a) * ((1 - bfrac) * f(i0, j0) + bfrac * f(i0, j0 + 1)) +
           a * ((1 - bfrac) * f(i0 + 1, j0) + bfrac * f(i0 + 1, j0 + 1));
  };
  const int ci = std::clamp(static_cast<int>(std::floor(p.x / hx)), 0, fg.mx - 1);
  const int cj = std::clamp(static_cast<int>(std::floor(p.y / hy)), 0, fg.my - 1);
  Mat2 gradm;
  gradm.m00 = (uval(ci + 1, cj) - uval(ci, cj)) / hx;
  gradm.m01 = bilerp(p.x / hx, p.y / hy, fg.periodic_x ? fg.mx : fg.mx - 1, fg.my, dudy);
  gradm.m10 = bilerp(p.x / hx, p.y / hy, fg.periodic_x ? fg.mx : fg.mx, fg.my, dvdx);
  gradm.m11 = (vval(ci, cj + 1) - vval(ci, cj)) / hy;
  return gradm;
}

}  // namespace varistep
