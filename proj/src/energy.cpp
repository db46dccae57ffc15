#include "varistep/energy.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

namespace varistep {

static Mat2 apply_C(const MaterialParams& m, const Mat2& A) {
  const double t = m.lam * A.trace();
  return {t + 2.0 * m.mu * A.m00, 2.0 * m.mu * A.m01,
          2.0 * m.mu * A.m10, t + 2.0 * m.mu * A.m11};
}

double energy(const SolidGrid& g, const Field& eta, const MaterialParams& m) {
  std::vector<CellJet> jets;
  compute_jets(g, eta, jets);
  const double w = g.cell_area();
  double acc = 0.0;
  for (const CellJet& jet : jets) {
    const double det = jet.F.det();
    if (!(det > 0.0)) return kInf;
    const Mat2 A = jet.F.transpose() * jet.F - Mat2::identity();
    const double svk = apply_C(m, A).ddot(A);
    const double bar = m.w_bar / std::pow(det, m.a);
    double g2 = 0.0;
    for (int c = 0; c < 2; ++c)
      g2 += jet.G[c][0] * jet.G[c][0] + 2.0 * jet.G[c][1] * jet.G[c][1] + jet.G[c][2] * jet.G[c][2];
    const double reg = m.w_reg * std::pow(g2, 0.5 * m.q);
    acc += w * (m.w_svk * svk + bar + reg);
  }
  return acc;
}

void energy_grad(const SolidGrid& g, const Field& eta, const MaterialParams& m, Field& grad) {
  std::vector<CellJet> jets;
  compute_jets(g, eta, jets);
  const double w = g.cell_area();
  std::vector<CellJetAdjoint> adj(jets.size());
  for (std::size_t cidx = 0; cidx < jets.size(); ++cidx) {
    const CellJet& jet = jets[cidx];
    CellJetAdjoint& a = adj[cidx];
    const double det = jet.F.det();
    assert(det > 0.0 && "energy_grad requires a finite-energy configuration");
    const Mat2 A = jet.F.transpose() * jet.F - Mat2::identity();
    // d(|A|_C)/dF = 4 F (C A);  d(det^-a)/dF = -a det^-(a+1) cof(F).
    const Mat2 dsvk = 4.0 * (jet.F * apply_C(m, A));
    const Mat2 dbar = (-m.a * m.w_bar / std::pow(det, m.a + 1.0)) * jet.F.cof();
    a.dF = (w * m.w_svk) * dsvk + w * dbar;
    double g2 = 0.0;
    for (int c = 0; c < 2; ++c)
      g2 += jet.G[c][0] * jet.G[c][0] + 2.0 * jet.G[c][1] * jet.G[c][1] + jet.G[c][2] * jet.G[c][2];
    if (g2 > 0.0) {
      const double s = w * m.w_reg * m.q * std::pow(g2, 0.5 * m.q - 1.0);
      for (int c = 0; c < 2; ++c) {
        a.dG[c][0] = s * jet.G[c][0];
        a.dG[c][1] = s * 2.0 * jet.G[c][1];  // mixed slot counts twice in |G|^2
        a.dG[c][2] = s * jet.G[c][2];
      }
    }
  }
  accumulate_jet_adjoint(g, adj, grad);
  for (const Vec2& v : grad)
    if (!is_finite(v.x) || !is_finite(v.y)) throw NonFiniteGradient("energy gradient not finite");
}

double dissipation(const SolidGrid& g, const Field& eta, const Field& b) {
  std::vector<CellJet> je, jb;
  compute_jets(g, eta, je);
  compute_jets(g, b, jb);
  const double w = g.cell_area();
  double acc = 0.0;
  for (std::size_t c = 0; c < je.size(); ++c) {
    const Mat2& Fe = je[c].F;
    const Mat2& Fb = jb[c].F;
    const Mat2 S = Fb.transpose() * Fe + Fe.transpose() * Fb;
    acc += w * S.frob2();
  }
  return acc;
}

void dissipation_grad_b(const SolidGrid& g, const Field& eta, const Field& b, Field& grad) {
  std::vector<CellJet> je, jb;
  compute_jets(g, eta, je);
  compute_jets(g, b, jb);
  const double w = g.cell_area();
  std::vector<CellJetAdjoint> adj(je.size());
  for (std::size_t c = 0; c < je.size(); ++c) {
    const Mat2& Fe = je[c].F;
    const Mat2& Fb = jb[c].F;
    const Mat2 S = Fb.transpose() * Fe + Fe.transpose() * Fb;
    adj[c].dF = (4.0 * w) * (Fe * S);  // d|S|^2/dFb with S symmetric
  }
  accumulate_jet_adjoint(g, adj, grad);
}

double energy_reg(const SolidGrid& g, const Field& eta, const MaterialParams& m,
                  double h, const RegParams& rp) {
  const double base = energy(g, eta, m);
  if (!is_finite(base)) return base;
  return base + std::pow(h, rp.a0) * third_diff_norm2(g, eta);
}

void energy_reg_grad(const SolidGrid& g, const Field& eta, const MaterialParams& m,
                     double h, const RegParams& rp, Field& grad) {
  energy_grad(g, eta, m, grad);
  third_diff_norm2_grad(g, eta, std::pow(h, rp.a0), grad);
}

double dissipation_reg(const SolidGrid& g, const Field& eta, const Field& b, double h) {
  return dissipation(g, eta, b) + h * third_diff_norm2(g, b);
}

void dissipation_reg_grad_b(const SolidGrid& g, const Field& eta, const Field& b, double h,
                            Field& grad) {
  dissipation_grad_b(g, eta, b, grad);
  third_diff_norm2_grad(g, b, h, grad);
}

double min_det(const SolidGrid& g, const Field& eta) {
  std::vector<CellJet> jets;
  compute_jets(g, eta, jets);
  double mind = kInf;
  for (const CellJet& jet : jets) mind = std::min(mind, jet.F.det());
  return mind;
}

double jacobian_volume(const SolidGrid& g, const Field& eta) {
  std::vector<CellJet> jets;
  compute_jets(g, eta, jets);
  const double w = g.cell_area();
  double acc = 0.0;
  for (const CellJet& jet : jets) acc += w * jet.F.det();
  return acc;
}

}  // namespace varistep
