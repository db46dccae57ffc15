// Elastic energy, viscous dissipation and their exact discrete gradients.
//
// Per cell (midpoint quadrature, weight = cell area):
//   energy density  w_svk * |F^T F - I|_C  +  w_bar / det(F)^a  +  w_reg * |G|^q
// with |A|_C = (C A) : A,  C A = lam tr(A) I + 2 mu A, and |G| the Frobenius
// norm of the symmetric second gradient (mixed entry counted twice). The
// value is +inf when any cell has det(F) <= 0.
//
// Dissipation: R(eta, b) = sum_cells |Fb^T Fe + Fe^T Fb|^2 * area, the
// squared rate of change of the pulled-back metric.
//
// Regularized variants add  h^{a0} * ||grad^3 eta||^2  to the energy and
// h * ||grad^3 b||^2  to the dissipation (third-difference stencil sums).
//
// Gradients are assembled by differentiating the discrete formulas exactly
// (adjoint of the jet stencils), so finite-difference checks converge at
// machine-level floor.
#pragma once

#include "varistep/grid.hpp"

namespace varistep {

struct MaterialParams {
  double lam = 1.0, mu = 1.0;      // quadratic-form moduli
  double a = 5.0;                  // barrier exponent (needs a > q*n/(q-n))
  double q = 4.0;                  // second-gradient exponent (needs q > n)
  double w_svk = 0.125;            // metric-deviation weight
  double w_bar = 1.0;              // barrier weight
  double w_reg = 0.25;             // second-gradient weight (default 1/q)
  double rho_s = 1.0, rho_f = 1.0; // densities
  double nu = 1.0;                 // fluid viscosity
};

struct RegParams {
  int k0 = 3;                      // derivative order of the extra term (3 wired)
  double a0 = 0.5;                 // energy-regularizer exponent, in (0,1)
};

// E(eta); +inf if the deformation has a non-positive Jacobian in any cell.
double energy(const SolidGrid& g, const Field& eta, const MaterialParams& m);

// grad += dE(eta). Precondition: energy(eta) finite. Throws NonFiniteGradient
// if the assembled gradient is not finite.
void energy_grad(const SolidGrid& g, const Field& eta, const MaterialParams& m, Field& grad);

// R(eta, b) and its derivative in the rate argument b.
double dissipation(const SolidGrid& g, const Field& eta, const Field& b);
void dissipation_grad_b(const SolidGrid& g, const Field& eta, const Field& b, Field& grad);

// Regularized: E_h = E + h^{a0} ||grad^3 eta||^2 ; R_h = R + h ||grad^3 b||^2.
double energy_reg(const SolidGrid& g, const Field& eta, const MaterialParams& m,
                  double h, const RegParams& rp);
void energy_reg_grad(const SolidGrid& g, const Field& eta, const MaterialParams& m,
                     double h, const RegParams& rp, Field& grad);
double dissipation_reg(const SolidGrid& g, const Field& eta, const Field& b, double h);
void dissipation_reg_grad_b(const SolidGrid& g, const Field& eta, const Field& b, double h,
                            Field& grad);

// Minimum of det(F) over cells (monitoring; +inf energy <=> this <= 0).
double min_det(const SolidGrid& g, const Field& eta);

// Volume of the deformed body by the Jacobian route: integral of det(F).
double jacobian_volume(const SolidGrid& g, const Field& eta);

}  // namespace varistep
