// Per-step energy accounting and its independent re-verification.
//
// Every accepted step appends one row of raw scalars (energies, dissipation
// increments, kinetic moving averages, work) to the ledger.  The slack
// columns are *derived* quantities: LedgerChecker recomputes them from the
// raw columns plus its own prefix state and asserts the discrete
// inequalities.  The run loop and the offline `verify` command share this
// class, so verification of a dumped CSV reproduces the in-run assertions
// bit for bit (the CSV stores full-precision doubles).
//
// Inequalities asserted per row (descent makes them hold in exact
// arithmetic; the tolerance covers floating point only):
//   slack_single    = E_h(prev) - E_h(cur) - R_step - fluid_diss + work_f
//                     + delayed kinetic budget (hyperbolic modes)   >= -tol
//   slack_telescope = prefix-summed version of the same              >= -tol
//   cn_defect <= cn_tol,  min_det_eta > 0,  strictly increasing time.
//
// The delayed kinetic budget of step i is (rho/2h) * tau * ||w_i||^2 where
// w_i is the velocity produced one acceleration window (h = n_slots * tau)
// earlier.  ||w_i||^2 is recovered from the kinetic moving-average column by
// the slot recursion  S_i = (2 n/rho)(K_i - K_{i-1}) + S_{i-n}, seeded by the
// constant pre-history encoded in row 0's kinetic averages.
#pragma once

#include <string>
#include <vector>

#include "varistep/common.hpp"
#include "varistep/grid.hpp"

namespace varistep {

struct LedgerRow {
  long long step = 0;
  double t = 0;
  double E = 0;            // elastic energy of the current deformation
  double E_h = 0;          // regularized energy (== E in parabolic modes)
  double R_step = 0;       // tau * R_h(eta_prev, b) for this step
  double fluid_diss = 0;   // tau * (viscous + velocity-regularizer) terms
  double kin_avg_solid = 0;  // trailing length-h average of (rho_s/2)||b||^2
  double kin_avg_fluid = 0;  // trailing length-h average of marker kinetic sum
  double work_f = 0;       // work increment of the applied forces
  double slack_single = 0;
  double slack_telescope = 0;
  double cn_defect = 0;    // injectivity defect of the current deformation
  double min_det_eta = 0;
  double max_detJ_drift = 0;  // max |det(grad Phi) - 1| over markers
  double self_distance = 0;   // boundary self-clearance monitor
};

struct LedgerMeta {
  std::string mode;   // parabolic_solid | parabolic_fsi | hyperbolic_solid | hyperbolic_fsi
  double tau = 0;
  double h = 0;       // acceleration window; 0 in parabolic modes
  double rho_s = 1;
  double rho_f = 1;
  long long n_slots = 1;  // h / tau (1 in parabolic modes)
  double E0 = 0;          // initial regularized energy, fixes the tolerance scale
  double ineq_tol = 0;    // 1e-8 * (1 + |E0|) by convention
  double cn_tol = 0;      // raster resolution limit for the injectivity defect

  bool hyperbolic() const { return mode.rfind("hyperbolic", 0) == 0; }
  bool fsi() const { return mode.size() > 3 && mode.substr(mode.size() - 3) == "fsi"; }
};

// Incremental slack derivation + assertion.  append() fills the slack
// columns of a fresh row; verify() checks a stored row against the same
// recomputation (must agree to 1e-10 * scale).  Both throw
// InequalityViolation with a row-identifying message.
class LedgerChecker {
 public:
  void init(const LedgerMeta& meta, const LedgerRow& row0);
  void append(LedgerRow& row);
  void verify(const LedgerRow& row);

 private:
  void advance(const LedgerRow& row, double* single, double* telescope);

  LedgerMeta meta_;
  bool ready_ = false;
  long long prev_step_ = 0;
  double prev_t_ = 0;
  double prev_Eh_ = 0;
  double prev_ks_ = 0, prev_kf_ = 0;
  double sum_work_ = 0, sum_diss_ = 0, sum_budget_ = 0;
  std::vector<double> slot_s_, slot_f_;  // ||w||^2 ring buffers, length n_slots
};

struct LedgerSummary {
  long long rows = 0;
  double t_end = 0;
  double final_E_h = 0;
  double sum_diss = 0;
  double sum_work = 0;
  double min_slack_single = kInf;
  double min_slack_telescope = kInf;
  double max_cn_defect = 0;
  double min_self_distance = kInf;
  double min_det_eta = kInf;
  double max_detJ_drift = 0;
  double quad_bound_C = 0;  // minimal C with E_h + kin + diss <= C (1 + t^2)
};

// Replays the checker over all rows (verifying stored slacks) and collects
// the summary.  Throws on the first violated row.
LedgerSummary verify_ledger(const LedgerMeta& meta, const std::vector<LedgerRow>& rows);

// CSV with '#'-prefixed metadata preamble and a fixed 15-column header.
// Doubles are written with %.17g so parsing returns the identical bits.
void write_ledger(const std::string& path, const LedgerMeta& meta,
                  const std::vector<LedgerRow>& rows);
// Throws SchemaMismatch on any deviation from the expected layout.
void read_ledger(const std::string& path, LedgerMeta& meta, std::vector<LedgerRow>& rows);

// Least-squares constant for the root-time continuity diagnostic
//   ||eta(t) - eta(t0)||_{W^{1,2}} <= C sqrt(t - t0)
// over all snapshot pairs separated by more than tau.  Fit through the
// origin: C = sum(d_ij sqrt(dt_ij)) / sum(dt_ij).
double fit_hoelder(const SolidGrid& g, const std::vector<double>& times,
                   const std::vector<Field>& snaps, double tau);

// FNV-1a over a file's raw bytes (determinism checks of dumped ledgers).
std::uint64_t hash_file(const std::string& path);

}  // namespace varistep
