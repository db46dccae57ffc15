#include "varistep/ledger.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace varistep {

namespace {

const char* kHeader =
    "step,t,E,E_h,R_step,fluid_diss,kin_avg_solid,kin_avg_fluid,work_f,"
    "slack_single,slack_telescope,cn_defect,min_det_eta,max_detJ_drift,self_distance";

void require_finite(const LedgerRow& r) {
  const double vals[] = {r.t,           r.E,           r.E_h,
                         r.R_step,      r.fluid_diss,  r.kin_avg_solid,
                         r.kin_avg_fluid, r.work_f,    r.slack_single,
                         r.slack_telescope, r.cn_defect, r.min_det_eta,
                         r.max_detJ_drift,  r.self_distance};
  for (double v : vals)
    if (!is_finite(v))
      throw InequalityViolation("ledger row " + std::to_string(r.step) + ": non-finite field");
}

}  // namespace

void LedgerChecker::init(const LedgerMeta& meta, const LedgerRow& row0) {
  meta_ = meta;
  if (meta_.n_slots < 1) throw ValidationError("ledger: n_slots must be >= 1");
  require_finite(row0);
  prev_step_ = row0.step;
  prev_t_ = row0.t;
  prev_Eh_ = row0.E_h;
  prev_ks_ = row0.kin_avg_solid;
  prev_kf_ = row0.kin_avg_fluid;
  sum_work_ = sum_diss_ = sum_budget_ = 0;
  // Constant pre-history: every slot of the delayed window holds the initial
  // ||w||^2, recovered from the seed kinetic averages.
  slot_s_.assign(meta_.n_slots, meta_.rho_s > 0 ? 2.0 * row0.kin_avg_solid / meta_.rho_s : 0.0);
  slot_f_.assign(meta_.n_slots, meta_.rho_f > 0 ? 2.0 * row0.kin_avg_fluid / meta_.rho_f : 0.0);
  ready_ = true;
}

void LedgerChecker::advance(const LedgerRow& row, double* single, double* telescope) {
  if (!ready_) throw ValidationError("ledger checker used before init");
  require_finite(row);
  if (row.step != prev_step_ + 1)
    throw InequalityViolation("ledger row " + std::to_string(row.step) + ": step index gap");
  if (!(row.t > prev_t_))
    throw InequalityViolation("ledger row " + std::to_string(row.step) + ": time not increasing");

  double budget = 0.0;
  if (meta_.hyperbolic()) {
    const long long n = meta_.n_slots;
    const int r = static_cast<int>(((row.step - 1) % n + n) % n);
    // Budget of this step: the slot still holds ||w||^2 from one window ago.
    budget = 0.5 * (meta_.rho_s * slot_s_[r] + meta_.rho_f * slot_f_[r]) / n;
    // Slot recursion: recover this step's ||b||^2 from the moving averages.
    const double Ss =
        meta_.rho_s > 0 ? 2.0 * n / meta_.rho_s * (row.kin_avg_solid - prev_ks_) + slot_s_[r] : 0.0;
    const double Sf =
        meta_.rho_f > 0 ? 2.0 * n / meta_.rho_f * (row.kin_avg_fluid - prev_kf_) + slot_f_[r] : 0.0;
    slot_s_[r] = Ss;
    slot_f_[r] = Sf;
  }

  *single = (prev_Eh_ - row.E_h) - row.R_step - row.fluid_diss + row.work_f + budget;
  sum_work_ += row.work_f;
  sum_diss_ += row.R_step + row.fluid_diss;
  sum_budget_ += budget;
  const double E0 = meta_.E0;
  *telescope = (E0 + sum_work_ + sum_budget_) - (row.E_h + sum_diss_);

  if (*single < -meta_.ineq_tol)
    throw InequalityViolation("ledger row " + std::to_string(row.step) +
                              ": single-step slack " + fmt_g17(*single) + " < -tol");
  if (*telescope < -meta_.ineq_tol)
    throw InequalityViolation("ledger row " + std::to_string(row.step) +
                              ": telescoped slack " + fmt_g17(*telescope) + " < -tol");
  if (meta_.cn_tol > 0 && row.cn_defect > meta_.cn_tol)
    throw InequalityViolation("ledger row " + std::to_string(row.step) +
                              ": injectivity defect " + fmt_g17(row.cn_defect) + " > tol");
  if (!(row.min_det_eta > 0))
    throw InequalityViolation("ledger row " + std::to_string(row.step) +
                              ": non-positive deformation Jacobian");

  prev_step_ = row.step;
  prev_t_ = row.t;
  prev_Eh_ = row.E_h;
  prev_ks_ = row.kin_avg_solid;
  prev_kf_ = row.kin_avg_fluid;
}

void LedgerChecker::append(LedgerRow& row) {
  double s = 0, tele = 0;
  advance(row, &s, &tele);
  row.slack_single = s;
  row.slack_telescope = tele;
}

void LedgerChecker::verify(const LedgerRow& row) {
  double s = 0, tele = 0;
  advance(row, &s, &tele);
  const double match_tol = 1e-10 * (1.0 + std::abs(meta_.E0));
  if (std::abs(s - row.slack_single) > match_tol)
    throw InequalityViolation("ledger row " + std::to_string(row.step) +
                              ": stored single-step slack " + fmt_g17(row.slack_single) +
                              " does not match recomputation " + fmt_g17(s));
  if (std::abs(tele - row.slack_telescope) > match_tol)
    throw InequalityViolation("ledger row " + std::to_string(row.step) +
                              ": stored telescoped slack " + fmt_g17(row.slack_telescope) +
                              " does not match recomputation " + fmt_g17(tele));
}

LedgerSummary verify_ledger(const LedgerMeta& meta, const std::vector<LedgerRow>& rows) {
  if (rows.empty()) throw SchemaMismatch("ledger: no rows");
  LedgerChecker chk;
  chk.init(meta, rows[0]);
  LedgerSummary s;
  s.rows = static_cast<long long>(rows.size());
  for (std::size_t i = 1; i < rows.size(); ++i) {
    chk.verify(rows[i]);
    const LedgerRow& r = rows[i];
    s.sum_diss += r.R_step + r.fluid_diss;
    s.sum_work += r.work_f;
    s.min_slack_single = std::min(s.min_slack_single, r.slack_single);
    s.min_slack_telescope = std::min(s.min_slack_telescope, r.slack_telescope);
  }
  for (const LedgerRow& r : rows) {
    s.max_cn_defect = std::max(s.max_cn_defect, r.cn_defect);
    s.min_self_distance = std::min(s.min_self_distance, r.self_distance);
    s.min_det_eta = std::min(s.min_det_eta, r.min_det_eta);
    s.max_detJ_drift = std::max(s.max_detJ_drift, r.max_detJ_drift);
  }
  s.t_end = rows.back().t;
  s.final_E_h = rows.back().E_h;
  // Minimal constant closing E_h + kinetic averages + accumulated dissipation
  // <= C (1 + t^2) over all rows (reported, not asserted).
  double run_diss = 0;
  for (const LedgerRow& r : rows) {
    if (r.step > 0) run_diss += r.R_step + r.fluid_diss;
    const double lhs = r.E_h + r.kin_avg_solid + r.kin_avg_fluid + run_diss;
    s.quad_bound_C = std::max(s.quad_bound_C, lhs / (1.0 + r.t * r.t));
  }
  return s;
}

void write_ledger(const std::string& path, const LedgerMeta& meta,
                  const std::vector<LedgerRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open ledger for writing: " + path);
  out << "# varistep-ledger v1\n";
  out << "# mode " << meta.mode << "\n";
  out << "# tau " << fmt_g17(meta.tau) << "\n";
  out << "# h " << fmt_g17(meta.h) << "\n";
  out << "# rho_s " << fmt_g17(meta.rho_s) << "\n";
  out << "# rho_f " << fmt_g17(meta.rho_f) << "\n";
  out << "# n_slots " << meta.n_slots << "\n";
  out << "# E0 " << fmt_g17(meta.E0) << "\n";
  out << "# ineq_tol " << fmt_g17(meta.ineq_tol) << "\n";
  out << "# cn_tol " << fmt_g17(meta.cn_tol) << "\n";
  out << kHeader << "\n";
  for (const LedgerRow& r : rows) {
    out << r.step << ',' << fmt_g17(r.t) << ',' << fmt_g17(r.E) << ',' << fmt_g17(r.E_h) << ','
        << fmt_g17(r.R_step) << ',' << fmt_g17(r.fluid_diss) << ',' << fmt_g17(r.kin_avg_solid)
        << ',' << fmt_g17(r.kin_avg_fluid) << ',' << fmt_g17(r.work_f) << ','
        << fmt_g17(r.slack_single) << ',' << fmt_g17(r.slack_telescope) << ','
        << fmt_g17(r.cn_defect) << ',' << fmt_g17(r.min_det_eta) << ','
        << fmt_g17(r.max_detJ_drift) << ',' << fmt_g17(r.self_distance) << "\n";
  }
  if (!out) throw ValidationError("short write on ledger: " + path);
}

void read_ledger(const std::string& path, LedgerMeta& meta, std::vector<LedgerRow>& rows) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaMismatch("cannot open ledger: " + path);
  std::string line;
  bool header_seen = false;
  meta = LedgerMeta{};
  rows.clear();
  bool version_seen = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ls(line.substr(1));
      std::string key;
      ls >> key;
      if (key == "varistep-ledger") {
        std::string ver;
        ls >> ver;
        if (ver != "v1") throw SchemaMismatch("ledger version " + ver + " not understood");
        version_seen = true;
      } else if (key == "mode")
        ls >> meta.mode;
      else if (key == "tau")
        ls >> meta.tau;
      else if (key == "h")
        ls >> meta.h;
      else if (key == "rho_s")
        ls >> meta.rho_s;
      else if (key == "rho_f")
        ls >> meta.rho_f;
      else if (key == "n_slots")
        ls >> meta.n_slots;
      else if (key == "E0")
        ls >> meta.E0;
      else if (key == "ineq_tol")
        ls >> meta.ineq_tol;
      else if (key == "cn_tol")
        ls >> meta.cn_tol;
      // Unknown metadata keys are ignored (forward compatible).
      continue;
    }
    if (!header_seen) {
      if (line != kHeader)
        throw SchemaMismatch("ledger column header mismatch: got '" + line + "'");
      header_seen = true;
      continue;
    }
    LedgerRow r;
    double fields[14];
    char c = 0;
    std::istringstream ls(line);
    ls >> r.step;
    for (int i = 0; i < 14; ++i) {
      ls >> c;
      if (c != ',') throw SchemaMismatch("ledger row: expected 15 comma-separated fields");
      ls >> fields[i];
    }
    if (!ls) throw SchemaMismatch("ledger row: malformed number");
    std::string rest;
    ls >> rest;
    if (!rest.empty()) throw SchemaMismatch("ledger row: trailing content '" + rest + "'");
    r.t = fields[0];
    r.E = fields[1];
    r.E_h = fields[2];
    r.R_step = fields[3];
    r.fluid_diss = fields[4];
    r.kin_avg_solid = fields[5];
    r.kin_avg_fluid = fields[6];
    r.work_f = fields[7];
    r.slack_single = fields[8];
    r.slack_telescope = fields[9];
    r.cn_defect = fields[10];
    r.min_det_eta = fields[11];
    r.max_detJ_drift = fields[12];
    r.self_distance = fields[13];
    rows.push_back(r);
  }
  if (!version_seen) throw SchemaMismatch("ledger: missing version line");
  if (!header_seen) throw SchemaMismatch("ledger: missing column header");
  if (meta.mode.empty()) throw SchemaMismatch("ledger: missing mode metadata");
  if (rows.empty()) throw SchemaMismatch("ledger: no data rows");
}

double fit_hoelder(const SolidGrid& g, const std::vector<double>& times,
                   const std::vector<Field>& snaps, double tau) {
  if (times.size() != snaps.size()) throw ValidationError("fit_hoelder: times/snaps mismatch");
  if (times.size() < 2) return 0.0;
  Field diff(g.nodes());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < snaps.size(); ++i)
    for (std::size_t j = i + 1; j < snaps.size(); ++j) {
      const double dt = times[j] - times[i];
      if (!(dt > tau)) continue;
      for (int n = 0; n < g.nodes(); ++n) diff[n] = snaps[j][n] - snaps[i][n];
      const double d = std::sqrt(w12_norm2(g, diff));
      num += d * std::sqrt(dt);
      den += dt;
    }
  if (den == 0.0) return 0.0;
  return num / den;
}

std::uint64_t hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file for hashing: " + path);
  std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a offset basis
  char buf[65536];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    const std::streamsize got = in.gcount();
    h = fnv1a64(buf, static_cast<std::size_t>(got), h);
    if (got < static_cast<std::streamsize>(sizeof buf)) break;
  }
  return h;
}

}  // namespace varistep
