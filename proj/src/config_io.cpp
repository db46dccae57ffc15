#include "varistep/config_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace varistep {

namespace {

using nlohmann::json;

std::string join_violations(const std::vector<std::string>& bad) {
  std::string msg = "invalid configuration:";
  for (const auto& b : bad) msg += "\n  - " + b;
  return msg;
}

// Pulls known keys out of JSON objects, collecting type errors; whatever
// remains afterwards is an unknown key (flagged, so typos cannot silently
// fall back to defaults).
struct Reader {
  std::vector<std::string>& bad;

  void num(json& obj, const std::string& ctx, const char* key, double& dst) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    if (it->is_number()) dst = it->get<double>();
    else bad.push_back(ctx + key + ": expected a number");
    obj.erase(it);
  }
  void integer(json& obj, const std::string& ctx, const char* key, int& dst) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    if (it->is_number_integer()) dst = it->get<int>();
    else bad.push_back(ctx + key + ": expected an integer");
    obj.erase(it);
  }
  void boolean(json& obj, const std::string& ctx, const char* key, bool& dst) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    if (it->is_boolean()) dst = it->get<bool>();
    else bad.push_back(ctx + key + ": expected true/false");
    obj.erase(it);
  }
  void vec2(json& obj, const std::string& ctx, const char* key, Vec2& dst) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    if (it->is_array() && it->size() == 2 && (*it)[0].is_number() && (*it)[1].is_number())
      dst = {(*it)[0].get<double>(), (*it)[1].get<double>()};
    else
      bad.push_back(ctx + key + ": expected [x, y]");
    obj.erase(it);
  }
  json sub(json& obj, const std::string& ctx, const char* key) {
    auto it = obj.find(key);
    if (it == obj.end()) return json::object();
    json s = std::move(*it);
    obj.erase(it);
    if (!s.is_object()) {
      bad.push_back(ctx + key + ": expected an object");
      return json::object();
    }
    return s;
  }
  void leftovers(const json& obj, const std::string& ctx) {
    for (const auto& kv : obj.items()) bad.push_back(ctx + kv.key() + ": unknown key");
  }
};

void require_stream(const std::ofstream& out, const std::string& path) {
  if (!out) throw Error("cannot write file: " + path);
}

}  // namespace

SchemeConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("config root must be a JSON object");

  std::vector<std::string> bad;
  Reader rd{bad};
  SchemeConfig c;

  if (auto it = j.find("mode"); it != j.end()) {
    if (it->is_string()) {
      const std::string name = it->get<std::string>();
      if (auto m = mode_from_name(name)) c.mode = *m;
      else bad.push_back("mode: unknown scheme name '" + name + "'");
    } else {
      bad.push_back("mode: expected a string");
    }
    j.erase(it);
  }

  {
    json jg = rd.sub(j, "", "grid");
    int nx = 17, ny = 17;
    double lx = 1.0, ly = 1.0;
    rd.integer(jg, "grid.", "nx", nx);
    rd.integer(jg, "grid.", "ny", ny);
    rd.num(jg, "grid.", "lx", lx);
    rd.num(jg, "grid.", "ly", ly);
    rd.leftovers(jg, "grid.");
    if (nx < 2 || ny < 2) {
      bad.push_back("grid: need at least 2x2 nodes");
      nx = std::max(nx, 2);
      ny = std::max(ny, 2);
    }
    c.grid = make_solid_grid(nx, ny, lx, ly);
  }
  {
    json jb = rd.sub(j, "", "box");
    rd.num(jb, "box.", "lx", c.box.lx);
    rd.num(jb, "box.", "ly", c.box.ly);
    rd.leftovers(jb, "box.");
  }
  {
    json jm = rd.sub(j, "", "material");
    rd.num(jm, "material.", "lam", c.mat.lam);
    rd.num(jm, "material.", "mu", c.mat.mu);
    rd.num(jm, "material.", "a", c.mat.a);
    rd.num(jm, "material.", "q", c.mat.q);
    rd.num(jm, "material.", "w_svk", c.mat.w_svk);
    rd.num(jm, "material.", "w_bar", c.mat.w_bar);
    rd.num(jm, "material.", "w_reg", c.mat.w_reg);
    rd.num(jm, "material.", "rho_s", c.mat.rho_s);
    rd.num(jm, "material.", "rho_f", c.mat.rho_f);
    rd.num(jm, "material.", "nu", c.mat.nu);
    rd.leftovers(jm, "material.");
  }
  {
    json jr = rd.sub(j, "", "reg");
    rd.integer(jr, "reg.", "k0", c.reg.k0);
    rd.num(jr, "reg.", "a0", c.reg.a0);
    rd.leftovers(jr, "reg.");
  }
  rd.num(j, "", "tau", c.tau);
  rd.num(j, "", "h", c.h);
  rd.num(j, "", "T_end", c.T_end);
  rd.vec2(j, "", "place", c.place);
  rd.boolean(j, "", "relax_init", c.relax_init);
  rd.vec2(j, "", "vel0_shear", c.vel0_shear);
  rd.num(j, "", "v0_vortex", c.v0_vortex);
  {
    json jf = rd.sub(j, "", "fluid");
    rd.integer(jf, "fluid.", "mx", c.fluid_mx);
    rd.integer(jf, "fluid.", "my", c.fluid_my);
    rd.leftovers(jf, "fluid.");
  }
  {
    json jf = rd.sub(j, "", "force");
    rd.vec2(jf, "force.", "constant", c.force.constant);
    rd.vec2(jf, "force.", "bump", c.force.bump);
    rd.vec2(jf, "force.", "bump_center", c.force.bump_center);
    rd.num(jf, "force.", "bump_radius", c.force.bump_radius);
    rd.num(jf, "force.", "t_on", c.force.t_on);
    rd.num(jf, "force.", "t_off", c.force.t_off);
    rd.leftovers(jf, "force.");
  }
  {
    json jm = rd.sub(j, "", "minimize");
    rd.integer(jm, "minimize.", "max_iters", c.minopts.max_iters);
    rd.num(jm, "minimize.", "grad_tol", c.minopts.grad_tol);
    rd.integer(jm, "minimize.", "history", c.minopts.history);
    rd.num(jm, "minimize.", "armijo_c1", c.minopts.armijo_c1);
    rd.integer(jm, "minimize.", "max_halvings", c.minopts.max_halvings);
    rd.num(jm, "minimize.", "step0", c.minopts.step0);
    rd.leftovers(jm, "minimize.");
  }
  rd.num(j, "", "ineq_tol_scale", c.ineq_tol_scale);
  rd.num(j, "", "collision_stop", c.collision_stop);
  if (auto it = j.find("detJ"); it != j.end()) {
    if (it->is_array() && it->size() == 2 && (*it)[0].is_number() && (*it)[1].is_number()) {
      c.detJ_lo = (*it)[0].get<double>();
      c.detJ_hi = (*it)[1].get<double>();
    } else {
      bad.push_back("detJ: expected [lo, hi]");
    }
    j.erase(it);
  }
  rd.integer(j, "", "snapshot_stride", c.snapshot_stride);
  if (auto it = j.find("cn_raster"); it != j.end()) {
    if (it->is_array() && it->size() == 3 && (*it)[0].is_number_integer() &&
        (*it)[1].is_number_integer() && (*it)[2].is_number_integer()) {
      c.cn_raster_x = (*it)[0].get<int>();
      c.cn_raster_y = (*it)[1].get<int>();
      c.cn_supersample = (*it)[2].get<int>();
    } else {
      bad.push_back("cn_raster: expected [nx, ny, supersample]");
    }
    j.erase(it);
  }
  rd.integer(j, "", "backward_iters", c.backward_iters);
  rd.leftovers(j, "");

  for (const auto& v : config_violations(c)) bad.push_back(v);
  if (!bad.empty()) throw ValidationError(join_violations(bad));
  return c;
}

SchemeConfig parse_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config_text(text);
}

std::string canonical_config(const SchemeConfig& c) {
  std::ostringstream os;
  auto kv = [&os](const char* k, const std::string& v) { os << k << ' ' << v << '\n'; };
  auto kn = [&](const char* k, double v) { kv(k, fmt_g17(v)); };
  auto ki = [&](const char* k, long long v) { kv(k, std::to_string(v)); };
  auto k2 = [&](const char* k, Vec2 v) { kv(k, fmt_g17(v.x) + " " + fmt_g17(v.y)); };
  kv("mode", mode_name(c.mode));
  ki("grid.nx", c.grid.nx);
  ki("grid.ny", c.grid.ny);
  kn("grid.lx", c.grid.lx);
  kn("grid.ly", c.grid.ly);
  kn("box.lx", c.box.lx);
  kn("box.ly", c.box.ly);
  kn("material.lam", c.mat.lam);
  kn("material.mu", c.mat.mu);
  kn("material.a", c.mat.a);
  kn("material.q", c.mat.q);
  kn("material.w_svk", c.mat.w_svk);
  kn("material.w_bar", c.mat.w_bar);
  kn("material.w_reg", c.mat.w_reg);
  kn("material.rho_s", c.mat.rho_s);
  kn("material.rho_f", c.mat.rho_f);
  kn("material.nu", c.mat.nu);
  ki("reg.k0", c.reg.k0);
  kn("reg.a0", c.reg.a0);
  kn("tau", c.tau);
  kn("h", c.h);
  kn("T_end", c.T_end);
  k2("place", c.place);
  ki("relax_init", c.relax_init ? 1 : 0);
  k2("vel0_shear", c.vel0_shear);
  kn("v0_vortex", c.v0_vortex);
  ki("fluid.mx", c.fluid_mx);
  ki("fluid.my", c.fluid_my);
  k2("force.constant", c.force.constant);
  k2("force.bump", c.force.bump);
  k2("force.bump_center", c.force.bump_center);
  kn("force.bump_radius", c.force.bump_radius);
  kn("force.t_on", c.force.t_on);
  kn("force.t_off", c.force.t_off);
  ki("minimize.max_iters", c.minopts.max_iters);
  kn("minimize.grad_tol", c.minopts.grad_tol);
  ki("minimize.history", c.minopts.history);
  kn("minimize.armijo_c1", c.minopts.armijo_c1);
  ki("minimize.max_halvings", c.minopts.max_halvings);
  kn("minimize.step0", c.minopts.step0);
  kn("ineq_tol_scale", c.ineq_tol_scale);
  kn("collision_stop", c.collision_stop);
  kn("detJ.lo", c.detJ_lo);
  kn("detJ.hi", c.detJ_hi);
  ki("snapshot_stride", c.snapshot_stride);
  ki("cn_raster.x", c.cn_raster_x);
  ki("cn_raster.y", c.cn_raster_y);
  ki("cn_raster.supersample", c.cn_supersample);
  ki("backward_iters", c.backward_iters);
  // Explicit initial fields (test construction only; empty for file configs).
  for (const Vec2& p : c.eta0) os << "eta0 " << fmt_g17(p.x) << ' ' << fmt_g17(p.y) << '\n';
  for (const Vec2& p : c.eta_vel0)
    os << "eta_vel0 " << fmt_g17(p.x) << ' ' << fmt_g17(p.y) << '\n';
  return os.str();
}

std::string config_hash(const SchemeConfig& cfg) { return hex64(fnv1a64(canonical_config(cfg))); }

void write_node_field(const std::string& path, const SolidGrid& g, const Field& f,
                      const std::string& name, double time) {
  std::ofstream out(path, std::ios::binary);
  require_stream(out, path);
  out << "# field " << name << "\n# t " << fmt_g17(time) << "\n# dims " << g.nx << ' ' << g.ny
      << "\n# spacing " << fmt_g17(g.dx()) << ' ' << fmt_g17(g.dy()) << '\n';
  for (int n = 0; n < g.nodes(); ++n) out << fmt_g17(f[n].x) << ' ' << fmt_g17(f[n].y) << '\n';
}

void write_scalar_grid(const std::string& path, const std::string& name, int ncols, int nrows,
                       double hx, double hy, const std::vector<double>& vals) {
  if (static_cast<int>(vals.size()) != ncols * nrows)
    throw Error("scalar grid size mismatch for " + path);
  std::ofstream out(path, std::ios::binary);
  require_stream(out, path);
  out << "# field " << name << "\n# dims " << ncols << ' ' << nrows << "\n# spacing "
      << fmt_g17(hx) << ' ' << fmt_g17(hy) << '\n';
  for (double v : vals) out << fmt_g17(v) << '\n';
}

void write_mask_grid(const std::string& path, int mx, int my,
                     const std::vector<std::uint8_t>& mask) {
  if (static_cast<int>(mask.size()) != mx * my) throw Error("mask size mismatch for " + path);
  std::ofstream out(path, std::ios::binary);
  require_stream(out, path);
  out << "# mask\n# dims " << mx << ' ' << my << '\n';
  for (int j = 0; j < my; ++j) {
    for (int i = 0; i < mx; ++i) {
      out << (mask[j * mx + i] ? '1' : '0');
      out << (i + 1 == mx ? '\n' : ' ');
    }
  }
}

void write_markers(const std::string& path, const MarkerSet& ms) {
  std::ofstream out(path, std::ios::binary);
  require_stream(out, path);
  out << "# markers " << ms.size() << "\n# columns x0 y0 x y detJ\n";
  for (int m = 0; m < ms.size(); ++m) {
    out << fmt_g17(ms.origin[m].x) << ' ' << fmt_g17(ms.origin[m].y) << ' '
        << fmt_g17(ms.pos[m].x) << ' ' << fmt_g17(ms.pos[m].y) << ' '
        << fmt_g17(ms.J[m].det()) << '\n';
  }
}

void write_manifest(const std::string& path, const RunManifest& man) {
  std::ofstream out(path, std::ios::binary);
  require_stream(out, path);
  out << "# varistep-manifest v1\n";
  out << "config_hash " << man.config_hash << '\n';
  out << "code_version " << man.code_version << '\n';
  out << "mode " << man.mode << '\n';
  out << "stop " << man.stop << '\n';
  out << "stop_time " << fmt_g17(man.stop_time) << '\n';
  for (const auto& o : man.outputs) out << "output " << o << '\n';
}

RunManifest emit_outputs(const std::string& out_dir, const SchemeConfig& cfg,
                         const TrajectoryRecord& tr) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  auto at = [&](const std::string& name) { return (fs::path(out_dir) / name).string(); };

  RunManifest man;
  man.config_hash = config_hash(cfg);
  man.mode = tr.meta.mode;
  man.stop = stop_name(tr.stop);
  if (!tr.stop_detail.empty()) man.stop += ": " + tr.stop_detail;
  man.stop_time = tr.stop_time;

  write_ledger(at("ledger.csv"), tr.meta, tr.rows);
  man.outputs.push_back("ledger.csv");

  // Stride zero means: ledger (and manifest) only, no field dumps.
  if (cfg.snapshot_stride > 0) {
    for (size_t i = 0; i < tr.snapshots.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "eta_%04zu.txt", i);
      write_node_field(at(name), cfg.grid, tr.snapshots[i], "eta", tr.snap_times[i]);
      man.outputs.push_back(name);
    }
  }

  if (cfg.snapshot_stride > 0 && !tr.u_final.empty()) {
    const FluidGrid& fg = tr.fgrid;
    write_scalar_grid(at("u_final.txt"), "u", fg.ucols(), fg.my, fg.hx(), fg.hy(), tr.u_final);
    write_scalar_grid(at("v_final.txt"), "v", fg.mx, fg.my + 1, fg.hx(), fg.hy(), tr.v_final);
    write_mask_grid(at("mask.txt"), fg.mx, fg.my, tr.cell_solid_final);
    man.outputs.push_back("u_final.txt");
    man.outputs.push_back("v_final.txt");
    man.outputs.push_back("mask.txt");
  }
  if (cfg.snapshot_stride > 0 && tr.markers_final.size() > 0) {
    write_markers(at("markers.txt"), tr.markers_final);
    man.outputs.push_back("markers.txt");
  }
  if (cfg.snapshot_stride > 0 && !tr.epochs.empty()) {
    std::ofstream out(at("epochs.csv"), std::ios::binary);
    require_stream(out, at("epochs.csv"));
    out << "epoch,t_end,slack_certified,slack_sharp,momentum_defect,flow_return_err\n";
    for (const auto& e : tr.epochs) {
      out << e.epoch << ',' << fmt_g17(e.t_end) << ',' << fmt_g17(e.slack_certified) << ','
          << fmt_g17(e.slack_sharp) << ',' << fmt_g17(e.momentum_defect) << ','
          << fmt_g17(e.flow_return_err) << '\n';
    }
    man.outputs.push_back("epochs.csv");
  }
  write_manifest(at("manifest.txt"), man);
  return man;
}

namespace {

struct Col {
  const char* name;
  double (*get)(const LedgerRow&);
};

constexpr Col kPlotCols[] = {
    {"E", [](const LedgerRow& r) { return r.E; }},
    {"E_h", [](const LedgerRow& r) { return r.E_h; }},
    {"R_step", [](const LedgerRow& r) { return r.R_step; }},
    {"fluid_diss", [](const LedgerRow& r) { return r.fluid_diss; }},
    {"kin_avg_solid", [](const LedgerRow& r) { return r.kin_avg_solid; }},
    {"kin_avg_fluid", [](const LedgerRow& r) { return r.kin_avg_fluid; }},
    {"work_f", [](const LedgerRow& r) { return r.work_f; }},
    {"slack_single", [](const LedgerRow& r) { return r.slack_single; }},
    {"slack_telescope", [](const LedgerRow& r) { return r.slack_telescope; }},
    {"cn_defect", [](const LedgerRow& r) { return r.cn_defect; }},
    {"min_det_eta", [](const LedgerRow& r) { return r.min_det_eta; }},
    {"max_detJ_drift", [](const LedgerRow& r) { return r.max_detJ_drift; }},
    {"self_distance", [](const LedgerRow& r) { return r.self_distance; }},
};

std::string fmt_px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

void write_series_svg(const std::string& path, const std::string& name,
                      const std::vector<double>& t, const std::vector<double>& y) {
  const double W = 640, H = 360, M = 48;
  double ymin = y.empty() ? 0 : y[0], ymax = ymin;
  for (double v : y) {
    ymin = std::min(ymin, v);
    ymax = std::max(ymax, v);
  }
  if (!(ymax > ymin)) {
    ymin -= 1;
    ymax += 1;
  }
  const double t0 = t.empty() ? 0 : t.front();
  const double t1 = (t.empty() || t.back() == t0) ? t0 + 1 : t.back();
  std::ofstream out(path, std::ios::binary);
  require_stream(out, path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << ' ' << H << "\">\n";
  out << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  out << "<rect x=\"" << M << "\" y=\"" << M << "\" width=\"" << W - 2 * M << "\" height=\""
      << H - 2 * M << "\" fill=\"none\" stroke=\"#999\"/>\n";
  out << "<polyline fill=\"none\" stroke=\"#1f4e79\" stroke-width=\"1.5\" points=\"";
  for (size_t i = 0; i < t.size(); ++i) {
    const double px = M + (t[i] - t0) / (t1 - t0) * (W - 2 * M);
    const double py = H - M - (y[i] - ymin) / (ymax - ymin) * (H - 2 * M);
    out << fmt_px(px) << ',' << fmt_px(py) << (i + 1 < t.size() ? " " : "");
  }
  out << "\"/>\n";
  out << "<text x=\"" << M << "\" y=\"" << M - 12 << "\" font-family=\"monospace\" font-size=\"14\">"
      << name << "</text>\n";
  out << "<text x=\"" << M << "\" y=\"" << H - 10
      << "\" font-family=\"monospace\" font-size=\"11\">t in [" << fmt_g17(t0) << ", "
      << fmt_g17(t1) << "]   range [" << fmt_g17(ymin) << ", " << fmt_g17(ymax)
      << "]</text>\n";
  out << "</svg>\n";
}

}  // namespace

std::vector<std::string> plot_ledger(const std::string& ledger_path, const std::string& out_dir) {
  namespace fs = std::filesystem;
  LedgerMeta meta;
  std::vector<LedgerRow> rows;
  read_ledger(ledger_path, meta, rows);
  fs::create_directories(out_dir);

  std::vector<double> t(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) t[i] = rows[i].t;

  std::vector<std::string> written;
  for (const Col& col : kPlotCols) {
    std::vector<double> y(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) y[i] = col.get(rows[i]);

    const std::string csv = (fs::path(out_dir) / (std::string(col.name) + ".csv")).string();
    std::ofstream out(csv, std::ios::binary);
    require_stream(out, csv);
    out << "t," << col.name << '\n';
    for (size_t i = 0; i < rows.size(); ++i)
      out << fmt_g17(t[i]) << ',' << fmt_g17(y[i]) << '\n';
    out.close();
    written.push_back(csv);

    const std::string svg = (fs::path(out_dir) / (std::string(col.name) + ".svg")).string();
    write_series_svg(svg, col.name, t, y);
    written.push_back(svg);
  }
  return written;
}

}  // namespace varistep
