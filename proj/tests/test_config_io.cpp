// Config parsing (all violations at once, unknown-key detection), canonical
// hashing, output emission rules and the plot emitter.
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "varistep/config_io.hpp"

using namespace varistep;

namespace {

std::string base_json(const std::string& extra) {
  std::string s = R"({
    "mode": "parabolic_solid",
    "grid": {"nx": 5, "ny": 5},
    "tau": 0.005,
    "T_end": 0.05)";
  if (!extra.empty()) s += ",\n" + extra;
  s += "\n}";
  return s;
}

std::string thrown_message(const std::string& json_text) {
  try {
    parse_config_text(json_text);
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

SchemeConfig tiny_run_cfg() {
  SchemeConfig c;
  c.mode = SchemeMode::parabolic_solid;
  c.grid = make_solid_grid(5, 5);
  c.place = {1.0, 0.5};
  c.tau = 5e-3;
  c.T_end = 0.025;
  c.force.constant = {0.3, -0.2};
  c.cn_raster_x = 64;
  c.cn_raster_y = 48;
  c.cn_supersample = 1;
  c.collision_stop = 0.05;
  c.snapshot_stride = 1;
  return c;
}

}  // namespace

TEST_CASE("config: shipped example files parse and keep the documented ratio") {
  const char* names[] = {"parabolic_solid.json", "parabolic_fsi.json", "hyperbolic_solid.json",
                         "hyperbolic_fsi.json"};
  for (const char* n : names) {
    CAPTURE(n);
    SchemeConfig c = parse_config(std::string(CONFIG_DIR) + "/" + n);
    CHECK(config_violations(c).empty());
  }
  SchemeConfig d = parse_config(std::string(CONFIG_DIR) + "/parabolic_solid.json");
  CHECK(d.mode == SchemeMode::parabolic_solid);
  CHECK(d.h / d.tau == doctest::Approx(16.0));
  CHECK(d.grid.nx == 17);
  CHECK(d.relax_init);
}

TEST_CASE("config: every violation is reported, with the documented citations") {
  // Out-of-range regularizer exponent.
  const std::string m1 = thrown_message(base_json(R"("reg": {"a0": 1.2})"));
  CHECK(m1.find("a0 < 1") != std::string::npos);

  // Barrier exponent at the admissibility border for q = 4 (needs a > 4).
  const std::string m2 =
      thrown_message(base_json(R"("material": {"a": 4.0, "q": 4.0})"));
  CHECK(m2.find("a > qn/(q-n)") != std::string::npos);

  // Three independent problems -> three bullets in one message.
  const std::string m3 = thrown_message(
      base_json(R"("reg": {"a0": 1.2}, "material": {"a": 4.0, "q": 4.0}, "tau": -1.0)"));
  CHECK(m3.find("a0 < 1") != std::string::npos);
  CHECK(m3.find("a > qn/(q-n)") != std::string::npos);
  CHECK(m3.find("tau must be positive") != std::string::npos);
}

TEST_CASE("config: unknown keys and type mismatches are named") {
  const std::string m = thrown_message(base_json(R"("tua": 0.001, "box": {"lz": 3.0})"));
  CHECK(m.find("tua: unknown key") != std::string::npos);
  CHECK(m.find("box.lz: unknown key") != std::string::npos);

  const std::string m2 = thrown_message(base_json(R"("collision_stop": "soon")"));
  CHECK(m2.find("collision_stop: expected a number") != std::string::npos);

  CHECK(thrown_message("this is not json").find("not valid JSON") != std::string::npos);
}

TEST_CASE("config: canonical hash covers the fields") {
  SchemeConfig a = parse_config_text(base_json(""));
  SchemeConfig b = parse_config_text(base_json(""));
  CHECK(config_hash(a) == config_hash(b));

  SchemeConfig c = parse_config_text(base_json(R"("collision_stop": 0.07)"));
  CHECK(config_hash(a) != config_hash(c));
  SchemeConfig d = parse_config_text(base_json(R"("force": {"bump_radius": 0.5})"));
  CHECK(config_hash(a) != config_hash(d));
  // The canonical dump mentions every top-level scheme field by name.
  const std::string canon = canonical_config(a);
  for (const char* key : {"mode", "grid.nx", "material.a", "reg.a0", "tau", "h", "T_end",
                          "force.constant", "minimize.grad_tol", "detJ.lo", "cn_raster.x",
                          "backward_iters", "snapshot_stride", "collision_stop"}) {
    CAPTURE(key);
    CHECK(canon.find(std::string(key) + " ") != std::string::npos);
  }
}

TEST_CASE("config: emitted outputs verify, and stride zero means ledger only") {
  namespace fs = std::filesystem;
  SchemeConfig c = tiny_run_cfg();
  TrajectoryRecord tr = run_scheme(c);

  const std::string dir1 = "cio_out_a", dir2 = "cio_out_b";
  RunManifest man = emit_outputs(dir1, c, tr);
  CHECK(man.mode == "parabolic_solid");
  CHECK(man.config_hash == config_hash(c));
  CHECK(fs::exists(fs::path(dir1) / "manifest.txt"));
  CHECK(fs::exists(fs::path(dir1) / "eta_0000.txt"));

  LedgerMeta meta;
  std::vector<LedgerRow> rows;
  read_ledger((fs::path(dir1) / "ledger.csv").string(), meta, rows);
  CHECK(verify_ledger(meta, rows).rows == static_cast<long long>(tr.rows.size()));

  // Determinism through the whole pipeline: rerun, re-emit, byte-compare.
  TrajectoryRecord tr2 = run_scheme(c);
  emit_outputs(dir2, c, tr2);
  CHECK(hash_file((fs::path(dir1) / "ledger.csv").string()) ==
        hash_file((fs::path(dir2) / "ledger.csv").string()));

  // Stride zero: only the ledger is listed and no field dumps appear.
  SchemeConfig c0 = tiny_run_cfg();
  c0.snapshot_stride = 0;
  TrajectoryRecord tr0 = run_scheme(c0);
  const std::string dir3 = "cio_out_c";
  RunManifest man0 = emit_outputs(dir3, c0, tr0);
  CHECK(man0.outputs.size() == 1);
  CHECK(man0.outputs[0] == "ledger.csv");
  CHECK(!fs::exists(fs::path(dir3) / "eta_0000.txt"));

  fs::remove_all(dir1);
  fs::remove_all(dir2);
  fs::remove_all(dir3);
}

TEST_CASE("config: plot emits one CSV and one SVG per ledger column") {
  namespace fs = std::filesystem;
  SchemeConfig c = tiny_run_cfg();
  TrajectoryRecord tr = run_scheme(c);
  const std::string dir = "cio_plot";
  fs::create_directories(dir);
  const std::string ledger = (fs::path(dir) / "ledger.csv").string();
  write_ledger(ledger, tr.meta, tr.rows);

  const auto files = plot_ledger(ledger, dir);
  CHECK(files.size() == 26);  // 13 numeric columns, CSV + SVG each
  std::ifstream ecsv(fs::path(dir) / "E.csv");
  REQUIRE(ecsv.good());
  std::string line;
  int nlines = 0;
  std::getline(ecsv, line);
  CHECK(line == "t,E");
  while (std::getline(ecsv, line)) ++nlines;
  CHECK(nlines == static_cast<int>(tr.rows.size()));
  std::ifstream esvg(fs::path(dir) / "E.svg");
  REQUIRE(esvg.good());
  std::getline(esvg, line);
  CHECK(line.find("<svg") != std::string::npos);
  fs::remove_all(dir);
}
