// Command-line front end.
//
// Exit codes: 0 success, 2 invalid configuration or usage, 3 scheme stop
// (collision / flow-map drift), 4 runtime assertion failure (violated
// inequality, malformed ledger, internal error).
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "varistep/config_io.hpp"

namespace {

using namespace varistep;

void print_summary(const TrajectoryRecord& tr, const LedgerSummary& sum) {
  std::printf("mode            %s\n", tr.meta.mode.c_str());
  std::printf("rows            %lld (t_end %s)\n", sum.rows, fmt_g17(sum.t_end).c_str());
  std::printf("final E_h       %s\n", fmt_g17(sum.final_E_h).c_str());
  std::printf("sum dissipation %s\n", fmt_g17(sum.sum_diss).c_str());
  std::printf("sum work        %s\n", fmt_g17(sum.sum_work).c_str());
  std::printf("min slack       single %s  telescope %s  (tol %s)\n",
              fmt_g17(sum.min_slack_single).c_str(), fmt_g17(sum.min_slack_telescope).c_str(),
              fmt_g17(tr.meta.ineq_tol).c_str());
  std::printf("max cn defect   %s (tol %s)\n", fmt_g17(sum.max_cn_defect).c_str(),
              fmt_g17(tr.meta.cn_tol).c_str());
  std::printf("min clearance   %s\n", fmt_g17(sum.min_self_distance).c_str());
  if (tr.meta.fsi())
    std::printf("max detJ drift  %s\n", fmt_g17(sum.max_detJ_drift).c_str());
  std::printf("stop            %s%s%s at t %s\n", stop_name(tr.stop),
              tr.stop_detail.empty() ? "" : ": ", tr.stop_detail.c_str(),
              fmt_g17(tr.stop_time).c_str());
}

int cmd_run(const std::string& config_path, const std::string& out_dir) {
  SchemeConfig cfg = parse_config(config_path);
  TrajectoryRecord tr = run_scheme(cfg);
  RunManifest man = emit_outputs(out_dir, cfg, tr);
  LedgerSummary sum = verify_ledger(tr.meta, tr.rows);
  std::printf("config hash     %s\n", man.config_hash.c_str());
  print_summary(tr, sum);
  std::printf("outputs         %zu files in %s\n", man.outputs.size() + 1, out_dir.c_str());
  return tr.stop == StopReason::completed ? 0 : 3;
}

int cmd_verify(const std::string& ledger_path) {
  LedgerMeta meta;
  std::vector<LedgerRow> rows;
  read_ledger(ledger_path, meta, rows);
  LedgerSummary sum = verify_ledger(meta, rows);
  std::printf("ledger          %s\n", ledger_path.c_str());
  std::printf("file hash       %s\n", hex64(hash_file(ledger_path)).c_str());
  std::printf("mode            %s\n", meta.mode.c_str());
  std::printf("rows verified   %lld (t_end %s)\n", sum.rows, fmt_g17(sum.t_end).c_str());
  std::printf("min slack       single %s  telescope %s  (tol %s)\n",
              fmt_g17(sum.min_slack_single).c_str(), fmt_g17(sum.min_slack_telescope).c_str(),
              fmt_g17(meta.ineq_tol).c_str());
  std::printf("quadratic bound E_h + kin + diss <= %s * (1 + t^2)\n",
              fmt_g17(sum.quad_bound_C).c_str());
  std::printf("all row inequalities hold\n");
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& param,
              const std::vector<double>& values, const std::string& out_dir) {
  if (values.empty()) throw ValidationError("sweep: need at least one value");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const std::string summary_path = (fs::path(out_dir) / "sweep_summary.csv").string();
  std::ofstream summary(summary_path, std::ios::binary);
  if (!summary) throw Error("cannot write file: " + summary_path);
  summary << "param,value,rows,t_end,stop,final_E_h,min_slack_single,hoelder_C\n";

  bool any_stop = false;
  for (size_t i = 0; i < values.size(); ++i) {
    SchemeConfig cfg = parse_config(config_path);
    if (param == "tau") cfg.tau = values[i];
    else if (param == "h") cfg.h = values[i];
    else if (param == "T_end") cfg.T_end = values[i];
    else throw ValidationError("sweep: unsupported parameter '" + param +
                               "' (tau, h, T_end)");
    auto viol = config_violations(cfg);
    if (!viol.empty()) {
      std::string msg = "sweep value " + fmt_g17(values[i]) + " invalid:";
      for (const auto& v : viol) msg += "\n  - " + v;
      throw ValidationError(msg);
    }
    TrajectoryRecord tr = run_scheme(cfg);
    char name[64];
    std::snprintf(name, sizeof name, "ledger_%s_%02zu.csv", param.c_str(), i);
    write_ledger((fs::path(out_dir) / name).string(), tr.meta, tr.rows);
    const double C = fit_hoelder(cfg.grid, tr.snap_times, tr.snapshots, cfg.tau);
    LedgerSummary sum = verify_ledger(tr.meta, tr.rows);
    summary << param << ',' << fmt_g17(values[i]) << ',' << sum.rows << ','
            << fmt_g17(sum.t_end) << ',' << stop_name(tr.stop) << ','
            << fmt_g17(sum.final_E_h) << ',' << fmt_g17(sum.min_slack_single) << ','
            << fmt_g17(C) << '\n';
    std::printf("%s = %s: %lld rows, stop %s, hoelder C %s -> %s\n", param.c_str(),
                fmt_g17(values[i]).c_str(), sum.rows, stop_name(tr.stop), fmt_g17(C).c_str(),
                name);
    if (tr.stop != StopReason::completed) any_stop = true;
  }
  std::printf("summary -> %s\n", summary_path.c_str());
  return any_stop ? 3 : 0;
}

int cmd_plot(const std::string& ledger_path, const std::string& out_dir) {
  const auto files = plot_ledger(ledger_path, out_dir);
  std::printf("wrote %zu series files (CSV + SVG) to %s\n", files.size(), out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"incremental-minimization time stepping for a solid in viscous fluid"};
  app.require_subcommand(1);

  std::string config_path, ledger_path, out_dir = "out", param;
  std::vector<double> values;

  CLI::App* run = app.add_subcommand("run", "run a configured scheme and emit outputs");
  run->add_option("--config", config_path, "JSON configuration file")->required();
  run->add_option("--out", out_dir, "output directory (default: out)");

  CLI::App* verify = app.add_subcommand("verify", "re-check every inequality from a ledger CSV");
  verify->add_option("--ledger", ledger_path, "ledger CSV file")->required();

  CLI::App* sweep = app.add_subcommand("sweep", "re-run a config across parameter values");
  sweep->add_option("--config", config_path, "JSON configuration file")->required();
  sweep->add_option("--param", param, "parameter to vary: tau, h or T_end")->required();
  sweep->add_option("--values", values, "comma-separated values")
      ->required()
      ->delimiter(',');
  sweep->add_option("--out", out_dir, "output directory (default: out)");

  CLI::App* plot = app.add_subcommand("plot", "emit per-column CSV and SVG ledger series");
  plot->add_option("--ledger", ledger_path, "ledger CSV file")->required();
  plot->add_option("--out", out_dir, "output directory (default: out)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (run->parsed()) return cmd_run(config_path, out_dir);
    if (verify->parsed()) return cmd_verify(ledger_path);
    if (sweep->parsed()) return cmd_sweep(config_path, param, values, out_dir);
    if (plot->parsed()) return cmd_plot(ledger_path, out_dir);
  } catch (const varistep::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const varistep::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  }
  return 2;
}
