// Configuration files, run outputs and the reproducibility manifest.
//
// Configs are JSON; every field has a default, unknown keys are flagged, and
// validation reports *all* violations at once.  The manifest records a hash
// of the canonical config serialization (covering every scheme field), so
// equal hashes imply byte-identical ledgers on rerun.  All outputs are plain
// text with deterministic formatting (%.17g doubles).
#pragma once

#include <string>
#include <vector>

#include "varistep/ledger.hpp"
#include "varistep/stepper.hpp"

namespace varistep {

inline constexpr const char* kCodeVersion = "varistep 1.0.0";

struct RunManifest {
  std::string config_hash;
  std::string code_version = kCodeVersion;
  std::string mode;
  std::string stop;       // reason plus detail
  double stop_time = 0;
  std::vector<std::string> outputs;  // files written, relative to the out dir
};

// Parses and validates; throws ValidationError listing every violation
// (including unknown keys and type mismatches).
SchemeConfig parse_config(const std::string& path);
SchemeConfig parse_config_text(const std::string& json_text);

// Canonical key-value serialization of every scheme field (fixed order,
// %.17g numbers); the manifest hash is the FNV-1a of this string.
std::string canonical_config(const SchemeConfig& cfg);
std::string config_hash(const SchemeConfig& cfg);

// Plain-text dumps.  Fields: '#' header with dims and spacing, then one
// row-major "x y" pair (or scalar) per line.  Masks: 0/1 grid, one row per
// line.  Markers: "x0 y0 x y detJ" rows.
void write_node_field(const std::string& path, const SolidGrid& g, const Field& f,
                      const std::string& name, double time);
void write_scalar_grid(const std::string& path, const std::string& name, int ncols, int nrows,
                       double hx, double hy, const std::vector<double>& vals);
void write_mask_grid(const std::string& path, int mx, int my,
                     const std::vector<std::uint8_t>& mask);
void write_markers(const std::string& path, const MarkerSet& ms);
void write_manifest(const std::string& path, const RunManifest& man);

// Writes ledger, snapshots, fluid fields/masks/markers (FSI), and the
// manifest into out_dir; returns the filled manifest.
RunManifest emit_outputs(const std::string& out_dir, const SchemeConfig& cfg,
                         const TrajectoryRecord& tr);

// Per-column time series of a ledger: a two-column CSV (t, value) and a
// minimal SVG polyline per numeric column.  Returns the files written.
std::vector<std::string> plot_ledger(const std::string& ledger_path, const std::string& out_dir);

}  // namespace varistep
