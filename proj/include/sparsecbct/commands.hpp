#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sparsecbct/dataset.hpp"
#include "sparsecbct/denoiser.hpp"
#include "sparsecbct/indi.hpp"
#include "sparsecbct/metrics.hpp"

namespace sparsecbct::cli {

namespace fs = std::filesystem;

/// One JSON document per experiment. Every section is optional; missing
/// sections take the desk defaults.
///
///   { "dataset": {...}, "denoiser": {...}, "training": {...}, "restore_steps": 2 }
struct ExperimentConfig {
  DatasetConfig dataset;
  DenoiserConfig denoiser = desk_denoiser_config();
  TrainingConfig training;
  std::size_t restore_steps = 2;

  void validate() const;
};

json to_json(const ExperimentConfig& config);
/// Rejects unknown top-level keys, naming them.
ExperimentConfig experiment_config_from_json(const json& j);
ExperimentConfig load_experiment_config(const fs::path& path);

inline constexpr const char* kTrainManifestKind = "sparsecbct-train";
inline constexpr const char* kRestoreManifestKind = "sparsecbct-restore";
inline constexpr const char* kEvaluateManifestKind = "sparsecbct-evaluate";
inline constexpr const char* kSweepManifestKind = "sparsecbct-sweep";

/// Either `config` (fresh run) or `manifest` (rerun) must be set.
struct SimulateOptions {
  std::optional<fs::path> config;
  std::optional<fs::path> manifest;
  fs::path out_dir;
  std::optional<std::size_t> n_samples;
};
json cmd_simulate(const SimulateOptions& options);

struct TrainOptions {
  std::optional<fs::path> data;      // dataset manifest
  std::optional<fs::path> val;       // held-out dataset manifest
  std::optional<fs::path> config;
  std::optional<fs::path> manifest;  // previous train manifest to rerun
  fs::path out_dir;
  bool baseline_unet = false;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> max_pairs;
  bool quiet = false;
};
/// Writes `model.ckpt`, `train_log.csv` and `train_manifest.json` into out_dir.
json cmd_train(const TrainOptions& options);

struct RestoreOptions {
  std::optional<fs::path> checkpoint;
  std::optional<fs::path> input;
  std::optional<fs::path> manifest;
  fs::path output;
  std::optional<std::size_t> steps;
};
/// Writes the restored HU volume and `<output stem>.manifest.json`.
json cmd_restore(const RestoreOptions& options);

struct EvaluateOptions {
  std::optional<fs::path> pred;
  std::optional<fs::path> target;
  std::optional<fs::path> manifest;
  MaskMode mask = MaskMode::Body;
  std::optional<fs::path> output;  // CSV; a JSON report and manifest sit next to it
};
/// Returns the CSV text (header + one row).
std::string cmd_evaluate(const EvaluateOptions& options);

MaskMode mask_mode_from_string(const std::string& text);
std::string to_string(MaskMode mode);

struct SweepOptions {
  std::optional<fs::path> checkpoint;
  std::optional<fs::path> data;
  std::optional<fs::path> manifest;
  fs::path out_dir;
  std::vector<std::size_t> steps{1, 2, 3, 5, 10, 20, 30};
  std::optional<std::size_t> max_samples;
};
/// Writes `sweep.csv`, `sweep.svg`, center slices under `slices/` and
/// `sweep_manifest.json`.
json cmd_sweep_steps(const SweepOptions& options);

/// Parses "1,2,5-10".
std::vector<std::size_t> parse_step_list(const std::string& text);

struct ReportOptions {
  std::vector<fs::path> inputs;  // CSV files and JSON manifests
  fs::path output;               // Markdown
};
/// Markdown summary of CSV tables and manifest headlines.
std::string cmd_report(const ReportOptions& options);

/// Minimal SVG line chart.
std::string svg_line_plot(const std::vector<double>& x, const std::vector<double>& y,
                          const std::string& x_label, const std::string& y_label);

/// Binary PGM of the central axial slice, HU window [lo, hi] mapped to 0..255.
std::string center_slice_pgm(const VoxelVolume& vol, double lo = -1000.0, double hi = 1000.0);

}  // namespace sparsecbct::cli
