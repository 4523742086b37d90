#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mnm/model/config.h"
#include "mnm/trainer/trainer.h"

namespace mnm::cli {

// Stable process exit codes.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,  // bad arguments, configs or input files
  kIo = 3,
  kNumeric = 4,
  kMismatch = 5,
};

// Maps a library error onto its exit code.
int ExitCodeFor(const std::exception& error);

// Every run directory gets exactly one of these.
inline constexpr char kManifestName[] = "run_manifest.json";

struct RunManifest {
  std::string command;
  std::vector<std::string> arguments;
  nlohmann::ordered_json config;
  std::uint64_t seed = 0;
  std::vector<std::string> artifacts;  // relative to the run directory
  double wall_seconds = 0;
};

nlohmann::ordered_json ToJson(const RunManifest& manifest);
void WriteManifest(const std::filesystem::path& dir, const RunManifest& manifest);
// Throws IoError/FormatError.
RunManifest ReadManifest(const std::filesystem::path& dir);

// Creates an empty run directory. A non-empty one is an error (ConfigError)
// unless `force`, in which case its contents are removed first.
void PrepareRunDir(const std::filesystem::path& dir, bool force);

// One row of the component grid.
struct AblationConfig {
  std::string name;
  bool dual_heads = false;
  bool multi_view = false;
  bool mil = false;
};
// baseline, +dual, +dual+mv, +dual+mil, full.
std::vector<AblationConfig> AblationGrid();

// `config,ap_mb,ap,delta,r_at_0.1,breast_auc`; missing values are empty.
struct AblationRow {
  std::string config;
  std::optional<double> ap_mb, ap, delta;
  double recall_at_01 = 0;
  std::optional<double> breast_auc;
};
void WriteAblationCsv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);

// Overlays FROC curves as polylines with a legend. x covers [0, max_fp].
struct PlotSeries {
  std::string label;
  std::vector<metrics::FrocPoint> curve;
};
std::string FrocSvg(const std::vector<PlotSeries>& series, double max_fp = 1.0);

// Worker cap from MNM_THREADS (unset or invalid means 1).
std::size_t ThreadBudget();

// Entry point of the `mnm` tool. Never throws; errors go to `err`.
int Run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mnm::cli
