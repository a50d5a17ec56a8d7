#pragma once

// Command-line pipeline: synth-data, prepare, train, infer, evaluate,
// mos-prepare, mos-report, mos-serve.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 data error
// (malformed or inconsistent input files), 4 internal error.

#include "lfsr/metrics.hpp"
#include "lfsr/training.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace lfsr::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUserError = 2, kDataError = 3, kInternalError = 4 };

/// Bad arguments, missing files, schema violations.
class UserError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

ExitCode exit_code_for(const std::exception& e);

// ---------------------------------------------------------------------------
// Manifests and config plumbing

/// 64-bit FNV-1a, hex encoded.
std::string fnv1a_hex(const std::string& bytes);

/// Hash of the canonical (key-sorted, compact) dump; equal for semantically
/// identical configs regardless of key order or whitespace.
std::string config_hash(const nlohmann::json& config);

struct RunManifest {
  std::string command;
  std::string config_path;  ///< empty when the command takes no config file
  std::string config_hash;
  std::string output_dir;
  std::uint64_t seed = 0;
  nlohmann::json resolved;  ///< every parameter the command ran with
};

void to_json(nlohmann::json& j, const RunManifest& m);
void from_json(const nlohmann::json& j, RunManifest& m);

/// Writes <dir>/run_manifest.json.
void write_manifest(const fs::path& dir, RunManifest m);

/// Sets a dotted path ("training.generator.channels=16"). The value is read
/// as JSON when it parses, else taken as a string. Intermediate objects are
/// created as needed.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Top-level run configuration for `train`:
///   {"data": {"train": path, "val": path?}, "run_dir": path,
///    "max_generator_steps": int?, "training": TrainingConfig}
/// Relative paths resolve against the config file's directory.
struct RunConfig {
  fs::path train_data;
  std::optional<fs::path> val_data;
  fs::path run_dir;
  long max_generator_steps = 0;
  TrainingConfig training;
  nlohmann::json resolved;  ///< canonical form with absolute paths and filled defaults
};

RunConfig load_run_config(const fs::path& path, const std::vector<std::string>& overrides);

// ---------------------------------------------------------------------------
// Commands

struct SynthArgs {
  int n = 16;
  int size = 64;
  std::uint64_t seed = 1;
  fs::path out;
};
void cmd_synth_data(const SynthArgs& a, std::ostream& log);

struct PrepareArgs {
  fs::path corpus;
  int scale = 4;
  int margin = 2;
  double train_fraction = 0.8;
  std::uint64_t split_seed = 0;
  fs::path out;
};
/// Writes train.roi and val.roi (patient-disjoint) plus prepare.json.
void cmd_prepare(const PrepareArgs& a, std::ostream& log);

struct TrainArgs {
  fs::path config;
  std::vector<std::string> overrides;
  bool quiet = false;
};
TrainResult cmd_train(const TrainArgs& a, std::ostream& log);

struct InferArgs {
  fs::path checkpoint;
  std::optional<fs::path> data;  ///< ROI dataset: every pair's LR ROI
  std::optional<fs::path> lr;    ///< full LR slice (PNG) ...
  std::optional<fs::path> mask;  ///< ... with its HR-resolution lesion mask
  int margin = 2;
  fs::path out;
};
/// Writes 16-bit raw-intensity SR PNGs and inference.json (boxes per output).
void cmd_infer(const InferArgs& a, std::ostream& log);

struct EvaluateArgs {
  std::vector<fs::path> checkpoints;
  std::vector<fs::path> image_dirs;  ///< `infer --data` output directories
  fs::path data;                     ///< reference ROI dataset
  bool bilinear = true;
  fs::path out;
};
metrics::MetricsReport cmd_evaluate(const EvaluateArgs& a, std::ostream& log);

struct MosPrepareArgs {
  std::vector<fs::path> runs;
  std::optional<fs::path> data;  ///< default: the first run's validation set
  int n_images = 5;
  std::uint64_t seed = 0;
  bool bilinear = false;
  fs::path out;
};
void cmd_mos_prepare(const MosPrepareArgs& a, std::ostream& log);

struct MosReportArgs {
  fs::path bundle;
  std::optional<fs::path> log;      ///< default: <bundle>/ratings/records.jsonl
  std::optional<fs::path> metrics;  ///< evaluate output to join into the table
  std::optional<fs::path> out;
};
std::vector<metrics::MosSummary> cmd_mos_report(const MosReportArgs& a, std::ostream& log);

struct ServeArgs {
  fs::path bundle;
  std::optional<fs::path> state;  ///< default: <bundle>/ratings
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<fs::path> ui_dir;
};
void cmd_mos_serve(const ServeArgs& a, std::ostream& log);

/// Parses argv, dispatches, reports failures on `err`, returns the exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lfsr::cli
