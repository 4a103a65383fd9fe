#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dbr/cli/config.hpp"
#include "dbr/metrics/metrics.hpp"

namespace dbr::cli {

inline constexpr const char* kToolVersion = "1.0.0";

/// A fully resolved command: everything needed to produce its outputs again.
struct Invocation {
  std::string command;
  std::vector<std::string> inputs;  // positional input files
  std::map<std::string, std::string> options;
  KeyValues config;  // resolved settings (the synthetic spec for gen)

  nlohmann::json to_json() const;
  static Invocation from_json(const nlohmann::json& j);
};

struct FileHash {
  std::string path;
  std::string crc32;
};

/// Contents of manifest.json.
struct Manifest {
  std::string tool_version = kToolVersion;
  Invocation invocation;
  std::vector<FileHash> inputs;   // absolute paths
  std::vector<FileHash> outputs;  // relative to the output directory, sorted

  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j);
};

/// Runs a resolved invocation into `out_dir` through a staging directory that
/// is renamed into place only after every file (manifest last) is written.
/// An existing `out_dir` is replaced only if it holds a previous manifest.
Manifest execute(const Invocation& inv, const std::filesystem::path& out_dir, std::ostream& log);

/// Parses arguments (without the program name), runs the command and maps
/// errors to exit codes: 0 ok, 2 usage/config, 3 data/compatibility,
/// 4 numerical. Messages go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int exit_code(const std::exception& e);

// ---- ablation -------------------------------------------------------------

struct AblationRow {
  std::string seed;  // seed value or "mean"
  bool ros = false;
  bool mscnn = false;
  double balanced_accuracy = 0;
  double macro_f1 = 0;
  double macro_recall = 0;
  std::optional<double> minority_recall;
};

struct Ablation {
  std::vector<std::string> minority_classes;
  std::vector<AblationRow> rows;  // 4 per seed, then 4 mean rows

  const AblationRow& mean(bool ros, bool mscnn) const;
  std::string format_table() const;
  std::string format_tsv() const;
};

/// Classes whose raw training count is below half the largest class count.
std::vector<int> minority_classes(const data::PreparedDataset& ds);

/// The {ROS on/off} x {MSCNN on/off} grid for each seed in
/// `config.ablate_seeds`; MSCNN off means the Bi-LSTM-only model.
Ablation run_ablation(const data::PreparedDataset& ds, const RunConfig& config, std::ostream* log);

// ---- gradient check -------------------------------------------------------

struct GradcheckRow {
  std::string model;
  double max_rel_error = 0;
  std::size_t checked = 0;
};

/// 64-bit finite-difference check of each model kind on 3 random samples.
std::vector<GradcheckRow> run_gradcheck(std::uint64_t seed, std::size_t num_classes = 13);
inline constexpr double kGradcheckTolerance = 1e-5;

}  // namespace dbr::cli
