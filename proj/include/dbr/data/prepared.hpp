#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dbr/data/pipeline.hpp"

namespace dbr::data {

enum class Resample { none, ros, rus, wl };

std::string_view to_string(Resample r);
Resample parse_resample(std::string_view s);

struct PrepConfig {
  std::size_t min_length = kMinTrajectoryLength;
  std::size_t window_size = kWindowSize;
  std::size_t stride = 1;
  std::size_t min_class_count = kMinClassCount;
  double train_ratio = 0.8;
  Resample resample = Resample::ros;
  bool normalize = false;
  bool degrees = false;
  std::optional<AgentKind> kind;  // keep only this agent kind
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static PrepConfig from_json(const nlohmann::json& j);
};

struct StageCount {
  std::string stage;
  std::size_t count = 0;
  std::vector<std::size_t> per_class;  // empty when not meaningful
};

/// Output of the preparation pipeline. The training split is stored before
/// resampling; `training_set` applies the configured resampling on demand so
/// the same dump serves resampled and raw experiments.
struct PreparedDataset {
  PrepConfig config;
  DatasetSplit split;
  std::vector<StageCount> stages;
  std::optional<FeatureStats> feature_stats;

  std::size_t num_classes() const { return split.class_names.size(); }
  std::vector<WindowSample> training_set(Resample mode) const;
  std::vector<WindowSample> training_set() const { return training_set(config.resample); }
  // Class weights for the weighted loss; empty unless mode == wl.
  std::vector<double> loss_weights(Resample mode) const;
};

/// load → filter_short → window → filter_rare_classes → split (+ stats).
PreparedDataset prepare(const std::vector<Trajectory>& trajs, const LabelMap& labels,
                        const PrepConfig& config);

std::string format_stage_table(const PreparedDataset& ds);

std::vector<std::uint8_t> encode_prepared(const PreparedDataset& ds);
PreparedDataset decode_prepared(std::span<const std::uint8_t> bytes);
void save_prepared(const std::filesystem::path& path, const PreparedDataset& ds);
PreparedDataset load_prepared(const std::filesystem::path& path);

}  // namespace dbr::data
