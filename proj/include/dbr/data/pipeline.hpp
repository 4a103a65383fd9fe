#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dbr/data/trajectory.hpp"

namespace dbr::data {

/// Five consecutive points (rows t-4..t, columns x, y, z, d) labeled with the
/// behavior of the last point.
struct WindowSample {
  std::array<double, kWindowSize * kFeatureCount> states{};
  int label = 0;
  std::string agent_id;
  std::int64_t end_frame = 0;

  double at(std::size_t step, std::size_t feature) const {
    return states[step * kFeatureCount + feature];
  }

  friend bool operator==(const WindowSample&, const WindowSample&) = default;
};

struct DatasetSplit {
  std::vector<WindowSample> train;
  std::vector<WindowSample> test;
  std::vector<std::string> class_names;
  std::uint64_t seed = 0;
};

std::vector<Trajectory> filter_short(const std::vector<Trajectory>& trajs,
                                     std::size_t min_len = kMinTrajectoryLength);

/// Sliding windows over one trajectory: (L - size) / stride + 1 samples. Only
/// size == kWindowSize is supported by the sample layout.
std::vector<WindowSample> window(const Trajectory& traj, std::size_t size = kWindowSize,
                                 std::size_t stride = 1);
std::vector<WindowSample> window_all(const std::vector<Trajectory>& trajs,
                                     std::size_t size = kWindowSize, std::size_t stride = 1);

/// Per-class sample counts over classes 0..num_classes-1.
std::vector<std::size_t> histogram(const std::vector<WindowSample>& samples, std::size_t num_classes);

struct RareClassFilter {
  std::vector<WindowSample> samples;
  std::vector<std::string> class_names;  // kept classes, in new index order
  std::vector<int> old_to_new;           // -1 for removed classes
};

/// Drops classes with fewer than `min_count` samples and re-densifies indices.
RareClassFilter filter_rare_classes(const std::vector<WindowSample>& samples,
                                    const std::vector<std::string>& class_names,
                                    std::size_t min_count = kMinClassCount);

/// Stratified shuffled split: floor(ratio * n_c) of each class to train,
/// clamped so both sides get at least one sample. Output keeps input order.
DatasetSplit split(const std::vector<WindowSample>& samples,
                   const std::vector<std::string>& class_names, double ratio, std::uint64_t seed);

/// Random over-sampling: duplicates uniformly drawn originals of each class until
/// every class has the pre-sampling maximum count. Originals come first.
std::vector<WindowSample> ros(const std::vector<WindowSample>& train, std::size_t num_classes,
                              std::uint64_t seed);

/// Random under-sampling to the minimum class count (without replacement).
std::vector<WindowSample> rus(const std::vector<WindowSample>& train, std::size_t num_classes,
                              std::uint64_t seed);

/// Inverse-frequency weights w_c = N / (C * n_c).
std::vector<double> class_weights(const std::vector<WindowSample>& train, std::size_t num_classes);

/// Per-feature standardization statistics, computed over all rows of all windows.
struct FeatureStats {
  std::array<double, kFeatureCount> mean{};
  std::array<double, kFeatureCount> stddev{};

  friend bool operator==(const FeatureStats&, const FeatureStats&) = default;
};

FeatureStats compute_feature_stats(const std::vector<WindowSample>& train);
WindowSample standardize(const WindowSample& s, const FeatureStats& stats);

}  // namespace dbr::data
