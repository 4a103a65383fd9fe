#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dbr::data {

inline constexpr std::size_t kWindowSize = 5;
inline constexpr std::size_t kFeatureCount = 4;  // x, y, z, d
inline constexpr std::size_t kMinTrajectoryLength = 7;
inline constexpr std::size_t kMinClassCount = 100;

enum class AgentKind { vehicle, pedestrian, rider };

std::string_view to_string(AgentKind kind);
std::optional<AgentKind> parse_agent_kind(std::string_view s);

/// One observation of a surrounding agent, relative to the ego vehicle.
/// x is longitudinal (forward positive), y lateral (negative = left of ego),
/// d the heading relative to the road centerline in radians, in [-pi, pi).
struct TrajectoryPoint {
  double x = 0, y = 0, z = 0, d = 0;
  int label = 0;
  std::int64_t frame = 0;

  friend bool operator==(const TrajectoryPoint&, const TrajectoryPoint&) = default;
};

struct Trajectory {
  std::string agent_id;
  AgentKind kind = AgentKind::vehicle;
  std::vector<TrajectoryPoint> points;

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

/// Ordered class names; the position is the class index.
class LabelMap {
 public:
  LabelMap() = default;
  explicit LabelMap(std::vector<std::string> names);

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  const std::string& name(int index) const { return names_.at(static_cast<std::size_t>(index)); }
  std::optional<int> find(std::string_view name) const;

  friend bool operator==(const LabelMap&, const LabelMap&) = default;

 private:
  std::vector<std::string> names_;
};

/// Wraps an angle into [-pi, pi).
double wrap_angle(double radians);

struct IngestOptions {
  bool degrees = false;  // `d` column given in degrees
};

/// Label map file: `class_index,class_name` rows (optional header), indices
/// must be 0..n-1 with no gaps.
LabelMap load_label_map(const std::filesystem::path& path);
void save_label_map(const std::filesystem::path& path, const LabelMap& map);

/// Trajectory file with header `agent_id,kind,frame,x,y,z,d,label`. Returns one
/// trajectory per agent, sorted by agent_id, points sorted by frame. All
/// malformed rows are reported together in a DataError.
std::vector<Trajectory> load_trajectories(const std::filesystem::path& path, const LabelMap& labels,
                                          const IngestOptions& options = {});
std::vector<Trajectory> parse_trajectories(std::string_view text, const LabelMap& labels,
                                           const IngestOptions& options = {});

std::string format_trajectories(const std::vector<Trajectory>& trajs, const LabelMap& labels);
void save_trajectories(const std::filesystem::path& path, const std::vector<Trajectory>& trajs,
                       const LabelMap& labels);

}  // namespace dbr::data
