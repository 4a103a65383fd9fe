#include "dbr/data/trajectory.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "dbr/errors.hpp"
#include "dbr/io/container.hpp"

namespace dbr::data {

namespace {

constexpr std::string_view kHeader = "agent_id,kind,frame,x,y,z,d,label";
constexpr std::size_t kMaxReportedRows = 25;

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  for (auto& f : out) {
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

bool parse_int(std::string_view s, std::int64_t& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::string read_text(const std::filesystem::path& path) {
  auto bytes = io::read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

// Shortest round-trip formatting for doubles.
std::string fmt_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

class RowErrors {
 public:
  void add(std::size_t row, const std::string& msg) {
    ++count_;
    if (count_ <= kMaxReportedRows) lines_ << "\n  row " << row << ": " << msg;
  }
  void throw_if_any(const std::string& what) const {
    if (count_ == 0) return;
    std::ostringstream os;
    os << what << ": " << count_ << " malformed row(s)" << lines_.str();
    if (count_ > kMaxReportedRows) os << "\n  ...";
    throw DataError(os.str());
  }

 private:
  std::size_t count_ = 0;
  std::ostringstream lines_;
};

}  // namespace

std::string_view to_string(AgentKind kind) {
  switch (kind) {
    case AgentKind::vehicle: return "vehicle";
    case AgentKind::pedestrian: return "pedestrian";
    case AgentKind::rider: return "rider";
  }
  return "unknown";
}

std::optional<AgentKind> parse_agent_kind(std::string_view s) {
  if (s == "vehicle") return AgentKind::vehicle;
  if (s == "pedestrian") return AgentKind::pedestrian;
  if (s == "rider") return AgentKind::rider;
  return std::nullopt;
}

LabelMap::LabelMap(std::vector<std::string> names) : names_(std::move(names)) {
  std::set<std::string> seen;
  for (const auto& n : names_) {
    if (n.empty()) throw ConfigError("label map: empty class name");
    if (!seen.insert(n).second) throw ConfigError("label map: duplicate class name " + n);
  }
}

std::optional<int> LabelMap::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return static_cast<int>(i);
  }
  return std::nullopt;
}

double wrap_angle(double radians) {
  if (radians >= -std::numbers::pi && radians < std::numbers::pi) return radians;
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(radians + std::numbers::pi, two_pi);
  if (r < 0) r += two_pi;
  double out = r - std::numbers::pi;
  if (out >= std::numbers::pi) out -= two_pi;
  return out;
}

LabelMap load_label_map(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  std::istringstream in(text);
  std::string line;
  std::map<std::int64_t, std::string> entries;
  RowErrors errors;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto f = split_fields(line);
    if (row == 1 && f.size() == 2 && f[0] == "class_index") continue;
    std::int64_t idx = 0;
    if (f.size() != 2 || !parse_int(f[0], idx) || idx < 0 || f[1].empty()) {
      errors.add(row, "expected `class_index,class_name`");
      continue;
    }
    if (!entries.emplace(idx, std::string(f[1])).second) {
      errors.add(row, "duplicate class index " + std::to_string(idx));
    }
  }
  errors.throw_if_any("label map " + path.string());
  std::vector<std::string> names;
  for (const auto& [idx, name] : entries) {
    if (idx != static_cast<std::int64_t>(names.size())) {
      throw DataError("label map " + path.string() + ": class indices must be 0.." +
                      std::to_string(entries.size() - 1) + " without gaps");
    }
    names.push_back(name);
  }
  if (names.empty()) throw DataError("label map " + path.string() + " is empty");
  try {
    return LabelMap(std::move(names));
  } catch (const ConfigError& e) {
    throw DataError(e.what());
  }
}

void save_label_map(const std::filesystem::path& path, const LabelMap& map) {
  std::ostringstream os;
  os << "class_index,class_name\n";
  for (std::size_t i = 0; i < map.size(); ++i) os << i << ',' << map.names()[i] << '\n';
  io::write_text_atomic(path, os.str());
}

std::vector<Trajectory> parse_trajectories(std::string_view text, const LabelMap& labels,
                                           const IngestOptions& options) {
  RowErrors errors;
  std::map<std::string, Trajectory> by_agent;
  std::map<std::pair<std::string, std::int64_t>, std::size_t> first_row;

  std::size_t row = 0;
  std::size_t pos = 0;
  bool saw_header = false;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++row;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) {
      if (pos > text.size()) break;
      continue;
    }
    if (!saw_header) {
      saw_header = true;
      auto h = split_fields(line);
      std::string joined;
      for (std::size_t i = 0; i < h.size(); ++i) {
        if (i) joined += ',';
        joined += h[i];
      }
      if (joined != kHeader) {
        throw DataError("row 1: expected header `" + std::string(kHeader) + "`, got `" +
                        std::string(line) + "`");
      }
      continue;
    }
    auto f = split_fields(line);
    if (f.size() != 8) {
      errors.add(row, "expected 8 columns, got " + std::to_string(f.size()));
      continue;
    }
    TrajectoryPoint p;
    std::vector<std::string> bad;
    if (f[0].empty()) bad.push_back("agent_id is empty");
    auto kind = parse_agent_kind(f[1]);
    if (!kind) bad.push_back("unknown kind `" + std::string(f[1]) + "`");
    if (!parse_int(f[2], p.frame) || p.frame < 0) bad.push_back("frame is not a non-negative integer");
    if (!parse_double(f[3], p.x)) bad.push_back("x is not a finite number");
    if (!parse_double(f[4], p.y)) bad.push_back("y is not a finite number");
    if (!parse_double(f[5], p.z)) bad.push_back("z is not a finite number");
    if (!parse_double(f[6], p.d)) bad.push_back("d is not a finite number");
    auto label = labels.find(f[7]);
    if (!label) bad.push_back("unknown label `" + std::string(f[7]) + "`");
    if (!bad.empty()) {
      std::string msg;
      for (std::size_t i = 0; i < bad.size(); ++i) msg += (i ? "; " : "") + bad[i];
      errors.add(row, msg);
      continue;
    }
    p.label = *label;
    if (options.degrees) p.d = p.d * std::numbers::pi / 180.0;
    p.d = wrap_angle(p.d);

    std::string id(f[0]);
    auto key = std::make_pair(id, p.frame);
    auto [it, inserted] = first_row.emplace(key, row);
    if (!inserted) {
      errors.add(row, "duplicate (agent_id, frame) = (" + id + ", " + std::to_string(p.frame) +
                          "), first seen on row " + std::to_string(it->second));
      continue;
    }
    auto [traj, fresh] = by_agent.try_emplace(id);
    if (fresh) {
      traj->second.agent_id = id;
      traj->second.kind = *kind;
    } else if (traj->second.kind != *kind) {
      errors.add(row, "agent " + id + " changes kind from " +
                          std::string(to_string(traj->second.kind)) + " to " +
                          std::string(f[1]));
      continue;
    }
    traj->second.points.push_back(p);
  }
  if (!saw_header) throw DataError("trajectory file is empty (missing header)");
  errors.throw_if_any("trajectory file");

  std::vector<Trajectory> out;
  out.reserve(by_agent.size());
  for (auto& [id, traj] : by_agent) {
    std::sort(traj.points.begin(), traj.points.end(),
              [](const TrajectoryPoint& a, const TrajectoryPoint& b) { return a.frame < b.frame; });
    out.push_back(std::move(traj));
  }
  return out;
}

std::vector<Trajectory> load_trajectories(const std::filesystem::path& path, const LabelMap& labels,
                                          const IngestOptions& options) {
  const std::string text = read_text(path);
  try {
    return parse_trajectories(text, labels, options);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string format_trajectories(const std::vector<Trajectory>& trajs, const LabelMap& labels) {
  std::string out(kHeader);
  out += '\n';
  for (const auto& t : trajs) {
    const std::string prefix = t.agent_id + ',' + std::string(to_string(t.kind)) + ',';
    for (const auto& p : t.points) {
      out += prefix;
      out += std::to_string(p.frame);
      for (double v : {p.x, p.y, p.z, p.d}) {
        out += ',';
        out += fmt_double(v);
      }
      out += ',';
      out += labels.name(p.label);
      out += '\n';
    }
  }
  return out;
}

void save_trajectories(const std::filesystem::path& path, const std::vector<Trajectory>& trajs,
                       const LabelMap& labels) {
  io::write_text_atomic(path, format_trajectories(trajs, labels));
}

}  // namespace dbr::data
