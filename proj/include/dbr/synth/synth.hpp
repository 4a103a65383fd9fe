#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dbr/data/trajectory.hpp"

namespace dbr::synth {

/// Behavior templates. Vehicle templates follow the 13-class taxonomy;
/// pedestrian (6) and rider (7) templates are generic motions.
///
/// Conventions: x is the longitudinal offset from the ego vehicle (ahead
/// positive), y the lateral offset with y < 0 on the left, lanes are 3.5 m
/// wide, and d = atan2(vy, vx) of the agent's ground-frame velocity.
struct TemplateInfo {
  std::string name;
  data::AgentKind kind;
  std::string description;
};

const std::vector<TemplateInfo>& templates();
const TemplateInfo& find_template(const std::string& name);  // ConfigError if unknown

struct SynthSpec {
  // Trajectories per class, in label order.
  std::vector<std::pair<std::string, std::size_t>> counts;
  std::size_t length = 20;     // points per trajectory, >= 7
  double frame_period = 0.1;   // seconds
  double noise = 1.0;          // multiplier of the per-channel noise scales
  double ego_speed = 10.0;     // m/s
  // OFL/OFR start with a slow phase beside the ego vehicle that matches the
  // PDIL/PDIR templates.
  bool overlap = true;
  std::uint64_t seed = 0;

  void validate() const;  // ConfigError
  nlohmann::json to_json() const;
  static SynthSpec from_json(const nlohmann::json& j);
};

/// Per-channel noise standard deviations at noise = 1.
inline constexpr double kNoiseXY = 0.05;
inline constexpr double kNoiseZ = 0.02;
inline constexpr double kNoiseD = 0.01;

struct SynthDataset {
  std::vector<data::Trajectory> trajectories;  // sorted by agent_id
  data::LabelMap labels;                       // spec classes in spec order
};

/// Deterministic given the spec. Trajectory k of class c draws from a stream
/// derived from (seed, c, k), so adding classes does not change the others.
SynthDataset gen_dataset(const SynthSpec& spec);

/// One trajectory of a template, labeled with `label`.
data::Trajectory gen_trajectory(const std::string& name, int label, std::size_t index,
                                const SynthSpec& spec);

struct TemplateCheck {
  std::string name;
  bool passed = false;
  std::string detail;  // first violated condition
};

/// Checks each template's defining predicate on noiseless output, for several
/// parameter draws. Covers the spec's classes, or every template when the
/// spec has no counts.
std::vector<TemplateCheck> verify_templates(const SynthSpec& spec);

}  // namespace dbr::synth
