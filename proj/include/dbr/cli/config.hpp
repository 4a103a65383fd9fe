#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dbr/data/prepared.hpp"
#include "dbr/models/network.hpp"
#include "dbr/synth/synth.hpp"
#include "dbr/train/train.hpp"

namespace dbr::cli {

/// `key = value` lines in file order. `#` starts a comment. ConfigError on
/// malformed lines or repeated keys, with the line number.
using KeyValues = std::vector<std::pair<std::string, std::string>>;
KeyValues parse_key_values(std::string_view text);

/// Settings shared by prep, train, eval and ablate.
struct RunConfig {
  data::PrepConfig prep;
  train::TrainConfig train;
  models::NetConfig net;
  std::vector<std::uint64_t> ablate_seeds{1, 2, 3};

  /// ConfigError for unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  void apply(const KeyValues& kv);
  void set_seed(std::uint64_t seed);

  /// Every key with its current value, in the order of the default file.
  KeyValues items() const;
  void validate() const;
};

/// Default configuration file; keys without a published value are marked
/// `# unpublished`.
std::string default_config_text();
bool is_unpublished(std::string_view key);

/// Synthetic dataset spec file: length, frame_period, noise, ego_speed,
/// overlap, seed, and one `count.<CLASS> = n` line per class (label order).
synth::SynthSpec parse_synth_spec(std::string_view text);
std::string format_synth_spec(const synth::SynthSpec& spec);

}  // namespace dbr::cli
