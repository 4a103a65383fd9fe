#include "dbr/cli/config.hpp"

#include <algorithm>
#include <charconv>
#include <set>
#include <sstream>

#include "dbr/errors.hpp"

namespace dbr::cli {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::uint64_t to_u64(const std::string& key, std::string_view v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    throw ConfigError(key + ": expected a non-negative integer, got `" + std::string(v) + "`");
  return out;
}

double to_double(const std::string& key, std::string_view v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    throw ConfigError(key + ": expected a number, got `" + std::string(v) + "`");
  return out;
}

bool to_bool(const std::string& key, std::string_view v) {
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got `" + std::string(v) + "`");
}

template <typename T>
std::vector<T> to_list(const std::string& key, std::string_view v) {
  std::vector<T> out;
  while (true) {
    const auto comma = v.find(',');
    out.push_back(static_cast<T>(to_u64(key, trim(v.substr(0, comma)))));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return out;
}

std::string num(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

template <typename T>
std::string list(const std::vector<T>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : ",") + std::to_string(x);
  return s;
}

const std::set<std::string_view> kUnpublished{
    "seed",         "stride",        "normalize",       "degrees",       "kind",
    "precision",    "hmm_max_iters", "hmm_tol",         "conv1d_channels", "conv1d_kernel",
    "ablate_seeds"};

}  // namespace

KeyValues parse_key_values(std::string_view text) {
  KeyValues out;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected `key = value`");
    std::string key(trim(line.substr(0, eq)));
    std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    if (!seen.insert(key).second)
      throw ConfigError("line " + std::to_string(line_no) + ": `" + key + "` given twice");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto& p = prep;
  auto& t = train;
  if (key == "seed") set_seed(to_u64(key, value));
  else if (key == "min_length") p.min_length = to_u64(key, value);
  else if (key == "stride") p.stride = to_u64(key, value);
  else if (key == "min_class_count") p.min_class_count = to_u64(key, value);
  else if (key == "train_ratio") p.train_ratio = to_double(key, value);
  else if (key == "resample") p.resample = data::parse_resample(value);
  else if (key == "normalize") p.normalize = to_bool(key, value);
  else if (key == "degrees") p.degrees = to_bool(key, value);
  else if (key == "kind") {
    if (value == "all") {
      p.kind.reset();
    } else {
      p.kind = data::parse_agent_kind(value);
      if (!p.kind) throw ConfigError("kind: expected all, vehicle, pedestrian or rider");
    }
  } else if (key == "epochs") t.epochs = to_u64(key, value);
  else if (key == "batch_size") t.batch_size = to_u64(key, value);
  else if (key == "lr_initial") t.lr_initial = to_double(key, value);
  else if (key == "lr_after") t.lr_after = to_double(key, value);
  else if (key == "lr_switch_epoch") t.lr_switch_epoch = to_u64(key, value);
  else if (key == "precision") t.precision = train::parse_precision(value);
  else if (key == "hmm_states") t.hmm_states = to_u64(key, value);
  else if (key == "hmm_max_iters") t.hmm_max_iters = to_u64(key, value);
  else if (key == "hmm_tol") t.hmm_tol = to_double(key, value);
  else if (key == "lstm_layers") net.lstm_layers = to_u64(key, value);
  else if (key == "lstm_hidden") net.lstm_hidden = to_u64(key, value);
  else if (key == "kernel_sizes") net.kernel_sizes = to_list<std::size_t>(key, value);
  else if (key == "channels_per_kernel") net.channels_per_kernel = to_u64(key, value);
  else if (key == "fc1_out") net.fc1_out = to_u64(key, value);
  else if (key == "conv1d_channels") net.conv1d_channels = to_list<std::size_t>(key, value);
  else if (key == "conv1d_kernel") net.conv1d_kernel = to_u64(key, value);
  else if (key == "ablate_seeds") ablate_seeds = to_list<std::uint64_t>(key, value);
  else throw ConfigError("unknown configuration key `" + key + "`");
}

void RunConfig::apply(const KeyValues& kv) {
  for (const auto& [k, v] : kv) set(k, v);
}

void RunConfig::set_seed(std::uint64_t seed) {
  prep.seed = seed;
  train.seed = seed;
}

KeyValues RunConfig::items() const {
  const auto& p = prep;
  const auto& t = train;
  return {{"seed", std::to_string(t.seed)},
          {"min_length", std::to_string(p.min_length)},
          {"min_class_count", std::to_string(p.min_class_count)},
          {"train_ratio", num(p.train_ratio)},
          {"stride", std::to_string(p.stride)},
          {"resample", std::string(data::to_string(p.resample))},
          {"normalize", p.normalize ? "true" : "false"},
          {"degrees", p.degrees ? "true" : "false"},
          {"kind", p.kind ? std::string(data::to_string(*p.kind)) : "all"},
          {"epochs", std::to_string(t.epochs)},
          {"batch_size", std::to_string(t.batch_size)},
          {"lr_initial", num(t.lr_initial)},
          {"lr_after", num(t.lr_after)},
          {"lr_switch_epoch", std::to_string(t.lr_switch_epoch)},
          {"precision", std::string(train::to_string(t.precision))},
          {"lstm_layers", std::to_string(net.lstm_layers)},
          {"lstm_hidden", std::to_string(net.lstm_hidden)},
          {"kernel_sizes", list(net.kernel_sizes)},
          {"channels_per_kernel", std::to_string(net.channels_per_kernel)},
          {"fc1_out", std::to_string(net.fc1_out)},
          {"conv1d_channels", list(net.conv1d_channels)},
          {"conv1d_kernel", std::to_string(net.conv1d_kernel)},
          {"hmm_states", std::to_string(t.hmm_states)},
          {"hmm_max_iters", std::to_string(t.hmm_max_iters)},
          {"hmm_tol", num(t.hmm_tol)},
          {"ablate_seeds", list(ablate_seeds)}};
}

void RunConfig::validate() const {
  if (prep.min_length < data::kWindowSize)
    throw ConfigError("min_length must be at least the window size");
  if (prep.stride == 0) throw ConfigError("stride must be at least 1");
  if (!(prep.train_ratio > 0 && prep.train_ratio < 1)) throw ConfigError("train_ratio must be in (0, 1)");
  if (ablate_seeds.empty()) throw ConfigError("ablate_seeds must list at least one seed");
  train.validate();
  auto n = net;
  n.num_classes = 2;
  n.validate();
}

bool is_unpublished(std::string_view key) { return kUnpublished.count(key) > 0; }

std::string default_config_text() {
  std::ostringstream os;
  os << "# dbr configuration. Keys marked unpublished have no published value.\n";
  const RunConfig defaults;
  for (const auto& [k, v] : defaults.items()) {
    if (k == "seed") os << "\n# data preparation\n";
    if (k == "epochs") os << "\n# training\n";
    if (k == "lstm_layers") os << "\n# architecture\n";
    if (k == "hmm_states") os << "\n# HMM baseline\n";
    if (k == "ablate_seeds") os << "\n# ablation\n";
    os << k << " = " << v;
    if (is_unpublished(k)) os << "  # unpublished";
    os << '\n';
  }
  return os.str();
}

synth::SynthSpec parse_synth_spec(std::string_view text) {
  synth::SynthSpec s;
  for (const auto& [k, v] : parse_key_values(text)) {
    if (k.rfind("count.", 0) == 0) s.counts.emplace_back(k.substr(6), to_u64(k, v));
    else if (k == "length") s.length = to_u64(k, v);
    else if (k == "frame_period") s.frame_period = to_double(k, v);
    else if (k == "noise") s.noise = to_double(k, v);
    else if (k == "ego_speed") s.ego_speed = to_double(k, v);
    else if (k == "overlap") s.overlap = to_bool(k, v);
    else if (k == "seed") s.seed = to_u64(k, v);
    else throw ConfigError("unknown spec key `" + k + "`");
  }
  if (s.counts.empty()) throw ConfigError("spec lists no classes (count.<CLASS> = n)");
  s.validate();
  return s;
}

std::string format_synth_spec(const synth::SynthSpec& s) {
  std::ostringstream os;
  os << "length = " << s.length << "\nframe_period = " << num(s.frame_period)
     << "\nnoise = " << num(s.noise) << "\nego_speed = " << num(s.ego_speed)
     << "\noverlap = " << (s.overlap ? "true" : "false") << "\nseed = " << s.seed << '\n';
  for (const auto& [name, n] : s.counts) os << "count." << name << " = " << n << '\n';
  return os.str();
}

}  // namespace dbr::cli
