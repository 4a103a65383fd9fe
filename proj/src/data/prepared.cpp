#include "dbr/data/prepared.hpp"

#include <iomanip>
#include <sstream>

#include "dbr/core/random.hpp"
#include "dbr/errors.hpp"
#include "dbr/io/container.hpp"

namespace dbr::data {

namespace {

constexpr std::string_view kMagic = "DBRDATA1";
constexpr std::uint32_t kVersion = 1;
constexpr std::uint64_t kResampleStream = 0x7265736d706cULL;

void write_samples(io::ByteWriter& w, const std::vector<WindowSample>& samples) {
  w.u64(samples.size());
  for (const auto& s : samples) {
    w.str(s.agent_id);
    w.i64(s.end_frame);
    w.u32(static_cast<std::uint32_t>(s.label));
    for (double v : s.states) w.f64(v);
  }
}

std::vector<WindowSample> read_samples(io::ByteReader& r, std::size_t num_classes) {
  const std::uint64_t n = r.u64();
  if (n > r.remaining()) throw LoadError("sample count exceeds payload size");
  std::vector<WindowSample> out(n);
  for (auto& s : out) {
    s.agent_id = r.str();
    s.end_frame = r.i64();
    s.label = static_cast<int>(r.u32());
    if (static_cast<std::size_t>(s.label) >= num_classes) {
      throw LoadError("sample label " + std::to_string(s.label) + " outside class map");
    }
    for (double& v : s.states) v = r.f64();
  }
  return out;
}

}  // namespace

std::string_view to_string(Resample r) {
  switch (r) {
    case Resample::none: return "none";
    case Resample::ros: return "ros";
    case Resample::rus: return "rus";
    case Resample::wl: return "wl";
  }
  return "none";
}

Resample parse_resample(std::string_view s) {
  if (s == "none") return Resample::none;
  if (s == "ros") return Resample::ros;
  if (s == "rus") return Resample::rus;
  if (s == "wl") return Resample::wl;
  throw ConfigError("unknown resampling mode `" + std::string(s) + "` (none, ros, rus, wl)");
}

nlohmann::json PrepConfig::to_json() const {
  nlohmann::json j;
  j["min_length"] = min_length;
  j["window_size"] = window_size;
  j["stride"] = stride;
  j["min_class_count"] = min_class_count;
  j["train_ratio"] = train_ratio;
  j["resample"] = std::string(to_string(resample));
  j["normalize"] = normalize;
  j["degrees"] = degrees;
  j["kind"] = kind ? std::string(to_string(*kind)) : std::string("all");
  j["seed"] = seed;
  return j;
}

PrepConfig PrepConfig::from_json(const nlohmann::json& j) {
  PrepConfig c;
  c.min_length = j.at("min_length").get<std::size_t>();
  c.window_size = j.at("window_size").get<std::size_t>();
  c.stride = j.at("stride").get<std::size_t>();
  c.min_class_count = j.at("min_class_count").get<std::size_t>();
  c.train_ratio = j.at("train_ratio").get<double>();
  c.resample = parse_resample(j.at("resample").get<std::string>());
  c.normalize = j.at("normalize").get<bool>();
  c.degrees = j.at("degrees").get<bool>();
  const auto kind = j.at("kind").get<std::string>();
  if (kind != "all") {
    c.kind = parse_agent_kind(kind);
    if (!c.kind) throw LoadError("unknown agent kind " + kind);
  }
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

std::vector<WindowSample> PreparedDataset::training_set(Resample mode) const {
  const std::uint64_t s = core::derive_seed(config.seed, {kResampleStream});
  switch (mode) {
    case Resample::ros: return ros(split.train, num_classes(), s);
    case Resample::rus: return rus(split.train, num_classes(), s);
    case Resample::none:
    case Resample::wl: return split.train;
  }
  return split.train;
}

std::vector<double> PreparedDataset::loss_weights(Resample mode) const {
  if (mode != Resample::wl) return {};
  return class_weights(split.train, num_classes());
}

PreparedDataset prepare(const std::vector<Trajectory>& trajs, const LabelMap& labels,
                        const PrepConfig& config) {
  if (config.window_size != kWindowSize) {
    throw ConfigError("window size must be " + std::to_string(kWindowSize));
  }
  if (config.min_length < config.window_size) {
    throw ConfigError("min_length must be at least the window size");
  }
  PreparedDataset ds;
  ds.config = config;

  std::vector<Trajectory> selected;
  for (const auto& t : trajs) {
    if (!config.kind || t.kind == *config.kind) selected.push_back(t);
  }
  std::size_t points = 0;
  for (const auto& t : selected) points += t.points.size();
  ds.stages.push_back({"trajectories", selected.size(), {}});
  ds.stages.push_back({"points", points, {}});

  const auto kept = filter_short(selected, config.min_length);
  ds.stages.push_back({"trajectories_after_length_filter", kept.size(), {}});

  const auto windows = window_all(kept, config.window_size, config.stride);
  ds.stages.push_back({"windows", windows.size(), histogram(windows, labels.size())});

  auto filtered = filter_rare_classes(windows, labels.names(), config.min_class_count);
  ds.stages.push_back({"windows_after_rare_class_filter", filtered.samples.size(),
                       histogram(filtered.samples, filtered.class_names.size())});

  ds.split = split(filtered.samples, filtered.class_names, config.train_ratio, config.seed);
  const std::size_t nc = ds.num_classes();
  ds.stages.push_back({"train", ds.split.train.size(), histogram(ds.split.train, nc)});
  ds.stages.push_back({"test", ds.split.test.size(), histogram(ds.split.test, nc)});
  if (config.resample == Resample::ros || config.resample == Resample::rus) {
    const auto resampled = ds.training_set();
    ds.stages.push_back({"train_" + std::string(to_string(config.resample)), resampled.size(),
                         histogram(resampled, nc)});
  }
  if (config.normalize) ds.feature_stats = compute_feature_stats(ds.split.train);
  return ds;
}

std::string format_stage_table(const PreparedDataset& ds) {
  std::ostringstream os;
  os << std::left << std::setw(34) << "stage" << std::right << std::setw(10) << "count";
  const auto& names = ds.split.class_names;
  for (const auto& n : names) os << std::setw(9) << n;
  os << '\n';
  for (const auto& st : ds.stages) {
    os << std::left << std::setw(34) << st.stage << std::right << std::setw(10) << st.count;
    // Histograms taken before the rare-class filter are over the full label map.
    if (st.per_class.size() == names.size()) {
      for (auto c : st.per_class) os << std::setw(9) << c;
    } else if (!st.per_class.empty()) {
      os << "  (full label map:";
      for (auto c : st.per_class) os << ' ' << c;
      os << ')';
    }
    os << '\n';
  }
  return os.str();
}

std::vector<std::uint8_t> encode_prepared(const PreparedDataset& ds) {
  io::Container c;
  c.magic = std::string(kMagic);
  c.version = kVersion;
  c.header["config"] = ds.config.to_json();
  c.header["class_names"] = ds.split.class_names;
  c.header["seed"] = ds.split.seed;
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : ds.stages) {
    stages.push_back({{"stage", s.stage}, {"count", s.count}, {"per_class", s.per_class}});
  }
  c.header["stages"] = stages;
  if (ds.feature_stats) {
    c.header["feature_stats"] = {{"mean", ds.feature_stats->mean},
                                 {"stddev", ds.feature_stats->stddev}};
  }
  io::ByteWriter w;
  write_samples(w, ds.split.train);
  write_samples(w, ds.split.test);
  c.payload = w.take();
  return io::encode(c);
}

PreparedDataset decode_prepared(std::span<const std::uint8_t> bytes) {
  io::Container c = io::decode(bytes, kMagic, kVersion);
  PreparedDataset ds;
  try {
    ds.config = PrepConfig::from_json(c.header.at("config"));
    ds.split.class_names = c.header.at("class_names").get<std::vector<std::string>>();
    ds.split.seed = c.header.at("seed").get<std::uint64_t>();
    for (const auto& s : c.header.at("stages")) {
      ds.stages.push_back({s.at("stage").get<std::string>(), s.at("count").get<std::size_t>(),
                           s.at("per_class").get<std::vector<std::size_t>>()});
    }
    if (c.header.contains("feature_stats")) {
      FeatureStats st;
      st.mean = c.header["feature_stats"].at("mean").get<std::array<double, kFeatureCount>>();
      st.stddev = c.header["feature_stats"].at("stddev").get<std::array<double, kFeatureCount>>();
      ds.feature_stats = st;
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("prepared dataset header: ") + e.what());
  }
  io::ByteReader r(c.payload);
  ds.split.train = read_samples(r, ds.num_classes());
  ds.split.test = read_samples(r, ds.num_classes());
  if (!r.at_end()) throw LoadError("trailing bytes in prepared dataset payload");
  return ds;
}

void save_prepared(const std::filesystem::path& path, const PreparedDataset& ds) {
  io::write_file_atomic(path, encode_prepared(ds));
}

PreparedDataset load_prepared(const std::filesystem::path& path) {
  auto bytes = io::read_file(path);
  try {
    return decode_prepared(bytes);
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

}  // namespace dbr::data
