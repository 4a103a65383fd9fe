#include "dbr/data/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dbr/core/random.hpp"
#include "dbr/errors.hpp"

namespace dbr::data {

namespace {

constexpr std::uint64_t kSplitStream = 0x73706c6974ULL;
constexpr std::uint64_t kRosStream = 0x726f73ULL;
constexpr std::uint64_t kRusStream = 0x727573ULL;

std::vector<std::vector<std::size_t>> indices_by_class(const std::vector<WindowSample>& samples,
                                                       std::size_t num_classes) {
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int c = samples[i].label;
    if (c < 0 || static_cast<std::size_t>(c) >= num_classes) {
      throw DataError("sample " + std::to_string(i) + " has label " + std::to_string(c) +
                      " outside [0, " + std::to_string(num_classes) + ")");
    }
    by_class[static_cast<std::size_t>(c)].push_back(i);
  }
  return by_class;
}

void require_nonempty_classes(const std::vector<std::vector<std::size_t>>& by_class,
                              const char* op) {
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].empty()) {
      throw ConfigError(std::string(op) + ": class " + std::to_string(c) + " has no samples");
    }
  }
}

}  // namespace

std::vector<Trajectory> filter_short(const std::vector<Trajectory>& trajs, std::size_t min_len) {
  std::vector<Trajectory> out;
  for (const auto& t : trajs) {
    if (t.points.size() >= min_len) out.push_back(t);
  }
  return out;
}

std::vector<WindowSample> window(const Trajectory& traj, std::size_t size, std::size_t stride) {
  if (size != kWindowSize) {
    throw std::invalid_argument("window: only size " + std::to_string(kWindowSize) +
                                " is supported");
  }
  if (stride == 0) throw std::invalid_argument("window: stride must be positive");
  const std::size_t len = traj.points.size();
  if (len < size) {
    throw std::invalid_argument("window: trajectory " + traj.agent_id + " has " +
                                std::to_string(len) + " points, fewer than window size " +
                                std::to_string(size) + " (filter first)");
  }
  std::vector<WindowSample> out;
  out.reserve((len - size) / stride + 1);
  for (std::size_t start = 0; start + size <= len; start += stride) {
    WindowSample s;
    for (std::size_t r = 0; r < size; ++r) {
      const TrajectoryPoint& p = traj.points[start + r];
      s.states[r * kFeatureCount + 0] = p.x;
      s.states[r * kFeatureCount + 1] = p.y;
      s.states[r * kFeatureCount + 2] = p.z;
      s.states[r * kFeatureCount + 3] = p.d;
    }
    const TrajectoryPoint& last = traj.points[start + size - 1];
    s.label = last.label;
    s.agent_id = traj.agent_id;
    s.end_frame = last.frame;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<WindowSample> window_all(const std::vector<Trajectory>& trajs, std::size_t size,
                                     std::size_t stride) {
  std::vector<WindowSample> out;
  for (const auto& t : trajs) {
    auto w = window(t, size, stride);
    out.insert(out.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  return out;
}

std::vector<std::size_t> histogram(const std::vector<WindowSample>& samples,
                                   std::size_t num_classes) {
  std::vector<std::size_t> h(num_classes, 0);
  for (const auto& s : samples) {
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= num_classes) {
      throw DataError("histogram: label " + std::to_string(s.label) + " outside [0, " +
                      std::to_string(num_classes) + ")");
    }
    ++h[static_cast<std::size_t>(s.label)];
  }
  return h;
}

RareClassFilter filter_rare_classes(const std::vector<WindowSample>& samples,
                                    const std::vector<std::string>& class_names,
                                    std::size_t min_count) {
  const auto counts = histogram(samples, class_names.size());
  RareClassFilter out;
  out.old_to_new.assign(class_names.size(), -1);
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    if (counts[c] >= min_count) {
      out.old_to_new[c] = static_cast<int>(out.class_names.size());
      out.class_names.push_back(class_names[c]);
    }
  }
  if (out.class_names.empty()) {
    throw ConfigError("filter_rare_classes: every class has fewer than " +
                      std::to_string(min_count) + " samples");
  }
  for (const auto& s : samples) {
    const int mapped = out.old_to_new[static_cast<std::size_t>(s.label)];
    if (mapped < 0) continue;
    WindowSample copy = s;
    copy.label = mapped;
    out.samples.push_back(std::move(copy));
  }
  return out;
}

DatasetSplit split(const std::vector<WindowSample>& samples,
                   const std::vector<std::string>& class_names, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split: ratio must lie in (0, 1)");
  const auto by_class = indices_by_class(samples, class_names.size());
  std::vector<char> to_train(samples.size(), 0);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    const std::size_t n = by_class[c].size();
    if (n < 2) {
      throw ConfigError("split: class " + class_names[c] + " has " + std::to_string(n) +
                        " sample(s); at least 2 are required");
    }
    auto idx = by_class[c];
    core::Rng rng(core::derive_seed(seed, {kSplitStream, c}));
    core::shuffle(idx.begin(), idx.end(), rng);
    std::size_t n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n)));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
    for (std::size_t k = 0; k < n_train; ++k) to_train[idx[k]] = 1;
  }
  DatasetSplit out;
  out.class_names = class_names;
  out.seed = seed;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    (to_train[i] ? out.train : out.test).push_back(samples[i]);
  }
  return out;
}

std::vector<WindowSample> ros(const std::vector<WindowSample>& train, std::size_t num_classes,
                              std::uint64_t seed) {
  if (train.empty()) throw ConfigError("ros: empty training set");
  const auto by_class = indices_by_class(train, num_classes);
  require_nonempty_classes(by_class, "ros");
  std::size_t target = 0;
  for (const auto& v : by_class) target = std::max(target, v.size());
  std::vector<WindowSample> out = train;
  for (std::size_t c = 0; c < num_classes; ++c) {
    core::Rng rng(core::derive_seed(seed, {kRosStream, c}));
    const auto& pool = by_class[c];
    for (std::size_t k = pool.size(); k < target; ++k) {
      out.push_back(train[pool[core::uniform_index(rng, pool.size())]]);
    }
  }
  return out;
}

std::vector<WindowSample> rus(const std::vector<WindowSample>& train, std::size_t num_classes,
                              std::uint64_t seed) {
  if (train.empty()) throw ConfigError("rus: empty training set");
  const auto by_class = indices_by_class(train, num_classes);
  require_nonempty_classes(by_class, "rus");
  std::size_t target = train.size();
  for (const auto& v : by_class) target = std::min(target, v.size());
  std::vector<char> keep(train.size(), 0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto idx = by_class[c];
    core::Rng rng(core::derive_seed(seed, {kRusStream, c}));
    core::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < target; ++k) keep[idx[k]] = 1;
  }
  std::vector<WindowSample> out;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (keep[i]) out.push_back(train[i]);
  }
  return out;
}

std::vector<double> class_weights(const std::vector<WindowSample>& train, std::size_t num_classes) {
  const auto counts = histogram(train, num_classes);
  std::vector<double> w(num_classes);
  const double total = static_cast<double>(train.size());
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) {
      throw ConfigError("class_weights: class " + std::to_string(c) + " has no samples");
    }
    w[c] = total / (static_cast<double>(num_classes) * static_cast<double>(counts[c]));
  }
  return w;
}

FeatureStats compute_feature_stats(const std::vector<WindowSample>& train) {
  if (train.empty()) throw ConfigError("feature statistics need at least one sample");
  FeatureStats st;
  const double n = static_cast<double>(train.size() * kWindowSize);
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    double sum = 0;
    for (const auto& s : train)
      for (std::size_t r = 0; r < kWindowSize; ++r) sum += s.at(r, f);
    const double mean = sum / n;
    double sq = 0;
    for (const auto& s : train)
      for (std::size_t r = 0; r < kWindowSize; ++r) sq += (s.at(r, f) - mean) * (s.at(r, f) - mean);
    st.mean[f] = mean;
    const double sd = std::sqrt(sq / n);
    st.stddev[f] = sd > 1e-12 ? sd : 1.0;
  }
  return st;
}

WindowSample standardize(const WindowSample& s, const FeatureStats& stats) {
  WindowSample out = s;
  for (std::size_t r = 0; r < kWindowSize; ++r)
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
      double& v = out.states[r * kFeatureCount + f];
      v = (v - stats.mean[f]) / stats.stddev[f];
    }
  return out;
}

}  // namespace dbr::data
