#include <cmath>

#include "dbr/errors.hpp"
#include "dbr/io/container.hpp"
#include "dbr/train/train.hpp"

namespace dbr::train {

using models::ModelKind;
using models::Network;

namespace {

constexpr std::string_view kMagic = "DBRCKPT1";
constexpr std::uint32_t kVersion = 1;

struct TensorEntry {
  std::string name;
  core::Shape shape;
  std::string dtype;  // "f32" or "f64"
};

nlohmann::json entry_json(const TensorEntry& e) {
  return {{"name", e.name}, {"shape", e.shape}, {"dtype", e.dtype}};
}

template <typename T>
void write_network(const Network<T>& net, nlohmann::json& header, io::ByteWriter& w) {
  constexpr bool is_float = std::is_same_v<T, float>;
  header["net_config"] = net.config().to_json();
  nlohmann::json list = nlohmann::json::array();
  for (const auto& p : net.parameters()) {
    list.push_back(entry_json({p.name, p.value.shape(), is_float ? "f32" : "f64"}));
    for (T v : p.value.values()) {
      if constexpr (is_float) w.f32(v);
      else w.f64(v);
    }
  }
  header["tensors"] = list;
}

void write_hmm(const hmm::HmmClassifier& h, nlohmann::json& header, io::ByteWriter& w) {
  nlohmann::json list = nlohmann::json::array();
  nlohmann::json states = nlohmann::json::array();
  std::size_t dim = 0;
  for (std::size_t c = 0; c < h.num_classes(); ++c) {
    if (!h.models()[c]) throw StateError("cannot save an HMM classifier with untrained classes");
    const auto& m = *h.models()[c];
    dim = m.dim;
    states.push_back(m.n_states);
    const std::string base = "hmm.c" + std::to_string(c) + ".";
    auto put = [&](const std::string& name, core::Shape shape, const std::vector<double>& v) {
      list.push_back(entry_json({base + name, std::move(shape), "f64"}));
      for (double x : v) w.f64(x);
    };
    put("initial", {m.n_states}, m.initial);
    put("transitions", {m.n_states, m.n_states}, m.transitions);
    put("means", {m.n_states, m.dim}, m.means);
    put("variances", {m.n_states, m.dim}, m.variances);
  }
  header["hmm"] = {{"n_states", states}, {"dim", dim}};
  header["tensors"] = list;
}

std::vector<TensorEntry> read_entries(const nlohmann::json& header) {
  std::vector<TensorEntry> out;
  for (const auto& e : header.at("tensors")) {
    out.push_back({e.at("name").get<std::string>(), e.at("shape").get<core::Shape>(),
                   e.at("dtype").get<std::string>()});
  }
  return out;
}

template <typename T>
Network<T> read_network(const models::NetConfig& cfg, const std::vector<TensorEntry>& entries,
                        io::ByteReader& r) {
  auto net = Network<T>::zeros(cfg);
  auto& params = net.parameters();
  if (entries.size() != params.size()) {
    throw LoadError("checkpoint holds " + std::to_string(entries.size()) + " tensors, the " +
                    std::string(models::to_string(cfg.kind)) + " configuration needs " +
                    std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (entries[i].name != p.name || entries[i].shape != p.value.shape()) {
      throw LoadError("tensor " + entries[i].name + " " + core::shape_to_string(entries[i].shape) +
                      " does not match expected " + p.name + " " +
                      core::shape_to_string(p.value.shape()));
    }
    for (T& v : p.value.values()) {
      if constexpr (std::is_same_v<T, float>) v = r.f32();
      else v = r.f64();
      if (!std::isfinite(v)) throw LoadError("non-finite value in tensor " + p.name);
    }
  }
  return net;
}

hmm::HmmClassifier read_hmm(const nlohmann::json& header, std::size_t num_classes,
                            const std::vector<TensorEntry>& entries, io::ByteReader& r) {
  const auto states = header.at("hmm").at("n_states").get<std::vector<std::size_t>>();
  const auto dim = header.at("hmm").at("dim").get<std::size_t>();
  if (states.size() != num_classes || entries.size() != 4 * num_classes) {
    throw LoadError("HMM checkpoint does not hold one model per class");
  }
  hmm::HmmClassifier out(num_classes);
  std::size_t k = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    hmm::GaussianHmm m;
    m.n_states = states[c];
    m.dim = dim;
    const std::string base = "hmm.c" + std::to_string(c) + ".";
    auto take = [&](const std::string& name, core::Shape shape) {
      const auto& e = entries[k++];
      if (e.name != base + name || e.shape != shape || e.dtype != "f64") {
        throw LoadError("unexpected tensor " + e.name + " " + core::shape_to_string(e.shape));
      }
      std::vector<double> v(core::shape_size(shape));
      for (double& x : v) x = r.f64();
      return v;
    };
    m.initial = take("initial", {m.n_states});
    m.transitions = take("transitions", {m.n_states, m.n_states});
    m.means = take("means", {m.n_states, dim});
    m.variances = take("variances", {m.n_states, dim});
    try {
      out.set_model(c, std::move(m));
    } catch (const StateError& e) {
      throw LoadError(std::string("class ") + std::to_string(c) + " HMM: " + e.what());
    }
  }
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Classifier& model) {
  io::Container c;
  c.magic = std::string(kMagic);
  c.version = kVersion;
  c.header["kind"] = std::string(models::to_string(model.kind));
  c.header["class_names"] = model.class_names;
  if (model.feature_stats) {
    c.header["feature_stats"] = {{"mean", model.feature_stats->mean},
                                 {"stddev", model.feature_stats->stddev}};
  }
  io::ByteWriter w;
  if (auto* f = std::get_if<Network<float>>(&model.impl)) {
    c.header["precision"] = "fast";
    write_network(*f, c.header, w);
  } else if (auto* d = std::get_if<Network<double>>(&model.impl)) {
    c.header["precision"] = "verify";
    write_network(*d, c.header, w);
  } else if (auto* h = std::get_if<hmm::HmmClassifier>(&model.impl)) {
    c.header["precision"] = "verify";
    write_hmm(*h, c.header, w);
  } else {
    throw StateError("classifier holds no model");
  }
  c.payload = w.take();
  return io::encode(c);
}

Classifier decode_checkpoint(std::span<const std::uint8_t> bytes) {
  io::Container c = io::decode(bytes, kMagic, kVersion);
  Classifier out;
  try {
    const auto& h = c.header;
    out.kind = models::parse_model_kind(h.at("kind").get<std::string>());
    out.class_names = h.at("class_names").get<std::vector<std::string>>();
    if (h.contains("feature_stats")) {
      data::FeatureStats st;
      st.mean = h["feature_stats"].at("mean").get<std::array<double, data::kFeatureCount>>();
      st.stddev = h["feature_stats"].at("stddev").get<std::array<double, data::kFeatureCount>>();
      out.feature_stats = st;
    }
    const auto entries = read_entries(h);
    io::ByteReader r(c.payload);
    if (out.kind == ModelKind::hmm) {
      out.impl = read_hmm(h, out.class_names.size(), entries, r);
    } else {
      const auto cfg = models::NetConfig::from_json(h.at("net_config"));
      if (cfg.kind != out.kind) throw LoadError("model kind and network configuration disagree");
      if (cfg.num_classes != out.class_names.size()) {
        throw LoadError("network has " + std::to_string(cfg.num_classes) + " outputs for " +
                        std::to_string(out.class_names.size()) + " classes");
      }
      const Precision p = parse_precision(h.at("precision").get<std::string>());
      for (const auto& e : entries) {
        if (e.dtype != (p == Precision::fast ? "f32" : "f64")) {
          throw LoadError("tensor " + e.name + " has dtype " + e.dtype + " in a " +
                          std::string(to_string(p)) + " checkpoint");
        }
      }
      if (p == Precision::fast) out.impl = read_network<float>(cfg, entries, r);
      else out.impl = read_network<double>(cfg, entries, r);
    }
    if (!r.at_end()) throw LoadError("trailing bytes after the last tensor");
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw LoadError(std::string("checkpoint configuration: ") + e.what());
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Classifier& model) {
  io::write_file_atomic(path, encode_checkpoint(model));
}

Classifier load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

}  // namespace dbr::train
