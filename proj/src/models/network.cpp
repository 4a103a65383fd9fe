#include "dbr/models/network.hpp"

#include <cmath>
#include <map>

#include "dbr/core/random.hpp"
#include "dbr/errors.hpp"

namespace dbr::models {

using core::Parameter;
using core::Shape;
using core::Tape;
using core::Tensor;
using core::Var;

namespace {

constexpr std::uint64_t kInitStream = 0x696e6974ULL;

std::size_t lstm_layer_params(std::size_t in, std::size_t hidden) {
  return 4 * hidden * (in + hidden) + 4 * hidden;
}

std::string lstm_name(std::size_t layer, const char* dir, const char* what) {
  std::string n = "lstm.l" + std::to_string(layer);
  if (*dir) n += std::string(".") + dir;
  return n + "." + what;
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Parameters bound onto one tape, looked up by name.
struct Bound {
  std::map<std::string, Var, std::less<>> vars;
  Var operator()(std::string_view name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw std::logic_error("missing parameter " + std::string(name));
    return it->second;
  }
};

template <typename T>
Bound bind_all(Tape<T>& tape, std::vector<Parameter<T>>& params, bool trainable) {
  Bound b;
  for (auto& p : params) b.vars.emplace(p.name, trainable ? tape.param(p) : tape.constant(p.value));
  return b;
}

template <typename T>
Bound bind_const(Tape<T>& tape, const std::vector<Parameter<T>>& params) {
  Bound b;
  for (const auto& p : params) b.vars.emplace(p.name, tape.constant(p.value));
  return b;
}

// One direction of one recurrent layer over per-step inputs.
template <typename T>
std::vector<Var> run_lstm(Tape<T>& t, const std::vector<Var>& xs, const Bound& p, std::size_t layer,
                          const char* dir, bool reverse, std::size_t hidden) {
  const std::size_t batch = t.value(xs.front()).dim(0);
  const Var wx = p(lstm_name(layer, dir, "wx"));
  const Var wh = p(lstm_name(layer, dir, "wh"));
  const Var b = p(lstm_name(layer, dir, "b"));
  core::LstmState s{t.constant(Tensor<T>({batch, hidden})), t.constant(Tensor<T>({batch, hidden}))};
  std::vector<Var> out(xs.size());
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const std::size_t step = reverse ? xs.size() - 1 - k : k;
    s = core::lstm_cell(t, xs[step], s.h, s.c, wx, wh, b);
    out[step] = s.h;
  }
  return out;
}

template <typename T>
Var bilstm_impl(Tape<T>& t, Var x, const Bound& p, const NetConfig& cfg) {
  std::vector<Var> xs;
  for (std::size_t s = 0; s < cfg.seq_len; ++s) xs.push_back(core::time_step(t, x, s));
  for (std::size_t l = 0; l < cfg.lstm_layers; ++l) {
    auto fwd = run_lstm(t, xs, p, l, "fwd", false, cfg.lstm_hidden);
    auto bwd = run_lstm(t, xs, p, l, "bwd", true, cfg.lstm_hidden);
    for (std::size_t s = 0; s < cfg.seq_len; ++s) {
      const Var parts[2] = {fwd[s], bwd[s]};
      xs[s] = core::concat_cols<T>(t, parts);
    }
  }
  // Mean of the top-layer hidden states over all time steps.
  return core::mean_of<T>(t, xs);
}

template <typename T>
Var mscnn_impl(Tape<T>& t, Var x, const Bound& p, const NetConfig& cfg) {
  const Var xt = core::swap_last_axes(t, x);  // B×channels×time
  std::vector<Var> pooled;
  for (std::size_t k : cfg.kernel_sizes) {
    const std::string base = "mscnn.k" + std::to_string(k);
    Var conv = core::conv1d_valid(t, xt, p(base + ".w"), p(base + ".b"));
    pooled.push_back(core::max_over_time(t, core::relu(t, conv)));
  }
  const Var cat = core::concat_cols<T>(t, pooled);
  // Bottleneck: the 32-wide layer belongs to the MSCNN branch, the classifier
  // head maps the fused features to C logits.
  return core::relu(t, core::linear(t, cat, p("fc1.w"), p("fc1.b")));
}

template <typename T>
Var forward_impl(Tape<T>& t, Var x, const Bound& p, const NetConfig& cfg) {
  switch (cfg.kind) {
    case ModelKind::fusion: {
      const Var parts[2] = {bilstm_impl(t, x, p, cfg), mscnn_impl(t, x, p, cfg)};
      return core::linear(t, core::concat_cols<T>(t, parts), p("fc2.w"), p("fc2.b"));
    }
    case ModelKind::bilstm:
      return core::linear(t, bilstm_impl(t, x, p, cfg), p("fc2.w"), p("fc2.b"));
    case ModelKind::lstm: {
      std::vector<Var> xs;
      for (std::size_t s = 0; s < cfg.seq_len; ++s) xs.push_back(core::time_step(t, x, s));
      for (std::size_t l = 0; l < cfg.lstm_layers; ++l) {
        xs = run_lstm(t, xs, p, l, "", false, cfg.lstm_hidden);
      }
      return core::linear(t, xs.back(), p("out.w"), p("out.b"));
    }
    case ModelKind::conv1d: {
      Var h = core::swap_last_axes(t, x);
      for (std::size_t i = 0; i < cfg.conv1d_channels.size(); ++i) {
        const std::string base = "conv" + std::to_string(i);
        h = core::relu(t, core::conv1d_valid(t, h, p(base + ".w"), p(base + ".b")));
      }
      return core::linear(t, core::flatten(t, h), p("out.w"), p("out.b"));
    }
    case ModelKind::hmm: break;
  }
  throw ConfigError("not a neural model kind");
}

}  // namespace

std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::fusion: return "fusion";
    case ModelKind::bilstm: return "bilstm";
    case ModelKind::lstm: return "lstm";
    case ModelKind::conv1d: return "conv1d";
    case ModelKind::hmm: return "hmm";
  }
  return "fusion";
}

ModelKind parse_model_kind(std::string_view s) {
  for (auto k : {ModelKind::fusion, ModelKind::bilstm, ModelKind::lstm, ModelKind::conv1d,
                 ModelKind::hmm}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("unknown model kind `" + std::string(s) +
                    "` (fusion, bilstm, lstm, conv1d, hmm)");
}

void NetConfig::validate() const {
  if (kind == ModelKind::hmm) throw ConfigError("hmm is not a neural network kind");
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (input_channels == 0 || seq_len == 0) throw ConfigError("empty input shape");
  if (kind == ModelKind::conv1d) {
    if (conv1d_channels.empty() || conv1d_kernel == 0) throw ConfigError("conv1d: no layers");
    if (conv1d_channels.size() * (conv1d_kernel - 1) >= seq_len) {
      throw ConfigError("conv1d: layers consume the whole sequence");
    }
    return;
  }
  if (lstm_layers == 0 || lstm_hidden == 0) throw ConfigError("lstm: empty recurrent stack");
  if (kind == ModelKind::fusion) {
    if (kernel_sizes.empty()) throw ConfigError("fusion: no convolution kernels");
    for (std::size_t k : kernel_sizes) {
      if (k == 0 || k > seq_len) {
        throw ConfigError("fusion: kernel size " + std::to_string(k) + " not in [1, " +
                          std::to_string(seq_len) + "]");
      }
    }
    if (channels_per_kernel == 0 || fc1_out == 0) throw ConfigError("fusion: empty layer");
  }
}

nlohmann::json NetConfig::to_json() const {
  return {{"kind", std::string(to_string(kind))},
          {"num_classes", num_classes},
          {"input_channels", input_channels},
          {"seq_len", seq_len},
          {"lstm_layers", lstm_layers},
          {"lstm_hidden", lstm_hidden},
          {"kernel_sizes", kernel_sizes},
          {"channels_per_kernel", channels_per_kernel},
          {"fc1_out", fc1_out},
          {"conv1d_channels", conv1d_channels},
          {"conv1d_kernel", conv1d_kernel}};
}

NetConfig NetConfig::from_json(const nlohmann::json& j) {
  NetConfig c;
  c.kind = parse_model_kind(j.at("kind").get<std::string>());
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.input_channels = j.at("input_channels").get<std::size_t>();
  c.seq_len = j.at("seq_len").get<std::size_t>();
  c.lstm_layers = j.at("lstm_layers").get<std::size_t>();
  c.lstm_hidden = j.at("lstm_hidden").get<std::size_t>();
  c.kernel_sizes = j.at("kernel_sizes").get<std::vector<std::size_t>>();
  c.channels_per_kernel = j.at("channels_per_kernel").get<std::size_t>();
  c.fc1_out = j.at("fc1_out").get<std::size_t>();
  c.conv1d_channels = j.at("conv1d_channels").get<std::vector<std::size_t>>();
  c.conv1d_kernel = j.at("conv1d_kernel").get<std::size_t>();
  return c;
}

std::size_t expected_parameter_count(const NetConfig& c) {
  c.validate();
  const std::size_t C = c.num_classes, H = c.lstm_hidden;
  std::size_t n = 0;
  switch (c.kind) {
    case ModelKind::fusion:
    case ModelKind::bilstm: {
      for (std::size_t l = 0; l < c.lstm_layers; ++l) {
        n += 2 * lstm_layer_params(l == 0 ? c.input_channels : 2 * H, H);
      }
      std::size_t head_in = 2 * H;
      if (c.kind == ModelKind::fusion) {
        for (std::size_t k : c.kernel_sizes) {
          n += c.channels_per_kernel * c.input_channels * k + c.channels_per_kernel;
        }
        n += c.kernel_sizes.size() * c.channels_per_kernel * c.fc1_out + c.fc1_out;
        head_in += c.fc1_out;
      }
      return n + head_in * C + C;
    }
    case ModelKind::lstm:
      for (std::size_t l = 0; l < c.lstm_layers; ++l) {
        n += lstm_layer_params(l == 0 ? c.input_channels : H, H);
      }
      return n + H * C + C;
    case ModelKind::conv1d: {
      std::size_t in = c.input_channels, len = c.seq_len;
      for (std::size_t out : c.conv1d_channels) {
        n += out * in * c.conv1d_kernel + out;
        in = out;
        len -= c.conv1d_kernel - 1;
      }
      return n + in * len * C + C;
    }
    case ModelKind::hmm: break;
  }
  return 0;
}

template <typename T>
Network<T>::Network(const NetConfig& config) : config_(config) {
  config_.validate();
  const auto& c = config_;
  const std::size_t H = c.lstm_hidden, C = c.num_classes;
  auto add_lstm = [&](std::size_t layer, const char* dir, std::size_t in) {
    add(lstm_name(layer, dir, "wx"), {in, 4 * H});
    add(lstm_name(layer, dir, "wh"), {H, 4 * H});
    add(lstm_name(layer, dir, "b"), {4 * H});
  };
  switch (c.kind) {
    case ModelKind::fusion:
    case ModelKind::bilstm:
      for (std::size_t l = 0; l < c.lstm_layers; ++l) {
        const std::size_t in = l == 0 ? c.input_channels : 2 * H;
        add_lstm(l, "fwd", in);
        add_lstm(l, "bwd", in);
      }
      if (c.kind == ModelKind::fusion) {
        for (std::size_t k : c.kernel_sizes) {
          const std::string base = "mscnn.k" + std::to_string(k);
          add(base + ".w", {c.channels_per_kernel, c.input_channels, k});
          add(base + ".b", {c.channels_per_kernel});
        }
        add("fc1.w", {c.kernel_sizes.size() * c.channels_per_kernel, c.fc1_out});
        add("fc1.b", {c.fc1_out});
        add("fc2.w", {2 * H + c.fc1_out, C});
      } else {
        add("fc2.w", {2 * H, C});
      }
      add("fc2.b", {C});
      break;
    case ModelKind::lstm:
      for (std::size_t l = 0; l < c.lstm_layers; ++l) add_lstm(l, "", l == 0 ? c.input_channels : H);
      add("out.w", {H, C});
      add("out.b", {C});
      break;
    case ModelKind::conv1d: {
      std::size_t in = c.input_channels, len = c.seq_len;
      for (std::size_t i = 0; i < c.conv1d_channels.size(); ++i) {
        const std::string base = "conv" + std::to_string(i);
        add(base + ".w", {c.conv1d_channels[i], in, c.conv1d_kernel});
        add(base + ".b", {c.conv1d_channels[i]});
        in = c.conv1d_channels[i];
        len -= c.conv1d_kernel - 1;
      }
      add("out.w", {in * len, C});
      add("out.b", {C});
      break;
    }
    case ModelKind::hmm: break;
  }
}

template <typename T>
Network<T>::Network(const NetConfig& config, std::uint64_t seed) : Network(config) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    core::Rng rng(core::derive_seed(seed, {kInitStream, i}));
    const Shape& s = p.value.shape();
    if (p.name.starts_with("lstm.")) {
      if (ends_with(p.name, ".b")) {
        const std::size_t H = s[0] / 4;
        for (std::size_t j = H; j < 2 * H; ++j) p.value[j] = T(1);
      } else {
        const double bound = 1.0 / std::sqrt(static_cast<double>(config_.lstm_hidden));
        core::fill_uniform(p.value, rng, -bound, bound);
      }
      continue;
    }
    if (s.size() == 1) continue;  // biases start at zero
    double fan_in = 0, fan_out = 0;
    if (s.size() == 2) {
      fan_in = static_cast<double>(s[0]);
      fan_out = static_cast<double>(s[1]);
    } else {
      fan_in = static_cast<double>(s[1] * s[2]);
      fan_out = static_cast<double>(s[0] * s[2]);
    }
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    core::fill_uniform(p.value, rng, -bound, bound);
  }
}

template <typename T>
Network<T> Network<T>::zeros(const NetConfig& config) {
  return Network(config);
}

template <typename T>
void Network<T>::add(std::string name, Shape shape) {
  params_.emplace_back(std::move(name), Tensor<T>(std::move(shape)));
}

template <typename T>
std::vector<Parameter<T>*> Network<T>::parameter_ptrs() {
  std::vector<Parameter<T>*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
Parameter<T>& Network<T>::parameter(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw std::out_of_range("no parameter named " + std::string(name));
}

template <typename T>
void Network<T>::check_input(const Tensor<T>& batch) const {
  const Shape& s = batch.shape();
  if (s.size() != 3 || s[1] != config_.seq_len || s[2] != config_.input_channels) {
    throw DimensionError("model input must be [B x " + std::to_string(config_.seq_len) + " x " +
                         std::to_string(config_.input_channels) + "], got " +
                         core::shape_to_string(s));
  }
}

template <typename T>
Var Network<T>::forward(Tape<T>& tape, Var batch, bool trainable) {
  check_input(tape.value(batch));
  return forward_impl(tape, batch, bind_all(tape, params_, trainable), config_);
}

template <typename T>
Var Network<T>::bilstm_branch(Tape<T>& tape, Var batch, bool trainable) {
  if (config_.kind != ModelKind::fusion && config_.kind != ModelKind::bilstm) {
    throw ConfigError("bilstm_branch needs a fusion or bilstm model");
  }
  check_input(tape.value(batch));
  return bilstm_impl(tape, batch, bind_all(tape, params_, trainable), config_);
}

template <typename T>
Var Network<T>::mscnn_branch(Tape<T>& tape, Var batch, bool trainable) {
  if (config_.kind != ModelKind::fusion) throw ConfigError("mscnn_branch needs a fusion model");
  check_input(tape.value(batch));
  return mscnn_impl(tape, batch, bind_all(tape, params_, trainable), config_);
}

template <typename T>
Tensor<T> Network<T>::logits(const Tensor<T>& batch) const {
  check_input(batch);
  Tape<T> tape;
  const Var x = tape.constant(batch);
  return tape.value(forward_impl(tape, x, bind_const(tape, params_), config_));
}

template <typename T>
std::vector<int> Network<T>::predict(const Tensor<T>& batch) const {
  return core::argmax_rows(logits(batch));
}

template <typename T>
template <typename U>
Network<U> Network<T>::cast() const {
  Network<U> out(config_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.params_[i].value = params_[i].value.template cast<U>();
  }
  return out;
}

template <typename T>
Tensor<T> make_batch(const std::vector<data::WindowSample>& samples,
                     std::span<const std::size_t> indices,
                     const std::optional<data::FeatureStats>& stats) {
  const std::size_t n = indices.empty() ? samples.size() : indices.size();
  if (n == 0) throw DataError("make_batch: no samples");
  constexpr std::size_t per = data::kWindowSize * data::kFeatureCount;
  Tensor<T> out({n, data::kWindowSize, data::kFeatureCount});
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = samples.at(indices.empty() ? i : indices[i]);
    for (std::size_t j = 0; j < per; ++j) {
      double v = s.states[j];
      if (stats) {
        const std::size_t f = j % data::kFeatureCount;
        v = (v - stats->mean[f]) / stats->stddev[f];
      }
      out[i * per + j] = static_cast<T>(v);
    }
  }
  return out;
}

template class Network<float>;
template class Network<double>;
template Network<float> Network<double>::cast<float>() const;
template Network<double> Network<float>::cast<double>() const;
template Network<float> Network<float>::cast<float>() const;
template Network<double> Network<double>::cast<double>() const;
template Tensor<float> make_batch<float>(const std::vector<data::WindowSample>&,
                                         std::span<const std::size_t>,
                                         const std::optional<data::FeatureStats>&);
template Tensor<double> make_batch<double>(const std::vector<data::WindowSample>&,
                                           std::span<const std::size_t>,
                                           const std::optional<data::FeatureStats>&);

}  // namespace dbr::models
