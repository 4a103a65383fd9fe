#include "dbr/train/train.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "dbr/core/adam.hpp"
#include "dbr/core/random.hpp"
#include "dbr/errors.hpp"

namespace dbr::train {

using models::ModelKind;
using models::Network;

namespace {

constexpr std::uint64_t kShuffleStream = 0x73687566ULL;
constexpr std::uint64_t kModelInitStream = 0x6d6f64656cULL;
constexpr std::uint64_t kHmmStream = 0x686d6dULL;
constexpr std::size_t kPredictChunk = 1024;

std::string exact(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <typename T>
std::vector<int> predict_chunked(const Network<T>& net, const std::vector<data::WindowSample>& s,
                                 const std::optional<data::FeatureStats>& stats) {
  std::vector<int> out;
  out.reserve(s.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < s.size(); start += kPredictChunk) {
    idx.clear();
    for (std::size_t i = start; i < std::min(s.size(), start + kPredictChunk); ++i) idx.push_back(i);
    const auto p = net.predict(models::make_batch<T>(s, idx, stats));
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

template <typename T>
std::vector<double> scores_chunked(const Network<T>& net, const std::vector<data::WindowSample>& s,
                                   const std::optional<data::FeatureStats>& stats) {
  std::vector<double> out;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < s.size(); start += kPredictChunk) {
    idx.clear();
    for (std::size_t i = start; i < std::min(s.size(), start + kPredictChunk); ++i) idx.push_back(i);
    const auto z = net.logits(models::make_batch<T>(s, idx, stats));
    out.insert(out.end(), z.values().begin(), z.values().end());
  }
  return out;
}

}  // namespace

std::string_view to_string(Precision p) { return p == Precision::verify ? "verify" : "fast"; }

Precision parse_precision(std::string_view s) {
  if (s == "verify") return Precision::verify;
  if (s == "fast") return Precision::fast;
  throw ConfigError("unknown precision `" + std::string(s) + "` (verify, fast)");
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (!(lr_initial > 0) || !(lr_after > 0)) throw ConfigError("learning rates must be positive");
  for (double w : loss_weights) {
    if (!(w >= 0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and >= 0");
  }
  if (hmm_states == 0) throw ConfigError("hmm_states must be at least 1");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"lr_initial", lr_initial},
          {"lr_after", lr_after},
          {"lr_switch_epoch", lr_switch_epoch},
          {"seed", seed},
          {"loss_weights", loss_weights},
          {"precision", std::string(to_string(precision))},
          {"hmm_states", hmm_states},
          {"hmm_max_iters", hmm_max_iters},
          {"hmm_tol", hmm_tol}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.lr_initial = j.at("lr_initial").get<double>();
  c.lr_after = j.at("lr_after").get<double>();
  c.lr_switch_epoch = j.at("lr_switch_epoch").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.loss_weights = j.at("loss_weights").get<std::vector<double>>();
  c.precision = parse_precision(j.at("precision").get<std::string>());
  c.hmm_states = j.at("hmm_states").get<std::size_t>();
  c.hmm_max_iters = j.at("hmm_max_iters").get<std::size_t>();
  c.hmm_tol = j.at("hmm_tol").get<double>();
  return c;
}

std::string TrainLog::to_tsv(bool with_seconds) const {
  std::ostringstream os;
  os << "epoch\tloss\tlr" << (with_seconds ? "\tseconds" : "") << '\n';
  for (const auto& e : epochs) {
    os << e.epoch << '\t' << exact(e.loss) << '\t' << exact(e.lr);
    if (with_seconds) os << '\t' << e.seconds;
    os << '\n';
  }
  return os.str();
}

Precision Classifier::precision() const {
  return std::holds_alternative<Network<float>>(impl) ? Precision::fast : Precision::verify;
}

std::vector<int> Classifier::predict(const std::vector<data::WindowSample>& samples) const {
  if (std::holds_alternative<std::monostate>(impl)) throw StateError("classifier holds no model");
  if (samples.empty()) return {};
  if (auto* f = std::get_if<Network<float>>(&impl)) return predict_chunked(*f, samples, feature_stats);
  if (auto* d = std::get_if<Network<double>>(&impl)) return predict_chunked(*d, samples, feature_stats);
  return std::get<hmm::HmmClassifier>(impl).predict(samples, feature_stats);
}

std::vector<double> Classifier::scores(const std::vector<data::WindowSample>& samples) const {
  if (std::holds_alternative<std::monostate>(impl)) throw StateError("classifier holds no model");
  if (samples.empty()) return {};
  if (auto* f = std::get_if<Network<float>>(&impl)) return scores_chunked(*f, samples, feature_stats);
  if (auto* d = std::get_if<Network<double>>(&impl)) return scores_chunked(*d, samples, feature_stats);
  std::vector<double> out;
  const auto& h = std::get<hmm::HmmClassifier>(impl);
  for (const auto& s : samples) {
    const auto ll = h.class_logliks(hmm::to_sequence(s, feature_stats));
    out.insert(out.end(), ll.begin(), ll.end());
  }
  return out;
}

template <typename T>
TrainLog fit_network(Network<T>& net, const TrainConfig& config,
                     const std::vector<data::WindowSample>& train,
                     const std::optional<data::FeatureStats>& stats, const EpochCallback& on_epoch) {
  config.validate();
  if (train.empty()) throw ConfigError("training set is empty");
  const std::size_t C = net.config().num_classes;
  if (!config.loss_weights.empty() && config.loss_weights.size() != C) {
    throw ConfigError("loss_weights has " + std::to_string(config.loss_weights.size()) +
                      " entries for " + std::to_string(C) + " classes");
  }
  for (const auto& s : train) {
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= C) {
      throw DataError("training label " + std::to_string(s.label) + " outside the model's " +
                      std::to_string(C) + " classes");
    }
  }
  TrainLog log;
  if (config.epochs == 0) return log;

  auto params = net.parameter_ptrs();
  core::Adam<T> adam(params, core::AdamHyper{config.lr_initial, 0.9, 0.999, 1e-8});
  std::vector<std::size_t> order(train.size());
  std::vector<int> labels;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = config.lr_for_epoch(epoch);
    adam.set_lr(lr);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    core::Rng rng(core::derive_seed(config.seed, {kShuffleStream, epoch}));
    core::shuffle(order.begin(), order.end(), rng);

    double weighted = 0;
    std::vector<double> batch_losses;
    for (std::size_t start = 0, batch = 1; start < order.size(); start += config.batch_size, ++batch) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      labels.clear();
      for (std::size_t i : idx) labels.push_back(train[i].label);
      core::Tape<T> tape;
      const core::Var x = tape.constant(models::make_batch<T>(train, idx, stats));
      const core::Var loss = core::softmax_cross_entropy<T>(tape, net.forward(tape, x), labels,
                                                            config.loss_weights);
      const double value = static_cast<double>(tape.value(loss)[0]);
      if (!std::isfinite(value)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch));
      }
      adam.zero_grad();
      tape.backward(loss);
      adam.step();
      batch_losses.push_back(value);
      weighted += value * static_cast<double>(idx.size());
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.epochs.push_back({epoch, weighted / static_cast<double>(train.size()), lr, secs});
    log.batch_losses = std::move(batch_losses);
    if (on_epoch) on_epoch(log.epochs.back());
  }
  return log;
}

template TrainLog fit_network<float>(Network<float>&, const TrainConfig&,
                                     const std::vector<data::WindowSample>&,
                                     const std::optional<data::FeatureStats>&, const EpochCallback&);
template TrainLog fit_network<double>(Network<double>&, const TrainConfig&,
                                      const std::vector<data::WindowSample>&,
                                      const std::optional<data::FeatureStats>&,
                                      const EpochCallback&);

TrainResult train_model(ModelKind kind, const TrainConfig& config,
                        const std::vector<data::WindowSample>& train,
                        const std::vector<std::string>& class_names,
                        const std::optional<data::FeatureStats>& stats, models::NetConfig net,
                        const EpochCallback& on_epoch) {
  config.validate();
  if (train.empty()) throw ConfigError("training set is empty");
  if (class_names.size() < 2) throw ConfigError("at least two classes are required");
  TrainResult r;
  r.classifier.kind = kind;
  r.classifier.class_names = class_names;
  r.classifier.feature_stats = stats;
  if (kind == ModelKind::hmm) {
    hmm::FitOptions o;
    o.n_states = config.hmm_states;
    o.max_iters = config.hmm_max_iters;
    o.tol = config.hmm_tol;
    o.seed = core::derive_seed(config.seed, {kHmmStream});
    auto fit = hmm::fit_classifier(train, class_names.size(), o, stats);
    for (const auto& pc : fit.per_class) r.log.hmm_traces.push_back(pc.loglik_trace);
    r.classifier.impl = std::move(fit.classifier);
    return r;
  }
  net.kind = kind;
  net.num_classes = class_names.size();
  const std::uint64_t init_seed = core::derive_seed(config.seed, {kModelInitStream});
  if (config.precision == Precision::fast) {
    Network<float> model(net, init_seed);
    r.log = fit_network(model, config, train, stats, on_epoch);
    r.classifier.impl = std::move(model);
  } else {
    Network<double> model(net, init_seed);
    r.log = fit_network(model, config, train, stats, on_epoch);
    r.classifier.impl = std::move(model);
  }
  return r;
}

TrainResult train_on(ModelKind kind, TrainConfig config, const data::PreparedDataset& ds,
                     data::Resample mode, models::NetConfig net, const EpochCallback& on_epoch) {
  if (mode == data::Resample::wl) config.loss_weights = ds.loss_weights(mode);
  if (kind == ModelKind::hmm) config.loss_weights.clear();
  return train_model(kind, config, ds.training_set(mode), ds.split.class_names, ds.feature_stats,
                     std::move(net), on_epoch);
}

metrics::EvalReport evaluate(const Classifier& model, const std::vector<data::WindowSample>& test,
                             const std::vector<std::string>& class_names) {
  if (model.class_names != class_names) {
    std::string a, b;
    for (const auto& n : model.class_names) a += (a.empty() ? "" : ",") + n;
    for (const auto& n : class_names) b += (b.empty() ? "" : ",") + n;
    throw CompatibilityError("model classes [" + a + "] differ from dataset classes [" + b + "]");
  }
  if (test.empty()) throw DataError("test set is empty");
  const auto preds = model.predict(test);
  std::vector<int> labels;
  labels.reserve(test.size());
  for (const auto& s : test) labels.push_back(s.label);
  return metrics::report(preds, labels, class_names);
}

}  // namespace dbr::train
