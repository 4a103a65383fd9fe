#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "dbr/data/prepared.hpp"
#include "dbr/hmm/hmm.hpp"
#include "dbr/metrics/metrics.hpp"
#include "dbr/models/network.hpp"

namespace dbr::train {

/// verify: 64-bit arithmetic. fast: 32-bit arithmetic.
enum class Precision { verify, fast };

std::string_view to_string(Precision p);
Precision parse_precision(std::string_view s);

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 256;
  double lr_initial = 0.005;
  double lr_after = 0.001;
  std::size_t lr_switch_epoch = 40;  // last epoch (1-based) run at lr_initial
  std::uint64_t seed = 0;
  std::vector<double> loss_weights;  // per class; empty for the plain loss
  Precision precision = Precision::fast;
  // Per-class HMM baseline.
  std::size_t hmm_states = 7;
  std::size_t hmm_max_iters = 100;
  double hmm_tol = 1e-4;

  void validate() const;  // ConfigError
  double lr_for_epoch(std::size_t epoch) const {
    return epoch <= lr_switch_epoch ? lr_initial : lr_after;
  }
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double loss = 0;        // batch-size-weighted mean of the batch losses
  double lr = 0;
  double seconds = 0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::vector<double> batch_losses;  // of the final epoch, for inspection
  // Per-class Baum-Welch log-likelihood traces of an HMM run.
  std::vector<std::vector<double>> hmm_traces;

  /// `epoch<TAB>loss<TAB>lr<TAB>seconds` lines; the seconds column is left out
  /// when `with_seconds` is false so the text is reproducible.
  std::string to_tsv(bool with_seconds = true) const;
};

/// A trained classifier of any kind together with its class map and input
/// normalization.
struct Classifier {
  models::ModelKind kind = models::ModelKind::fusion;
  std::vector<std::string> class_names;
  std::optional<data::FeatureStats> feature_stats;
  std::variant<std::monostate, models::Network<float>, models::Network<double>, hmm::HmmClassifier>
      impl;

  std::size_t num_classes() const { return class_names.size(); }
  Precision precision() const;
  std::vector<int> predict(const std::vector<data::WindowSample>& samples) const;
  /// Logits (neural) or per-class log-likelihoods (HMM), as doubles [N×C].
  std::vector<double> scores(const std::vector<data::WindowSample>& samples) const;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch training with Adam and the step learning-rate schedule. Each
/// epoch visits the samples in an order drawn from (seed, epoch). The last
/// partial batch is kept. NumericalError on a non-finite loss.
template <typename T>
TrainLog fit_network(models::Network<T>& net, const TrainConfig& config,
                     const std::vector<data::WindowSample>& train,
                     const std::optional<data::FeatureStats>& stats = std::nullopt,
                     const EpochCallback& on_epoch = {});

struct TrainResult {
  Classifier classifier;
  TrainLog log;
};

/// Builds and trains a model of the given kind on already resampled training
/// samples. `net` supplies architecture settings; its kind and class count are
/// overwritten.
TrainResult train_model(models::ModelKind kind, const TrainConfig& config,
                        const std::vector<data::WindowSample>& train,
                        const std::vector<std::string>& class_names,
                        const std::optional<data::FeatureStats>& stats = std::nullopt,
                        models::NetConfig net = {}, const EpochCallback& on_epoch = {});

/// Trains on the training split of a prepared dataset, resampled as
/// configured (`wl` sets the loss weights from the raw training split). Only
/// `ds.split.train` is read.
TrainResult train_on(models::ModelKind kind, TrainConfig config, const data::PreparedDataset& ds,
                     data::Resample mode, models::NetConfig net = {},
                     const EpochCallback& on_epoch = {});

/// Predicts every sample and reports the metrics. CompatibilityError when the
/// class maps differ.
metrics::EvalReport evaluate(const Classifier& model, const std::vector<data::WindowSample>& test,
                             const std::vector<std::string>& class_names);

// ---- checkpoints --------------------------------------------------------

std::vector<std::uint8_t> encode_checkpoint(const Classifier& model);
/// LoadError on a bad magic, version, checksum, configuration or tensor shape.
Classifier decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const Classifier& model);
Classifier load_checkpoint(const std::filesystem::path& path);

}  // namespace dbr::train
