#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "dbr/core/tape.hpp"
#include "dbr/data/pipeline.hpp"

namespace dbr::models {

/// fusion: Bi-LSTM + MSCNN. bilstm: the fusion model without its MSCNN branch.
/// lstm / conv1d: neural baselines. hmm: per-class Gaussian HMMs (see hmm module).
enum class ModelKind { fusion, bilstm, lstm, conv1d, hmm };

std::string_view to_string(ModelKind k);
ModelKind parse_model_kind(std::string_view s);  // ConfigError on unknown names

struct NetConfig {
  ModelKind kind = ModelKind::fusion;
  std::size_t num_classes = 2;
  std::size_t input_channels = data::kFeatureCount;
  std::size_t seq_len = data::kWindowSize;
  std::size_t lstm_layers = 2;
  std::size_t lstm_hidden = 64;
  std::vector<std::size_t> kernel_sizes{2, 3, 4};
  std::size_t channels_per_kernel = 32;
  std::size_t fc1_out = 32;  // width of the MSCNN bottleneck
  std::vector<std::size_t> conv1d_channels{32, 32, 64, 64};
  std::size_t conv1d_kernel = 2;

  // ConfigError if the configuration cannot be built.
  void validate() const;
  nlohmann::json to_json() const;
  static NetConfig from_json(const nlohmann::json& j);

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

/// Parameter count computed from the configuration alone.
///
/// LSTM layer with input n, hidden H: 4H(n + H) + 4H per direction.
/// Fusion: 2 Bi-LSTM layers + sum_k (32*4*k + 32) + (96*32 + 32) + (160*C + C).
std::size_t expected_parameter_count(const NetConfig& config);

/// One of the neural classifiers. Parameter storage never reallocates after
/// construction, so pointers handed to the optimizer stay valid.
template <typename T>
class Network {
 public:
  /// Xavier-uniform dense and conv weights, U(-1/sqrt(H), 1/sqrt(H)) LSTM
  /// weights, zero biases except forget-gate biases of 1. Initial values are
  /// drawn in double, so float and double networks from one seed agree.
  Network(const NetConfig& config, std::uint64_t seed);

  /// Every parameter zero.
  static Network zeros(const NetConfig& config);

  const NetConfig& config() const { return config_; }
  std::vector<core::Parameter<T>>& parameters() { return params_; }
  const std::vector<core::Parameter<T>>& parameters() const { return params_; }
  std::vector<core::Parameter<T>*> parameter_ptrs();
  std::size_t parameter_count() const;
  core::Parameter<T>& parameter(std::string_view name);

  /// Logits [B×C] for a batch [B×seq_len×channels]. With `trainable` the
  /// parameters enter the tape as leaves that receive gradients; otherwise
  /// they are recorded as constants.
  core::Var forward(core::Tape<T>& tape, core::Var batch, bool trainable = true);

  /// Branch features of the fusion model, exposed for testing.
  core::Var bilstm_branch(core::Tape<T>& tape, core::Var batch, bool trainable = true);
  core::Var mscnn_branch(core::Tape<T>& tape, core::Var batch, bool trainable = true);

  /// Inference without gradients. Safe to call concurrently.
  core::Tensor<T> logits(const core::Tensor<T>& batch) const;
  std::vector<int> predict(const core::Tensor<T>& batch) const;

  template <typename U>
  Network<U> cast() const;

 private:
  template <typename U>
  friend class Network;

  explicit Network(const NetConfig& config);
  void add(std::string name, core::Shape shape);
  void check_input(const core::Tensor<T>& batch) const;

  NetConfig config_;
  std::vector<core::Parameter<T>> params_;
};

/// [B×5×4] batch of the given samples (all samples when `indices` is empty),
/// standardized when statistics are given.
template <typename T>
core::Tensor<T> make_batch(const std::vector<data::WindowSample>& samples,
                           std::span<const std::size_t> indices = {},
                           const std::optional<data::FeatureStats>& stats = std::nullopt);

}  // namespace dbr::models
