#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dbr/data/pipeline.hpp"

namespace dbr::hmm {

/// Hidden Markov model with diagonal-covariance Gaussian emissions.
/// Matrices are row-major: transitions[i * n + j] = P(j | i),
/// means/variances[i * dim + d].
struct GaussianHmm {
  std::size_t n_states = 0;
  std::size_t dim = 0;
  std::vector<double> initial;
  std::vector<double> transitions;
  std::vector<double> means;
  std::vector<double> variances;

  double transition(std::size_t i, std::size_t j) const { return transitions[i * n_states + j]; }
  double log_emission(std::size_t state, const double* obs) const;

  // StateError if sizes disagree, probabilities do not sum to one, or a
  // variance is not positive.
  void validate() const;

  friend bool operator==(const GaussianHmm&, const GaussianHmm&) = default;
};

/// Observation sequence stored as steps × dim, row-major.
using Sequence = std::span<const double>;

/// log p(sequence) with per-step scaling (emission log-densities are shifted by
/// their per-step maximum before exponentiation, so nothing underflows).
/// DataError on non-finite observations or a length not divisible by dim.
double forward_loglik(const GaussianHmm& model, Sequence seq);

/// Same quantity through log-sum-exp recursions.
double forward_loglik_log(const GaussianHmm& model, Sequence seq);

struct FitOptions {
  std::size_t n_states = 7;
  std::size_t max_iters = 100;
  double tol = 1e-4;  // absolute improvement of the total log-likelihood
  double variance_floor = 1e-6;
  std::uint64_t seed = 0;
};

struct FitResult {
  GaussianHmm model;
  // Total training log-likelihood of the initial model and after each update;
  // the last entry belongs to `model`.
  std::vector<double> loglik_trace;
  std::size_t iterations = 0;  // M-steps performed
  bool converged = false;
};

/// Initial model: k-means on the pooled observations (seeded), shared pooled
/// variances, uniform initial and transition probabilities with seeded jitter.
GaussianHmm initial_model(const std::vector<std::vector<double>>& sequences, std::size_t dim,
                          const FitOptions& options);

/// Baum-Welch over multiple sequences. Variances are floored in the M-step; a
/// state that receives no responsibility keeps its previous parameters.
FitResult baum_welch_fit(const std::vector<std::vector<double>>& sequences, std::size_t dim,
                         const FitOptions& options = {});

/// Runs Baum-Welch from a given starting model.
FitResult baum_welch_from(GaussianHmm start, const std::vector<std::vector<double>>& sequences,
                          const FitOptions& options);

/// The 5×4 window of a sample as an observation sequence.
std::vector<double> to_sequence(const data::WindowSample& s,
                                const std::optional<data::FeatureStats>& stats = std::nullopt);

/// One HMM per class; classification by maximum likelihood, ties to the
/// lowest class index.
class HmmClassifier {
 public:
  HmmClassifier() = default;
  explicit HmmClassifier(std::size_t num_classes) : models_(num_classes) {}

  std::size_t num_classes() const { return models_.size(); }
  const std::vector<std::optional<GaussianHmm>>& models() const { return models_; }
  void set_model(std::size_t c, GaussianHmm m);

  /// Log-likelihood under each class model. StateError if one is untrained.
  std::vector<double> class_logliks(Sequence seq) const;
  int classify(Sequence seq) const;
  std::vector<int> predict(const std::vector<data::WindowSample>& samples,
                           const std::optional<data::FeatureStats>& stats = std::nullopt) const;

  friend bool operator==(const HmmClassifier&, const HmmClassifier&) = default;

 private:
  std::vector<std::optional<GaussianHmm>> models_;
};

struct ClassifierFit {
  HmmClassifier classifier;
  std::vector<FitResult> per_class;
};

/// Fits one HMM per class on that class's windows. The seed of class c is
/// derived from (options.seed, c). ConfigError if a class has no samples.
ClassifierFit fit_classifier(const std::vector<data::WindowSample>& train, std::size_t num_classes,
                             const FitOptions& options,
                             const std::optional<data::FeatureStats>& stats = std::nullopt);

}  // namespace dbr::hmm
