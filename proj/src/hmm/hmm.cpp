#include "dbr/hmm/hmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "dbr/core/random.hpp"
#include "dbr/errors.hpp"

namespace dbr::hmm {

namespace {

constexpr std::uint64_t kInitStream = 0x686d6d696e6974ULL;
constexpr std::uint64_t kClassStream = 0x686d6d636c73ULL;
constexpr double kJitter = 0.05;
constexpr std::size_t kKmeansIters = 20;

std::size_t steps_of(const GaussianHmm& m, Sequence seq) {
  if (m.dim == 0 || seq.empty() || seq.size() % m.dim != 0) {
    throw DataError("observation sequence of " + std::to_string(seq.size()) +
                    " values does not split into steps of " + std::to_string(m.dim));
  }
  for (double v : seq) {
    if (!std::isfinite(v)) throw DataError("non-finite value in observation sequence");
  }
  return seq.size() / m.dim;
}

double log_sum_exp(const double* v, std::size_t n) {
  const double m = *std::max_element(v, v + n);
  if (m == -std::numeric_limits<double>::infinity()) return m;
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

void normalize(double* v, std::size_t n) {
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += v[i];
  for (std::size_t i = 0; i < n; ++i) v[i] /= s;
}

// Per-step emission terms exp(log b_i(o_t) - shift_t) with shift_t the
// maximum over states.
struct Emissions {
  std::vector<double> b;      // steps × n
  std::vector<double> shift;  // steps
};

Emissions emissions(const GaussianHmm& m, Sequence seq, std::size_t steps) {
  const std::size_t n = m.n_states;
  Emissions e{std::vector<double>(steps * n), std::vector<double>(steps)};
  for (std::size_t t = 0; t < steps; ++t) {
    double* row = &e.b[t * n];
    for (std::size_t i = 0; i < n; ++i) row[i] = m.log_emission(i, &seq[t * m.dim]);
    const double mx = *std::max_element(row, row + n);
    e.shift[t] = mx;
    for (std::size_t i = 0; i < n; ++i) row[i] = std::exp(row[i] - mx);
  }
  return e;
}

// Scaled forward pass. alpha rows sum to one; returns the log-likelihood.
double forward_scaled(const GaussianHmm& m, const Emissions& e, std::size_t steps,
                      std::vector<double>& alpha, std::vector<double>& scale) {
  const std::size_t n = m.n_states;
  alpha.assign(steps * n, 0.0);
  scale.assign(steps, 0.0);
  double ll = 0;
  for (std::size_t t = 0; t < steps; ++t) {
    double* a = &alpha[t * n];
    for (std::size_t j = 0; j < n; ++j) {
      double p = 0;
      if (t == 0) {
        p = m.initial[j];
      } else {
        const double* prev = &alpha[(t - 1) * n];
        for (std::size_t i = 0; i < n; ++i) p += prev[i] * m.transitions[i * n + j];
      }
      a[j] = p * e.b[t * n + j];
    }
    double c = 0;
    for (std::size_t j = 0; j < n; ++j) c += a[j];
    if (!(c > 0)) return -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) a[j] /= c;
    scale[t] = c;
    ll += std::log(c) + e.shift[t];
  }
  return ll;
}

// Accumulated sufficient statistics of one E-step.
struct Stats {
  std::vector<double> init, trans, gamma_sum, obs_sum, obs_sq;
  double loglik = 0;
};

void accumulate(const GaussianHmm& m, Sequence seq, Stats& st) {
  const std::size_t n = m.n_states, D = m.dim;
  const std::size_t steps = steps_of(m, seq);
  const Emissions e = emissions(m, seq, steps);
  std::vector<double> alpha, scale;
  const double ll = forward_scaled(m, e, steps, alpha, scale);
  if (!std::isfinite(ll)) throw NumericalError("Baum-Welch: sequence has zero likelihood");
  st.loglik += ll;

  std::vector<double> beta(steps * n, 1.0);
  for (std::size_t t = steps - 1; t-- > 0;) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < n; ++j) {
        s += m.transitions[i * n + j] * e.b[(t + 1) * n + j] * beta[(t + 1) * n + j];
      }
      beta[t * n + i] = s / scale[t + 1];
    }
  }
  std::vector<double> gamma(n), xi(n * n);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < n; ++i) gamma[i] = alpha[t * n + i] * beta[t * n + i];
    normalize(gamma.data(), n);
    const double* o = &seq[t * D];
    for (std::size_t i = 0; i < n; ++i) {
      if (t == 0) st.init[i] += gamma[i];
      st.gamma_sum[i] += gamma[i];
      for (std::size_t d = 0; d < D; ++d) {
        st.obs_sum[i * D + d] += gamma[i] * o[d];
        st.obs_sq[i * D + d] += gamma[i] * o[d] * o[d];
      }
    }
    if (t + 1 == steps) break;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        xi[i * n + j] = alpha[t * n + i] * m.transitions[i * n + j] * e.b[(t + 1) * n + j] *
                        beta[(t + 1) * n + j];
      }
    normalize(xi.data(), n * n);
    for (std::size_t k = 0; k < n * n; ++k) st.trans[k] += xi[k];
  }
}

Stats e_step(const GaussianHmm& m, const std::vector<std::vector<double>>& seqs) {
  const std::size_t n = m.n_states, D = m.dim;
  Stats st{std::vector<double>(n, 0.0), std::vector<double>(n * n, 0.0), std::vector<double>(n, 0.0),
           std::vector<double>(n * D, 0.0), std::vector<double>(n * D, 0.0), 0.0};
  for (const auto& s : seqs) accumulate(m, s, st);
  return st;
}

GaussianHmm m_step(const GaussianHmm& prev, const Stats& st, std::size_t num_seqs, double floor) {
  GaussianHmm m = prev;
  const std::size_t n = m.n_states, D = m.dim;
  for (std::size_t i = 0; i < n; ++i) m.initial[i] = st.init[i] / static_cast<double>(num_seqs);
  normalize(m.initial.data(), n);
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0;
    for (std::size_t j = 0; j < n; ++j) row += st.trans[i * n + j];
    if (row > 0) {
      for (std::size_t j = 0; j < n; ++j) m.transitions[i * n + j] = st.trans[i * n + j] / row;
    }
    const double g = st.gamma_sum[i];
    if (!(g > 0)) continue;
    for (std::size_t d = 0; d < D; ++d) {
      const double mu = st.obs_sum[i * D + d] / g;
      const double var = st.obs_sq[i * D + d] / g - mu * mu;
      m.means[i * D + d] = mu;
      m.variances[i * D + d] = std::max(var, floor);
    }
  }
  return m;
}

}  // namespace

double GaussianHmm::log_emission(std::size_t state, const double* obs) const {
  double s = 0;
  for (std::size_t d = 0; d < dim; ++d) {
    const double v = variances[state * dim + d];
    const double diff = obs[d] - means[state * dim + d];
    s += std::log(2.0 * std::numbers::pi * v) + diff * diff / v;
  }
  return -0.5 * s;
}

void GaussianHmm::validate() const {
  const std::size_t n = n_states;
  if (n == 0 || dim == 0 || initial.size() != n || transitions.size() != n * n ||
      means.size() != n * dim || variances.size() != n * dim) {
    throw StateError("HMM parameter sizes do not match n_states/dim");
  }
  auto near_one = [](double s) { return std::abs(s - 1.0) <= 1e-9; };
  double s = 0;
  for (double p : initial) {
    if (!(p >= 0)) throw StateError("HMM initial probability is negative");
    s += p;
  }
  if (!near_one(s)) throw StateError("HMM initial probabilities do not sum to one");
  for (std::size_t i = 0; i < n; ++i) {
    double r = 0;
    for (std::size_t j = 0; j < n; ++j) r += transitions[i * n + j];
    if (!near_one(r)) throw StateError("HMM transition row " + std::to_string(i) + " does not sum to one");
  }
  for (double v : variances) {
    if (!(v > 0) || !std::isfinite(v)) throw StateError("HMM variance is not positive");
  }
}

double forward_loglik(const GaussianHmm& model, Sequence seq) {
  const std::size_t steps = steps_of(model, seq);
  const Emissions e = emissions(model, seq, steps);
  std::vector<double> alpha, scale;
  return forward_scaled(model, e, steps, alpha, scale);
}

double forward_loglik_log(const GaussianHmm& model, Sequence seq) {
  const std::size_t steps = steps_of(model, seq);
  const std::size_t n = model.n_states;
  std::vector<double> la(n), next(n), terms(n);
  for (std::size_t j = 0; j < n; ++j) {
    la[j] = std::log(model.initial[j]) + model.log_emission(j, &seq[0]);
  }
  for (std::size_t t = 1; t < steps; ++t) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < n; ++i) terms[i] = la[i] + std::log(model.transition(i, j));
      next[j] = log_sum_exp(terms.data(), n) + model.log_emission(j, &seq[t * model.dim]);
    }
    la.swap(next);
  }
  return log_sum_exp(la.data(), n);
}

GaussianHmm initial_model(const std::vector<std::vector<double>>& sequences, std::size_t dim,
                          const FitOptions& options) {
  if (sequences.empty()) throw ConfigError("Baum-Welch needs at least one sequence");
  if (options.n_states == 0) throw ConfigError("Baum-Welch needs at least one state");
  const std::size_t n = options.n_states;
  std::vector<const double*> points;
  for (const auto& s : sequences) {
    if (dim == 0 || s.empty() || s.size() % dim != 0) {
      throw DataError("observation sequence length is not a multiple of " + std::to_string(dim));
    }
    for (double v : s)
      if (!std::isfinite(v)) throw DataError("non-finite value in observation sequence");
    for (std::size_t t = 0; t < s.size(); t += dim) points.push_back(&s[t]);
  }
  core::Rng rng(core::derive_seed(options.seed, {kInitStream}));

  GaussianHmm m;
  m.n_states = n;
  m.dim = dim;
  m.means.assign(n * dim, 0.0);
  m.variances.assign(n * dim, 0.0);

  // Pooled statistics.
  std::vector<double> mean(dim, 0.0), var(dim, 0.0);
  for (const double* p : points)
    for (std::size_t d = 0; d < dim; ++d) mean[d] += p[d];
  for (auto& v : mean) v /= static_cast<double>(points.size());
  for (const double* p : points)
    for (std::size_t d = 0; d < dim; ++d) var[d] += (p[d] - mean[d]) * (p[d] - mean[d]);
  for (auto& v : var) v = std::max(v / static_cast<double>(points.size()), options.variance_floor);

  // k-means: centers from distinct random points, then Lloyd iterations.
  std::vector<std::size_t> order(points.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  core::shuffle(order.begin(), order.end(), rng);
  for (std::size_t k = 0; k < n; ++k) {
    const double* p = points[order[k % order.size()]];
    std::copy_n(p, dim, &m.means[k * dim]);
  }
  auto scaled_dist = [&](const double* p, std::size_t k) {
    double s = 0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = p[d] - m.means[k * dim + d];
      s += diff * diff / var[d];
    }
    return s;
  };
  std::vector<std::size_t> assign(points.size(), 0);
  for (std::size_t it = 0; it < kKmeansIters; ++it) {
    for (std::size_t i = 0; i < points.size(); ++i) {
      std::size_t best = 0;
      double bd = scaled_dist(points[i], 0);
      for (std::size_t k = 1; k < n; ++k) {
        const double dd = scaled_dist(points[i], k);
        if (dd < bd) {
          bd = dd;
          best = k;
        }
      }
      assign[i] = best;
    }
    std::vector<double> sum(n * dim, 0.0);
    std::vector<std::size_t> count(n, 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      ++count[assign[i]];
      for (std::size_t d = 0; d < dim; ++d) sum[assign[i] * dim + d] += points[i][d];
    }
    for (std::size_t k = 0; k < n; ++k) {
      if (count[k] == 0) continue;  // empty cluster keeps its center
      for (std::size_t d = 0; d < dim; ++d) m.means[k * dim + d] = sum[k * dim + d] / double(count[k]);
    }
  }
  for (std::size_t k = 0; k < n; ++k) std::copy(var.begin(), var.end(), &m.variances[k * dim]);

  m.initial.assign(n, 0.0);
  for (auto& p : m.initial) p = 1.0 + core::uniform(rng, 0.0, kJitter);
  normalize(m.initial.data(), n);
  m.transitions.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) m.transitions[i * n + j] = 1.0 + core::uniform(rng, 0.0, kJitter);
    normalize(&m.transitions[i * n], n);
  }
  return m;
}

FitResult baum_welch_from(GaussianHmm start, const std::vector<std::vector<double>>& sequences,
                          const FitOptions& options) {
  if (sequences.empty()) throw ConfigError("Baum-Welch needs at least one sequence");
  start.validate();
  FitResult r;
  r.model = std::move(start);
  for (;;) {
    const Stats st = e_step(r.model, sequences);
    r.loglik_trace.push_back(st.loglik);
    const std::size_t k = r.loglik_trace.size();
    if (k > 1 && st.loglik - r.loglik_trace[k - 2] < options.tol) {
      r.converged = true;
      break;
    }
    if (r.iterations == options.max_iters) break;
    r.model = m_step(r.model, st, sequences.size(), options.variance_floor);
    ++r.iterations;
  }
  return r;
}

FitResult baum_welch_fit(const std::vector<std::vector<double>>& sequences, std::size_t dim,
                         const FitOptions& options) {
  return baum_welch_from(initial_model(sequences, dim, options), sequences, options);
}

std::vector<double> to_sequence(const data::WindowSample& s,
                                const std::optional<data::FeatureStats>& stats) {
  const data::WindowSample& src = s;
  std::vector<double> out(src.states.begin(), src.states.end());
  if (stats) {
    for (std::size_t j = 0; j < out.size(); ++j) {
      const std::size_t f = j % data::kFeatureCount;
      out[j] = (out[j] - stats->mean[f]) / stats->stddev[f];
    }
  }
  return out;
}

void HmmClassifier::set_model(std::size_t c, GaussianHmm m) {
  m.validate();
  models_.at(c) = std::move(m);
}

std::vector<double> HmmClassifier::class_logliks(Sequence seq) const {
  if (models_.empty()) throw StateError("HMM classifier has no classes");
  std::vector<double> out(models_.size());
  for (std::size_t c = 0; c < models_.size(); ++c) {
    if (!models_[c]) throw StateError("HMM for class " + std::to_string(c) + " is not trained");
    out[c] = forward_loglik(*models_[c], seq);
  }
  return out;
}

int HmmClassifier::classify(Sequence seq) const {
  const auto ll = class_logliks(seq);
  std::size_t best = 0;
  for (std::size_t c = 1; c < ll.size(); ++c) {
    if (ll[c] > ll[best]) best = c;
  }
  return static_cast<int>(best);
}

std::vector<int> HmmClassifier::predict(const std::vector<data::WindowSample>& samples,
                                        const std::optional<data::FeatureStats>& stats) const {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(classify(to_sequence(s, stats)));
  return out;
}

ClassifierFit fit_classifier(const std::vector<data::WindowSample>& train, std::size_t num_classes,
                             const FitOptions& options,
                             const std::optional<data::FeatureStats>& stats) {
  std::vector<std::vector<std::vector<double>>> by_class(num_classes);
  for (const auto& s : train) {
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= num_classes) {
      throw DataError("training label " + std::to_string(s.label) + " outside class map");
    }
    by_class[static_cast<std::size_t>(s.label)].push_back(to_sequence(s, stats));
  }
  ClassifierFit out{HmmClassifier(num_classes), {}};
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (by_class[c].empty()) {
      throw ConfigError("HMM: class " + std::to_string(c) + " has no training samples");
    }
    FitOptions o = options;
    o.seed = core::derive_seed(options.seed, {kClassStream, c});
    auto r = baum_welch_fit(by_class[c], data::kFeatureCount, o);
    out.classifier.set_model(c, r.model);
    out.per_class.push_back(std::move(r));
  }
  return out;
}

}  // namespace dbr::hmm
