#include "dbr/core/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dbr/core/random.hpp"

namespace dbr::core {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double eval_loss(const LossBuilder& loss) {
  Tape<double> tape;
  Var v = loss(tape);
  return tape.value(v)[0];
}

}  // namespace

GradCheckResult grad_check(const LossBuilder& loss, std::span<Parameter<double>* const> params,
                           const GradCheckOptions& options) {
  for (Parameter<double>* p : params) p->zero_grad();
  {
    Tape<double> tape;
    Var v = loss(tape);
    tape.backward(v);
  }

  Rng rng(derive_seed(options.seed, {0x67726164ULL}));
  GradCheckResult result;
  for (Parameter<double>* p : params) {
    GradCheckEntry entry;
    entry.name = p->name;
    std::vector<std::size_t> idx(p->value.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (idx.size() > options.max_elements_per_tensor) {
      shuffle(idx.begin(), idx.end(), rng);
      idx.resize(options.max_elements_per_tensor);
      std::sort(idx.begin(), idx.end());
    }
    for (std::size_t i : idx) {
      const double orig = p->value[i];
      p->value[i] = orig + options.step;
      const double up = eval_loss(loss);
      p->value[i] = orig - options.step;
      const double down = eval_loss(loss);
      p->value[i] = orig;
      const double numeric = (up - down) / (2.0 * options.step);
      const double analytic = p->grad[i];
      entry.max_rel_error =
          std::max(entry.max_rel_error, relative_error(analytic, numeric, options.denominator_floor));
      entry.max_abs_error = std::max(entry.max_abs_error, std::abs(analytic - numeric));
      ++entry.checked;
    }
    result.max_rel_error = std::max(result.max_rel_error, entry.max_rel_error);
    result.checked += entry.checked;
    result.per_parameter.push_back(std::move(entry));
  }
  return result;
}

}  // namespace dbr::core
