#include "dbr/core/adam.hpp"

#include <cmath>

namespace dbr::core {

template <typename T>
Adam<T>::Adam(std::span<Parameter<T>* const> params, AdamHyper hyper)
    : params_(params.begin(), params.end()), hyper_(hyper) {
  states_.reserve(params_.size());
  for (Parameter<T>* p : params_) {
    states_.push_back({Tensor<T>(p->value.shape()), Tensor<T>(p->value.shape()), 0});
  }
}

template <typename T>
void Adam<T>::step() {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter<T>& p = *params_[k];
    AdamState<T>& s = states_[k];
    if (p.grad.shape() != p.value.shape()) {
      throw DimensionError("adam: gradient shape " + shape_to_string(p.grad.shape()) +
                           " differs from parameter " + p.name);
    }
    ++s.step;
    const double b1 = hyper_.beta1, b2 = hyper_.beta2;
    const double corr1 = 1.0 - std::pow(b1, static_cast<double>(s.step));
    const double corr2 = 1.0 - std::pow(b2, static_cast<double>(s.step));
    const double step_size = hyper_.lr / corr1;
    const double sqrt_corr2 = std::sqrt(corr2);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const T g = p.grad[i];
      s.m[i] = static_cast<T>(b1 * s.m[i] + (1.0 - b1) * g);
      s.v[i] = static_cast<T>(b2 * s.v[i] + (1.0 - b2) * g * g);
      const double denom = std::sqrt(static_cast<double>(s.v[i])) / sqrt_corr2 + hyper_.epsilon;
      p.value[i] = static_cast<T>(p.value[i] - step_size * s.m[i] / denom);
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (Parameter<T>* p : params_) p->zero_grad();
}

template class Adam<float>;
template class Adam<double>;

}  // namespace dbr::core
