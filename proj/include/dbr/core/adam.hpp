#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dbr/core/tensor.hpp"

namespace dbr::core {

struct AdamHyper {
  double lr = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Moment estimates for one parameter tensor.
template <typename T>
struct AdamState {
  Tensor<T> m;
  Tensor<T> v;
  std::uint64_t step = 0;
};

/// Adam with bias correction. Owns one AdamState per parameter, in order.
template <typename T>
class Adam {
 public:
  Adam(std::span<Parameter<T>* const> params, AdamHyper hyper);

  void set_lr(double lr) { hyper_.lr = lr; }
  double lr() const { return hyper_.lr; }
  const AdamHyper& hyper() const { return hyper_; }
  const std::vector<AdamState<T>>& states() const { return states_; }

  void step();
  void zero_grad();

 private:
  std::vector<Parameter<T>*> params_;
  std::vector<AdamState<T>> states_;
  AdamHyper hyper_;
};

}  // namespace dbr::core
