#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dbr/core/tape.hpp"

namespace dbr::core {

struct GradCheckOptions {
  double step = 1e-5;
  // Tensors larger than this are checked on a random subset of this many elements.
  std::size_t max_elements_per_tensor = 200;
  // Denominator floor of the relative error. Components whose gradient is
  // below the floor are judged on absolute error scaled by 1/floor (the
  // central-difference truncation error alone is around 1e-10).
  double denominator_floor = 1e-4;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::vector<GradCheckEntry> per_parameter;
};

/// Relative error |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-4);

/// Builds the scalar loss on a fresh tape. Must not mutate anything but the tape.
using LossBuilder = std::function<Var(Tape<double>&)>;

/// Compares reverse-mode gradients of `loss` with central finite differences
/// for every element (or a seeded subsample) of every parameter.
GradCheckResult grad_check(const LossBuilder& loss, std::span<Parameter<double>* const> params,
                           const GradCheckOptions& options = {});

}  // namespace dbr::core
