#pragma once

#include <functional>
#include <span>

#include "threatlens/tensor.hpp"

namespace threatlens {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares the tape gradient of a scalar loss with central differences,
// coordinate by coordinate, over every element of `params`. The error per
// coordinate is |analytic - numeric| / max(1, |numeric|).
//
// `loss` must be a pure function of the parameter values: anything random
// inside it (dropout) has to be reseeded on every call.
GradCheckResult grad_check(const std::function<Tensor(Tape&)>& loss, std::span<Tensor> params,
                           double step = 1e-5);

}  // namespace threatlens
