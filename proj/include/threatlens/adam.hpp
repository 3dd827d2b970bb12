#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "threatlens/tensor.hpp"

namespace threatlens {

struct AdamOptions {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Moment accumulators are created on the first step and matched to the
// parameter list by position afterwards.
struct AdamState {
  AdamOptions options;
  std::int64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

// Bias-corrected Adam update of every parameter, then zeroes the gradients.
// A parameter without a gradient buffer throws GradientUnavailable before any
// parameter is modified.
void adam_step(AdamState& state, std::span<Tensor> params);

}  // namespace threatlens
