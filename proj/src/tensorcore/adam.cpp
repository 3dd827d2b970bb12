#include "threatlens/adam.hpp"

#include <cmath>
#include <string>

#include "threatlens/errors.hpp"

namespace threatlens {

void adam_step(AdamState& state, std::span<Tensor> params) {
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!params[p].has_grad()) {
      throw GradientUnavailable("adam_step: parameter " + std::to_string(p) + " of shape " +
                                shape_string(params[p].shape()) + " has no gradient");
    }
  }
  if (state.first_moment.empty()) {
    for (const auto& param : params) {
      state.first_moment.emplace_back(param.size(), 0.0);
      state.second_moment.emplace_back(param.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: state tracks " + std::to_string(state.first_moment.size()) +
                     " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (state.first_moment[p].size() != params[p].size()) {
      throw ShapeError("adam_step: moment shape mismatch for parameter " + std::to_string(p));
    }
  }

  ++state.step;
  const auto& opt = state.options;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(opt.beta1, t);
  const double correction2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto values = params[p].values();
    auto grad = params[p].grad();
    auto& m = state.first_moment[p];
    auto& v = state.second_moment[p];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i];
      m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
      v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      values[i] -= opt.learning_rate * m_hat / (std::sqrt(v_hat) + opt.epsilon);
    }
    params[p].zero_grad();
  }
}

}  // namespace threatlens
