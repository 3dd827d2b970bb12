#include "threatlens/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace threatlens {

GradCheckResult grad_check(const std::function<Tensor(Tape&)>& loss, std::span<Tensor> params,
                           double step) {
  std::vector<bool> had_grad;
  for (auto& param : params) {
    had_grad.push_back(param.requires_grad());
    param.set_requires_grad(true);
    param.zero_grad();
  }

  {
    Tape tape;
    Tensor root = loss(tape);
    tape.backward(root);
  }
  std::vector<std::vector<double>> analytic;
  for (auto& param : params) {
    auto g = param.grad();
    analytic.emplace_back(g.begin(), g.end());
  }

  auto evaluate = [&]() {
    Tape tape(false);
    return loss(tape).item();
  };

  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto values = params[p].values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = evaluate();
      values[i] = saved - step;
      const double down = evaluate();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double error = std::abs(analytic[p][i] - numeric) / std::max(1.0, std::abs(numeric));
      if (error > result.max_relative_error) {
        result = {error, p, i, analytic[p][i], numeric};
      }
    }
  }

  for (std::size_t p = 0; p < params.size(); ++p) {
    params[p].zero_grad();
    params[p].set_requires_grad(had_grad[p]);
  }
  return result;
}

}  // namespace threatlens
