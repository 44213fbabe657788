#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gghm/numgrad/parameters.hpp"

namespace gghm::numgrad {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Compares reverse-mode gradients of a scalar function with central finite
/// differences. The error for one parameter tensor is
///   max_i |g_i - fd_i| / max(max_i |fd_i|, max_i |g_i|, floor),
/// i.e. the infinity-norm error relative to that tensor's gradient scale; the
/// report keeps the worst tensor. The floor keeps tensors whose true gradient
/// is zero (a bias feeding a batch norm, say) from turning rounding noise into
/// a large ratio. Non-finite intermediates abort with a
/// NumericError naming the op that produced them.
inline GradCheckReport grad_check(const std::function<Tensor<double>()>& f, std::vector<Parameter<double>> params,
                                  double step = 1e-3, double floor = 1e-6) {
  FiniteCheckGuard finite;
  for (auto& p : params) p.tensor.zero_grad();
  {
    Tensor<double> loss = f();
    loss.backward();
  }
  GradCheckReport report;
  for (auto& p : params) {
    const std::size_t n = p.tensor.numel();
    std::vector<double> analytic(n, 0.0);
    if (p.tensor.has_grad()) std::copy(p.tensor.grad().begin(), p.tensor.grad().end(), analytic.begin());
    std::vector<double> numeric(n);
    auto values = p.tensor.mutable_data();
    {
      NoGradGuard no_grad;
      for (std::size_t i = 0; i < n; ++i) {
        const double saved = values[i];
        values[i] = saved + step;
        const double up = f().item();
        values[i] = saved - step;
        const double down = f().item();
        values[i] = saved;
        numeric[i] = (up - down) / (2.0 * step);
      }
    }
    double scale = floor, worst = 0.0;
    std::size_t worst_i = 0;
    for (std::size_t i = 0; i < n; ++i) scale = std::max({scale, std::abs(numeric[i]), std::abs(analytic[i])});
    for (std::size_t i = 0; i < n; ++i) {
      const double e = std::abs(analytic[i] - numeric[i]) / scale;
      if (e > worst) {
        worst = e;
        worst_i = i;
      }
    }
    report.checked += n;
    if (worst >= report.max_relative_error) {
      report.max_relative_error = worst;
      report.worst_parameter = p.name;
      report.worst_index = worst_i;
    }
  }
  return report;
}

inline GradCheckReport grad_check(const std::function<Tensor<double>()>& f, const ParameterSet<double>& params,
                                  double step = 1e-3, double floor = 1e-6) {
  return grad_check(f, std::vector<Parameter<double>>(params.begin(), params.end()), step, floor);
}

}  // namespace gghm::numgrad
