#include "dpot/tensor/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "dpot/error.hpp"

namespace dpot {

GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                           const GradCheckOptions& options) {
  for (auto& p : params) {
    if (p.is_complex()) throw ShapeError("grad_check: parameters must be real");
    p.zero_grad();
  }
  Tensor loss = loss_fn();
  if (loss.is_complex() || loss.numel() != 1) {
    throw ShapeError("grad_check: loss must be a real scalar, got " + shape_str(loss.shape()));
  }
  loss.backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

  GradCheckResult result;
  const double h = options.step;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto values = params[pi].mutable_data();
    const std::size_t n = values.size();
    const std::size_t m = options.max_entries_per_param == 0 ? n : std::min(n, options.max_entries_per_param);
    for (std::size_t k = 0; k < m; ++k) {
      const std::size_t i = k * n / m;
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss_fn().item();
      values[i] = saved - h;
      const double down = loss_fn().item();
      values[i] = saved;
      double numeric = (up - down) / (2.0 * h);
      const double a = analytic[pi][i];
      auto relative = [&](double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), options.floor}); };
      double rel = relative(numeric);
      if (options.refine_above > 0.0 && rel > options.refine_above) {
        const double r = options.refine_step;
        auto at = [&](double offset) {
          values[i] = saved + offset;
          return loss_fn().item();
        };
        const double f2 = at(2 * r), f1 = at(r), b1 = at(-r), b2 = at(-2 * r);
        values[i] = saved;
        numeric = (-f2 + 8.0 * f1 - 8.0 * b1 + b2) / (12.0 * r);
        rel = relative(numeric);
        ++result.refined;
      }
      ++result.entries;
      if (rel > result.max_relative_error || !std::isfinite(rel)) {
        result.max_relative_error = std::isfinite(rel) ? rel : INFINITY;
        result.worst_param = pi;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace dpot
