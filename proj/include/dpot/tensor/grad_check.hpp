#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "dpot/tensor/tensor.hpp"

namespace dpot {

struct GradCheckOptions {
  double step = 1e-6;
  /// Denominator floor: entries whose gradients are both below this are
  /// compared in absolute terms against it.
  double floor = 1e-8;
  /// If > 0, only this many evenly strided entries of each parameter are perturbed.
  std::size_t max_entries_per_param = 0;
  /// If > 0, entries whose relative error exceeds this are re-estimated with
  /// the fourth-order five-point stencil at `refine_step`.
  double refine_above = 0.0;
  double refine_step = 1e-3;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t entries = 0;
  std::size_t refined = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Central-difference check of reverse-mode gradients. `loss_fn` must rebuild
/// the graph from the current parameter values and return a real scalar.
GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                           const GradCheckOptions& options = {});

}  // namespace dpot
