#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fdvae/tensor.hpp"

namespace fdvae {

/// Builds a scalar loss on the given tape. Must be deterministic: any noise
/// it needs has to be frozen before the check starts.
using TensorProgram = std::function<Tensor(Tape&)>;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct ParamGradCheck {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
};

struct GradCheckReport {
  std::vector<ParamGradCheck> params;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct GradCheckOptions {
  double step = 1e-3;
  /// Fourth-order stencil over f(x±h), f(x±2h); with the two-point one use
  /// a step near 1e-5.
  bool five_point = true;
  double tolerance = 1e-4;
  /// Relative error is |a − n| / max(|a|, |n|, abs_floor).
  double abs_floor = 1e-6;
  /// Options of the tape used for the analytic pass (fault injection lives here).
  TapeOptions analytic_tape{};
};

/// Compares the tape's gradient of `f` against central finite differences
/// for every element of every parameter. Parameter values are restored on
/// return; parameter grads are left holding the analytic gradient.
GradCheckReport grad_check(const TensorProgram& f, const std::vector<NamedTensor>& params,
                           const GradCheckOptions& options = {});

}  // namespace fdvae
