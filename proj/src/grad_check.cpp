#include "fdvae/grad_check.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>

#include "fdvae/error.hpp"

namespace fdvae {

namespace {

double evaluate(const TensorProgram& f) {
  Tape tape(TapeOptions{.recording = false});
  return f(tape).item();
}

}  // namespace

GradCheckReport grad_check(const TensorProgram& f, const std::vector<NamedTensor>& params,
                           const GradCheckOptions& options) {
  const double first = evaluate(f);
  const double second = evaluate(f);
  if (std::bit_cast<std::uint64_t>(first) != std::bit_cast<std::uint64_t>(second)) {
    throw ContractError("grad_check: two forward passes disagree (" + std::to_string(first) + " vs " +
                        std::to_string(second) + "); freeze all noise first");
  }

  std::vector<Tensor> handles;
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.set_requires_grad(true);
    t.zero_grad();
    handles.push_back(t);
  }
  {
    Tape tape(options.analytic_tape);
    tape.backward(f(tape));
  }

  GradCheckReport report;
  report.tolerance = options.tolerance;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = handles[p];
    ParamGradCheck check{.name = params[p].name};
    auto values = t.mutable_data();
    const auto grads = t.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      const auto at = [&](double offset) {
        values[i] = saved + offset;
        return evaluate(f);
      };
      const double h = options.step;
      double numeric = 0.0;
      if (options.five_point) {
        numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
      } else {
        numeric = (at(h) - at(-h)) / (2.0 * h);
      }
      values[i] = saved;
      const double analytic = grads[i];
      const double abs_err = std::abs(analytic - numeric);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), options.abs_floor});
      const double rel = abs_err / denom;
      if (rel > check.max_rel_error) {
        check.max_rel_error = rel;
        check.worst_index = i;
      }
      check.max_abs_error = std::max(check.max_abs_error, abs_err);
    }
    report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
    report.params.push_back(std::move(check));
  }
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace fdvae
