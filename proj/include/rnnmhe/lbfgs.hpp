#pragma once

// Limited-memory BFGS with Armijo backtracking. Only descent steps are ever
// accepted, so the returned point never has a higher objective than x0.

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

namespace rnnmhe {

struct LbfgsOptions {
  std::size_t memory = 10;
  std::size_t max_iterations = 100;
  double grad_tol = 1e-8;   ///< stop when max |g_i| <= grad_tol
  double step_tol = 1e-12;  ///< stop when max |dx_i| <= step_tol (1 + max |x_i|)
  double armijo = 1e-4;
  std::size_t max_backtracks = 40;
};

enum class LbfgsStatus { GradientTolerance, StepTolerance, MaxIterations, LineSearchFailed };

std::string_view to_string(LbfgsStatus s) noexcept;

struct LbfgsResult {
  std::vector<double> x;
  double f = 0.0;
  std::vector<double> grad;
  std::size_t iterations = 0;
  std::size_t evaluations = 0;
  std::size_t rejected_nonfinite = 0;  ///< line-search trials with a non-finite value
  LbfgsStatus status = LbfgsStatus::MaxIterations;
};

/// Returns f(x) and writes its gradient. May throw NumericalError or return a
/// non-finite value; both reject the trial point.
using Objective = std::function<double(std::span<const double> x, std::span<double> grad)>;

/// Throws NumericalError if the objective is not finite at x0.
LbfgsResult lbfgs_minimize(const Objective& f, std::vector<double> x0, const LbfgsOptions& options);

}  // namespace rnnmhe
