#include "rnnmhe/lbfgs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "rnnmhe/error.hpp"
#include "rnnmhe/kernels.hpp"

namespace rnnmhe {

std::string_view to_string(LbfgsStatus s) noexcept {
  switch (s) {
    case LbfgsStatus::GradientTolerance: return "gradient_tolerance";
    case LbfgsStatus::StepTolerance: return "step_tolerance";
    case LbfgsStatus::MaxIterations: return "max_iterations";
    case LbfgsStatus::LineSearchFailed: return "line_search_failed";
  }
  return "unknown";
}

namespace {

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

struct Pair {
  std::vector<double> s, y;
  double rho;
};

}  // namespace

LbfgsResult lbfgs_minimize(const Objective& f, std::vector<double> x0, const LbfgsOptions& o) {
  const std::size_t n = x0.size();
  const auto& K = kernels::active();
  LbfgsResult r;
  r.x = std::move(x0);
  r.grad.assign(n, 0.0);

  const auto eval = [&](std::span<const double> x, std::span<double> g) {
    ++r.evaluations;
    try {
      return f(x, g);
    } catch (const NumericalError&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  };

  r.f = eval(r.x, r.grad);
  if (!std::isfinite(r.f)) throw NumericalError("lbfgs: objective not finite at the start point");
  if (n == 0 || max_abs(r.grad) <= o.grad_tol) {
    r.status = LbfgsStatus::GradientTolerance;
    return r;
  }

  std::deque<Pair> mem;
  std::vector<double> d(n), xt(n), gt(n), alpha(o.memory);

  for (r.iterations = 0; r.iterations < o.max_iterations;) {
    // two-loop recursion: d = -H g
    for (std::size_t i = 0; i < n; ++i) d[i] = -r.grad[i];
    for (std::size_t i = mem.size(); i-- > 0;) {
      alpha[i] = mem[i].rho * K.dot(n, mem[i].s.data(), d.data());
      K.axpy(n, -alpha[i], mem[i].y.data(), d.data());
    }
    if (!mem.empty()) {
      const auto& last = mem.back();
      const double gamma = 1.0 / (last.rho * K.dot(n, last.y.data(), last.y.data()));
      for (double& v : d) v *= gamma;
    } else {
      // first step: unit length in the steepest direction at most
      const double gn = std::sqrt(K.dot(n, r.grad.data(), r.grad.data()));
      const double scale = std::min(1.0, 1.0 / gn);
      for (double& v : d) v *= scale;
    }
    for (std::size_t i = 0; i < mem.size(); ++i) {
      const double beta = mem[i].rho * K.dot(n, mem[i].y.data(), d.data());
      K.axpy(n, alpha[i] - beta, mem[i].s.data(), d.data());
    }

    double slope = K.dot(n, r.grad.data(), d.data());
    if (!(slope < 0.0)) {
      // lost descent: restart from steepest descent
      mem.clear();
      const double gn = std::sqrt(K.dot(n, r.grad.data(), r.grad.data()));
      const double scale = std::min(1.0, 1.0 / gn);
      for (std::size_t i = 0; i < n; ++i) d[i] = -r.grad[i] * scale;
      slope = K.dot(n, r.grad.data(), d.data());
    }

    double step = 1.0;
    double ft = 0.0;
    bool accepted = false;
    for (std::size_t bt = 0; bt <= o.max_backtracks; ++bt) {
      for (std::size_t i = 0; i < n; ++i) xt[i] = r.x[i] + step * d[i];
      ft = eval(xt, gt);
      if (!std::isfinite(ft)) {
        ++r.rejected_nonfinite;
      } else if (ft <= r.f + o.armijo * step * slope && ft <= r.f) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      r.status = LbfgsStatus::LineSearchFailed;
      return r;
    }
    ++r.iterations;

    Pair p{std::vector<double>(n), std::vector<double>(n), 0.0};
    for (std::size_t i = 0; i < n; ++i) {
      p.s[i] = xt[i] - r.x[i];
      p.y[i] = gt[i] - r.grad[i];
    }
    const double sy = K.dot(n, p.s.data(), p.y.data());
    const double step_size = max_abs(p.s);
    r.x.swap(xt);
    r.grad.swap(gt);
    r.f = ft;

    if (max_abs(r.grad) <= o.grad_tol) {
      r.status = LbfgsStatus::GradientTolerance;
      return r;
    }
    if (step_size <= o.step_tol * (1.0 + max_abs(r.x))) {
      r.status = LbfgsStatus::StepTolerance;
      return r;
    }
    // curvature condition; skip the pair otherwise
    if (sy > 1e-12 * std::sqrt(K.dot(n, p.y.data(), p.y.data()) * K.dot(n, p.s.data(), p.s.data()))) {
      p.rho = 1.0 / sy;
      mem.push_back(std::move(p));
      if (mem.size() > o.memory) mem.pop_front();
    }
  }
  r.status = LbfgsStatus::MaxIterations;
  return r;
}

}  // namespace rnnmhe
