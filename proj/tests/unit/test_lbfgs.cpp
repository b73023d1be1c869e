#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>

#include "rnnmhe/error.hpp"
#include "rnnmhe/lbfgs.hpp"
#include "rnnmhe/random.hpp"

using namespace rnnmhe;

namespace {

double rosenbrock(std::span<const double> x, std::span<double> g) {
  double f = 0.0;
  std::fill(g.begin(), g.end(), 0.0);
  for (std::size_t i = 0; i + 1 < x.size(); ++i) {
    const double a = x[i + 1] - x[i] * x[i], b = 1.0 - x[i];
    f += 100.0 * a * a + b * b;
    g[i] += -400.0 * a * x[i] - 2.0 * b;
    g[i + 1] += 200.0 * a;
  }
  return f;
}

}  // namespace

TEST_CASE("quadratic with a known minimizer") {
  Rng rng(5);
  const std::size_t n = 20;
  std::vector<double> d(n), c(n);
  for (std::size_t i = 0; i < n; ++i) {
    d[i] = uniform(rng, 0.1, 10.0);
    c[i] = uniform(rng, -3.0, 3.0);
  }
  const Objective f = [&](std::span<const double> x, std::span<double> g) {
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      v += 0.5 * d[i] * (x[i] - c[i]) * (x[i] - c[i]);
      g[i] = d[i] * (x[i] - c[i]);
    }
    return v;
  };
  const LbfgsResult r = lbfgs_minimize(f, std::vector<double>(n, 0.0), LbfgsOptions{});
  CHECK(r.status == LbfgsStatus::GradientTolerance);
  for (std::size_t i = 0; i < n; ++i) CHECK(r.x[i] == doctest::Approx(c[i]).epsilon(1e-8));
}

TEST_CASE("rosenbrock") {
  LbfgsOptions o;
  o.max_iterations = 2000;
  const LbfgsResult r = lbfgs_minimize(rosenbrock, std::vector<double>{-1.2, 1.0, -0.5, 0.8}, o);
  for (double v : r.x) CHECK(v == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("never ends above the starting value") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x0(6);
    for (double& v : x0) v = uniform(rng, -2.0, 2.0);
    std::vector<double> g(6);
    const double f0 = rosenbrock(x0, g);
    LbfgsOptions o;
    o.max_iterations = 3;
    const LbfgsResult r = lbfgs_minimize(rosenbrock, x0, o);
    CHECK(r.f <= f0);
    CHECK(r.iterations <= 3);
  }
}

TEST_CASE("non-finite trial points are rejected") {
  // log barrier: infinite for x <= 0, minimum at x = 1
  const Objective f = [](std::span<const double> x, std::span<double> g) {
    if (x[0] <= 0.0) return std::numeric_limits<double>::infinity();
    g[0] = 1.0 - 1.0 / x[0];
    return x[0] - std::log(x[0]);
  };
  const LbfgsResult r = lbfgs_minimize(f, std::vector<double>{8.0}, LbfgsOptions{});
  CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(std::isfinite(r.f));

  const Objective bad = [](std::span<const double>, std::span<double>) { return NAN; };
  CHECK_THROWS_AS(lbfgs_minimize(bad, std::vector<double>{0.0}, LbfgsOptions{}), NumericalError);
}

TEST_CASE("starting at the minimum stops immediately") {
  const Objective f = [](std::span<const double> x, std::span<double> g) {
    g[0] = 2.0 * x[0];
    return x[0] * x[0];
  };
  const LbfgsResult r = lbfgs_minimize(f, std::vector<double>{0.0}, LbfgsOptions{});
  CHECK(r.iterations == 0);
  CHECK(r.x[0] == 0.0);
  CHECK(r.status == LbfgsStatus::GradientTolerance);
  CHECK(to_string(r.status) == "gradient_tolerance");
}
