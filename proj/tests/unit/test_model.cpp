#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <vector>

#include "reference_model.hpp"
#include "rnnmhe/error.hpp"
#include "rnnmhe/model.hpp"
#include "rnnmhe/model_io.hpp"
#include "rnnmhe/random.hpp"

using namespace rnnmhe;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double a = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data()) v = uniform(rng, -a, a);
  return m;
}

ParamVector random_params(const ModelSpec& s, std::uint64_t seed, double a = 0.5) {
  ParamVector base = init_params(s, seed, InitScheme::Glorot);
  Rng rng(seed + 100);
  std::vector<double> t(base.trainable().size());
  for (double& v : t) v = uniform(rng, -a, a);
  return base.with_trainable(t);
}

std::vector<ModelSpec> all_kinds() {
  ModelSpec lstm{Arch::Lstm, 3, 4, 2};
  ModelSpec gru{Arch::Gru, 3, 4, 2};
  gru.feedthrough = true;
  ModelSpec esn{Arch::Esn, 3, 6, 2};
  esn.leak = 0.7;
  ModelSpec nnarx{Arch::Nnarx, 2, 3, 2};
  nnarx.order = 3;
  return {lstm, gru, esn, nnarx};
}

}  // namespace

TEST_CASE("parameter counts") {
  CHECK(param_count(ModelSpec{Arch::Lstm, 6, 10, 4}) == 724);
  CHECK(param_count(ModelSpec{Arch::Gru, 1, 1, 1}) == 11);
  ModelSpec n{Arch::Nnarx, 1, 3, 1};
  n.order = 2;
  CHECK(param_count(n) == 19);
  // ESN: only the readout is trainable
  ModelSpec e{Arch::Esn, 2, 5, 3};
  CHECK(param_count(e) == 3 * 5 + 3);
  CHECK(frozen_size(e) == 5 * 7 + 5);
  CHECK(storage_size(e) == param_count(e) + frozen_size(e));
  // linear NNARX and static map
  ModelSpec lin{Arch::Nnarx, 2, 0, 1};
  lin.order = 2;
  CHECK(param_count(lin) == 2 * 3 + 1);
  ModelSpec stat{Arch::Nnarx, 1, 0, 1};
  stat.order = 0;
  stat.feedthrough = true;
  stat.output_bias = false;
  CHECK(param_count(stat) == 1);
  CHECK(state_size(stat) == 0);
}

TEST_CASE("spec validation") {
  CHECK_THROWS_AS((ModelSpec{Arch::Lstm, 0, 4, 1}).validate(), DimensionError);
  CHECK_THROWS_AS((ModelSpec{Arch::Gru, 1, 0, 1}).validate(), DimensionError);
  ModelSpec e{Arch::Esn, 1, 4, 1};
  e.spectral_radius = 1.2;
  CHECK_THROWS_AS(e.validate(), ConfigError);
  e.spectral_radius = 0.9;
  e.leak = 0.0;
  CHECK_THROWS_AS(e.validate(), ConfigError);
  CHECK_THROWS_AS(ParamVector(ModelSpec{Arch::Gru, 1, 1, 1}, std::vector<double>(10)), DimensionError);
  std::vector<double> bad(11, 0.0);
  bad[3] = NAN;
  CHECK_THROWS_AS(ParamVector(ModelSpec{Arch::Gru, 1, 1, 1}, bad), NumericalError);
  CHECK(parse_arch("lstm") == Arch::Lstm);
  CHECK_THROWS_AS(parse_arch("transformer"), ConfigError);
}

TEST_CASE("init is deterministic and the zero scheme zeroes trainable weights") {
  for (const auto& s : all_kinds()) {
    CAPTURE(to_string(s.kind));
    CHECK(init_params(s, 5, InitScheme::Glorot) == init_params(s, 5, InitScheme::Glorot));
    CHECK_FALSE(init_params(s, 5, InitScheme::Glorot) == init_params(s, 6, InitScheme::Glorot));
    const ParamVector z = init_params(s, 5, InitScheme::Zero);
    for (double v : z.trainable()) CHECK(v == 0.0);
  }
}

TEST_CASE("ESN reservoir radius against repeated squaring") {
  ModelSpec e{Arch::Esn, 2, 20, 1};
  e.spectral_radius = 0.9;
  const ParamVector p = init_params(e, 17, InitScheme::Zero);
  const std::size_t h = 20, in = 22;
  // Gelfand: rho = lim ||A^(2^k)||^(1/2^k), with renormalization at each squaring.
  std::vector<long double> A(h * h), B(h * h);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < h; ++j) A[i * h + j] = p.values()[i * in + 2 + j];
  long double log_rho = 0.0L, weight = 1.0L;
  for (int k = 0; k < 40; ++k) {
    long double nrm = 0.0L;
    for (auto v : A) nrm += v * v;
    nrm = std::sqrt(nrm);
    log_rho += weight * std::log(nrm);
    for (auto& v : A) v /= nrm;
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < h; ++j) {
        long double a = 0.0L;
        for (std::size_t m = 0; m < h; ++m) a += A[i * h + m] * A[m * h + j];
        B[i * h + j] = a;
      }
    A.swap(B);
    weight /= 2.0L;
  }
  long double nrm = 0.0L;
  for (auto v : A) nrm += v * v;
  log_rho += weight * std::log(std::sqrt(nrm));
  const double rho = static_cast<double>(std::exp(log_rho));
  CHECK(std::abs(rho - 0.9) <= 1e-6);
  CHECK(std::abs(reservoir_spectral_radius(p) - 0.9) <= 1e-9);
}

TEST_CASE("LSTM with zero weights halves the cell") {
  ModelSpec s{Arch::Lstm, 1, 2, 1};
  std::vector<double> v(storage_size(s), 0.0);
  v.back() = 0.25;  // output bias
  const ParamVector p(s, v);
  const ModelState x{{2.0, -4.0, 0.3, 0.7}};
  const double u[] = {1.5};
  const StepResult r = forward_step(p, x, u);
  CHECK(r.y[0] == 0.25);
  CHECK(r.next_state.values[0] == doctest::Approx(1.0));
  CHECK(r.next_state.values[1] == doctest::Approx(-2.0));
  CHECK(r.next_state.values[2] == doctest::Approx(0.5 * std::tanh(1.0)));
  CHECK(r.next_state.values[3] == doctest::Approx(0.5 * std::tanh(-2.0)));
}

TEST_CASE("GRU single unit by hand") {
  ModelSpec s{Arch::Gru, 1, 1, 1};
  // W rows z, r, n over [u, h]; b z, r, n; C; c
  const ParamVector p(s, {0.5, -0.3, 0.2, 0.4, 0.7, 0.9, 0.1, -0.2, 0.05, 2.0, 0.1});
  const double h = 0.5, u = 1.0;
  const auto sg = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  const double z = sg(0.5 * u - 0.3 * h + 0.1);
  const double r = sg(0.2 * u + 0.4 * h - 0.2);
  const double n = std::tanh(0.7 * u + 0.9 * r * h + 0.05);
  const StepResult res = forward_step(p, ModelState{{h}}, std::vector<double>{u});
  CHECK(res.y[0] == doctest::Approx(2.0 * h + 0.1).epsilon(1e-15));
  CHECK(res.next_state.values[0] == doctest::Approx(z * h + (1.0 - z) * n).epsilon(1e-15));
}

TEST_CASE("NNARX with 19 weights by hand") {
  ModelSpec s{Arch::Nnarx, 1, 3, 1};
  s.order = 2;
  std::vector<double> v(19);
  for (std::size_t i = 0; i < 19; ++i) v[i] = 0.05 * static_cast<double>(i) - 0.4;
  const ParamVector p(s, v);
  // state [u1, u2, y1, y2]
  const double x[] = {0.3, -0.2, 0.8, 0.6};
  double y = v[18];
  for (int r = 0; r < 3; ++r) {
    double a = v[12 + r];
    for (int j = 0; j < 4; ++j) a += v[4 * r + j] * x[j];
    y += v[15 + r] * std::tanh(a);
  }
  const StepResult res = forward_step(p, ModelState{{0.3, -0.2, 0.8, 0.6}}, std::vector<double>{1.1});
  CHECK(res.y[0] == doctest::Approx(y).epsilon(1e-15));
  CHECK(res.next_state.values == std::vector<double>{1.1, 0.3, res.y[0], 0.8});
}

TEST_CASE("forward matches the long-double reference") {
  Rng rng(23);
  for (auto s : all_kinds()) {
    for (bool ft : {false, true}) {
      s.feedthrough = ft;
      CAPTURE(to_string(s.kind));
      CAPTURE(ft);
      const ParamVector p = random_params(s, 9, 0.6);
      const Matrix u = random_matrix(rng, 40, s.n_u);
      ModelState x0 = zero_state(s);
      for (double& v : x0.values) v = uniform(rng, -0.5, 0.5);
      const Rollout r = simulate(p, x0, u);
      const auto ys = ref::simulate(s, ref::widen(p.values()), ref::widen(x0.values), u);
      for (std::size_t k = 0; k < u.rows(); ++k)
        for (std::size_t j = 0; j < s.n_y; ++j)
          CHECK(std::abs(r.outputs(k, j) - static_cast<double>(ys[k][j])) <= 1e-12);
    }
  }
}

TEST_CASE("simulate over one step equals forward_step") {
  Rng rng(4);
  for (const auto& s : all_kinds()) {
    const ParamVector p = random_params(s, 2);
    const Matrix u = random_matrix(rng, 1, s.n_u);
    const Rollout r = simulate(p, zero_state(s), u);
    const StepResult f = forward_step(p, zero_state(s), u.row(0));
    CHECK(std::vector<double>(r.outputs.row(0).begin(), r.outputs.row(0).end()) == f.y);
    CHECK(std::vector<double>(r.states.row(1).begin(), r.states.row(1).end()) == f.next_state.values);
    ModelState fin;
    const Matrix y = simulate_outputs(s, p.values(), zero_state(s), u, &fin);
    CHECK(y == r.outputs);
    CHECK(fin == f.next_state);
  }
}

TEST_CASE("exact targets are a zero-loss stationary point") {
  Rng rng(8);
  for (const auto& s : all_kinds()) {
    const ParamVector p = random_params(s, 3);
    const Matrix u = random_matrix(rng, 25, s.n_u);
    const Matrix y = simulate(p, zero_state(s), u).outputs;
    const LossGradient lg = window_loss_and_gradient(p, zero_state(s), u, y);
    CHECK(lg.loss == 0.0);
    for (double g : lg.grad) CHECK(g == 0.0);
  }
}

TEST_CASE("static scalar map: loss 5, gradient -10") {
  ModelSpec s{Arch::Nnarx, 1, 0, 1};
  s.order = 0;
  s.feedthrough = true;
  s.output_bias = false;
  const ParamVector p(s, {0.0});
  const Matrix u(2, 1, std::vector<double>{1.0, 2.0});
  const Matrix y(2, 1, std::vector<double>{1.0, 2.0});
  const LossGradient lg = window_loss_and_gradient(p, zero_state(s), u, y);
  CHECK(lg.loss == 5.0);
  CHECK(lg.grad[0] == -10.0);
  CHECK(window_loss(s, p.values(), zero_state(s), u, y) == 5.0);
}

TEST_CASE("gradients match central differences of the reference") {
  Rng rng(31);
  for (auto s : all_kinds()) {
    s.feedthrough = true;
    CAPTURE(to_string(s.kind));
    const ParamVector p = random_params(s, 12, 0.4);
    const Matrix u = random_matrix(rng, 15, s.n_u);
    const Matrix t = random_matrix(rng, 15, s.n_y);
    const std::size_t skip = 4;
    const LossGradient lg = window_loss_and_gradient(p, zero_state(s), u, t, skip);
    const auto th = ref::widen(p.values());
    const auto x0 = ref::widen(zero_state(s).values);
    CHECK(std::abs(lg.loss - static_cast<double>(ref::window_loss(s, th, x0, u, t, skip))) <= 1e-11);
    for (std::size_t i = frozen_size(s); i < p.size(); ++i) {
      const double fd = static_cast<double>(ref::fd_partial(s, th, x0, u, t, i, 1e-6L, skip));
      CAPTURE(i);
      CHECK(std::abs(lg.grad[i] - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("ESN reservoir receives exactly zero gradient") {
  ModelSpec e{Arch::Esn, 2, 8, 2};
  e.feedthrough = true;
  const ParamVector p = random_params(e, 4);
  Rng rng(2);
  const LossGradient lg = window_loss_and_gradient(p, zero_state(e), random_matrix(rng, 30, 2),
                                                   random_matrix(rng, 30, 2));
  for (std::size_t i = 0; i < frozen_size(e); ++i) CHECK(lg.grad[i] == 0.0);
  const ParamVector q = p.with_trainable(std::vector<double>(param_count(e), 0.0));
  for (std::size_t i = 0; i < frozen_size(e); ++i) CHECK(q.values()[i] == p.values()[i]);
}

TEST_CASE("NNARX state holds the recent inputs and predictions") {
  ModelSpec s{Arch::Nnarx, 2, 3, 1};
  s.order = 2;
  const ParamVector p = random_params(s, 1);
  Rng rng(6);
  const Matrix u = random_matrix(rng, 10, 2);
  const Rollout r = simulate(p, zero_state(s), u);
  for (std::size_t k = 2; k <= 10; ++k) {
    const auto x = r.states.row(k);
    CHECK(x[0] == u(k - 1, 0));
    CHECK(x[1] == u(k - 1, 1));
    CHECK(x[2] == u(k - 2, 0));
    CHECK(x[3] == u(k - 2, 1));
    CHECK(x[4] == r.outputs(k - 1, 0));
    CHECK(x[5] == r.outputs(k - 2, 0));
  }
  // regressor from measured history, newest first
  Matrix yh(3, 1, std::vector<double>{7.0, 8.0, 9.0});
  const ModelState reg = nnarx_regressor(s, u.slice_rows(0, 3), yh);
  CHECK(reg.values == std::vector<double>{u(2, 0), u(2, 1), u(1, 0), u(1, 1), 9.0, 8.0});
  CHECK_THROWS_AS(nnarx_regressor(s, u.slice_rows(0, 1), yh.slice_rows(0, 1)), DimensionError);
}

TEST_CASE("dimension and numerical errors") {
  ModelSpec s{Arch::Gru, 2, 3, 1};
  const ParamVector p = random_params(s, 1);
  CHECK_THROWS_AS(simulate(p, zero_state(s), Matrix(4, 3)), DimensionError);
  CHECK_THROWS_AS(simulate(p, ModelState{{0.0}}, Matrix(4, 2)), DimensionError);
  CHECK_THROWS_AS(forward_step(p, zero_state(s), std::vector<double>{1.0}), DimensionError);
  CHECK_THROWS_AS(window_loss_and_gradient(p, zero_state(s), Matrix(4, 2), Matrix(3, 1)),
                  DimensionError);

  // y_k = 1e10 y_{k-1} + 1 overflows after a few dozen steps
  ModelSpec lin{Arch::Nnarx, 1, 0, 1};
  lin.order = 1;
  const ParamVector q(lin, {0.0, 1e10, 1.0});
  try {
    simulate(q, zero_state(lin), Matrix(100, 1));
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(e.step() > 10);
    CHECK(e.step() < 100);
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  const auto dir = std::filesystem::temp_directory_path() / "rnnmhe_test_model";
  std::filesystem::create_directories(dir);
  for (const auto& s : all_kinds()) {
    const ParamVector p = random_params(s, 77);
    save_checkpoint(dir / "p.json", ParamCheckpoint{p, 77, "glorot", {}});
    const ParamCheckpoint c = load_checkpoint(dir / "p.json");
    CHECK(c.params == p);
    CHECK(c.seed == 77);
    CHECK(c.created_at.size() == 20);
    CHECK(spec_from_json(spec_to_json(s)) == s);
  }
  CHECK_THROWS_AS(spec_from_json(nlohmann::json{{"kind", "lstm"}, {"n_u", -1}}), ConfigError);
  std::filesystem::remove_all(dir);
}
