#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "rnnmhe/error.hpp"
#include "rnnmhe/mhe.hpp"
#include "sources.hpp"

using namespace rnnmhe;
using testsupport::ModelTwin;
using testsupport::VectorSource;

namespace {

ModelSpec scalar_static() {
  ModelSpec s{Arch::Nnarx, 1, 0, 1};
  s.order = 0;
  s.feedthrough = true;
  s.output_bias = false;
  return s;
}

HorizonWindow scalar_window(std::vector<double> u, std::vector<double> y) {
  const std::size_t n = u.size();
  return HorizonWindow{Matrix(n, 1, std::move(u)), Matrix(n, 1, std::move(y)), ModelState{}, 0};
}

ParamVector random_params(const ModelSpec& s, std::uint64_t seed, double a) {
  ParamVector base = init_params(s, seed, InitScheme::Glorot);
  Rng rng(seed + 1);
  std::vector<double> t(base.trainable().begin(), base.trainable().end());
  for (double& v : t) v += uniform(rng, -a, a);
  return base.with_trainable(t);
}

HorizonWindow twin_window(const ParamVector& truth, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const ModelSpec& s = truth.spec();
  HorizonWindow w{Matrix(n, s.n_u), Matrix(), zero_state(s), 0};
  for (double& v : w.u.data()) v = uniform(rng, -1.0, 1.0);
  for (double& v : w.x_init.values) v = uniform(rng, -0.3, 0.3);
  w.y = simulate(truth, w.x_init, w.u).outputs;
  return w;
}

}  // namespace

TEST_CASE("cost arithmetic") {
  const ModelSpec s = scalar_static();
  SUBCASE("prior itself on its own outputs costs nothing") {
    const ParamVector p(s, {1.5});
    const auto w = scalar_window({1.0, -2.0}, {1.5, -3.0});
    const CostBreakdown c = mhe_cost(p, w, p, 0.7);
    CHECK(c.total == 0.0);
  }
  SUBCASE("perfect fit, squared prior distance 4") {
    const auto w = scalar_window({1.0, 1.0}, {3.0, 3.0});
    const CostBreakdown c = mhe_cost(ParamVector(s, {3.0}), w, ParamVector(s, {1.0}), 0.1);
    CHECK(c.fit == 0.0);
    CHECK(c.prior == 4.0);
    CHECK(c.total == doctest::Approx(0.4).epsilon(1e-15));
  }
  SUBCASE("fit 2, prior 1, total 4") {
    const auto w = scalar_window({1.0, 1.0}, {2.0, 2.0});
    const CostBreakdown c = mhe_cost(ParamVector(s, {1.0}), w, ParamVector(s, {0.0}), 2.0);
    CHECK(c.fit == 2.0);
    CHECK(c.prior == 1.0);
    CHECK(c.total == 4.0);
  }
}

TEST_CASE("closed-form regularized least squares") {
  const ModelSpec s = scalar_static();
  MheConfig cfg;
  cfg.mu = 2.0;
  const SolveResult r = solve_update(scalar_window({1.0, 1.0}, {2.0, 2.0}), ParamVector(s, {0.0}), cfg);
  CHECK(r.solution.values()[0] == doctest::Approx(1.0).epsilon(1e-10));

  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + static_cast<std::size_t>(uniform01(rng) * 20);
    std::vector<double> u(n), y(n);
    double suy = 0.0, suu = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      u[i] = uniform(rng, -2.0, 2.0);
      y[i] = uniform(rng, -3.0, 3.0);
      suy += u[i] * y[i];
      suu += u[i] * u[i];
    }
    cfg.mu = std::exp(uniform(rng, std::log(1e-3), std::log(1e2)));
    const double tp = uniform(rng, -2.0, 2.0);
    const double want = (suy + cfg.mu * tp) / (suu + cfg.mu);
    const SolveResult rr = solve_update(scalar_window(u, y), ParamVector(s, {tp}), cfg);
    CHECK(std::abs(rr.solution.values()[0] - want) <= 1e-8 * std::max(1.0, std::abs(want)));
  }
}

TEST_CASE("a dominant prior pins the solution") {
  const ModelSpec s{Arch::Gru, 2, 3, 1};
  const ParamVector prior = random_params(s, 3, 0.0);
  const HorizonWindow w = twin_window(random_params(s, 3, 0.8), 11, 5);
  MheConfig cfg;
  cfg.mu = 1e6;
  const SolveResult r = solve_update(w, prior, cfg);
  for (std::size_t i = 0; i < prior.size(); ++i) CHECK(std::abs(r.solution.values()[i] - prior.values()[i]) <= 1e-3);
}

TEST_CASE("matched noiseless window keeps the truth") {
  for (const ModelSpec& s : {ModelSpec{Arch::Lstm, 2, 3, 2}, ModelSpec{Arch::Gru, 2, 3, 1}}) {
    const ParamVector truth = random_params(s, 7, 0.3);
    const HorizonWindow w = twin_window(truth, 11, 2);
    const SolveResult r = solve_update(w, truth, MheConfig{});
    CHECK(r.solution == truth);
    CHECK(r.cost.total == 0.0);
    CHECK(r.stats.iterations == 0);
  }
}

TEST_CASE("solutions never cost more than the prior and fit better as mu shrinks") {
  const ModelSpec s{Arch::Lstm, 2, 3, 2};
  const ParamVector truth = random_params(s, 9, 0.5);
  const ParamVector prior = random_params(s, 9, 0.0);
  const HorizonWindow w = twin_window(truth, 11, 4);
  double prev_fit = -1.0;
  for (double mu : {10.0, 1.0, 0.1, 0.01}) {
    MheConfig cfg;
    cfg.mu = mu;
    cfg.solver.max_iterations = 300;
    const SolveResult r = solve_update(w, prior, cfg);
    CHECK(r.cost.total <= r.cost_at_prior.total);
    CHECK(r.cost.fit <= r.cost_at_prior.fit);
    if (prev_fit >= 0.0) CHECK(r.cost.fit <= prev_fit * (1.0 + 1e-6));
    prev_fit = r.cost.fit;
  }
}

TEST_CASE("the frozen ESN reservoir is never changed") {
  ModelSpec e{Arch::Esn, 2, 6, 1};
  const ParamVector prior = init_params(e, 4, InitScheme::Glorot);
  const HorizonWindow w = twin_window(random_params(e, 4, 0.5), 11, 1);
  const SolveResult r = solve_update(w, prior, MheConfig{});
  for (std::size_t i = 0; i < frozen_size(e); ++i) CHECK(r.solution.values()[i] == prior.values()[i]);
}

TEST_CASE("initial state reconstruction") {
  SUBCASE("NNARX uses the measured pairs") {
    ModelSpec s{Arch::Nnarx, 1, 2, 1};
    s.order = 2;
    const ParamVector p = init_params(s, 1, InitScheme::Glorot);
    const Matrix hu(4, 1, std::vector<double>{1, 2, 3, 4});
    const Matrix hy(4, 1, std::vector<double>{5, 6, 7, 8});
    CHECK(reconstruct_initial_state(p, hu, hy, 4).values == std::vector<double>{4, 3, 8, 7});
  }
  SUBCASE("a matched LSTM synchronizes over the washout") {
    const ModelSpec s{Arch::Lstm, 2, 4, 2};
    const ParamVector truth = random_params(s, 5, 0.2);
    ModelTwin twin(truth, 3, 5, 500);
    Matrix hu, hy;
    for (int k = 0; k < 300; ++k) {
      const auto smp = twin.next();
      hu.append_row(smp->u);
      hy.append_row(smp->y);
    }
    // only the last 100 samples are replayed, from the zero state
    const ModelState x = reconstruct_initial_state(truth, hu, hy, 100);
    Matrix wu, wy;
    for (int k = 0; k < 11; ++k) {
      const auto smp = twin.next();
      wu.append_row(smp->u);
      wy.append_row(smp->y);
    }
    const Matrix pred = simulate(truth, x, wu).outputs;
    double ss = 0.0;
    for (std::size_t i = 0; i < pred.data().size(); ++i) ss += std::pow(pred.data()[i] - wy.data()[i], 2);
    CHECK(std::sqrt(ss / static_cast<double>(pred.data().size())) <= 1e-6);
  }
  CHECK_THROWS_AS(reconstruct_initial_state(init_params(ModelSpec{Arch::Gru, 1, 2, 1}, 1, InitScheme::Zero),
                                            Matrix(3, 1), Matrix(3, 1), 5),
                  DimensionError);
}

TEST_CASE("adaptation loop cadence, memory and identity on a matched plant") {
  const ModelSpec s{Arch::Gru, 2, 3, 1};
  const ParamVector truth = random_params(s, 2, 0.3);
  ModelTwin twin(truth, 8, 5, 64, 400);
  MheConfig cfg;
  cfg.N = 10;
  cfg.washout = 50;
  std::vector<std::int64_t> ks;
  AdaptOptions opt;
  opt.sink = [&](const AdaptCheckpoint& c) { ks.push_back(c.k); };
  opt.true_state = [&](std::int64_t t) { return twin.state_at(t); };
  const AdaptRun run = run_adaptation(truth, twin, cfg, opt);
  CHECK(run.samples_consumed == 400);
  CHECK(run.buffer_capacity == 61);
  CHECK(run.peak_buffered <= 61);
  REQUIRE(!ks.empty());
  CHECK(ks.front() == 60);
  for (std::size_t i = 0; i < ks.size(); ++i) CHECK(ks[i] == 60 + 10 * static_cast<std::int64_t>(i));
  CHECK(run.updates == ks.size());
  CHECK(run.updates == (399 - 60) / 10 + 1);
  for (const auto& c : run.checkpoints) {
    CHECK(c.solution == truth);
    CHECK(c.cost.fit <= 1e-20);
  }
}

TEST_CASE("a checkpoint chain: each prior is the previous solution") {
  const ModelSpec s{Arch::Lstm, 2, 3, 1};
  const ParamVector truth = random_params(s, 6, 0.4);
  ModelTwin twin(truth, 8, 5, 64, 300);
  MheConfig cfg;
  cfg.N = 5;
  cfg.washout = 40;
  cfg.solver.max_iterations = 20;
  const AdaptRun run = run_adaptation(random_params(s, 6, 0.0), twin, cfg);
  REQUIRE(run.checkpoints.size() > 2);
  for (std::size_t i = 1; i < run.checkpoints.size(); ++i) {
    CHECK(run.checkpoints[i].prior == run.checkpoints[i - 1].solution);
  }
  for (const auto& c : run.checkpoints) {
    CHECK(c.cost.total <= c.cost_at_prior);
    CHECK(c.cost.total == doctest::Approx(c.cost.fit + cfg.mu * c.cost.prior).epsilon(1e-12));
  }
  CHECK(run.final_params == run.checkpoints.back().solution);
}

TEST_CASE("stream gaps are reported with their position") {
  std::vector<IOSample> v;
  for (std::int64_t t : {5, 6, 7, 9}) v.push_back(IOSample{{0.1}, {0.2}, t});
  VectorSource src(v);
  const ParamVector p(scalar_static(), {1.0});
  MheConfig cfg;
  cfg.washout = 0;
  try {
    run_adaptation(p, src, cfg);
    FAIL("expected StreamGapError");
  } catch (const StreamGapError& e) {
    CHECK(e.position() == 3);
  }
}

TEST_CASE("buffer stays bounded on a long stream") {
  const ParamVector p(scalar_static(), {1.0});
  ModelTwin twin(p, 1, 3, 4, 20000);
  MheConfig cfg;
  cfg.N = 7;
  cfg.washout = 13;
  cfg.solver.max_iterations = 2;
  AdaptOptions opt;
  opt.keep_checkpoints = false;
  const AdaptRun run = run_adaptation(p, twin, cfg, opt);
  CHECK(run.samples_consumed == 20000);
  CHECK(run.peak_buffered == 21);
  CHECK(run.checkpoints.empty());
}

TEST_CASE("NNARX order longer than the washout is a config error") {
  ModelSpec s{Arch::Nnarx, 1, 0, 1};
  s.order = 5;
  const ParamVector p = init_params(s, 1, InitScheme::Zero);
  VectorSource src({});
  MheConfig cfg;
  cfg.washout = 3;
  CHECK_THROWS_AS(run_adaptation(p, src, cfg), ConfigError);
}

TEST_CASE("checkpoint log round trip") {
  const auto path = std::filesystem::temp_directory_path() / "rnnmhe_test_log.jsonl";
  const ModelSpec s{Arch::Lstm, 2, 2, 1};
  const ParamVector truth = random_params(s, 6, 0.4);
  ModelTwin twin(truth, 8, 5, 64, 120);
  MheConfig cfg;
  cfg.N = 5;
  cfg.washout = 20;
  cfg.solver.max_iterations = 5;
  std::optional<AdaptRun> run;
  {
    CheckpointLog log(path);
    AdaptOptions opt;
    opt.sink = [&](const AdaptCheckpoint& c) { log.append(c); };
    run.emplace(run_adaptation(random_params(s, 6, 0.0), twin, cfg, opt));
    CHECK(log.size() == run->updates);
  }
  const auto back = read_checkpoint_log(path);
  REQUIRE(back.size() == run->checkpoints.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].k == run->checkpoints[i].k);
    CHECK(back[i].solution == run->checkpoints[i].solution);
    CHECK(back[i].prior == run->checkpoints[i].prior);
    CHECK(back[i].cost.total == run->checkpoints[i].cost.total);
  }
  std::filesystem::remove(path);
}

TEST_CASE("config validation") {
  MheConfig c;
  c.N = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = MheConfig{};
  c.mu = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(mhe_config_from_json(to_json(MheConfig{})).N == 10);
  CHECK_THROWS_AS(mhe_config_from_json(nlohmann::json{{"N", "ten"}}), ConfigError);
}
