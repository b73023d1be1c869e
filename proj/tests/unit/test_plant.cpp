#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "rnnmhe/error.hpp"
#include "rnnmhe/plant.hpp"

using namespace rnnmhe;
namespace fs = std::filesystem;

namespace {

double max_abs_diff(const PlantState& a, const PlantState& b) {
  const auto x = a.to_array(), y = b.to_array();
  double m = 0.0;
  for (int i = 0; i < 4; ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

// Second transcription of the reactor equations, grouped differently and in
// long double: every inflow term over the hold-up, then the reaction terms.
std::array<long double, 4> transcribed_rates(const PlantState& x, const PlantInput& u,
                                             const PlantParams& p) {
  using ld = long double;
  const ld T = x.T2;
  const ld ka = (ld)p.kA * std::exp(-(ld)p.EA_over_R / T);
  const ld kb = (ld)p.kB * std::exp(-(ld)p.EB_over_R / T);
  const ld f1 = (ld)p.kv1 * u.H1, f2 = (ld)p.kv2 * x.H2, f20 = u.F20;
  const ld hold = (ld)p.rho * (ld)p.A2 * (ld)x.H2;
  const ld dH = (f20 + f1 - f2) / ((ld)p.rho * (ld)p.A2);
  const ld dxa = f20 * p.xA0 / hold + f1 * u.xA1 / hold - f2 * x.xA2 / hold - ka * x.xA2;
  const ld dxb = f1 * u.xB1 / hold - f2 * x.xB2 / hold + ka * x.xA2 - kb * x.xB2;
  const ld dT = f20 * p.T0 / hold + f1 * u.T1 / hold - f2 * T / hold -
                ka * x.xA2 * p.dHA / p.Cp - kb * x.xB2 * p.dHB / p.Cp + u.Q2 / (hold * p.Cp);
  return {dH, dxa, dxb, dT};
}

DatasetConfig small_dataset() {
  DatasetConfig c;
  c.n_sequences = 6;
  c.n_train = 4;
  c.n_test = 2;
  c.length = 60;
  return c;
}

}  // namespace

TEST_CASE("rate coefficients at 313 K") {
  const auto [kA2, kB2] = rate_coefficients(313.0, PlantParams{});
  CHECK(kA2 == doctest::Approx(0.336 * std::exp(100.0 / 313.0)).epsilon(1e-14));
  CHECK(kB2 == doctest::Approx(0.089 * std::exp(150.0 / 313.0)).epsilon(1e-14));
  CHECK(kA2 == doctest::Approx(0.4625).epsilon(1e-4));
  CHECK(kB2 == doctest::Approx(0.1437).epsilon(1e-4));
  CHECK_THROWS_AS(rate_coefficients(0.0, PlantParams{}), PlantDomainError);
}

TEST_CASE("derivatives agree with a second transcription") {
  const PlantParams p;
  const PlantState x0{1.0, 0.5, 0.2, 313.0};
  const PlantInput u0{1.0, 0.8, 0.1, 313.0, 0.1, 0.0};
  const auto d0 = derivatives(x0, u0, p).to_array();
  const auto r0 = transcribed_rates(x0, u0, p);
  for (int j = 0; j < 4; ++j) CHECK(std::abs(d0[j] - (double)r0[j]) <= 1e-12);

  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const PlantState x{uniform(rng, 0.5, 2.0), uniform(rng, 0.1, 0.9), uniform(rng, 0.0, 0.5),
                       uniform(rng, 300.0, 330.0)};
    const PlantInput u{uniform(rng, 0.9, 1.1), uniform(rng, 0.7, 0.9), uniform(rng, 0.09, 0.11),
                       uniform(rng, 308.0, 318.0), uniform(rng, 0.09, 0.11), uniform(rng, -2.0, 2.0)};
    const auto d = derivatives(x, u, p).to_array();
    const auto r = transcribed_rates(x, u, p);
    for (int j = 0; j < 4; ++j) CHECK(std::abs(d[j] - (double)r[j]) <= 1e-12 * std::max(1.0, std::abs(d[j])));
  }
}

TEST_CASE("balanced flows leave level and composition still") {
  const PlantParams p;
  // F20 + kv1 H1 = kv2 H2 keeps H2 constant
  const PlantInput u{1.0, 0.8, 0.1, 313.0, 0.1, 0.0};
  const double H2 = (0.1 + 0.5 * 1.0) / 0.5;
  const PlantState x{H2, 0.5, 0.2, 315.0};
  CHECK(derivatives(x, u, p).H2 == doctest::Approx(0.0).epsilon(1e-15));
  // pick xA2 where inflow, outflow and reaction cancel
  const auto [kA2, kB2] = rate_coefficients(315.0, p);
  (void)kB2;
  const double F1 = 0.5, F2 = 0.5 * H2, rAH = p.rho * p.A2 * H2;
  const double xA = (0.1 * p.xA0 + F1 * 0.8) / (F2 + kA2 * rAH);
  CHECK(std::abs(derivatives(PlantState{H2, xA, 0.2, 315.0}, u, p).xA2) <= 1e-14);
}

TEST_CASE("RK4 converges at fourth order") {
  const PlantParams p;
  const PlantInput u{1.05, 0.75, 0.11, 316.0, 0.095, 1.5};
  const PlantState x0{1.0, 0.4, 0.35, 312.0};
  // coarser steps are still pre-asymptotic for this vector field
  const double T = 1.0;
  const PlantState xr = step(x0, u, p, T, 16384);
  const double e1 = max_abs_diff(step(x0, u, p, T, 32), xr);
  const double e2 = max_abs_diff(step(x0, u, p, T, 64), xr);
  const double e3 = max_abs_diff(step(x0, u, p, T, 128), xr);
  CHECK(std::log2(e1 / e2) == doctest::Approx(4.0).epsilon(0.05));
  CHECK(std::log2(e2 / e3) == doctest::Approx(4.0).epsilon(0.05));
}

TEST_CASE("step reports leaving the domain") {
  PlantInput u;
  u.H1 = 0.0;
  u.F20 = 0.0;
  // draining tank with huge dt hits H2 <= 0
  CHECK_THROWS_AS(step(PlantState{0.01, 0.5, 0.2, 313.0}, u, PlantParams{}, 50.0, 1), PlantDomainError);
}

TEST_CASE("drift schedule") {
  DriftSchedule d;
  CHECK(drift_value(d, 0.0) == 0.336);
  CHECK(drift_value(d, 100.0) == 0.336);
  CHECK(drift_value(d, 150.0) == doctest::Approx(0.331));
  CHECK(drift_value(d, 200.0) == doctest::Approx(0.326));
  CHECK(drift_value(d, 1e6) == doctest::Approx(0.326));
  CHECK(d.apply(PlantParams{}, 150.0).kA == doctest::Approx(0.331));
  for (auto shape : {DriftShape::Linear, DriftShape::Smoothstep}) {
    d.shape = shape;
    double prev = drift_value(d, 0.0);
    for (double t = 0.0; t <= 300.0; t += 0.01) {
      const double v = drift_value(d, t);
      CHECK(v <= prev);
      CHECK(prev - v <= 1e-5);  // no jumps at 0.01 s resolution
      prev = v;
    }
  }
  d.t_end = d.t_start;
  CHECK_THROWS_AS(d.validate(), ConfigError);
}

TEST_CASE("excitation") {
  const ExcitationConfig box = ExcitationConfig::around(PlantInput{});
  CHECK(box.lo[0] == doctest::Approx(0.9));
  CHECK(box.hi[3] == doctest::Approx(318.0));
  CHECK(box.lo[5] == -2.0);

  SUBCASE("degenerate box is constant") {
    ExcitationConfig c;
    c.lo = c.hi = PlantInput{}.to_array();
    for (const auto& u : generate_excitation(c, 100, 3)) CHECK(u == PlantInput{});
  }
  SUBCASE("deterministic and held") {
    const auto a = generate_excitation(box, 400, 9);
    CHECK(a == generate_excitation(box, 400, 9));
    CHECK_FALSE(a == generate_excitation(box, 400, 10));
    for (std::size_t k = 0; k < a.size(); ++k) {
      if (k % 20 != 0) CHECK(a[k] == a[k - 1]);
    }
  }
  SUBCASE("levels cover the box") {
    const auto a = generate_excitation(box, 20 * 500, 4);
    for (std::size_t ch = 0; ch < kPlantInputs; ++ch) {
      double lo = 1e300, hi = -1e300;
      for (const auto& u : a) {
        const double v = u.to_array()[ch];
        CHECK(v >= box.lo[ch]);
        CHECK(v <= box.hi[ch]);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      CHECK(hi - lo >= 0.9 * (box.hi[ch] - box.lo[ch]));
    }
  }
  ExcitationConfig bad = box;
  bad.hold_steps = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("steady state") {
  const PlantParams p;
  const PlantInput u;
  const PlantState xs = steady_state(p, u);
  const auto d = derivatives(xs, u, p).to_array();
  for (double v : d) CHECK(std::abs(v) <= 1e-9);
  CHECK(xs.H2 == doctest::Approx(1.2));
  CHECK(max_abs_diff(step(xs, u, p, 0.1, 10), xs) <= 1e-10);

  // long open-loop simulation lands on the same point
  PlantState x{1.0, 0.5, 0.2, 313.0};
  for (int k = 0; k < 1000000; ++k) x = step(x, u, p, 0.1, 1);
  CHECK(max_abs_diff(x, xs) <= 1e-6);
}

TEST_CASE("without reaction and with balanced flows the tank only mixes") {
  PlantParams p;
  p.kA = 0.0;
  p.kB = 0.0;
  // H1 and F20 fixed and H2 at its equilibrium level, compositions excited
  ExcitationConfig box = ExcitationConfig::around(PlantInput{});
  box.lo[0] = box.hi[0] = 1.0;
  box.lo[4] = box.hi[4] = 0.1;
  box.lo[5] = box.hi[5] = 0.0;
  const double H2 = (0.1 + p.kv1 * 1.0) / p.kv2;
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const PlantState x0{H2, uniform(rng, 0.0, 1.2), uniform(rng, 0.0, 0.3), uniform(rng, 290.0, 330.0)};
    const auto inputs = generate_excitation(box, 2000, 21 + trial);
    const Sequence s = simulate_plant(p, x0, inputs, 0.1, 10);
    const double xa_lo = std::min({p.xA0, box.lo[1], x0.xA2}), xa_hi = std::max({p.xA0, box.hi[1], x0.xA2});
    const double xb_lo = std::min({0.0, box.lo[2], x0.xB2}), xb_hi = std::max({0.0, box.hi[2], x0.xB2});
    const double t_lo = std::min({p.T0, box.lo[3], x0.T2}), t_hi = std::max({p.T0, box.hi[3], x0.T2});
    for (std::size_t k = 0; k < s.size(); ++k) {
      CHECK(std::abs(s.y(k, 0) - H2) <= 1e-12);
      CHECK(s.y(k, 1) >= xa_lo - 1e-12);
      CHECK(s.y(k, 1) <= xa_hi + 1e-12);
      CHECK(s.y(k, 2) >= xb_lo - 1e-12);
      CHECK(s.y(k, 2) <= xb_hi + 1e-12);
      CHECK(s.y(k, 3) >= t_lo - 1e-9);
      CHECK(s.y(k, 3) <= t_hi + 1e-9);
    }
  }
}

TEST_CASE("dataset") {
  const DatasetConfig defaults;
  CHECK(defaults.n_sequences == 136);
  CHECK(defaults.n_train == 100);
  CHECK(defaults.n_test == 36);
  CHECK(defaults.length == 1000);

  const DatasetConfig c = small_dataset();
  const Dataset a = collect_dataset(c, 42, 1);
  REQUIRE(a.train.size() == 4);
  REQUIRE(a.test.size() == 2);
  CHECK(a.train[0].u.rows() == 60);
  CHECK(a.train[0].y.cols() == 4);
  CHECK(a.test_index == std::vector<std::size_t>{4, 5});
  const PlantState xs = steady_state(c.plant, c.nominal);
  CHECK(a.train[0].y(0, 0) == xs.H2);
  const Dataset b = collect_dataset(c, 42, 3);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  CHECK_FALSE(collect_dataset(c, 43, 1).train == a.train);

  DatasetConfig bad = c;
  bad.n_train = 5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("csv and dataset manifest round trip") {
  const fs::path dir = fs::temp_directory_path() / "rnnmhe_test_plant";
  fs::remove_all(dir);
  const Dataset a = collect_dataset(small_dataset(), 5, 2);
  write_dataset(dir, a);
  const Dataset b = read_dataset(dir);
  CHECK(b.train == a.train);
  CHECK(b.test == a.test);
  CHECK(b.seed == 5);
  CHECK(b.train_index == a.train_index);

  // tampering is detected
  {
    std::ofstream os(dir / "train_000.csv", std::ios::app);
    os << "0,0,0,0,0,0,0,0,0,0,0\n";
  }
  CHECK_THROWS_AS(read_dataset(dir), ArtifactError);
  fs::remove_all(dir);
}

TEST_CASE("json round trips") {
  PlantParams p;
  p.kA = 0.3;
  CHECK(plant_params_from_json(to_json(p)) == p);
  DatasetConfig c = small_dataset();
  c.drift = DriftSchedule{};
  const DatasetConfig r = dataset_config_from_json(to_json(c));
  CHECK(r.n_sequences == c.n_sequences);
  CHECK(r.drift.has_value());
  CHECK(r.excitation.lo == c.excitation.lo);
  CHECK_THROWS_AS(plant_params_from_json(nlohmann::json{{"kA", -1.0}}), ConfigError);
  CHECK_THROWS_AS(plant_params_from_json(nlohmann::json{{"rho", 0.0}}), ConfigError);
}

TEST_CASE("plant stream matches batch simulation") {
  const PlantParams p;
  const PlantState xs = steady_state(p, PlantInput{});
  const ExcitationConfig box = ExcitationConfig::around(PlantInput{});
  const Sequence s = simulate_plant(p, xs, generate_excitation(box, 200, 8), 0.1, 10, DriftSchedule{});
  PlantStream stream(p, xs, box, 8, 0.1, 10, DriftSchedule{}, 200);
  for (std::size_t k = 0; k < 200; ++k) {
    const auto smp = stream.next();
    REQUIRE(smp);
    CHECK(smp->t == static_cast<std::int64_t>(k));
    for (std::size_t j = 0; j < 6; ++j) CHECK(smp->u[j] == s.u(k, j));
    for (std::size_t j = 0; j < 4; ++j) CHECK(smp->y[j] == s.y(k, j));
  }
  CHECK_FALSE(stream.next());
}
