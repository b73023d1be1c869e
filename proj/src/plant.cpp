#include "rnnmhe/plant.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "rnnmhe/checksum.hpp"
#include "rnnmhe/error.hpp"
#include "rnnmhe/model_io.hpp"

namespace rnnmhe {

using nlohmann::json;
using nlohmann::ordered_json;

void PlantParams::validate() const {
  const std::pair<const char*, double> positive[] = {{"rho", rho}, {"A2", A2},   {"Cp", Cp},
                                                     {"kv1", kv1}, {"kv2", kv2}};
  for (const auto& [name, v] : positive) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ConfigError(std::string("plant.params.") + name, "must be positive");
    }
  }
  for (const auto& [name, v] : {std::pair<const char*, double>{"kA", kA}, {"kB", kB}}) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ConfigError(std::string("plant.params.") + name, "must be nonnegative");
    }
  }
  for (double v : {xA0, EA_over_R, EB_over_R, dHA, dHB, T0}) {
    if (!std::isfinite(v)) throw ConfigError("plant.params", "non-finite constant");
  }
}

std::pair<double, double> rate_coefficients(double T2, const PlantParams& p) {
  if (!(T2 > 0.0)) throw PlantDomainError("rate_coefficients: T2 must be positive");
  return {p.kA * std::exp(-p.EA_over_R / T2), p.kB * std::exp(-p.EB_over_R / T2)};
}

PlantState derivatives(const PlantState& x, const PlantInput& u, const PlantParams& p) {
  if (!(x.H2 > 0.0)) throw PlantDomainError("derivatives: H2 must be positive");
  const auto [kA2, kB2] = rate_coefficients(x.T2, p);
  const double F1 = p.kv1 * u.H1;
  const double F2 = p.kv2 * x.H2;
  const double rA = p.rho * p.A2;
  const double rAH = rA * x.H2;
  PlantState d;
  d.H2 = (u.F20 + F1 - F2) / rA;
  d.xA2 = (u.F20 * p.xA0 + F1 * u.xA1 - F2 * x.xA2) / rAH - kA2 * x.xA2;
  d.xB2 = (F1 * u.xB1 - F2 * x.xB2) / rAH + kA2 * x.xA2 - kB2 * x.xB2;
  d.T2 = (u.F20 * p.T0 + F1 * u.T1 - F2 * x.T2) / rAH -
         (kA2 * x.xA2 * p.dHA + kB2 * x.xB2 * p.dHB) / p.Cp + u.Q2 / (rAH * p.Cp);
  return d;
}

namespace {

PlantState axpy(const PlantState& x, double h, const PlantState& d) {
  return {x.H2 + h * d.H2, x.xA2 + h * d.xA2, x.xB2 + h * d.xB2, x.T2 + h * d.T2};
}

void check_domain(const PlantState& x) {
  for (double v : x.to_array()) {
    if (!std::isfinite(v)) throw PlantDomainError("plant state is not finite");
  }
  if (!(x.H2 > 0.0)) throw PlantDomainError("plant level H2 left (0, inf)");
  if (!(x.T2 > 0.0)) throw PlantDomainError("plant temperature T2 left (0, inf)");
}

}  // namespace

PlantState step(const PlantState& x0, const PlantInput& u, const PlantParams& p, double dt,
                int substeps) {
  if (!(dt > 0.0)) throw ConfigError("dt", "must be positive");
  if (substeps < 1) throw ConfigError("substeps", "must be >= 1");
  const double h = dt / substeps;
  PlantState x = x0;
  for (int s = 0; s < substeps; ++s) {
    const PlantState k1 = derivatives(x, u, p);
    const PlantState k2 = derivatives(axpy(x, 0.5 * h, k1), u, p);
    const PlantState k3 = derivatives(axpy(x, 0.5 * h, k2), u, p);
    const PlantState k4 = derivatives(axpy(x, h, k3), u, p);
    x.H2 += h / 6.0 * (k1.H2 + 2.0 * k2.H2 + 2.0 * k3.H2 + k4.H2);
    x.xA2 += h / 6.0 * (k1.xA2 + 2.0 * k2.xA2 + 2.0 * k3.xA2 + k4.xA2);
    x.xB2 += h / 6.0 * (k1.xB2 + 2.0 * k2.xB2 + 2.0 * k3.xB2 + k4.xB2);
    x.T2 += h / 6.0 * (k1.T2 + 2.0 * k2.T2 + 2.0 * k3.T2 + k4.T2);
    check_domain(x);
  }
  return x;
}

// Drift -----------------------------------------------------------------------

void DriftSchedule::validate() const {
  if (param_name != "kA" && param_name != "kB") {
    throw ConfigError("plant.drift.param_name", "only kA and kB can drift");
  }
  if (!(t_start < t_end)) throw ConfigError("plant.drift", "t_start must precede t_end");
  if (!std::isfinite(start_value) || !std::isfinite(end_value)) {
    throw ConfigError("plant.drift", "non-finite value");
  }
}

double drift_value(const DriftSchedule& d, double t) {
  if (t <= d.t_start) return d.start_value;
  if (t >= d.t_end) return d.end_value;
  double s = (t - d.t_start) / (d.t_end - d.t_start);
  if (d.shape == DriftShape::Smoothstep) s = s * s * (3.0 - 2.0 * s);
  return d.start_value + (d.end_value - d.start_value) * s;
}

PlantParams DriftSchedule::apply(const PlantParams& base, double t) const {
  PlantParams p = base;
  (param_name == "kB" ? p.kB : p.kA) = drift_value(*this, t);
  return p;
}

// Excitation ------------------------------------------------------------------

ExcitationConfig ExcitationConfig::around(const PlantInput& n) {
  ExcitationConfig e;
  e.lo = {0.9 * n.H1, 0.9 * n.xA1, 0.9 * n.xB1, n.T1 - 5.0, 0.9 * n.F20, n.Q2 - 2.0};
  e.hi = {1.1 * n.H1, 1.1 * n.xA1, 1.1 * n.xB1, n.T1 + 5.0, 1.1 * n.F20, n.Q2 + 2.0};
  return e;
}

void ExcitationConfig::validate() const {
  for (std::size_t c = 0; c < kPlantInputs; ++c) {
    if (!std::isfinite(lo[c]) || !std::isfinite(hi[c]) || lo[c] > hi[c]) {
      throw ConfigError(std::string("excitation.") + kInputNames[c], "bounds must satisfy lo <= hi");
    }
  }
  if (hold_steps < 1) throw ConfigError("excitation.hold_steps", "must be >= 1");
}

namespace {

PlantInput draw_level(const ExcitationConfig& e, Rng& rng) {
  std::array<double, kPlantInputs> a{};
  for (std::size_t c = 0; c < kPlantInputs; ++c) a[c] = uniform(rng, e.lo[c], e.hi[c]);
  return PlantInput::from_array(a);
}

}  // namespace

std::vector<PlantInput> generate_excitation(const ExcitationConfig& config, std::size_t n_samples,
                                            std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  std::vector<PlantInput> out;
  out.reserve(n_samples);
  PlantInput level;
  for (std::size_t k = 0; k < n_samples; ++k) {
    if (k % config.hold_steps == 0) level = draw_level(config, rng);
    out.push_back(level);
  }
  return out;
}

// Steady state ------------------------------------------------------------------

PlantState steady_state_from(const PlantParams& p, const PlantInput& u, PlantState guess,
                             const SteadyStateOptions& o) {
  using Vec4 = Eigen::Vector4d;
  const auto f = [&](const Vec4& v) {
    const auto d = derivatives(PlantState{v[0], v[1], v[2], v[3]}, u, p).to_array();
    return Vec4(d[0], d[1], d[2], d[3]);
  };
  const auto a = guess.to_array();
  Vec4 x(a[0], a[1], a[2], a[3]);
  Vec4 r = f(x);
  for (int it = 0; it < o.max_refinements && r.cwiseAbs().maxCoeff() > 0.1 * o.tolerance; ++it) {
    Eigen::Matrix4d J;
    for (int j = 0; j < 4; ++j) {
      const double h = 1e-7 * std::max(1.0, std::abs(x[j]));
      Vec4 xp = x, xm = x;
      xp[j] += h;
      xm[j] -= h;
      J.col(j) = (f(xp) - f(xm)) / (2.0 * h);
    }
    const Vec4 dx = J.fullPivLu().solve(-r);
    // damped: halve until the residual shrinks
    double lambda = 1.0;
    Vec4 xn = x + dx;
    Vec4 rn;
    for (int k = 0; k < 30; ++k) {
      xn = x + lambda * dx;
      if (xn[0] > 0.0 && xn[3] > 0.0) {
        rn = f(xn);
        if (rn.allFinite() && rn.norm() < r.norm()) break;
      }
      lambda *= 0.5;
    }
    if (!(xn[0] > 0.0 && xn[3] > 0.0) || !(rn.norm() < r.norm())) break;
    x = xn;
    r = rn;
  }
  if (!(r.cwiseAbs().maxCoeff() <= o.tolerance)) {
    throw Error("steady_state: no convergence (max |dx/dt| = " +
                std::to_string(r.cwiseAbs().maxCoeff()) + ")");
  }
  return PlantState{x[0], x[1], x[2], x[3]};
}

PlantState steady_state(const PlantParams& p, const PlantInput& u, const SteadyStateOptions& o) {
  p.validate();
  // start from the pure-mixing guess
  PlantState x{p.kv1 * u.H1 / p.kv2 + u.F20 / p.kv2, u.xA1, u.xB1, u.T1};
  const auto steps = static_cast<long>(std::ceil(o.horizon / o.dt));
  for (long k = 0; k < steps; ++k) x = step(x, u, p, o.dt, o.substeps);
  return steady_state_from(p, u, x, o);
}

// Datasets --------------------------------------------------------------------

void DatasetConfig::validate() const {
  if (n_train + n_test > n_sequences) {
    throw ConfigError("dataset", "n_train + n_test exceeds n_sequences");
  }
  if (length < 1) throw ConfigError("dataset.length", "must be >= 1");
  if (!(tau > 0.0)) throw ConfigError("dataset.tau", "must be positive");
  if (substeps < 1) throw ConfigError("dataset.substeps", "must be >= 1");
  plant.validate();
  excitation.validate();
  if (drift) drift->validate();
}

Sequence simulate_plant(const PlantParams& p, const PlantState& x0,
                        const std::vector<PlantInput>& inputs, double tau, int substeps,
                        const std::optional<DriftSchedule>& drift, double t0) {
  Sequence s{Matrix(inputs.size(), kPlantInputs), Matrix(inputs.size(), kPlantOutputs), tau};
  PlantState x = x0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto ua = inputs[k].to_array();
    const auto ya = x.to_array();
    std::copy(ua.begin(), ua.end(), s.u.row(k).begin());
    std::copy(ya.begin(), ya.end(), s.y.row(k).begin());
    const double t = t0 + static_cast<double>(k) * tau;
    x = step(x, inputs[k], drift ? drift->apply(p, t) : p, tau, substeps);
  }
  return s;
}

Dataset collect_dataset(const DatasetConfig& c, std::uint64_t seed, int jobs) {
  c.validate();
  const PlantState x0 = steady_state(c.plant, c.nominal);
  const std::size_t n = c.n_train + c.n_test;
  std::vector<Sequence> seqs(n);
  const auto make = [&](std::size_t i) {
    const auto u = generate_excitation(c.excitation, c.length, derive_seed(seed, i));
    seqs[i] = simulate_plant(c.plant, x0, u, c.tau, c.substeps, c.drift);
  };
  const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), 1, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) make(i);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < n; i += workers) make(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  Dataset ds;
  ds.seed = seed;
  ds.config = c;
  for (std::size_t i = 0; i < n; ++i) {
    if (i < c.n_train) {
      ds.train.push_back(std::move(seqs[i]));
      ds.train_index.push_back(i);
    } else {
      ds.test.push_back(std::move(seqs[i]));
      ds.test_index.push_back(i);
    }
  }
  return ds;
}

// JSON ------------------------------------------------------------------------

namespace {

template <class T>
void read_opt(const json& j, const char* key, T& out, const std::string& path) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path + key, e.what());
  }
}

}  // namespace

ordered_json to_json(const PlantParams& p) {
  return ordered_json{{"rho", p.rho},     {"A2", p.A2},   {"kv1", p.kv1},
                      {"kv2", p.kv2},     {"xA0", p.xA0}, {"kA", p.kA},
                      {"kB", p.kB},       {"EA_over_R", p.EA_over_R},
                      {"EB_over_R", p.EB_over_R},         {"dHA", p.dHA},
                      {"dHB", p.dHB},     {"Cp", p.Cp},   {"T0", p.T0}};
}

PlantParams plant_params_from_json(const json& j) {
  PlantParams p;
  const std::string path = "plant.params.";
  read_opt(j, "rho", p.rho, path);
  read_opt(j, "A2", p.A2, path);
  read_opt(j, "kv1", p.kv1, path);
  read_opt(j, "kv2", p.kv2, path);
  read_opt(j, "xA0", p.xA0, path);
  read_opt(j, "kA", p.kA, path);
  read_opt(j, "kB", p.kB, path);
  read_opt(j, "EA_over_R", p.EA_over_R, path);
  read_opt(j, "EB_over_R", p.EB_over_R, path);
  read_opt(j, "dHA", p.dHA, path);
  read_opt(j, "dHB", p.dHB, path);
  read_opt(j, "Cp", p.Cp, path);
  read_opt(j, "T0", p.T0, path);
  p.validate();
  return p;
}

ordered_json to_json(const PlantInput& u) {
  return ordered_json{{"H1", u.H1}, {"xA1", u.xA1}, {"xB1", u.xB1},
                      {"T1", u.T1}, {"F20", u.F20}, {"Q2", u.Q2}};
}

PlantInput plant_input_from_json(const json& j) {
  PlantInput u;
  const std::string path = "plant.nominal.";
  read_opt(j, "H1", u.H1, path);
  read_opt(j, "xA1", u.xA1, path);
  read_opt(j, "xB1", u.xB1, path);
  read_opt(j, "T1", u.T1, path);
  read_opt(j, "F20", u.F20, path);
  read_opt(j, "Q2", u.Q2, path);
  return u;
}

ordered_json to_json(const DriftSchedule& d) {
  return ordered_json{{"param_name", d.param_name},
                      {"start_value", d.start_value},
                      {"end_value", d.end_value},
                      {"t_start", d.t_start},
                      {"t_end", d.t_end},
                      {"shape", d.shape == DriftShape::Linear ? "linear" : "smoothstep"}};
}

DriftSchedule drift_from_json(const json& j) {
  DriftSchedule d;
  const std::string path = "plant.drift.";
  read_opt(j, "param_name", d.param_name, path);
  read_opt(j, "start_value", d.start_value, path);
  read_opt(j, "end_value", d.end_value, path);
  read_opt(j, "t_start", d.t_start, path);
  read_opt(j, "t_end", d.t_end, path);
  std::string shape = "linear";
  read_opt(j, "shape", shape, path);
  if (shape == "linear") {
    d.shape = DriftShape::Linear;
  } else if (shape == "smoothstep") {
    d.shape = DriftShape::Smoothstep;
  } else {
    throw ConfigError(path + "shape", "expected 'linear' or 'smoothstep'");
  }
  d.validate();
  return d;
}

ordered_json to_json(const ExcitationConfig& e) {
  ordered_json ch;
  for (std::size_t c = 0; c < kPlantInputs; ++c) ch[kInputNames[c]] = {e.lo[c], e.hi[c]};
  return ordered_json{{"hold_steps", e.hold_steps}, {"bounds", ch}};
}

ExcitationConfig excitation_from_json(const json& j, const PlantInput& nominal) {
  ExcitationConfig e = ExcitationConfig::around(nominal);
  read_opt(j, "hold_steps", e.hold_steps, "excitation.");
  if (j.contains("bounds")) {
    const auto& b = j.at("bounds");
    for (std::size_t c = 0; c < kPlantInputs; ++c) {
      if (!b.contains(kInputNames[c])) continue;
      const auto& r = b.at(kInputNames[c]);
      if (!r.is_array() || r.size() != 2) {
        throw ConfigError(std::string("excitation.bounds.") + kInputNames[c], "expected [lo, hi]");
      }
      e.lo[c] = r[0].get<double>();
      e.hi[c] = r[1].get<double>();
    }
  }
  e.validate();
  return e;
}

ordered_json to_json(const DatasetConfig& c) {
  ordered_json j{{"n_sequences", c.n_sequences}, {"n_train", c.n_train}, {"n_test", c.n_test},
                 {"length", c.length},           {"tau", c.tau},         {"substeps", c.substeps},
                 {"plant", to_json(c.plant)},    {"nominal", to_json(c.nominal)},
                 {"excitation", to_json(c.excitation)}};
  j["drift"] = c.drift ? to_json(*c.drift) : ordered_json(nullptr);
  return j;
}

DatasetConfig dataset_config_from_json(const json& j) {
  DatasetConfig c;
  read_opt(j, "n_sequences", c.n_sequences, "dataset.");
  read_opt(j, "n_train", c.n_train, "dataset.");
  read_opt(j, "n_test", c.n_test, "dataset.");
  read_opt(j, "length", c.length, "dataset.");
  read_opt(j, "tau", c.tau, "dataset.");
  read_opt(j, "substeps", c.substeps, "dataset.");
  if (j.contains("plant")) c.plant = plant_params_from_json(j.at("plant"));
  if (j.contains("nominal")) c.nominal = plant_input_from_json(j.at("nominal"));
  c.excitation = j.contains("excitation") ? excitation_from_json(j.at("excitation"), c.nominal)
                                          : ExcitationConfig::around(c.nominal);
  if (j.contains("drift") && !j.at("drift").is_null()) c.drift = drift_from_json(j.at("drift"));
  c.validate();
  return c;
}

// CSV -------------------------------------------------------------------------

void write_sequence_csv(const std::filesystem::path& path, const Sequence& seq, double t0) {
  std::ofstream os(path);
  if (!os) throw ArtifactError("cannot write " + path.string());
  os << "t";
  for (auto n : kInputNames) os << ',' << n;
  for (auto n : kOutputNames) os << ',' << n;
  os << '\n';
  char buf[32];
  for (std::size_t k = 0; k < seq.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.17g", t0 + static_cast<double>(k) * seq.tau);
    os << buf;
    for (double v : seq.u.row(k)) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      os << ',' << buf;
    }
    for (double v : seq.y.row(k)) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      os << ',' << buf;
    }
    os << '\n';
  }
  if (!os) throw ArtifactError("write failed: " + path.string());
}

Sequence read_sequence_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ArtifactError("cannot read " + path.string());
  std::string line;
  std::getline(is, line);
  if (line.rfind("t,H1", 0) != 0) throw ArtifactError(path.string() + ": unexpected header");
  std::vector<double> t, u, y;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ls, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ArtifactError(path.string() + ":" + std::to_string(lineno) + ": bad number");
      }
    }
    if (row.size() != 1 + kPlantInputs + kPlantOutputs) {
      throw ArtifactError(path.string() + ":" + std::to_string(lineno) + ": expected 11 columns");
    }
    t.push_back(row[0]);
    u.insert(u.end(), row.begin() + 1, row.begin() + 1 + kPlantInputs);
    y.insert(y.end(), row.begin() + 1 + kPlantInputs, row.end());
  }
  const std::size_t n = t.size();
  Sequence s{Matrix(n, kPlantInputs, std::move(u)), Matrix(n, kPlantOutputs, std::move(y)), 0.1};
  if (n >= 2) s.tau = t[1] - t[0];
  return s;
}

ordered_json write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  ordered_json files = ordered_json::array();
  const auto emit = [&](const std::vector<Sequence>& seqs, const std::vector<std::size_t>& idx,
                        const char* split) {
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      char name[64];
      std::snprintf(name, sizeof name, "%s_%03zu.csv", split, i);
      write_sequence_csv(dir / name, seqs[i]);
      files.push_back(ordered_json{{"file", name},
                                   {"split", split},
                                   {"index", idx[i]},
                                   {"sha256", sha256_file(dir / name)}});
    }
  };
  emit(ds.train, ds.train_index, "train");
  emit(ds.test, ds.test_index, "test");
  ordered_json m{{"seed", ds.seed},
                 {"config", to_json(ds.config)},
                 {"split", {{"train", ds.train_index}, {"test", ds.test_index}}},
                 {"files", files}};
  std::ofstream os(dir / "manifest.json");
  os << dump_json(m) << '\n';
  if (!os) throw ArtifactError("cannot write dataset manifest in " + dir.string());
  return m;
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw ArtifactError("no manifest.json in " + dir.string());
  const json m = json::parse(is);
  Dataset ds;
  ds.seed = m.at("seed").get<std::uint64_t>();
  ds.config = dataset_config_from_json(m.at("config"));
  for (const auto& f : m.at("files")) {
    const auto file = dir / f.at("file").get<std::string>();
    if (sha256_file(file) != f.at("sha256").get<std::string>()) {
      throw ArtifactError("checksum mismatch: " + file.string());
    }
    Sequence s = read_sequence_csv(file);
    s.tau = ds.config.tau;
    if (f.at("split") == "train") {
      ds.train.push_back(std::move(s));
      ds.train_index.push_back(f.at("index").get<std::size_t>());
    } else {
      ds.test.push_back(std::move(s));
      ds.test_index.push_back(f.at("index").get<std::size_t>());
    }
  }
  return ds;
}

// Stream ----------------------------------------------------------------------

PlantStream::PlantStream(PlantParams params, PlantState x0, ExcitationConfig excitation,
                         std::uint64_t seed, double tau, int substeps,
                         std::optional<DriftSchedule> drift, std::optional<std::size_t> limit)
    : params_(std::move(params)),
      x_(x0),
      exc_(std::move(excitation)),
      rng_(seed),
      tau_(tau),
      substeps_(substeps),
      drift_(std::move(drift)),
      limit_(limit) {
  exc_.validate();
}

std::optional<IOSample> PlantStream::next() {
  if (limit_ && static_cast<std::size_t>(k_) >= *limit_) return std::nullopt;
  if (static_cast<std::size_t>(k_) % exc_.hold_steps == 0) level_ = draw_level(exc_, rng_);
  const auto ua = level_.to_array();
  const auto ya = x_.to_array();
  IOSample s{std::vector<double>(ua.begin(), ua.end()), std::vector<double>(ya.begin(), ya.end()), k_};
  const double t = static_cast<double>(k_) * tau_;
  x_ = step(x_, level_, drift_ ? drift_->apply(params_, t) : params_, tau_, substeps_);
  ++k_;
  return s;
}

}  // namespace rnnmhe
