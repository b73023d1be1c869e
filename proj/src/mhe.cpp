#include "rnnmhe/mhe.hpp"

#include <chrono>
#include <cmath>

#include "rnnmhe/error.hpp"
#include "rnnmhe/kernels.hpp"
#include "rnnmhe/model_io.hpp"

namespace rnnmhe {

using nlohmann::json;
using nlohmann::ordered_json;

void MheConfig::validate() const {
  if (N < 1) throw ConfigError("mhe.N", "must be >= 1");
  if (!(mu >= 0.0) || !std::isfinite(mu)) throw ConfigError("mhe.mu", "must be finite and >= 0");
  if (!(solver.grad_tol > 0.0)) throw ConfigError("mhe.solver.grad_tol", "must be positive");
  if (!(solver.step_tol > 0.0)) throw ConfigError("mhe.solver.step_tol", "must be positive");
  if (solver.max_iterations < 1) throw ConfigError("mhe.solver.max_iterations", "must be >= 1");
  if (solver.memory < 1) throw ConfigError("mhe.solver.memory", "must be >= 1");
}

ordered_json to_json(const MheConfig& c) {
  return ordered_json{{"N", c.N},
                      {"mu", c.mu},
                      {"washout", c.washout},
                      {"solver",
                       {{"max_iterations", c.solver.max_iterations},
                        {"grad_tol", c.solver.grad_tol},
                        {"step_tol", c.solver.step_tol},
                        {"memory", c.solver.memory}}}};
}

MheConfig mhe_config_from_json(const json& j) {
  MheConfig c;
  try {
    if (j.contains("N")) c.N = j.at("N").get<std::size_t>();
    if (j.contains("mu")) c.mu = j.at("mu").get<double>();
    if (j.contains("washout")) c.washout = j.at("washout").get<std::size_t>();
    if (j.contains("solver")) {
      const auto& s = j.at("solver");
      if (s.contains("max_iterations")) c.solver.max_iterations = s.at("max_iterations").get<std::size_t>();
      if (s.contains("grad_tol")) c.solver.grad_tol = s.at("grad_tol").get<double>();
      if (s.contains("step_tol")) c.solver.step_tol = s.at("step_tol").get<double>();
      if (s.contains("memory")) c.solver.memory = s.at("memory").get<std::size_t>();
    }
  } catch (const json::exception& e) {
    throw ConfigError("mhe", e.what());
  }
  c.validate();
  return c;
}

ModelState reconstruct_initial_state(const ParamVector& params, const Matrix& hist_u,
                                     const Matrix& hist_y, std::size_t washout) {
  const ModelSpec& spec = params.spec();
  if (spec.kind == Arch::Nnarx) return nnarx_regressor(spec, hist_u, hist_y);
  if (hist_u.rows() < washout) {
    throw DimensionError("reconstruct_initial_state: history shorter than the washout");
  }
  ModelState x = zero_state(spec);
  if (washout == 0) return x;
  Matrix tail = hist_u.slice_rows(hist_u.rows() - washout, washout);
  ModelState out;
  simulate_outputs(spec, params.values(), x, tail, &out);
  return out;
}

namespace {

double prior_distance(std::span<const double> a, std::span<const double> b) {
  return kernels::active().sqdist(a.size(), a.data(), b.data());
}

void check_window(const ModelSpec& spec, const HorizonWindow& w) {
  if (w.u.rows() == 0 || w.u.rows() != w.y.rows()) {
    throw DimensionError("HorizonWindow: u and y must have the same nonzero length");
  }
  if (w.u.cols() != spec.n_u || w.y.cols() != spec.n_y) {
    throw DimensionError("HorizonWindow: channel widths do not match the model");
  }
  if (w.x_init.values.size() != state_size(spec)) {
    throw DimensionError("HorizonWindow: initial state length mismatch");
  }
}

}  // namespace

CostBreakdown mhe_cost(const ParamVector& cand, const HorizonWindow& w, const ParamVector& prior,
                       double mu) {
  if (!(cand.spec() == prior.spec())) throw DimensionError("mhe_cost: spec mismatch");
  check_window(cand.spec(), w);
  CostBreakdown c;
  c.fit = window_loss(cand.spec(), cand.values(), w.x_init, w.u, w.y);
  c.prior = prior_distance(cand.trainable(), prior.trainable());
  c.total = c.fit + mu * c.prior;
  return c;
}

SolveResult solve_update(const HorizonWindow& w, const ParamVector& prior, const MheConfig& cfg) {
  cfg.validate();
  const ModelSpec& spec = prior.spec();
  check_window(spec, w);
  const auto t0 = std::chrono::steady_clock::now();

  const std::size_t frozen = frozen_size(spec);
  const std::vector<double> z0(prior.trainable().begin(), prior.trainable().end());
  std::vector<double> theta(prior.values().begin(), prior.values().end());

  const Objective obj = [&](std::span<const double> z, std::span<double> g) {
    std::copy(z.begin(), z.end(), theta.begin() + static_cast<std::ptrdiff_t>(frozen));
    const LossGradient lg = window_loss_and_gradient(spec, theta, w.x_init, w.u, w.y);
    double prior_term = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double d = z[i] - z0[i];
      prior_term += d * d;
      g[i] = lg.grad[frozen + i] + 2.0 * cfg.mu * d;
    }
    return lg.loss + cfg.mu * prior_term;
  };

  const LbfgsResult r = lbfgs_minimize(obj, z0, cfg.solver);
  SolveResult res{prior.with_trainable(r.x), {}, mhe_cost(prior, w, prior, cfg.mu), {}};
  res.cost = mhe_cost(res.solution, w, prior, cfg.mu);
  if (res.cost.total > res.cost_at_prior.total) {
    // the solver accepts descent steps only; this cannot trigger short of a bug
    res.solution = prior;
    res.cost = res.cost_at_prior;
  }
  res.stats.iterations = r.iterations;
  res.stats.evaluations = r.evaluations;
  res.stats.rejected_nonfinite = r.rejected_nonfinite;
  res.stats.status = r.status;
  res.stats.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

// Adaptation loop -------------------------------------------------------------

namespace {

/// Fixed-capacity FIFO of samples; the oldest is overwritten when full.
class SampleRing {
 public:
  explicit SampleRing(std::size_t capacity) : slots_(capacity) {}

  void push(IOSample s) {
    slots_[(head_ + size_) % slots_.size()] = std::move(s);
    if (size_ < slots_.size()) {
      ++size_;
    } else {
      head_ = (head_ + 1) % slots_.size();
    }
    peak_ = std::max(peak_, size_);
  }
  /// i = 0 is the oldest held sample.
  const IOSample& operator[](std::size_t i) const { return slots_[(head_ + i) % slots_.size()]; }
  std::size_t size() const noexcept { return size_; }
  std::size_t peak() const noexcept { return peak_; }

 private:
  std::vector<IOSample> slots_;
  std::size_t head_ = 0, size_ = 0, peak_ = 0;
};

Matrix gather(const SampleRing& ring, std::size_t first, std::size_t count, bool outputs,
              std::size_t width) {
  Matrix m(count, width);
  for (std::size_t i = 0; i < count; ++i) {
    const auto& v = outputs ? ring[first + i].y : ring[first + i].u;
    if (v.size() != width) throw DimensionError("stream sample width does not match the model");
    std::copy(v.begin(), v.end(), m.row(i).begin());
  }
  return m;
}

}  // namespace

AdaptRun run_adaptation(const ParamVector& initial, SampleSource& stream, const MheConfig& cfg,
                        const AdaptOptions& opt) {
  cfg.validate();
  const ModelSpec& spec = initial.spec();
  const std::size_t history = spec.kind == Arch::Nnarx ? spec.order : cfg.washout;
  if (history > cfg.washout) {
    throw ConfigError("mhe.washout", "must cover the NNARX regression order");
  }
  const std::size_t capacity = cfg.washout + cfg.N + 1;
  SampleRing ring(capacity);

  AdaptRun run{{}, initial, 0, 0, 0, capacity, 0.0};
  ParamVector current = initial;
  std::optional<std::int64_t> k0, last;

  while (run.updates < opt.max_updates) {
    auto sample = stream.next();
    if (!sample) break;
    if (last && sample->t != *last + 1) {
      throw StreamGapError("stream gap: expected t=" + std::to_string(*last + 1) + ", got t=" +
                               std::to_string(sample->t),
                           run.samples_consumed);
    }
    if (!k0) k0 = sample->t;
    last = sample->t;
    const std::int64_t k = sample->t;
    ring.push(std::move(*sample));
    ++run.samples_consumed;

    const auto rel = static_cast<std::size_t>(k - *k0);
    if (rel % cfg.N != 0 || rel < cfg.washout + cfg.N) continue;

    // ring holds samples k-capacity+1 .. k; the window is the last N+1
    const std::size_t wfirst = ring.size() - (cfg.N + 1);
    HorizonWindow w;
    w.k = k;
    w.u = gather(ring, wfirst, cfg.N + 1, false, spec.n_u);
    w.y = gather(ring, wfirst, cfg.N + 1, true, spec.n_y);
    std::optional<ModelState> xs;
    if (opt.true_state) xs = opt.true_state(k - static_cast<std::int64_t>(cfg.N));
    if (xs) {
      w.x_init = std::move(*xs);
    } else {
      const Matrix hu = gather(ring, wfirst - history, history, false, spec.n_u);
      const Matrix hy = gather(ring, wfirst - history, history, true, spec.n_y);
      w.x_init = reconstruct_initial_state(current, hu, hy, history);
    }
    if (opt.on_window) opt.on_window(w);

    SolveResult s = solve_update(w, current, cfg);
    AdaptCheckpoint c{k,
                      current,
                      s.solution,
                      s.cost,
                      s.cost_at_prior.total,
                      s.stats.iterations,
                      s.stats.evaluations,
                      std::string(to_string(s.stats.status)),
                      s.stats.wall_seconds};
    run.solve_seconds += s.stats.wall_seconds;
    current = std::move(s.solution);
    ++run.updates;
    if (opt.sink) opt.sink(c);
    if (opt.keep_checkpoints) run.checkpoints.push_back(std::move(c));
  }
  run.final_params = current;
  run.peak_buffered = ring.peak();
  return run;
}

// Log -------------------------------------------------------------------------

ordered_json to_json(const AdaptCheckpoint& c) {
  ordered_json j;
  j["k"] = c.k;
  j["spec"] = spec_to_json(c.prior.spec());
  j["prior"] = std::vector<double>(c.prior.values().begin(), c.prior.values().end());
  j["solution"] = std::vector<double>(c.solution.values().begin(), c.solution.values().end());
  j["fit_cost"] = c.cost.fit;
  j["prior_cost"] = c.cost.prior;
  j["total_cost"] = c.cost.total;
  j["cost_at_prior"] = c.cost_at_prior;
  j["iterations"] = c.iterations;
  j["evaluations"] = c.evaluations;
  j["status"] = c.status;
  j["wall_seconds"] = c.wall_seconds;
  return j;
}

AdaptCheckpoint checkpoint_from_json(const json& j) {
  try {
    const ModelSpec spec = spec_from_json(j.at("spec"));
    AdaptCheckpoint c{j.at("k").get<std::int64_t>(),
                      ParamVector(spec, j.at("prior").get<std::vector<double>>()),
                      ParamVector(spec, j.at("solution").get<std::vector<double>>()),
                      {j.at("total_cost").get<double>(), j.at("fit_cost").get<double>(),
                       j.at("prior_cost").get<double>()},
                      j.at("cost_at_prior").get<double>(),
                      j.at("iterations").get<std::size_t>(),
                      j.value("evaluations", std::size_t{0}),
                      j.value("status", std::string()),
                      j.value("wall_seconds", 0.0)};
    return c;
  } catch (const json::exception& e) {
    throw ArtifactError(std::string("checkpoint record: ") + e.what());
  }
}

CheckpointLog::CheckpointLog(const std::filesystem::path& path) : os_(path), path_(path) {
  if (!os_) throw ArtifactError("cannot write " + path.string());
}

void CheckpointLog::append(const AdaptCheckpoint& c) {
  os_ << dump_json(to_json(c), -1) << '\n';
  os_.flush();
  if (!os_) throw ArtifactError("write failed: " + path_.string());
  ++count_;
}

std::vector<AdaptCheckpoint> read_checkpoint_log(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ArtifactError("cannot read " + path.string());
  std::vector<AdaptCheckpoint> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(checkpoint_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ArtifactError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace rnnmhe
