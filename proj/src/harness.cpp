#include "rnnmhe/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "rnnmhe/checksum.hpp"
#include "rnnmhe/convergence.hpp"
#include "rnnmhe/error.hpp"
#include "rnnmhe/kernels.hpp"
#include "rnnmhe/model_io.hpp"
#include "rnnmhe/random.hpp"

namespace rnnmhe {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

// Manifest ----------------------------------------------------------------------

ordered_json to_json(const RunManifest& m) {
  ordered_json arts = ordered_json::array();
  for (const auto& a : m.artifacts) {
    arts.push_back({{"path", a.path}, {"sha256", a.sha256}, {"deterministic", a.deterministic}});
  }
  return ordered_json{{"experiment", m.experiment}, {"config_hash", m.config_hash},
                      {"status", m.status},         {"error", m.error},
                      {"summary", m.summary},       {"artifacts", arts},
                      {"timing", m.timing}};
}

RunManifest read_manifest(const fs::path& dir) {
  std::ifstream is(dir / "run_manifest.json");
  if (!is) throw ArtifactError("no run_manifest.json in " + dir.string());
  try {
    const ordered_json j = ordered_json::parse(is);
    RunManifest m;
    m.experiment = j.at("experiment").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.status = j.at("status").get<std::string>();
    m.error = j.value("error", std::string());
    m.summary = j.at("summary");
    for (const auto& a : j.at("artifacts")) {
      m.artifacts.push_back({a.at("path").get<std::string>(), a.at("sha256").get<std::string>(),
                             a.at("deterministic").get<bool>()});
    }
    m.timing = j.value("timing", ordered_json::object());
    return m;
  } catch (const json::exception& e) {
    throw ArtifactError(std::string("run manifest: ") + e.what());
  }
}

bool verify_manifest(const fs::path& dir, const RunManifest& m) {
  for (const auto& a : m.artifacts) {
    if (!fs::exists(dir / a.path)) return false;
    if (sha256_file(dir / a.path) != a.sha256) return false;
  }
  return true;
}

bool same_reproducible_content(const RunManifest& a, const RunManifest& b) {
  if (a.experiment != b.experiment || a.config_hash != b.config_hash || a.status != b.status ||
      dump_json(a.summary) != dump_json(b.summary)) {
    return false;
  }
  std::map<std::string, std::string> da, db;
  for (const auto& x : a.artifacts) {
    if (x.deterministic) da[x.path] = x.sha256;
  }
  for (const auto& x : b.artifacts) {
    if (x.deterministic) db[x.path] = x.sha256;
  }
  return da == db;
}

// Helpers -----------------------------------------------------------------------

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string values_hash(const ParamVector& p) {
  std::string s;
  for (double v : p.values()) s += fmt(v) + ",";
  return sha256_hex(s);
}

class RunContext {
 public:
  RunContext(const ExperimentConfig& c, fs::path dir, RunManifest& m)
      : config(c), dir(std::move(dir)), manifest(m) {}

  void record(const fs::path& rel, bool deterministic) {
    manifest.artifacts.push_back({rel.lexically_normal().generic_string(), sha256_file(dir / rel), deterministic});
  }
  void write_text(const fs::path& rel, const std::string& text, bool deterministic) {
    fs::create_directories((dir / rel).parent_path());
    std::ofstream os(dir / rel);
    os << text;
    if (!os) throw ArtifactError("cannot write " + (dir / rel).string());
    os.close();
    record(rel, deterministic);
  }
  void write_json(const fs::path& rel, const ordered_json& j, bool deterministic) {
    write_text(rel, dump_json(j) + "\n", deterministic);
  }

  const ExperimentConfig& config;
  fs::path dir;
  RunManifest& manifest;
};

std::string predictions_csv(const Sequence& truth, const std::vector<std::pair<std::string, const Matrix*>>& series) {
  std::ostringstream os;
  os << "t";
  for (auto n : kOutputNames) os << ",truth_" << n;
  for (const auto& [name, m] : series) {
    for (auto n : kOutputNames) os << ',' << name << '_' << n;
  }
  os << '\n';
  for (std::size_t k = 0; k < truth.size(); ++k) {
    os << fmt(static_cast<double>(k) * truth.tau);
    for (double v : truth.y.row(k)) os << ',' << fmt(v);
    for (const auto& [name, m] : series) {
      for (double v : m->row(k)) os << ',' << fmt(v);
    }
    os << '\n';
  }
  return os.str();
}

std::string loss_history_csv(const std::vector<EpochRecord>& h) {
  std::ostringstream os;
  os << "epoch,train_mse,test_mse,best_train_mse\n";
  for (const auto& r : h) {
    os << r.epoch << ',' << fmt(r.train_mse) << ',' << fmt(r.test_mse) << ','
       << fmt(r.best_train_mse) << '\n';
  }
  return os.str();
}

ordered_json report_json(const EvalReport& r) {
  ordered_json j;
  for (std::size_t c = 0; c < r.channel_mse.size() && c < kPlantOutputs; ++c) {
    j[kOutputNames[c]] = r.channel_mse[c];
  }
  j["average"] = r.average;
  j["n_sequences"] = r.n_sequences;
  j["washout"] = r.washout;
  return j;
}

void write_checkpoint(RunContext& ctx, const fs::path& rel, const ParamVector& p, std::uint64_t seed) {
  fs::create_directories((ctx.dir / rel).parent_path());
  save_checkpoint(ctx.dir / rel, ParamCheckpoint{p, seed, std::string(to_string(ctx.config.train.init)), {}});
  ctx.record(rel, false);  // created_at timestamp
}

/// Trains inside the run (under prefix/) or loads from config.nominal_run.
NominalModel obtain_nominal(RunContext& ctx, const fs::path& prefix) {
  const auto& c = ctx.config;
  if (!c.nominal_run.empty()) {
    const fs::path d = c.nominal_run;
    const ParamCheckpoint ck = load_checkpoint(d / "params.json");
    std::ifstream is(d / "scaler.json");
    if (!is) throw ArtifactError("no scaler.json in " + d.string());
    Scaler sc = scaler_from_json(json::parse(is));
    if (!(ck.params.spec() == c.model)) {
      throw ConfigError("nominal_run", "checkpoint spec differs from config.model");
    }
    ctx.manifest.summary["nominal"] = {{"source", "loaded"}, {"params_sha256", values_hash(ck.params)}};
    return {ck.params, sc};
  }
  const auto t0 = Clock::now();
  TrainResult tr{init_params(c.model, 0, InitScheme::Zero), {}, 0, false};
  Dataset ds;
  NominalModel nm = train_nominal(c, &tr, &ds);
  ctx.manifest.timing["train_seconds"] = seconds_since(t0);
  write_checkpoint(ctx, prefix / "params.json", nm.params, c.train.seed);
  ctx.write_json(prefix / "scaler.json", to_json(nm.scaler), true);
  ctx.write_text(prefix / "loss_history.csv", loss_history_csv(tr.history), true);
  const auto test = apply_scaler(nm.scaler, ds.test);
  const EvalReport rep = evaluate_mse(nm.params, test, c.train.washout);
  if (!test.empty()) {
    const Matrix pred = predict(nm.params, test.front());
    ctx.write_text(prefix / "test_predictions.csv", predictions_csv(test.front(), {{"pred", &pred}}), true);
  }
  ctx.manifest.summary["nominal"] = {{"source", "trained"},
                                     {"epochs_run", tr.history.back().epoch},
                                     {"best_epoch", tr.best_epoch},
                                     {"early_stopped", tr.early_stopped},
                                     {"best_train_mse", tr.history.back().best_train_mse},
                                     {"test", report_json(rep)},
                                     {"params_sha256", values_hash(nm.params)}};
  return nm;
}

std::vector<Sequence> normalize(const Scaler& s, const std::vector<Sequence>& v) {
  return apply_scaler(s, v);
}

std::string drift_trace_csv(const DriftSchedule& d, double tau, double t_end) {
  std::ostringstream os;
  os << "t," << d.param_name << '\n';
  const auto n = static_cast<std::size_t>(std::llround(t_end / tau));
  for (std::size_t k = 0; k <= n; ++k) {
    const double t = static_cast<double>(k) * tau;
    os << fmt(t) << ',' << fmt(drift_value(d, t)) << '\n';
  }
  return os.str();
}

// Experiments -----------------------------------------------------------------------

void exp_simulate(RunContext& ctx) {
  const auto& c = ctx.config;
  const Dataset ds = collect_dataset(c.dataset, c.seed, c.jobs);
  const ordered_json m = write_dataset(ctx.dir / "dataset", ds);
  for (const auto& f : m.at("files")) ctx.record(fs::path("dataset") / f.at("file").get<std::string>(), true);
  ctx.record("dataset/manifest.json", true);
  const PlantState xs = steady_state(c.dataset.plant, c.dataset.nominal);
  PlantParams drifted = c.drift.apply(c.dataset.plant, c.drift.t_end);
  const PlantState xd = steady_state(drifted, c.dataset.nominal);
  const auto arr = [](const PlantState& x) {
    return ordered_json{{"H2", x.H2}, {"xA2", x.xA2}, {"xB2", x.xB2}, {"T2", x.T2}};
  };
  ctx.write_json("steady_state.json", {{"nominal", arr(xs)}, {"drifted", arr(xd)}}, true);
  ctx.write_text("fig5_drift.csv", drift_trace_csv(c.drift, c.dataset.tau, 2.0 * c.drift.t_end - c.drift.t_start), true);
  ctx.manifest.summary["n_train"] = ds.train.size();
  ctx.manifest.summary["n_test"] = ds.test.size();
  ctx.manifest.summary["length"] = c.dataset.length;
  ctx.manifest.summary["steady_state"] = arr(xs);
  ctx.manifest.summary["steady_state_drifted"] = arr(xd);
  ctx.manifest.summary["dataset_manifest_sha256"] = sha256_file(ctx.dir / "dataset/manifest.json");
}

void exp_train(RunContext& ctx) {
  // a train run is itself a nominal-model directory
  ExperimentConfig c = ctx.config;
  if (!c.nominal_run.empty()) throw ConfigError("nominal_run", "not used by the train experiment");
  obtain_nominal(ctx, ".");
  emit_plotdata(ctx.dir, "fig3");
  emit_plotdata(ctx.dir, "fig4");
  ctx.record("fig3.csv", true);
  ctx.record("fig4.csv", true);
}

std::string table2_csv(const EvalReport& before, const EvalReport& after) {
  std::ostringstream os;
  os << "set,H2,xA2,xB2,T2,average\n";
  for (const auto& [name, r] : {std::pair<const char*, const EvalReport*>{"before_drift", &before},
                                {"after_drift", &after}}) {
    os << name;
    for (double v : r->channel_mse) os << ',' << fmt(v);
    os << ',' << fmt(r->average) << '\n';
  }
  return os.str();
}

void exp_drift_eval(RunContext& ctx) {
  const auto& c = ctx.config;
  const NominalModel nm = obtain_nominal(ctx, "nominal");
  const auto t0 = Clock::now();
  const DriftEvalSets sets = make_drift_eval_sets(c);
  const auto before = normalize(nm.scaler, sets.before);
  const auto after = normalize(nm.scaler, sets.after);
  const EvalReport rb = evaluate_mse(nm.params, before, c.train.washout);
  const EvalReport ra = evaluate_mse(nm.params, after, c.train.washout);
  ctx.manifest.timing["eval_seconds"] = seconds_since(t0);
  ctx.write_text("table2.csv", table2_csv(rb, ra), true);
  ctx.write_text("fig5_drift.csv", drift_trace_csv(c.drift, c.dataset.tau, 2.0 * c.drift.t_end - c.drift.t_start), true);
  ordered_json ratios;
  for (std::size_t ch = 0; ch < kPlantOutputs; ++ch) {
    ratios[kOutputNames[ch]] = ra.channel_mse[ch] / rb.channel_mse[ch];
  }
  ratios["average"] = ra.average / rb.average;
  ctx.manifest.summary["before_drift"] = report_json(rb);
  ctx.manifest.summary["after_drift"] = report_json(ra);
  ctx.manifest.summary["after_over_before"] = ratios;
}

struct AdaptOutcome {
  AdaptRun run;
  EvalReport unadapted;
  EvalReport adapted;
  std::size_t descent_violations = 0;
  double mean_iterations = 0.0;
  double total_seconds = 0.0;
};

AdaptOutcome adapt_once(const ExperimentConfig& c, const NominalModel& nm, const MheConfig& mhe,
                        const std::vector<Sequence>& after_norm, CheckpointLog* log) {
  auto stream = std::make_unique<ScaledSource>(make_drift_stream(c), nm.scaler);
  AdaptOptions opt;
  opt.keep_checkpoints = false;
  double iters = 0.0;
  std::size_t violations = 0;
  opt.sink = [&](const AdaptCheckpoint& ck) {
    if (ck.cost.total > ck.cost_at_prior) ++violations;
    iters += static_cast<double>(ck.iterations);
    if (log) log->append(ck);
  };
  const auto t0 = Clock::now();
  AdaptOutcome out{run_adaptation(nm.params, *stream, mhe, opt), {}, {}, violations, 0.0, 0.0};
  out.descent_violations = violations;
  out.total_seconds = seconds_since(t0);
  out.mean_iterations = out.run.updates ? iters / static_cast<double>(out.run.updates) : 0.0;
  out.unadapted = evaluate_mse(nm.params, after_norm, c.train.washout);
  out.adapted = evaluate_mse(out.run.final_params, after_norm, c.train.washout);
  return out;
}

void exp_adapt(RunContext& ctx) {
  const auto& c = ctx.config;
  const NominalModel nm = obtain_nominal(ctx, "nominal");
  const DriftEvalSets sets = make_drift_eval_sets(c);
  const auto before = normalize(nm.scaler, sets.before);
  const auto after = normalize(nm.scaler, sets.after);
  const EvalReport rb = evaluate_mse(nm.params, before, c.train.washout);

  std::optional<AdaptOutcome> res;
  {
    CheckpointLog log(ctx.dir / "checkpoints.jsonl");
    res.emplace(adapt_once(c, nm, c.mhe, after, &log));
  }
  const AdaptOutcome& out = *res;
  ctx.record("checkpoints.jsonl", false);  // wall times inline
  write_checkpoint(ctx, "adapted_params.json", out.run.final_params, c.train.seed);

  const Matrix unadapted = predict(nm.params, after.front());
  const Matrix adapted = predict(out.run.final_params, after.front());
  ctx.write_text("eval_predictions.csv",
                 predictions_csv(after.front(), {{"unadapted", &unadapted}, {"adapted", &adapted}}), true);
  ctx.write_text("fig5_drift.csv", drift_trace_csv(c.drift, c.dataset.tau, 2.0 * c.drift.t_end - c.drift.t_start), true);
  emit_plotdata(ctx.dir, "fig6");
  emit_plotdata(ctx.dir, "fig7");
  ctx.record("fig6.csv", true);
  ctx.record("fig7.csv", true);

  ctx.manifest.summary["mu"] = c.mhe.mu;
  ctx.manifest.summary["N"] = c.mhe.N;
  ctx.manifest.summary["updates"] = out.run.updates;
  ctx.manifest.summary["samples_consumed"] = out.run.samples_consumed;
  ctx.manifest.summary["peak_buffered"] = out.run.peak_buffered;
  ctx.manifest.summary["mean_iterations"] = out.mean_iterations;
  ctx.manifest.summary["descent_violations"] = out.descent_violations;
  ctx.manifest.summary["before_drift"] = report_json(rb);
  ctx.manifest.summary["unadapted_after"] = report_json(out.unadapted);
  ctx.manifest.summary["adapted_after"] = report_json(out.adapted);
  ctx.manifest.summary["adapted_over_unadapted"] = out.adapted.average / out.unadapted.average;
  ctx.manifest.summary["final_params_sha256"] = values_hash(out.run.final_params);
  ctx.manifest.timing["adapt_seconds"] = out.total_seconds;
  ctx.manifest.timing["solve_seconds"] = out.run.solve_seconds;
  ctx.manifest.timing["per_solve_seconds"] =
      out.run.updates ? out.run.solve_seconds / static_cast<double>(out.run.updates) : 0.0;
}

void exp_sweep(RunContext& ctx) {
  const auto& c = ctx.config;
  const NominalModel nm = obtain_nominal(ctx, "nominal");
  const DriftEvalSets sets = make_drift_eval_sets(c);
  const auto after = normalize(nm.scaler, sets.after);

  std::vector<std::optional<AdaptOutcome>> results(c.grid.size());
  std::vector<std::exception_ptr> errs(c.grid.size());
  const auto work = [&](std::size_t i) {
    try {
      MheConfig m = c.mhe;
      m.mu = c.grid[i].mu;
      m.N = c.grid[i].N;
      results[i].emplace(adapt_once(c, nm, m, after, nullptr));
    } catch (...) {
      errs[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(c.jobs), c.grid.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < c.grid.size(); ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < c.grid.size(); i += workers) work(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errs) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<AdaptOutcome> outs;
  for (auto& r : results) outs.push_back(std::move(*r));

  std::ostringstream table;
  table << "mu,N,comp_time_per_solve_s,comp_time_total_s,updates,H2,xA2,xB2,T2,average\n";
  ordered_json rows = ordered_json::array();
  std::size_t best = 0;
  for (std::size_t i = 0; i < outs.size(); ++i) {
    const auto& o = outs[i];
    const double per = o.run.updates ? o.run.solve_seconds / static_cast<double>(o.run.updates) : 0.0;
    table << fmt(c.grid[i].mu) << ',' << c.grid[i].N << ',' << fmt(per) << ',' << fmt(o.total_seconds)
          << ',' << o.run.updates;
    for (double v : o.adapted.channel_mse) table << ',' << fmt(v);
    table << ',' << fmt(o.adapted.average) << '\n';
    ordered_json r = report_json(o.adapted);
    r["mu"] = c.grid[i].mu;
    r["N"] = c.grid[i].N;
    r["updates"] = o.run.updates;
    r["adapted_over_unadapted"] = o.adapted.average / o.unadapted.average;
    r["descent_violations"] = o.descent_violations;
    rows.push_back(r);
    if (o.adapted.average < outs[best].adapted.average) best = i;
    ctx.manifest.timing["row_" + std::to_string(i)] = {{"per_solve_seconds", per},
                                                       {"total_seconds", o.total_seconds}};
  }
  ctx.write_text("table3.csv", table.str(), false);
  ctx.manifest.summary["unadapted_after"] = report_json(outs.front().unadapted);
  ctx.manifest.summary["rows"] = rows;
  ctx.manifest.summary["best_row"] = {{"mu", c.grid[best].mu}, {"N", c.grid[best].N}};
}

/// Plays the nominal network as the plant, driven by the normalized benchmark excitation.
class TwinStream : public SampleSource {
 public:
  TwinStream(const ExperimentConfig& c, const NominalModel& nm, std::size_t keep)
      : theta_(nm.params), x_(zero_state(nm.params.spec())), keep_(keep) {
    const PlantState x0 = steady_state(c.dataset.plant, c.dataset.nominal);
    inputs_ = std::make_unique<ScaledSource>(
        std::make_unique<PlantStream>(c.dataset.plant, x0, c.dataset.excitation,
                                      c.resolved_stream_seed(), c.dataset.tau, c.dataset.substeps),
        nm.scaler);
  }

  std::optional<IOSample> next() override {
    auto s = inputs_->next();
    if (!s) return s;
    StepResult r = forward_step(theta_, x_, s->u);
    states_.emplace_back(s->t, x_);
    if (states_.size() > keep_) states_.pop_front();
    x_ = std::move(r.next_state);
    s->y = std::move(r.y);
    return s;
  }

  std::optional<ModelState> state_at(std::int64_t t) const {
    for (const auto& [k, x] : states_) {
      if (k == t) return x;
    }
    return std::nullopt;
  }

 private:
  ParamVector theta_;
  ModelState x_;
  std::size_t keep_;
  std::unique_ptr<SampleSource> inputs_;
  std::deque<std::pair<std::int64_t, ModelState>> states_;
};

void exp_converge(RunContext& ctx) {
  const auto& c = ctx.config;
  const NominalModel nm = obtain_nominal(ctx, "nominal");
  const ParamVector& theta_o = nm.params;
  const std::size_t N = c.mhe.N;
  const std::size_t keep = N + 2;

  // The windows do not depend on the estimates (x_{k-N} comes from the twin),
  // so they can be collected up front for the delta estimate.
  std::vector<HorizonWindow> windows;
  {
    TwinStream twin(c, nm, keep);
    std::deque<IOSample> buf;
    for (std::int64_t rel = 0; windows.size() < c.twin_updates; ++rel) {
      auto s = twin.next();
      buf.push_back(*s);
      if (buf.size() > N + 1) buf.pop_front();
      const auto r = static_cast<std::size_t>(rel);
      if (r % N != 0 || r < c.mhe.washout + N) continue;
      HorizonWindow w{Matrix(N + 1, c.model.n_u), Matrix(N + 1, c.model.n_y),
                      *twin.state_at(s->t - static_cast<std::int64_t>(N)), s->t};
      for (std::size_t i = 0; i <= N; ++i) {
        std::copy(buf[i].u.begin(), buf[i].u.end(), w.u.row(i).begin());
        std::copy(buf[i].y.begin(), buf[i].y.end(), w.y.row(i).begin());
      }
      windows.push_back(std::move(w));
    }
  }

  // perturbed prior with epsilon0 exactly
  Rng rng(derive_seed(c.seed, 77));
  std::vector<double> z(theta_o.trainable().begin(), theta_o.trainable().end());
  std::vector<double> d(z.size());
  double nd = 0.0;
  for (double& v : d) {
    v = standard_normal(rng);
    nd += v * v;
  }
  const double scale = std::sqrt(c.twin_epsilon0 / nd);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] += scale * d[i];
  const ParamVector prior0 = theta_o.with_trainable(z);
  const double eps0 = epsilon(theta_o, prior0);

  const auto t0 = Clock::now();
  DeltaSampler sampler{c.twin_delta_samples, 2.0 * std::sqrt(eps0), derive_seed(c.seed, 78), windows};
  const DeltaEstimate de = estimate_delta(theta_o, sampler);
  ctx.manifest.timing["delta_seconds"] = seconds_since(t0);
  MheConfig mhe = c.mhe;
  mhe.mu = c.twin_mu_fraction * (2.0 / 3.0) * de.delta_hat;

  TwinStream twin(c, nm, keep);
  AdaptOptions opt;
  opt.max_updates = c.twin_updates;
  opt.true_state = [&](std::int64_t t) { return twin.state_at(t); };
  const auto t1 = Clock::now();
  std::optional<AdaptRun> result;
  {
    CheckpointLog log(ctx.dir / "checkpoints.jsonl");
    opt.sink = [&](const AdaptCheckpoint& ck) { log.append(ck); };
    result.emplace(run_adaptation(prior0, twin, mhe, opt));
  }
  const AdaptRun& run = *result;
  ctx.record("checkpoints.jsonl", false);
  ctx.manifest.timing["adapt_seconds"] = seconds_since(t1);

  const ConvergenceReport rep = track_error(run.checkpoints, theta_o, mhe.mu, de.delta_hat, 0.01);
  write_convergence_csv(ctx.dir / "convergence.csv", rep);
  ctx.record("convergence.csv", true);
  ordered_json s = summary_json(rep);
  s["delta_samples"] = de.n_samples;
  s["delta_radius"] = de.radius;
  s["bound_holds"] = rep.violations == 0;
  s["reached_1e-6"] = rep.epsilon_final <= 1e-6 * rep.epsilon0;
  // J(theta_o) = mu * eps_{k-N} on matched windows; record the worst deviation
  double identity_gap = 0.0;
  for (const auto& ck : run.checkpoints) {
    const HorizonWindow* w = nullptr;
    for (const auto& cand : windows) {
      if (cand.k == ck.k) w = &cand;
    }
    if (!w) continue;
    const CostBreakdown jo = mhe_cost(theta_o, *w, ck.prior, mhe.mu);
    identity_gap = std::max(identity_gap, std::abs(jo.total - mhe.mu * epsilon(theta_o, ck.prior)));
  }
  s["matched_identity_max_gap"] = identity_gap;
  ctx.write_json("convergence_summary.json", s, true);
  ctx.manifest.summary["convergence"] = s;
}

}  // namespace

// Shared building blocks ----------------------------------------------------------

DriftEvalSets make_drift_eval_sets(const ExperimentConfig& c) {
  const PlantParams pb = c.drift.apply(c.dataset.plant, c.drift.t_start);
  const PlantParams pa = c.drift.apply(c.dataset.plant, c.drift.t_end);
  const PlantState xb = steady_state(pb, c.dataset.nominal);
  const PlantState xa = steady_state(pa, c.dataset.nominal);
  DriftEvalSets s;
  const std::uint64_t seed = c.resolved_eval_seed();
  for (std::size_t i = 0; i < c.eval_sequences; ++i) {
    const auto u = generate_excitation(c.dataset.excitation, c.eval_length, derive_seed(seed, i));
    s.before.push_back(simulate_plant(pb, xb, u, c.dataset.tau, c.dataset.substeps));
    s.after.push_back(simulate_plant(pa, xa, u, c.dataset.tau, c.dataset.substeps));
  }
  return s;
}

std::unique_ptr<SampleSource> make_drift_stream(const ExperimentConfig& c) {
  const PlantParams p0 = c.drift.apply(c.dataset.plant, c.drift.t_start);
  const PlantState x0 = steady_state(p0, c.dataset.nominal);
  return std::make_unique<PlantStream>(c.dataset.plant, x0, c.dataset.excitation,
                                       c.resolved_stream_seed(), c.dataset.tau, c.dataset.substeps,
                                       c.drift, c.stream_length);
}

NominalModel train_nominal(const ExperimentConfig& c, TrainResult* result, Dataset* dataset) {
  Dataset ds = collect_dataset(c.dataset, c.seed, c.jobs);
  Scaler sc = fit_scaler(ds.train, c.input_scaler, c.output_scaler);
  TrainConfig tc = c.train;
  tc.jobs = c.jobs;
  TrainResult tr = train_offline(c.model, apply_scaler(sc, ds.train), apply_scaler(sc, ds.test), tc);
  NominalModel nm{tr.params, sc};
  if (result) *result = std::move(tr);
  if (dataset) *dataset = std::move(ds);
  return nm;
}

// Entry points -------------------------------------------------------------------

RunManifest run(const ExperimentConfig& config, const fs::path& out_dir) {
  config.validate();
  fs::create_directories(out_dir);
  RunManifest m;
  m.experiment = config.experiment;
  m.config_hash = config_hash(config);
  const auto t0 = Clock::now();
  const auto write_manifest = [&] {
    m.timing["total_seconds"] = seconds_since(t0);
    std::ofstream os(out_dir / "run_manifest.json");
    os << dump_json(to_json(m)) << '\n';
  };
  try {
    const auto backend = kernels::parse_backend(config.kernels);
    kernels::select(config.kernels == "auto" ? kernels::detect() : backend);
    RunContext ctx(config, out_dir, m);
    // the worker count never changes results, so it lives with the timings
    auto stored = to_json(config);
    stored.erase("jobs");
    ctx.write_json("config.json", stored, true);
    m.timing["jobs"] = config.jobs;
    if (config.experiment == "simulate") {
      exp_simulate(ctx);
    } else if (config.experiment == "train") {
      exp_train(ctx);
    } else if (config.experiment == "drift-eval") {
      exp_drift_eval(ctx);
    } else if (config.experiment == "adapt") {
      exp_adapt(ctx);
    } else if (config.experiment == "sweep") {
      exp_sweep(ctx);
    } else if (config.experiment == "converge") {
      exp_converge(ctx);
    }
    m.status = "ok";
    write_manifest();
  } catch (const std::exception& e) {
    m.status = "failed";
    m.error = e.what();
    write_manifest();
    throw;
  }
  return m;
}

// Plot data ----------------------------------------------------------------------

namespace {

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name, const fs::path& src) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw ArtifactError(src.string() + ": no column '" + name + "'");
  }
};

Csv read_csv(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw ArtifactError("missing artifact " + p.string());
  Csv c;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (first) {
      c.header = std::move(cells);
      first = false;
    } else {
      c.rows.push_back(std::move(cells));
    }
  }
  return c;
}

void write_columns(const fs::path& out, const Csv& src, const fs::path& src_path,
                   const std::vector<std::pair<std::string, std::string>>& cols) {
  std::vector<std::size_t> idx;
  for (const auto& [from, to] : cols) idx.push_back(src.column(from, src_path));
  std::ofstream os(out);
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i].second;
  os << '\n';
  for (const auto& r : src.rows) {
    for (std::size_t i = 0; i < idx.size(); ++i) os << (i ? "," : "") << r.at(idx[i]);
    os << '\n';
  }
  if (!os) throw ArtifactError("cannot write " + out.string());
}

}  // namespace

fs::path emit_plotdata(const fs::path& dir, const std::string& tag) {
  const fs::path out = dir / (tag + ".csv");
  if (tag == "fig3" || tag == "fig4") {
    const std::string ch = tag == "fig3" ? "xA2" : "xB2";
    fs::path src = dir / "test_predictions.csv";
    if (!fs::exists(src)) src = dir / "nominal" / "test_predictions.csv";
    write_columns(out, read_csv(src), src,
                  {{"t", "t"}, {"truth_" + ch, "truth_" + ch}, {"pred_" + ch, "lstm_" + ch}});
  } else if (tag == "fig5") {
    const fs::path src = dir / "config.json";
    std::ifstream is(src);
    if (!is) throw ArtifactError("missing artifact " + src.string());
    const ExperimentConfig c = experiment_config_from_json(json::parse(is));
    std::ofstream os(out);
    os << drift_trace_csv(c.drift, c.dataset.tau, 2.0 * c.drift.t_end - c.drift.t_start);
  } else if (tag == "fig6" || tag == "fig7") {
    const std::string ch = tag == "fig6" ? "xA2" : "xB2";
    const fs::path src = dir / "eval_predictions.csv";
    write_columns(out, read_csv(src), src,
                  {{"t", "t"},
                   {"truth_" + ch, "truth_" + ch},
                   {"unadapted_" + ch, "unadapted_" + ch},
                   {"adapted_" + ch, "adapted_" + ch}});
  } else {
    throw ConfigError("figure", "unknown figure tag '" + tag + "' (fig3 .. fig7)");
  }
  return out;
}

}  // namespace rnnmhe
