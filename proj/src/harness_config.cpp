#include <fstream>
#include <set>

#include "rnnmhe/checksum.hpp"
#include "rnnmhe/error.hpp"
#include "rnnmhe/harness.hpp"
#include "rnnmhe/kernels.hpp"
#include "rnnmhe/model_io.hpp"
#include "rnnmhe/random.hpp"

namespace rnnmhe {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kEvalStream = 1'000'003;
constexpr std::uint64_t kAdaptStream = 1'000'033;

const std::set<std::string> kExperiments{"simulate", "train", "drift-eval",
                                         "adapt",    "sweep", "converge"};

template <class T>
void get(const json& j, const char* key, T& out, const std::string& path) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path + key, e.what());
  }
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path.empty() ? "config" : path, "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError(path + it.key(), "unknown field");
  }
}

}  // namespace

std::uint64_t ExperimentConfig::resolved_eval_seed() const {
  return eval_seed ? *eval_seed : derive_seed(seed, kEvalStream);
}

std::uint64_t ExperimentConfig::resolved_stream_seed() const {
  return stream_seed ? *stream_seed : derive_seed(seed, kAdaptStream);
}

void ExperimentConfig::validate() const {
  if (!kExperiments.contains(experiment)) {
    throw ConfigError("experiment", "unknown experiment '" + experiment + "'");
  }
  if (jobs < 1) throw ConfigError("jobs", "must be >= 1");
  kernels::parse_backend(kernels);
  dataset.validate();
  drift.validate();
  model.validate();
  if (model.n_u != kPlantInputs || model.n_y != kPlantOutputs) {
    throw ConfigError("model", "benchmark experiments need n_u = 6 and n_y = 4");
  }
  train.validate();
  if (train.washout >= dataset.length) throw ConfigError("train.washout", "must be < dataset.length");
  if (eval_sequences < 1) throw ConfigError("eval.n_sequences", "must be >= 1");
  if (train.washout >= eval_length) throw ConfigError("eval.length", "must exceed the washout");
  mhe.validate();
  if (grid.empty()) throw ConfigError("sweep.grid", "must not be empty");
  for (const auto& p : grid) {
    if (p.N < 1 || !(p.mu >= 0.0)) throw ConfigError("sweep.grid", "needs mu >= 0 and N >= 1");
  }
  if (!(twin_epsilon0 > 0.0)) throw ConfigError("converge.epsilon0", "must be positive");
  if (twin_updates < 1) throw ConfigError("converge.updates", "must be >= 1");
  if (twin_delta_samples < 1) throw ConfigError("converge.delta_samples", "must be >= 1");
  if (!(twin_mu_fraction > 0.0)) throw ConfigError("converge.mu_fraction", "must be positive");
}

ExperimentConfig experiment_config_from_json(const json& j) {
  reject_unknown(j,
                 {"experiment", "seed", "jobs", "kernels", "plant", "dataset", "scaler", "model",
                  "train", "nominal_run", "eval", "mhe", "stream", "sweep", "converge"},
                 "");
  ExperimentConfig c;
  get(j, "experiment", c.experiment, "");
  get(j, "seed", c.seed, "");
  get(j, "jobs", c.jobs, "");
  get(j, "kernels", c.kernels, "");
  get(j, "nominal_run", c.nominal_run, "");

  json ds = j.contains("dataset") ? j.at("dataset") : json::object();
  if (j.contains("plant")) {
    const auto& p = j.at("plant");
    reject_unknown(p, {"params", "nominal", "drift"}, "plant.");
    if (p.contains("params")) ds["plant"] = p.at("params");
    if (p.contains("nominal")) ds["nominal"] = p.at("nominal");
    if (p.contains("drift")) c.drift = drift_from_json(p.at("drift"));
  }
  if (ds.contains("drift")) throw ConfigError("dataset.drift", "set plant.drift instead");
  c.dataset = dataset_config_from_json(ds);

  if (j.contains("scaler")) {
    const auto& s = j.at("scaler");
    reject_unknown(s, {"inputs", "outputs"}, "scaler.");
    if (s.contains("inputs")) c.input_scaler = parse_scaler_kind(s.at("inputs").get<std::string>());
    if (s.contains("outputs")) c.output_scaler = parse_scaler_kind(s.at("outputs").get<std::string>());
  }
  if (j.contains("model")) c.model = spec_from_json(j.at("model"));
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    reject_unknown(e, {"n_sequences", "length", "seed"}, "eval.");
    get(e, "n_sequences", c.eval_sequences, "eval.");
    get(e, "length", c.eval_length, "eval.");
    if (e.contains("seed") && !e.at("seed").is_null()) c.eval_seed = e.at("seed").get<std::uint64_t>();
  }
  if (j.contains("mhe")) c.mhe = mhe_config_from_json(j.at("mhe"));
  if (j.contains("stream")) {
    const auto& s = j.at("stream");
    reject_unknown(s, {"length", "seed"}, "stream.");
    get(s, "length", c.stream_length, "stream.");
    if (s.contains("seed") && !s.at("seed").is_null()) c.stream_seed = s.at("seed").get<std::uint64_t>();
  }
  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    reject_unknown(s, {"grid"}, "sweep.");
    if (s.contains("grid")) {
      c.grid.clear();
      for (const auto& row : s.at("grid")) {
        SweepPoint p;
        get(row, "mu", p.mu, "sweep.grid.");
        get(row, "N", p.N, "sweep.grid.");
        c.grid.push_back(p);
      }
    }
  }
  if (j.contains("converge")) {
    const auto& s = j.at("converge");
    reject_unknown(s, {"epsilon0", "updates", "delta_samples", "mu_fraction"}, "converge.");
    get(s, "epsilon0", c.twin_epsilon0, "converge.");
    get(s, "updates", c.twin_updates, "converge.");
    get(s, "delta_samples", c.twin_delta_samples, "converge.");
    get(s, "mu_fraction", c.twin_mu_fraction, "converge.");
  }
  c.validate();
  return c;
}

ordered_json to_json(const ExperimentConfig& c) {
  ordered_json ds = to_json(c.dataset);
  ordered_json plant{{"params", ds["plant"]}, {"nominal", ds["nominal"]}, {"drift", to_json(c.drift)}};
  ds.erase("plant");
  ds.erase("nominal");
  ds.erase("drift");
  ordered_json grid = ordered_json::array();
  for (const auto& p : c.grid) grid.push_back({{"mu", p.mu}, {"N", p.N}});
  ordered_json j;
  j["experiment"] = c.experiment;
  j["seed"] = c.seed;
  j["jobs"] = c.jobs;
  j["kernels"] = c.kernels;
  j["plant"] = plant;
  j["dataset"] = ds;
  j["scaler"] = {{"inputs", to_string(c.input_scaler)}, {"outputs", to_string(c.output_scaler)}};
  j["model"] = spec_to_json(c.model);
  j["train"] = to_json(c.train);
  j["nominal_run"] = c.nominal_run;
  j["eval"] = {{"n_sequences", c.eval_sequences},
               {"length", c.eval_length},
               {"seed", c.eval_seed ? ordered_json(*c.eval_seed) : ordered_json(nullptr)}};
  j["mhe"] = to_json(c.mhe);
  j["stream"] = {{"length", c.stream_length},
                 {"seed", c.stream_seed ? ordered_json(*c.stream_seed) : ordered_json(nullptr)}};
  j["sweep"] = {{"grid", grid}};
  j["converge"] = {{"epsilon0", c.twin_epsilon0},
                   {"updates", c.twin_updates},
                   {"delta_samples", c.twin_delta_samples},
                   {"mu_fraction", c.twin_mu_fraction}};
  return j;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config", "cannot read " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("config", path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

std::string config_hash(const ExperimentConfig& c) {
  ordered_json j = to_json(c);
  j.erase("jobs");
  return sha256_hex(dump_json(j, -1));
}

}  // namespace rnnmhe
