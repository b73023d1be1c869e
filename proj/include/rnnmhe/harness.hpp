#pragma once

// Config-driven experiment driver: dataset generation, nominal training, the
// drift evaluation, MHE adaptation runs and sweeps, and the matched-twin
// convergence study. Every run writes a manifest with checksums.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rnnmhe/mhe.hpp"
#include "rnnmhe/plant.hpp"
#include "rnnmhe/trainer.hpp"
#include "json.hpp"

namespace rnnmhe {

struct SweepPoint {
  double mu = 0.1;
  std::size_t N = 10;
};

struct ExperimentConfig {
  std::string experiment = "adapt";  ///< simulate | train | drift-eval | adapt | sweep | converge
  std::uint64_t seed = 1;
  int jobs = 1;
  std::string kernels = "auto";  ///< scalar | avx2 | auto

  DatasetConfig dataset{};  ///< plant constants, nominal input, excitation, split sizes
  DriftSchedule drift{};
  ScalerKind input_scaler = ScalerKind::Standard;
  ScalerKind output_scaler = ScalerKind::MinMax;
  ModelSpec model{Arch::Lstm, 6, 10, 4};
  TrainConfig train{};
  /// Directory of an earlier `train` run to take the nominal model from;
  /// empty means train one inside this run.
  std::string nominal_run;

  std::size_t eval_sequences = 35;
  std::size_t eval_length = 1000;
  std::optional<std::uint64_t> eval_seed;  ///< default derived from seed, disjoint from the dataset

  MheConfig mhe{};
  std::size_t stream_length = 3000;  ///< samples of the drifting plant fed to the adaptation
  std::optional<std::uint64_t> stream_seed;

  std::vector<SweepPoint> grid{{0.05, 10}, {0.1, 5}, {0.1, 10}, {0.1, 20}, {0.5, 10}};

  // matched-twin study
  double twin_epsilon0 = 0.5;
  std::size_t twin_updates = 50;
  std::size_t twin_delta_samples = 200;
  double twin_mu_fraction = 0.5;  ///< mu = fraction * (2/3) delta_hat

  std::uint64_t resolved_eval_seed() const;
  std::uint64_t resolved_stream_seed() const;
  void validate() const;
};

/// Missing fields keep their defaults; errors carry the JSON field path.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const ExperimentConfig& c);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
/// SHA-256 of the canonical config serialization (jobs excluded).
std::string config_hash(const ExperimentConfig& c);

struct ArtifactRecord {
  std::string path;  ///< relative to the run directory
  std::string sha256;
  bool deterministic = true;  ///< false when the file embeds wall times or timestamps
};

struct RunManifest {
  std::string experiment;
  std::string config_hash;
  std::string status = "running";  ///< ok | failed
  std::string error;
  nlohmann::ordered_json summary = nlohmann::ordered_json::object();  ///< metrics only, no timings
  std::vector<ArtifactRecord> artifacts;
  nlohmann::ordered_json timing = nlohmann::ordered_json::object();
};

nlohmann::ordered_json to_json(const RunManifest& m);
RunManifest read_manifest(const std::filesystem::path& run_dir);
/// Every artifact exists and matches its checksum.
bool verify_manifest(const std::filesystem::path& run_dir, const RunManifest& m);
/// Equality of the parts that must reproduce: experiment, config hash, status,
/// summary and the checksums of deterministic artifacts.
bool same_reproducible_content(const RunManifest& a, const RunManifest& b);

/// Runs the tagged experiment into out_dir and writes run_manifest.json. On a
/// failure the manifest is still written (status "failed") and the exception
/// is rethrown.
RunManifest run(const ExperimentConfig& config, const std::filesystem::path& out_dir);

/// Figure tags fig3 .. fig7. Reads the run's artifacts and writes <tag>.csv
/// into the run directory; returns its path. Throws ArtifactError if the run
/// lacks what the figure needs.
std::filesystem::path emit_plotdata(const std::filesystem::path& run_dir, const std::string& tag);

// Building blocks shared with the tests ----------------------------------------

struct NominalModel {
  ParamVector params;
  Scaler scaler;
};

/// Paired evaluation sets: the same excitation applied to the plant before
/// (start_value) and after (end_value) the drift, each from its own steady state.
struct DriftEvalSets {
  std::vector<Sequence> before;
  std::vector<Sequence> after;
};

DriftEvalSets make_drift_eval_sets(const ExperimentConfig& c);

/// Drifting-plant stream of c.stream_length samples from the pre-drift steady state.
std::unique_ptr<SampleSource> make_drift_stream(const ExperimentConfig& c);

/// Wraps a stream and normalizes every sample.
class ScaledSource : public SampleSource {
 public:
  ScaledSource(std::unique_ptr<SampleSource> inner, Scaler scaler)
      : inner_(std::move(inner)), scaler_(std::move(scaler)) {}
  std::optional<IOSample> next() override {
    auto s = inner_->next();
    if (!s) return s;
    return scaler_.apply(*s);
  }

 private:
  std::unique_ptr<SampleSource> inner_;
  Scaler scaler_;
};

/// Trains the nominal model on a freshly generated dataset (scaler fit on the train split).
NominalModel train_nominal(const ExperimentConfig& c, TrainResult* result = nullptr,
                           Dataset* dataset = nullptr);

}  // namespace rnnmhe
