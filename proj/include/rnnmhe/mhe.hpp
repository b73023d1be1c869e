#pragma once

// Moving-horizon re-estimation of network weights: every N steps, fit the
// last N+1 samples while penalizing the distance to the previous solution.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "rnnmhe/lbfgs.hpp"
#include "rnnmhe/model.hpp"
#include "rnnmhe/stream.hpp"
#include "json.hpp"

namespace rnnmhe {

struct MheConfig {
  std::size_t N = 10;       ///< horizon: each window holds N+1 samples
  double mu = 0.1;          ///< prior weight
  std::size_t washout = 100;  ///< history length for state reconstruction
  LbfgsOptions solver{};

  void validate() const;
};

nlohmann::ordered_json to_json(const MheConfig& c);
MheConfig mhe_config_from_json(const nlohmann::json& j);

struct HorizonWindow {
  Matrix u;  ///< (N+1) x n_u, samples k-N .. k
  Matrix y;  ///< (N+1) x n_y
  ModelState x_init;  ///< model state at k-N
  std::int64_t k = 0;
};

struct CostBreakdown {
  double total = 0.0;
  double fit = 0.0;    ///< sum of squared output errors over the window
  double prior = 0.0;  ///< squared distance to the prior, trainable coordinates
};

/// NNARX: the regressor built from the last p measured samples of the history.
/// Other kinds: the state reached by simulating from zero over the last
/// `washout` history samples. Throws DimensionError if the history is too short.
ModelState reconstruct_initial_state(const ParamVector& params, const Matrix& hist_u,
                                     const Matrix& hist_y, std::size_t washout);

CostBreakdown mhe_cost(const ParamVector& candidate, const HorizonWindow& window,
                       const ParamVector& prior, double mu);

struct SolveStats {
  std::size_t iterations = 0;
  std::size_t evaluations = 0;
  std::size_t rejected_nonfinite = 0;
  LbfgsStatus status = LbfgsStatus::MaxIterations;
  double wall_seconds = 0.0;
};

struct SolveResult {
  ParamVector solution;
  CostBreakdown cost;           ///< at the solution
  CostBreakdown cost_at_prior;  ///< at the starting point
  SolveStats stats;
};

/// Local minimization warm-started at the prior, over trainable coordinates.
SolveResult solve_update(const HorizonWindow& window, const ParamVector& prior,
                         const MheConfig& config);

struct AdaptCheckpoint {
  std::int64_t k = 0;
  ParamVector prior;
  ParamVector solution;
  CostBreakdown cost;
  double cost_at_prior = 0.0;  ///< total cost of the prior on this window
  std::size_t iterations = 0;
  std::size_t evaluations = 0;
  std::string status;
  double wall_seconds = 0.0;
};

struct AdaptOptions {
  /// Called with every checkpoint as soon as it is produced.
  std::function<void(const AdaptCheckpoint&)> sink;
  /// If set, supplies x_{k-N} (e.g. a matched twin's true state) instead of
  /// the washout observer; may return nullopt to fall back to the observer.
  std::function<std::optional<ModelState>(std::int64_t)> true_state;
  /// Called with each window before its solve.
  std::function<void(const HorizonWindow&)> on_window;
  std::size_t max_updates = std::numeric_limits<std::size_t>::max();
  bool keep_checkpoints = true;
};

struct AdaptRun {
  std::vector<AdaptCheckpoint> checkpoints;  ///< empty unless keep_checkpoints
  ParamVector final_params;
  std::size_t samples_consumed = 0;
  std::size_t updates = 0;
  std::size_t peak_buffered = 0;  ///< maximum samples ever held
  std::size_t buffer_capacity = 0;  ///< washout + N + 1
  double solve_seconds = 0.0;
};

/// Consumes the stream, solving at every k with (k - k0) a multiple of N and
/// at least washout + N, where k0 is the first sample's time index. The prior
/// of each solve is the previous solution (initially `initial`). Holds at most
/// washout + N + 1 samples. Throws StreamGapError on non-contiguous indices.
AdaptRun run_adaptation(const ParamVector& initial, SampleSource& stream, const MheConfig& config,
                        const AdaptOptions& options = {});

// Checkpoint log --------------------------------------------------------------

nlohmann::ordered_json to_json(const AdaptCheckpoint& c);
AdaptCheckpoint checkpoint_from_json(const nlohmann::json& j);

/// JSON-lines writer, one checkpoint per line with parameters inline.
class CheckpointLog {
 public:
  explicit CheckpointLog(const std::filesystem::path& path);
  void append(const AdaptCheckpoint& c);
  std::size_t size() const noexcept { return count_; }

 private:
  std::ofstream os_;
  std::filesystem::path path_;
  std::size_t count_ = 0;
};

std::vector<AdaptCheckpoint> read_checkpoint_log(const std::filesystem::path& path);

}  // namespace rnnmhe
