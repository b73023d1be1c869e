#pragma once

// Offline identification of the nominal model and washout-aware evaluation.

#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "rnnmhe/model.hpp"
#include "rnnmhe/plant.hpp"
#include "json.hpp"

namespace rnnmhe {

enum class ScalerKind {
  Standard,  ///< zero mean, unit standard deviation on the training split
  MinMax,    ///< training range mapped to [0, 1]
};

std::string_view to_string(ScalerKind kind) noexcept;
ScalerKind parse_scaler_kind(std::string_view name);

/// Per-channel affine normalization: normalized = (raw - shift) / scale.
struct Scaler {
  ScalerKind input_kind = ScalerKind::Standard;
  ScalerKind output_kind = ScalerKind::Standard;
  std::vector<double> u_shift, u_scale;
  std::vector<double> y_shift, y_scale;

  Matrix apply_inputs(const Matrix& u) const;
  Matrix apply_outputs(const Matrix& y) const;
  Matrix invert_inputs(const Matrix& u) const;
  Matrix invert_outputs(const Matrix& y) const;
  Sequence apply(const Sequence& s) const;
  Sequence invert(const Sequence& s) const;
  IOSample apply(const IOSample& s) const;

  friend bool operator==(const Scaler&, const Scaler&) = default;
};

/// Fits on the given (training) sequences. Throws Error on a zero-variance
/// or zero-range channel.
Scaler fit_scaler(const std::vector<Sequence>& train, ScalerKind inputs = ScalerKind::Standard,
                  ScalerKind outputs = ScalerKind::Standard);
std::vector<Sequence> apply_scaler(const Scaler& scaler, const std::vector<Sequence>& seqs);

nlohmann::ordered_json to_json(const Scaler& s);
Scaler scaler_from_json(const nlohmann::json& j);

struct TrainConfig {
  std::size_t epochs = 2000;
  std::size_t batch_size = 10;  ///< sequences per Adam step
  double learning_rate = 1e-3;
  double lr_decay = 1.0;  ///< multiplicative, per epoch
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t washout = 100;  ///< leading steps excluded from the loss
  std::uint64_t seed = 0;
  std::size_t patience = 50;  ///< epochs without a new best train MSE before stopping
  double min_improvement = 1e-6;  ///< relative drop that counts as a new best for patience
  InitScheme init = InitScheme::Glorot;
  int jobs = 1;

  void validate() const;
};

nlohmann::ordered_json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochRecord {
  std::size_t epoch = 0;  ///< 0 is the initial point
  double train_mse = 0.0;
  double test_mse = 0.0;  ///< NaN without a test split
  double best_train_mse = 0.0;  ///< non-increasing
};

struct TrainResult {
  ParamVector params;  ///< the best-train-MSE iterate
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  bool early_stopped = false;
};

/// Adam on the mean post-washout squared error of open-loop rollouts from the
/// zero state; sequences are expected already normalized. Deterministic per
/// config.seed for any `jobs`. Throws NumericalError (step() = epoch) on divergence.
/// `on_epoch`, if given, sees every history record as it is produced.
TrainResult train_offline(const ModelSpec& spec, const std::vector<Sequence>& train,
                          const std::vector<Sequence>& test, const TrainConfig& config,
                          std::optional<ParamVector> initial = std::nullopt,
                          const std::function<void(const EpochRecord&)>& on_epoch = {});

struct EvalReport {
  std::vector<double> channel_mse;
  double average = 0.0;  ///< arithmetic mean of channel_mse
  std::size_t n_sequences = 0;
  std::size_t washout = 0;
};

nlohmann::ordered_json to_json(const EvalReport& r);

/// Open-loop rollout of each sequence from the zero state; per-channel MSE
/// over samples k >= washout.
EvalReport evaluate_mse(const ModelSpec& spec, std::span<const double> params,
                        const std::vector<Sequence>& sequences, std::size_t washout);
EvalReport evaluate_mse(const ParamVector& params, const std::vector<Sequence>& sequences,
                        std::size_t washout);

/// Per-channel MSE of predictions against truth over rows >= washout.
EvalReport score_predictions(const std::vector<Matrix>& predictions,
                             const std::vector<Sequence>& truth, std::size_t washout);

/// Open-loop prediction of one sequence from the zero state.
Matrix predict(const ParamVector& params, const Sequence& seq);

}  // namespace rnnmhe
