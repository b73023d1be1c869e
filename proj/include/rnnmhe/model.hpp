#pragma once

// Recurrent plant models in state-space form
//
//   x_{k+1} = f(x_k, u_k; theta),   y_k = g(x_k, u_k; theta)
//
// for four architectures (NNARX, ESN, LSTM, GRU), with a flat weight vector,
// open-loop simulation and exact reverse-mode gradients of windowed
// squared-error losses.
//
// Weight layout (all matrices row-major):
//
//   [ W | b ]  recurrent / hidden block
//       LSTM  W: 4h x (n_u + h), gate order input, forget, candidate, output
//       GRU   W: 3h x (n_u + h), gate order update, reset, candidate
//       ESN   W: h x (n_u + h)   (frozen reservoir: input and recurrent weights)
//       NNARX W: h x p(n_u + n_y) (absent when h == 0)
//   [ C | D | c ]  affine readout y = C feat + D u + c
//       D only when feedthrough, c only when output_bias.
//
// The ESN reservoir is stored in the vector but is not trainable: it is the
// frozen prefix [0, frozen_size(spec)) and always receives zero gradient.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rnnmhe/matrix.hpp"

namespace rnnmhe {

enum class Arch { Nnarx, Esn, Lstm, Gru };

std::string_view to_string(Arch arch) noexcept;
Arch parse_arch(std::string_view name);

struct ModelSpec {
  Arch kind = Arch::Lstm;
  std::size_t n_u = 1;
  std::size_t n_h = 1;  ///< hidden width; for NNARX the feedforward layer width (0 = linear)
  std::size_t n_y = 1;

  std::size_t order = 1;         ///< NNARX regression order p (0 = static map)
  double spectral_radius = 0.9;  ///< ESN reservoir target, in (0, 1)
  double leak = 1.0;             ///< ESN leak rate, in (0, 1]
  double input_scale = 1.0;      ///< ESN input weight range

  bool feedthrough = false;  ///< readout also takes u_k
  bool output_bias = true;

  /// Throws DimensionError / ConfigError on an invalid descriptor.
  void validate() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Number of trainable scalars (724 for the benchmark LSTM 6/10/4).
std::size_t param_count(const ModelSpec& spec);
/// Length of a ParamVector: trainable entries plus the frozen ESN reservoir.
std::size_t storage_size(const ModelSpec& spec);
/// Length of the frozen prefix (ESN reservoir), 0 for the other kinds.
std::size_t frozen_size(const ModelSpec& spec);
std::size_t state_size(const ModelSpec& spec);

/// Immutable weight vector tied to the spec it was built for.
class ParamVector {
 public:
  /// Throws DimensionError on a length mismatch and NumericalError on
  /// non-finite entries.
  ParamVector(ModelSpec spec, std::vector<double> values);

  const ModelSpec& spec() const noexcept { return spec_; }
  std::span<const double> values() const noexcept { return values_; }
  /// Decision variables: values() without the frozen prefix.
  std::span<const double> trainable() const noexcept {
    return std::span<const double>(values_).subspan(frozen_size(spec_));
  }
  std::size_t size() const noexcept { return values_.size(); }

  /// Copy with the trainable block replaced.
  ParamVector with_trainable(std::span<const double> trainable) const;

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  ModelSpec spec_;
  std::vector<double> values_;
};

struct ModelState {
  std::vector<double> values;
  friend bool operator==(const ModelState&, const ModelState&) = default;
};

/// Zero state of the right length (LSTM: cell then hidden).
ModelState zero_state(const ModelSpec& spec);

/// NNARX regressor [u_{k-1} .. u_{k-p}, y_{k-1} .. y_{k-p}] from the last p
/// rows of a measured history (newest row last). Throws DimensionError if the
/// history has fewer than p rows or the spec is not NNARX.
ModelState nnarx_regressor(const ModelSpec& spec, const Matrix& u_hist, const Matrix& y_hist);

struct IOSample {
  std::vector<double> u;
  std::vector<double> y;
  std::int64_t t = 0;  ///< time index in steps
};

enum class InitScheme { Zero, Glorot };

std::string_view to_string(InitScheme scheme) noexcept;
InitScheme parse_init_scheme(std::string_view name);

/// Deterministic in (spec, seed, scheme). The ESN reservoir is always drawn
/// (and rescaled to spec.spectral_radius); the scheme governs the trainable
/// entries.
ParamVector init_params(const ModelSpec& spec, std::uint64_t seed, InitScheme scheme);

/// Spectral radius of the ESN recurrent block of `params`.
double reservoir_spectral_radius(const ParamVector& params);

struct StepResult {
  ModelState next_state;
  std::vector<double> y;
};

StepResult forward_step(const ModelSpec& spec, std::span<const double> params,
                        const ModelState& state, std::span<const double> u);
StepResult forward_step(const ParamVector& params, const ModelState& state,
                        std::span<const double> u);

struct Rollout {
  Matrix outputs;  ///< inputs.rows() x n_y
  Matrix states;   ///< (inputs.rows() + 1) x state_size; row 0 is x0
};

/// Open-loop rollout. Throws NumericalError carrying the failing step.
Rollout simulate(const ModelSpec& spec, std::span<const double> params, const ModelState& x0,
                 const Matrix& inputs);
Rollout simulate(const ParamVector& params, const ModelState& x0, const Matrix& inputs);

/// Outputs only, without storing the state trajectory.
Matrix simulate_outputs(const ModelSpec& spec, std::span<const double> params,
                        const ModelState& x0, const Matrix& inputs, ModelState* final_state = nullptr);

struct LossGradient {
  double loss = 0.0;
  std::vector<double> grad;  ///< storage_size(spec) entries; frozen entries are 0
};

/// loss = sum_{i >= skip} ||targets_i - yhat_i||^2 over the rollout from x0,
/// with its exact gradient by backward accumulation through the whole window.
LossGradient window_loss_and_gradient(const ModelSpec& spec, std::span<const double> params,
                                      const ModelState& x0, const Matrix& inputs,
                                      const Matrix& targets, std::size_t skip = 0);
LossGradient window_loss_and_gradient(const ParamVector& params, const ModelState& x0,
                                      const Matrix& inputs, const Matrix& targets,
                                      std::size_t skip = 0);

/// The loss alone (no tape), same definition as above.
double window_loss(const ModelSpec& spec, std::span<const double> params, const ModelState& x0,
                   const Matrix& inputs, const Matrix& targets, std::size_t skip = 0);

}  // namespace rnnmhe
