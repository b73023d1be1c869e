#pragma once

// Diagnostics for the matched-model contraction argument: the stacked
// output-error vector, the weight error epsilon, a sampled estimate of the
// identifiability constant delta, and the per-update contraction check.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "rnnmhe/mhe.hpp"
#include "rnnmhe/model.hpp"
#include "json.hpp"

namespace rnnmhe {

/// Chronological concatenation of yhat(theta_true) - yhat(theta_cand) over the
/// window, both rollouts starting from window.x_init.
std::vector<double> output_error_stack(const ParamVector& theta_true, const ParamVector& theta_cand,
                                       const HorizonWindow& window);

/// Squared Euclidean distance over trainable coordinates.
double epsilon(const ParamVector& theta_true, const ParamVector& theta);
/// Same on raw vectors. Throws DimensionError on a length mismatch.
double epsilon(std::span<const double> theta_true, std::span<const double> theta);

struct DeltaSampler {
  std::size_t n_samples = 200;
  double radius = 1.0;  ///< perturbation norms are drawn uniformly in (0, radius]
  std::uint64_t seed = 0;
  std::vector<HorizonWindow> windows;
};

struct DeltaEstimate {
  double delta_hat = 0.0;
  std::size_t n_samples = 0;
  double radius = 0.0;
  std::uint64_t seed = 0;
  std::size_t argmin_sample = 0;
  std::size_t argmin_window = 0;
  std::vector<double> argmin_perturbation;  ///< trainable coordinates
};

/// delta_hat = min over samples of ||Gamma||^2 / ||theta_true - theta||^2 with
/// theta = theta_true + random perturbation of the trainable block. Throws
/// ConfigError without windows or with a nonpositive radius.
DeltaEstimate estimate_delta(const ParamVector& theta_true, const DeltaSampler& sampler);

struct Contraction {
  double rho_c = 0.0;
  bool satisfied = false;  ///< rho_c < 1, i.e. mu < 2 delta / 3
};

/// rho_c = 2 mu / (mu / 2 + delta). Throws ConfigError for delta <= 0 or mu < 0.
Contraction contraction_coefficient(double mu, double delta);

struct ErrorTrackRow {
  std::int64_t k = 0;
  double epsilon = 0.0;
  double ratio = 0.0;  ///< epsilon_k / epsilon_{k-N}; NaN where undefined
  bool violated = false;
};

struct ConvergenceReport {
  std::vector<ErrorTrackRow> rows;  ///< rows[0] is the starting prior (ratio NaN)
  double mu = 0.0;
  double delta_hat = 0.0;
  double rho_c = 0.0;
  bool contraction_satisfied = false;
  double tolerance = 0.01;
  std::size_t violations = 0;
  bool monotone = true;  ///< epsilon non-increasing across updates
  double epsilon0 = 0.0;
  double epsilon_final = 0.0;
};

/// Flags every update with epsilon_k > rho_c epsilon_{k-N} (1 + tolerance).
ConvergenceReport track_error(const std::vector<AdaptCheckpoint>& log, const ParamVector& theta_true,
                              double mu, double delta_hat, double tolerance = 0.01);

/// CSV columns k, epsilon, ratio, rho_c, violated.
void write_convergence_csv(const std::filesystem::path& path, const ConvergenceReport& r);
nlohmann::ordered_json summary_json(const ConvergenceReport& r);

/// ||z_a - z_bar||^2 - (1/2 ||z_a - z_b||^2 - ||z_bar - z_b||^2), which is
/// nonnegative for every triple.
double norm_inequality_gap(std::span<const double> z_a, std::span<const double> z_b,
                           std::span<const double> z_bar);

}  // namespace rnnmhe
