#pragma once

// Second reactor of the three-reactor chemical benchmark: a four-state ODE
// (level, two concentrations, temperature) driven by six exogenous inputs,
// integrated with fixed-step RK4, plus excitation and dataset generation.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rnnmhe/matrix.hpp"
#include "rnnmhe/random.hpp"
#include "rnnmhe/stream.hpp"
#include "json.hpp"

namespace rnnmhe {

/// Reactor constants, in the benchmark's own units.
struct PlantParams {
  double rho = 0.15;
  double A2 = 3.0;
  double kv1 = 0.5;
  double kv2 = 0.5;
  double xA0 = 1.0;
  double kA = 0.336;
  double kB = 0.089;
  double EA_over_R = -100.0;
  double EB_over_R = -150.0;
  double dHA = -40.0;
  double dHB = -50.0;
  double Cp = 2.5;
  double T0 = 313.0;

  /// Throws ConfigError when a strictly positive constant is not (rate
  /// constants may be zero).
  void validate() const;
  friend bool operator==(const PlantParams&, const PlantParams&) = default;
};

struct PlantState {
  double H2 = 0.0, xA2 = 0.0, xB2 = 0.0, T2 = 0.0;

  std::array<double, 4> to_array() const { return {H2, xA2, xB2, T2}; }
  static PlantState from_array(const std::array<double, 4>& a) { return {a[0], a[1], a[2], a[3]}; }
  friend bool operator==(const PlantState&, const PlantState&) = default;
};

struct PlantInput {
  double H1 = 1.0, xA1 = 0.8, xB1 = 0.1, T1 = 313.0, F20 = 0.1, Q2 = 0.0;

  std::array<double, 6> to_array() const { return {H1, xA1, xB1, T1, F20, Q2}; }
  static PlantInput from_array(const std::array<double, 6>& a) {
    return {a[0], a[1], a[2], a[3], a[4], a[5]};
  }
  friend bool operator==(const PlantInput&, const PlantInput&) = default;
};

inline constexpr std::size_t kPlantInputs = 6;
inline constexpr std::size_t kPlantOutputs = 4;
inline constexpr std::array<const char*, kPlantInputs> kInputNames{"H1", "xA1", "xB1",
                                                                  "T1", "F20", "Q2"};
inline constexpr std::array<const char*, kPlantOutputs> kOutputNames{"H2", "xA2", "xB2", "T2"};

/// (kA2, kB2) = (kA exp(-EA/(R T2)), kB exp(-EB/(R T2))). Throws PlantDomainError for T2 <= 0.
std::pair<double, double> rate_coefficients(double T2, const PlantParams& p);

/// Time derivatives of the four states, per second.
PlantState derivatives(const PlantState& x, const PlantInput& u, const PlantParams& p);

/// RK4 over dt split into `substeps` equal steps, input held constant.
/// Throws PlantDomainError if H2 or T2 leaves (0, inf) or the state turns non-finite.
PlantState step(const PlantState& x, const PlantInput& u, const PlantParams& p, double dt,
                int substeps);

enum class DriftShape { Linear, Smoothstep };

struct DriftSchedule {
  std::string param_name = "kA";
  double start_value = 0.336;
  double end_value = 0.326;
  double t_start = 100.0;
  double t_end = 200.0;
  DriftShape shape = DriftShape::Linear;

  void validate() const;
  /// Copy of `base` with the drifting constant set to its value at time t.
  PlantParams apply(const PlantParams& base, double t) const;
};

double drift_value(const DriftSchedule& schedule, double t);

/// Piecewise-constant multilevel signal: every `hold_steps` samples each
/// channel draws a fresh level uniformly in [lo, hi].
struct ExcitationConfig {
  std::array<double, kPlantInputs> lo{};
  std::array<double, kPlantInputs> hi{};
  std::size_t hold_steps = 20;

  /// +-10 % on levels, concentrations and F20, +-5 K on T1, Q2 in [-2, 2] kJ/s.
  static ExcitationConfig around(const PlantInput& nominal);
  void validate() const;
};

std::vector<PlantInput> generate_excitation(const ExcitationConfig& config, std::size_t n_samples,
                                            std::uint64_t seed);

struct SteadyStateOptions {
  double horizon = 3000.0;  ///< seconds of forward simulation before refinement
  double dt = 0.1;
  int substeps = 10;
  double tolerance = 1e-9;  ///< max |derivative| per channel
  int max_refinements = 50;
};

/// Equilibrium for a constant input. Throws Error if the tolerance is not met.
PlantState steady_state(const PlantParams& p, const PlantInput& nominal,
                        const SteadyStateOptions& options = {});
/// Same, seeded from `guess` instead of a long simulation.
PlantState steady_state_from(const PlantParams& p, const PlantInput& nominal, PlantState guess,
                             const SteadyStateOptions& options = {});

/// One recorded experiment: u.row(k) is applied on [k tau, (k+1) tau) and
/// y.row(k) is the plant state at k tau.
struct Sequence {
  Matrix u;  ///< length x 6
  Matrix y;  ///< length x 4
  double tau = 0.1;

  std::size_t size() const noexcept { return u.rows(); }
  friend bool operator==(const Sequence&, const Sequence&) = default;
};

struct DatasetConfig {
  std::size_t n_sequences = 136;
  std::size_t n_train = 100;
  std::size_t n_test = 36;
  std::size_t length = 1000;
  double tau = 0.1;
  int substeps = 10;
  PlantParams plant{};
  PlantInput nominal{};
  ExcitationConfig excitation = ExcitationConfig::around(PlantInput{});
  std::optional<DriftSchedule> drift;  ///< time runs from 0 in every sequence

  void validate() const;
};

struct Dataset {
  std::vector<Sequence> train;
  std::vector<Sequence> test;
  std::vector<std::size_t> train_index;  ///< generation index of each train sequence
  std::vector<std::size_t> test_index;
  std::uint64_t seed = 0;
  DatasetConfig config;
};

/// Sequence i uses excitation seed derive_seed(seed, i) and starts at the
/// steady state of the (undrifted) plant under the nominal input. The first
/// n_train indices form the train split, the next n_test the test split.
/// `jobs` > 1 generates sequences on worker threads; the result does not depend on it.
Dataset collect_dataset(const DatasetConfig& config, std::uint64_t seed, int jobs = 1);

/// Simulates one sequence from x0 under the given inputs; drift time starts at t0.
Sequence simulate_plant(const PlantParams& p, const PlantState& x0,
                        const std::vector<PlantInput>& inputs, double tau, int substeps,
                        const std::optional<DriftSchedule>& drift = std::nullopt, double t0 = 0.0);

// Persistence -----------------------------------------------------------------

nlohmann::ordered_json to_json(const PlantParams& p);
PlantParams plant_params_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const PlantInput& u);
PlantInput plant_input_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const DriftSchedule& d);
DriftSchedule drift_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const ExcitationConfig& e);
ExcitationConfig excitation_from_json(const nlohmann::json& j, const PlantInput& nominal);
nlohmann::ordered_json to_json(const DatasetConfig& c);
DatasetConfig dataset_config_from_json(const nlohmann::json& j);

/// CSV with header t,H1,xA1,xB1,T1,F20,Q2,H2,xA2,xB2,T2 at 17 significant digits.
void write_sequence_csv(const std::filesystem::path& path, const Sequence& seq, double t0 = 0.0);
Sequence read_sequence_csv(const std::filesystem::path& path);

/// Writes train_NNN.csv / test_NNN.csv and manifest.json (seed, config,
/// split assignment, SHA-256 per file). Returns the manifest.
nlohmann::ordered_json write_dataset(const std::filesystem::path& dir, const Dataset& ds);
/// Reads a directory written by write_dataset, verifying every checksum.
Dataset read_dataset(const std::filesystem::path& dir);

// Streams ---------------------------------------------------------------------

/// Unbounded simulated plant under multilevel excitation, with optional drift.
/// Emits samples with t = 0, 1, 2, ... and never stores past samples.
class PlantStream : public SampleSource {
 public:
  PlantStream(PlantParams params, PlantState x0, ExcitationConfig excitation, std::uint64_t seed,
              double tau = 0.1, int substeps = 10,
              std::optional<DriftSchedule> drift = std::nullopt,
              std::optional<std::size_t> limit = std::nullopt);

  std::optional<IOSample> next() override;
  /// Plant state at the time of the next sample.
  const PlantState& state() const noexcept { return x_; }

 private:
  PlantParams params_;
  PlantState x_;
  ExcitationConfig exc_;
  Rng rng_;
  double tau_;
  int substeps_;
  std::optional<DriftSchedule> drift_;
  std::optional<std::size_t> limit_;
  std::int64_t k_ = 0;
  PlantInput level_{};
};

}  // namespace rnnmhe
