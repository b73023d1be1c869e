#include "rnnmhe/convergence.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "rnnmhe/error.hpp"
#include "rnnmhe/kernels.hpp"
#include "rnnmhe/random.hpp"

namespace rnnmhe {

using nlohmann::ordered_json;

std::vector<double> output_error_stack(const ParamVector& theta_true, const ParamVector& theta_cand,
                                       const HorizonWindow& w) {
  if (!(theta_true.spec() == theta_cand.spec())) {
    throw DimensionError("output_error_stack: spec mismatch");
  }
  const ModelSpec& spec = theta_true.spec();
  const Matrix a = simulate_outputs(spec, theta_true.values(), w.x_init, w.u);
  const Matrix b = simulate_outputs(spec, theta_cand.values(), w.x_init, w.u);
  std::vector<double> g(a.data().size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = a.data()[i] - b.data()[i];
  return g;
}

double epsilon(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("epsilon: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

double epsilon(const ParamVector& theta_true, const ParamVector& theta) {
  if (!(theta_true.spec() == theta.spec())) throw DimensionError("epsilon: spec mismatch");
  return epsilon(theta_true.trainable(), theta.trainable());
}

DeltaEstimate estimate_delta(const ParamVector& theta_true, const DeltaSampler& s) {
  if (s.windows.empty()) throw ConfigError("delta.windows", "no windows to sample from");
  if (!(s.radius > 0.0)) throw ConfigError("delta.radius", "must be positive");
  if (s.n_samples < 1) throw ConfigError("delta.n_samples", "must be >= 1");
  const std::size_t nt = theta_true.trainable().size();
  Rng rng(s.seed);
  DeltaEstimate est;
  est.delta_hat = std::numeric_limits<double>::infinity();
  est.n_samples = s.n_samples;
  est.radius = s.radius;
  est.seed = s.seed;
  std::vector<double> dir(nt), z(nt);
  for (std::size_t i = 0; i < s.n_samples; ++i) {
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (double& d : dir) {
        d = standard_normal(rng);
        norm2 += d * d;
      }
    } while (!(norm2 > 0.0));
    double r = 0.0;
    while (!(r > 0.0)) r = s.radius * (1.0 - uniform01(rng));
    const double scale = r / std::sqrt(norm2);
    const auto zt = theta_true.trainable();
    for (std::size_t j = 0; j < nt; ++j) {
      dir[j] *= scale;
      z[j] = zt[j] + dir[j];
    }
    const std::size_t wi = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(s.windows.size()));
    const ParamVector cand = theta_true.with_trainable(z);
    const auto g = output_error_stack(theta_true, cand, s.windows[wi]);
    double gg = 0.0;
    for (double v : g) gg += v * v;
    const double ee = epsilon(theta_true, cand);
    if (!(ee > 0.0)) continue;
    const double ratio = gg / ee;
    if (ratio < est.delta_hat) {
      est.delta_hat = ratio;
      est.argmin_sample = i;
      est.argmin_window = wi;
      est.argmin_perturbation = dir;
    }
  }
  if (!std::isfinite(est.delta_hat)) {
    throw NumericalError("estimate_delta: every perturbation vanished");
  }
  return est;
}

Contraction contraction_coefficient(double mu, double delta) {
  if (!(delta > 0.0)) throw ConfigError("delta", "must be positive");
  if (!(mu >= 0.0)) throw ConfigError("mu", "must be nonnegative");
  const double rho = 2.0 * mu / (0.5 * mu + delta);
  return {rho, rho < 1.0};
}

ConvergenceReport track_error(const std::vector<AdaptCheckpoint>& log,
                              const ParamVector& theta_true, double mu, double delta_hat,
                              double tol) {
  ConvergenceReport r;
  r.mu = mu;
  r.delta_hat = delta_hat;
  r.tolerance = tol;
  if (delta_hat > 0.0) {
    const auto c = contraction_coefficient(mu, delta_hat);
    r.rho_c = c.rho_c;
    r.contraction_satisfied = c.satisfied;
  } else {
    r.rho_c = std::numeric_limits<double>::infinity();
  }
  if (log.empty()) return r;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const std::int64_t N = log.size() > 1 ? log[1].k - log[0].k : 0;
  r.epsilon0 = epsilon(theta_true, log.front().prior);
  r.rows.push_back({log.front().k - N, r.epsilon0, nan, false});
  double prev = r.epsilon0;
  for (const auto& c : log) {
    ErrorTrackRow row;
    row.k = c.k;
    row.epsilon = epsilon(theta_true, c.solution);
    row.ratio = prev > 0.0 ? row.epsilon / prev : nan;
    row.violated = row.epsilon > r.rho_c * prev * (1.0 + tol);
    if (row.violated) ++r.violations;
    if (row.epsilon > prev) r.monotone = false;
    prev = row.epsilon;
    r.rows.push_back(row);
  }
  r.epsilon_final = prev;
  return r;
}

void write_convergence_csv(const std::filesystem::path& path, const ConvergenceReport& r) {
  std::ofstream os(path);
  if (!os) throw ArtifactError("cannot write " + path.string());
  os << "k,epsilon,ratio,rho_c,violated\n";
  char buf[160];
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%d\n", static_cast<long long>(row.k),
                  row.epsilon, row.ratio, r.rho_c, row.violated ? 1 : 0);
    os << buf;
  }
  if (!os) throw ArtifactError("write failed: " + path.string());
}

ordered_json summary_json(const ConvergenceReport& r) {
  return ordered_json{{"mu", r.mu},
                      {"delta_hat", r.delta_hat},
                      {"rho_c", r.rho_c},
                      {"contraction_satisfied", r.contraction_satisfied},
                      {"tolerance", r.tolerance},
                      {"updates", r.rows.empty() ? 0 : r.rows.size() - 1},
                      {"violations", r.violations},
                      {"monotone", r.monotone},
                      {"epsilon0", r.epsilon0},
                      {"epsilon_final", r.epsilon_final}};
}

double norm_inequality_gap(std::span<const double> za, std::span<const double> zb,
                           std::span<const double> zbar) {
  if (za.size() != zb.size() || za.size() != zbar.size()) {
    throw DimensionError("norm_inequality_gap: length mismatch");
  }
  const auto& K = kernels::active();
  const std::size_t n = za.size();
  const double lhs = K.sqdist(n, za.data(), zbar.data());
  const double rhs = 0.5 * K.sqdist(n, za.data(), zb.data()) - K.sqdist(n, zbar.data(), zb.data());
  return lhs - rhs;
}

}  // namespace rnnmhe
