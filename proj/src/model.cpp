#include "rnnmhe/model.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <string>

#include "layout.hpp"
#include "rnnmhe/error.hpp"
#include "rnnmhe/kernels.hpp"
#include "rnnmhe/random.hpp"

namespace rnnmhe {

std::string_view to_string(Arch arch) noexcept {
  switch (arch) {
    case Arch::Nnarx: return "nnarx";
    case Arch::Esn: return "esn";
    case Arch::Lstm: return "lstm";
    case Arch::Gru: return "gru";
  }
  return "unknown";
}

Arch parse_arch(std::string_view name) {
  if (name == "nnarx" || name == "NNARX") return Arch::Nnarx;
  if (name == "esn" || name == "ESN") return Arch::Esn;
  if (name == "lstm" || name == "LSTM") return Arch::Lstm;
  if (name == "gru" || name == "GRU") return Arch::Gru;
  throw ConfigError("model.kind", "unknown architecture '" + std::string(name) + "'");
}

std::string_view to_string(InitScheme scheme) noexcept {
  return scheme == InitScheme::Zero ? "zero" : "glorot";
}

InitScheme parse_init_scheme(std::string_view name) {
  if (name == "zero") return InitScheme::Zero;
  if (name == "glorot") return InitScheme::Glorot;
  throw ConfigError("scheme", "unknown init scheme '" + std::string(name) + "'");
}

void ModelSpec::validate() const {
  if (n_u == 0 || n_y == 0) throw DimensionError("ModelSpec: n_u and n_y must be >= 1");
  if (kind != Arch::Nnarx && n_h == 0) throw DimensionError("ModelSpec: n_h must be >= 1");
  if (kind == Arch::Esn) {
    if (!(spectral_radius > 0.0 && spectral_radius < 1.0)) {
      throw ConfigError("model.spectral_radius", "must lie in (0, 1)");
    }
    if (!(leak > 0.0 && leak <= 1.0)) throw ConfigError("model.leak", "must lie in (0, 1]");
    if (!(input_scale > 0.0)) throw ConfigError("model.input_scale", "must be positive");
  }
  const auto layout = detail::Layout::of_unchecked(*this);
  if (layout.total == layout.frozen) {
    throw ConfigError("model", "spec has no trainable weights");
  }
}

namespace detail {

Layout Layout::of_unchecked(const ModelSpec& s) {
  Layout L;
  L.kind = s.kind;
  L.n_u = s.n_u;
  L.n_h = s.n_h;
  L.n_y = s.n_y;
  L.p = s.kind == Arch::Nnarx ? s.order : 0;
  switch (s.kind) {
    case Arch::Lstm:
      L.rows = 4 * s.n_h;
      L.in = s.n_u + s.n_h;
      L.state = 2 * s.n_h;
      L.feat = s.n_h;
      break;
    case Arch::Gru:
      L.rows = 3 * s.n_h;
      L.in = s.n_u + s.n_h;
      L.state = s.n_h;
      L.feat = s.n_h;
      break;
    case Arch::Esn:
      L.rows = s.n_h;
      L.in = s.n_u + s.n_h;
      L.state = s.n_h;
      L.feat = s.n_h;
      break;
    case Arch::Nnarx:
      L.state = L.p * (s.n_u + s.n_y);
      L.rows = s.n_h;
      L.in = s.n_h > 0 ? L.state : 0;
      L.feat = s.n_h > 0 ? s.n_h : L.state;
      break;
  }
  L.w = 0;
  L.b = L.rows * L.in;
  std::size_t off = L.b + L.rows;
  L.frozen = s.kind == Arch::Esn ? off : 0;
  L.C = off;
  off += s.n_y * L.feat;
  if (s.feedthrough) {
    L.D = off;
    off += s.n_y * s.n_u;
  }
  if (s.output_bias) {
    L.c = off;
    off += s.n_y;
  }
  L.total = off;
  L.leak = s.leak;
  return L;
}

Layout Layout::of(const ModelSpec& s) {
  s.validate();
  return of_unchecked(s);
}

}  // namespace detail

std::size_t param_count(const ModelSpec& spec) {
  const auto L = detail::Layout::of(spec);
  return L.total - L.frozen;
}
std::size_t storage_size(const ModelSpec& spec) { return detail::Layout::of(spec).total; }
std::size_t frozen_size(const ModelSpec& spec) { return detail::Layout::of(spec).frozen; }
std::size_t state_size(const ModelSpec& spec) { return detail::Layout::of(spec).state; }

ModelState zero_state(const ModelSpec& spec) {
  return ModelState{std::vector<double>(state_size(spec), 0.0)};
}

ModelState nnarx_regressor(const ModelSpec& spec, const Matrix& u_hist, const Matrix& y_hist) {
  if (spec.kind != Arch::Nnarx) throw DimensionError("nnarx_regressor: spec is not NNARX");
  const std::size_t p = spec.order;
  if (u_hist.rows() < p || y_hist.rows() < p) {
    throw DimensionError("nnarx_regressor: history shorter than the regression order");
  }
  if ((p > 0 && u_hist.cols() != spec.n_u) || (p > 0 && y_hist.cols() != spec.n_y)) {
    throw DimensionError("nnarx_regressor: history width mismatch");
  }
  ModelState x{std::vector<double>(p * (spec.n_u + spec.n_y))};
  for (std::size_t lag = 0; lag < p; ++lag) {
    const auto u = u_hist.row(u_hist.rows() - 1 - lag);
    const auto y = y_hist.row(y_hist.rows() - 1 - lag);
    std::copy(u.begin(), u.end(), x.values.begin() + static_cast<std::ptrdiff_t>(lag * spec.n_u));
    std::copy(y.begin(), y.end(),
              x.values.begin() + static_cast<std::ptrdiff_t>(p * spec.n_u + lag * spec.n_y));
  }
  return x;
}

ParamVector::ParamVector(ModelSpec spec, std::vector<double> values)
    : spec_(std::move(spec)), values_(std::move(values)) {
  if (values_.size() != storage_size(spec_)) {
    throw DimensionError("ParamVector: expected " + std::to_string(storage_size(spec_)) +
                         " values, got " + std::to_string(values_.size()));
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw NumericalError("ParamVector: non-finite weight");
  }
}

ParamVector ParamVector::with_trainable(std::span<const double> trainable) const {
  const std::size_t f = frozen_size(spec_);
  if (trainable.size() != values_.size() - f) {
    throw DimensionError("ParamVector::with_trainable: wrong length");
  }
  std::vector<double> v(values_.begin(), values_.begin() + static_cast<std::ptrdiff_t>(f));
  v.insert(v.end(), trainable.begin(), trainable.end());
  return ParamVector(spec_, std::move(v));
}

// ---------------------------------------------------------------------------
// Initialization

namespace {

void fill_uniform(Rng& rng, std::span<double> out, double limit) {
  for (double& v : out) v = uniform(rng, -limit, limit);
}

double spectral_radius_of(const double* W, std::size_t ld, std::size_t col0, std::size_t n) {
  Eigen::MatrixXd R(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      R(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = W[i * ld + col0 + j];
    }
  }
  Eigen::EigenSolver<Eigen::MatrixXd> es(R, /*computeEigenvectors=*/false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed, InitScheme scheme) {
  const auto L = detail::Layout::of(spec);
  std::vector<double> v(L.total, 0.0);
  std::span<double> all(v);

  if (spec.kind == Arch::Esn) {
    Rng rng(derive_seed(seed, 1));
    const std::size_t h = L.n_h;
    for (std::size_t i = 0; i < h; ++i) {
      double* row = v.data() + L.w + i * L.in;
      for (std::size_t j = 0; j < L.n_u; ++j) row[j] = uniform(rng, -spec.input_scale, spec.input_scale);
      for (std::size_t j = 0; j < h; ++j) row[L.n_u + j] = uniform(rng, -1.0, 1.0);
    }
    fill_uniform(rng, all.subspan(L.b, L.rows), 0.1);
    const double rho = spectral_radius_of(v.data() + L.w, L.in, L.n_u, h);
    if (!(rho > 0.0)) throw NumericalError("init_params: degenerate reservoir");
    const double scale = spec.spectral_radius / rho;
    for (std::size_t i = 0; i < h; ++i) {
      double* row = v.data() + L.w + i * L.in + L.n_u;
      for (std::size_t j = 0; j < h; ++j) row[j] *= scale;
    }
  }

  if (scheme == InitScheme::Glorot) {
    Rng rng(derive_seed(seed, 0));
    if (spec.kind != Arch::Esn && L.rows > 0 && L.in > 0) {
      const double gate_rows = static_cast<double>(
          spec.kind == Arch::Lstm ? L.n_h : spec.kind == Arch::Gru ? L.n_h : L.rows);
      fill_uniform(rng, all.subspan(L.w, L.rows * L.in),
                   std::sqrt(6.0 / (static_cast<double>(L.in) + gate_rows)));
      if (spec.kind == Arch::Lstm) {
        // forget-gate bias of one
        std::fill_n(v.begin() + static_cast<std::ptrdiff_t>(L.b + L.n_h), L.n_h, 1.0);
      }
    }
    if (L.feat > 0) {
      fill_uniform(rng, all.subspan(L.C, L.n_y * L.feat),
                   std::sqrt(6.0 / static_cast<double>(L.feat + L.n_y)));
    }
    if (L.D != detail::Layout::npos) {
      fill_uniform(rng, all.subspan(L.D, L.n_y * L.n_u),
                   std::sqrt(6.0 / static_cast<double>(L.n_u + L.n_y)));
    }
  }
  return ParamVector(spec, std::move(v));
}

double reservoir_spectral_radius(const ParamVector& params) {
  const auto& spec = params.spec();
  if (spec.kind != Arch::Esn) throw ConfigError("model.kind", "not an ESN");
  const auto L = detail::Layout::of(spec);
  return spectral_radius_of(params.values().data() + L.w, L.in, L.n_u, L.n_h);
}

// ---------------------------------------------------------------------------
// Simulation and gradients

namespace {

void check_finite(std::span<const double> v, std::size_t step, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericalError(std::string("non-finite ") + what + " at step " + std::to_string(step),
                           step);
    }
  }
}

void check_window(const detail::Layout& L, std::span<const double> params, const ModelState& x0,
                  const Matrix& inputs) {
  if (params.size() != L.total) throw DimensionError("parameter vector length mismatch");
  if (x0.values.size() != L.state) throw DimensionError("initial state length mismatch");
  if (inputs.rows() > 0 && inputs.cols() != L.n_u) throw DimensionError("input width mismatch");
}

}  // namespace

StepResult forward_step(const ModelSpec& spec, std::span<const double> params,
                        const ModelState& state, std::span<const double> u) {
  const auto L = detail::Layout::of(spec);
  if (params.size() != L.total) throw DimensionError("parameter vector length mismatch");
  if (state.values.size() != L.state) throw DimensionError("state length mismatch");
  if (u.size() != L.n_u) throw DimensionError("input length mismatch");
  detail::Engine eng(L, params);
  StepResult r{ModelState{std::vector<double>(L.state)}, std::vector<double>(L.n_y)};
  eng.output(state.values.data(), u.data(), r.y.data(), nullptr);
  eng.transition(state.values.data(), u.data(), r.y.data(), r.next_state.values.data(), nullptr);
  check_finite(r.y, 0, "output");
  check_finite(r.next_state.values, 0, "state");
  return r;
}

StepResult forward_step(const ParamVector& params, const ModelState& state,
                        std::span<const double> u) {
  return forward_step(params.spec(), params.values(), state, u);
}

Rollout simulate(const ModelSpec& spec, std::span<const double> params, const ModelState& x0,
                 const Matrix& inputs) {
  const auto L = detail::Layout::of(spec);
  check_window(L, params, x0, inputs);
  if (inputs.rows() == 0) throw DimensionError("simulate: empty input sequence");
  const std::size_t n = inputs.rows();
  detail::Engine eng(L, params);
  Rollout r{Matrix(n, L.n_y), Matrix(n + 1, L.state)};
  std::copy(x0.values.begin(), x0.values.end(), r.states.row(0).begin());
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = r.states.row(i).data();
    const double* u = inputs.row(i).data();
    eng.output(x, u, r.outputs.row(i).data(), nullptr);
    check_finite(r.outputs.row(i), i, "output");
    eng.transition(x, u, r.outputs.row(i).data(), r.states.row(i + 1).data(), nullptr);
    check_finite(r.states.row(i + 1), i, "state");
  }
  return r;
}

Rollout simulate(const ParamVector& params, const ModelState& x0, const Matrix& inputs) {
  return simulate(params.spec(), params.values(), x0, inputs);
}

Matrix simulate_outputs(const ModelSpec& spec, std::span<const double> params,
                        const ModelState& x0, const Matrix& inputs, ModelState* final_state) {
  const auto L = detail::Layout::of(spec);
  check_window(L, params, x0, inputs);
  const std::size_t n = inputs.rows();
  detail::Engine eng(L, params);
  Matrix out(n, L.n_y);
  std::vector<double> x = x0.values;
  std::vector<double> xn(L.state);
  for (std::size_t i = 0; i < n; ++i) {
    const double* u = inputs.row(i).data();
    eng.output(x.data(), u, out.row(i).data(), nullptr);
    check_finite(out.row(i), i, "output");
    eng.transition(x.data(), u, out.row(i).data(), xn.data(), nullptr);
    check_finite(xn, i, "state");
    x.swap(xn);
  }
  if (final_state) final_state->values = std::move(x);
  return out;
}

double window_loss(const ModelSpec& spec, std::span<const double> params, const ModelState& x0,
                   const Matrix& inputs, const Matrix& targets, std::size_t skip) {
  if (targets.rows() != inputs.rows()) throw DimensionError("inputs/targets length mismatch");
  if (targets.rows() > 0 && targets.cols() != spec.n_y) throw DimensionError("target width mismatch");
  const Matrix y = simulate_outputs(spec, params, x0, inputs);
  double loss = 0.0;
  const auto& K = kernels::active();
  for (std::size_t i = skip; i < y.rows(); ++i) {
    loss += K.sqdist(spec.n_y, y.row(i).data(), targets.row(i).data());
  }
  return loss;
}

LossGradient window_loss_and_gradient(const ModelSpec& spec, std::span<const double> params,
                                      const ModelState& x0, const Matrix& inputs,
                                      const Matrix& targets, std::size_t skip) {
  const auto L = detail::Layout::of(spec);
  check_window(L, params, x0, inputs);
  if (targets.rows() != inputs.rows()) throw DimensionError("inputs/targets length mismatch");
  if (targets.rows() > 0 && targets.cols() != L.n_y) throw DimensionError("target width mismatch");

  const std::size_t n = inputs.rows();
  detail::Engine eng(L, params);
  const std::size_t tstride = eng.tape_stride();
  const std::size_t fstride = eng.feat_tape_stride();
  std::vector<double> tape(n * tstride);
  std::vector<double> ftape(n * fstride);
  Matrix states(n + 1, L.state);
  Matrix outputs(n, L.n_y);
  std::copy(x0.values.begin(), x0.values.end(), states.row(0).begin());

  LossGradient lg;
  lg.grad.assign(L.total, 0.0);
  const bool through_time = L.kind != Arch::Esn;

  for (std::size_t i = 0; i < n; ++i) {
    const double* x = states.row(i).data();
    const double* u = inputs.row(i).data();
    double* y = outputs.row(i).data();
    eng.output(x, u, y, fstride ? ftape.data() + i * fstride : nullptr);
    check_finite(outputs.row(i), i, "output");
    if (i + 1 < n) {
      eng.transition(x, u, y, states.row(i + 1).data(),
                     through_time && tstride ? tape.data() + i * tstride : nullptr);
      check_finite(states.row(i + 1), i, "state");
    }
  }

  std::vector<double> dx_next(L.state, 0.0);
  std::vector<double> dx(L.state, 0.0);
  std::vector<double> dy(L.n_y, 0.0);
  for (std::size_t ii = n; ii-- > 0;) {
    const double* x = states.row(ii).data();
    const double* u = inputs.row(ii).data();
    const double* y = outputs.row(ii).data();
    const double* t = targets.row(ii).data();
    std::fill(dx.begin(), dx.end(), 0.0);
    for (std::size_t j = 0; j < L.n_y; ++j) {
      const double e = y[j] - t[j];
      if (ii >= skip) {
        lg.loss += e * e;
        dy[j] = 2.0 * e;
      } else {
        dy[j] = 0.0;
      }
    }
    if (through_time && ii + 1 < n) {
      eng.backward_transition(x, u, tstride ? tape.data() + ii * tstride : nullptr,
                              dx_next.data(), dx.data(), dy.data(), lg.grad.data());
    }
    eng.backward_output(x, u, fstride ? ftape.data() + ii * fstride : nullptr, dy.data(),
                        through_time ? dx.data() : nullptr, lg.grad.data());
    dx_next.swap(dx);
  }

  if (!std::isfinite(lg.loss)) throw NumericalError("non-finite loss");
  check_finite(lg.grad, NumericalError::npos, "gradient");
  return lg;
}

LossGradient window_loss_and_gradient(const ParamVector& params, const ModelState& x0,
                                      const Matrix& inputs, const Matrix& targets,
                                      std::size_t skip) {
  return window_loss_and_gradient(params.spec(), params.values(), x0, inputs, targets, skip);
}

}  // namespace rnnmhe
