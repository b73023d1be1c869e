#include "rnnmhe/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

#include "rnnmhe/error.hpp"
#include "rnnmhe/kernels.hpp"
#include "rnnmhe/random.hpp"

namespace rnnmhe {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(ScalerKind kind) noexcept {
  return kind == ScalerKind::Standard ? "standard" : "minmax";
}

ScalerKind parse_scaler_kind(std::string_view name) {
  if (name == "standard") return ScalerKind::Standard;
  if (name == "minmax") return ScalerKind::MinMax;
  throw ConfigError("scaler", "expected 'standard' or 'minmax', got '" + std::string(name) + "'");
}

// Scaler ------------------------------------------------------------------------

namespace {

Matrix affine(const Matrix& m, const std::vector<double>& shift, const std::vector<double>& scale,
              bool forward) {
  if (m.cols() != shift.size()) throw DimensionError("Scaler: channel count mismatch");
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      out(r, c) = forward ? (m(r, c) - shift[c]) / scale[c] : m(r, c) * scale[c] + shift[c];
    }
  }
  return out;
}

void fit_channels(const std::vector<const Matrix*>& data, ScalerKind kind, const char* what,
                  std::vector<double>& shift, std::vector<double>& scale) {
  const std::size_t nc = data.front()->cols();
  shift.assign(nc, 0.0);
  scale.assign(nc, 0.0);
  for (std::size_t c = 0; c < nc; ++c) {
    if (kind == ScalerKind::MinMax) {
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      for (const Matrix* m : data) {
        for (std::size_t r = 0; r < m->rows(); ++r) {
          lo = std::min(lo, (*m)(r, c));
          hi = std::max(hi, (*m)(r, c));
        }
      }
      shift[c] = lo;
      scale[c] = hi - lo;
    } else {
      // two-pass mean / variance
      double sum = 0.0;
      std::size_t n = 0;
      for (const Matrix* m : data) {
        for (std::size_t r = 0; r < m->rows(); ++r) sum += (*m)(r, c);
        n += m->rows();
      }
      const double mean = sum / static_cast<double>(n);
      double ss = 0.0;
      for (const Matrix* m : data) {
        for (std::size_t r = 0; r < m->rows(); ++r) ss += ((*m)(r, c) - mean) * ((*m)(r, c) - mean);
      }
      shift[c] = mean;
      scale[c] = std::sqrt(ss / static_cast<double>(n));
    }
    if (!(scale[c] > 0.0) || !std::isfinite(scale[c])) {
      throw Error(std::string("fit_scaler: ") + what + " channel " + std::to_string(c) +
                  " has zero spread");
    }
  }
}

}  // namespace

Matrix Scaler::apply_inputs(const Matrix& u) const { return affine(u, u_shift, u_scale, true); }
Matrix Scaler::apply_outputs(const Matrix& y) const { return affine(y, y_shift, y_scale, true); }
Matrix Scaler::invert_inputs(const Matrix& u) const { return affine(u, u_shift, u_scale, false); }
Matrix Scaler::invert_outputs(const Matrix& y) const { return affine(y, y_shift, y_scale, false); }

Sequence Scaler::apply(const Sequence& s) const {
  return Sequence{apply_inputs(s.u), apply_outputs(s.y), s.tau};
}

Sequence Scaler::invert(const Sequence& s) const {
  return Sequence{invert_inputs(s.u), invert_outputs(s.y), s.tau};
}

IOSample Scaler::apply(const IOSample& s) const {
  if (s.u.size() != u_shift.size() || s.y.size() != y_shift.size()) {
    throw DimensionError("Scaler: sample width mismatch");
  }
  IOSample out = s;
  for (std::size_t c = 0; c < s.u.size(); ++c) out.u[c] = (s.u[c] - u_shift[c]) / u_scale[c];
  for (std::size_t c = 0; c < s.y.size(); ++c) out.y[c] = (s.y[c] - y_shift[c]) / y_scale[c];
  return out;
}

Scaler fit_scaler(const std::vector<Sequence>& train, ScalerKind inputs, ScalerKind outputs) {
  if (train.empty()) throw Error("fit_scaler: empty split");
  std::vector<const Matrix*> us, ys;
  for (const auto& s : train) {
    us.push_back(&s.u);
    ys.push_back(&s.y);
  }
  Scaler sc;
  sc.input_kind = inputs;
  sc.output_kind = outputs;
  fit_channels(us, inputs, "input", sc.u_shift, sc.u_scale);
  fit_channels(ys, outputs, "output", sc.y_shift, sc.y_scale);
  return sc;
}

std::vector<Sequence> apply_scaler(const Scaler& scaler, const std::vector<Sequence>& seqs) {
  std::vector<Sequence> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) out.push_back(scaler.apply(s));
  return out;
}

ordered_json to_json(const Scaler& s) {
  return ordered_json{{"input_kind", to_string(s.input_kind)},
                      {"output_kind", to_string(s.output_kind)},
                      {"u_shift", s.u_shift},
                      {"u_scale", s.u_scale},
                      {"y_shift", s.y_shift},
                      {"y_scale", s.y_scale}};
}

Scaler scaler_from_json(const json& j) {
  try {
    Scaler s;
    s.input_kind = parse_scaler_kind(j.at("input_kind").get<std::string>());
    s.output_kind = parse_scaler_kind(j.at("output_kind").get<std::string>());
    s.u_shift = j.at("u_shift").get<std::vector<double>>();
    s.u_scale = j.at("u_scale").get<std::vector<double>>();
    s.y_shift = j.at("y_shift").get<std::vector<double>>();
    s.y_scale = j.at("y_scale").get<std::vector<double>>();
    if (s.u_shift.size() != s.u_scale.size() || s.y_shift.size() != s.y_scale.size()) {
      throw ArtifactError("scaler: shift/scale length mismatch");
    }
    return s;
  } catch (const json::exception& e) {
    throw ArtifactError(std::string("scaler: ") + e.what());
  }
}

// Config ------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size", "must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate", "must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("train.lr_decay", "must lie in (0, 1]");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("train.beta1", "must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.beta2", "must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps", "must be positive");
  if (patience < 1) throw ConfigError("train.patience", "must be >= 1");
  if (!(min_improvement >= 0.0 && min_improvement < 1.0)) {
    throw ConfigError("train.min_improvement", "must lie in [0, 1)");
  }
}

ordered_json to_json(const TrainConfig& c) {
  return ordered_json{{"epochs", c.epochs},
                      {"batch_size", c.batch_size},
                      {"learning_rate", c.learning_rate},
                      {"lr_decay", c.lr_decay},
                      {"beta1", c.beta1},
                      {"beta2", c.beta2},
                      {"adam_eps", c.adam_eps},
                      {"washout", c.washout},
                      {"seed", c.seed},
                      {"patience", c.patience},
                      {"min_improvement", c.min_improvement},
                      {"init", to_string(c.init)}};
}

TrainConfig train_config_from_json(const json& j) {
  static const char* const known[] = {"epochs", "batch_size", "learning_rate", "lr_decay", "beta1",
                                      "beta2", "adam_eps", "washout", "seed", "patience",
                                      "min_improvement", "init"};
  if (!j.is_object()) throw ConfigError("train", "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(std::begin(known), std::end(known), it.key()) == std::end(known)) {
      throw ConfigError("train." + it.key(), "unknown field");
    }
  }
  TrainConfig c;
  const auto get = [&](const char* key, auto& out) {
    if (!j.contains(key)) return;
    try {
      out = j.at(key).get<std::remove_reference_t<decltype(out)>>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("train.") + key, e.what());
    }
  };
  get("epochs", c.epochs);
  get("batch_size", c.batch_size);
  get("learning_rate", c.learning_rate);
  get("lr_decay", c.lr_decay);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("adam_eps", c.adam_eps);
  get("washout", c.washout);
  get("seed", c.seed);
  get("patience", c.patience);
  get("min_improvement", c.min_improvement);
  if (j.contains("init")) c.init = parse_init_scheme(j.at("init").get<std::string>());
  c.validate();
  return c;
}

// Training ------------------------------------------------------------------------

namespace {

void check_sequences(const ModelSpec& spec, const std::vector<Sequence>& seqs, std::size_t washout,
                     const char* what) {
  for (const auto& s : seqs) {
    if (s.u.cols() != spec.n_u || s.y.cols() != spec.n_y) {
      throw DimensionError(std::string(what) + ": sequence channels do not match the model");
    }
    if (washout >= s.size()) {
      throw ConfigError("train.washout", "must be shorter than every sequence");
    }
  }
}

/// Mean post-washout squared error over all sequences and channels.
double dataset_mse(const ModelSpec& spec, std::span<const double> params,
                   const std::vector<Sequence>& seqs, std::size_t washout) {
  if (seqs.empty()) return std::numeric_limits<double>::quiet_NaN();
  const ModelState x0 = zero_state(spec);
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& s : seqs) {
    total += window_loss(spec, params, x0, s.u, s.y, washout);
    count += (s.size() - washout) * spec.n_y;
  }
  return total / static_cast<double>(count);
}

template <class F>
void parallel_for(std::size_t n, int jobs, F&& f) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) f(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

TrainResult train_offline(const ModelSpec& spec, const std::vector<Sequence>& train,
                          const std::vector<Sequence>& test, const TrainConfig& cfg,
                          std::optional<ParamVector> initial,
                          const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  spec.validate();
  if (train.empty()) throw ConfigError("dataset.n_train", "training split is empty");
  check_sequences(spec, train, cfg.washout, "train_offline");
  check_sequences(spec, test, cfg.washout, "train_offline");
  if (initial && !(initial->spec() == spec)) {
    throw DimensionError("train_offline: initial parameters belong to another spec");
  }

  const ParamVector start = initial ? *initial : init_params(spec, cfg.seed, cfg.init);
  std::vector<double> theta(start.values().begin(), start.values().end());
  const std::size_t frozen = frozen_size(spec);
  const std::size_t nt = theta.size() - frozen;
  std::vector<double> m(nt, 0.0), v(nt, 0.0);

  TrainResult res{ParamVector(spec, theta), {}, 0, false};
  std::size_t last_progress = 0;  // epoch of the last improvement beyond min_improvement
  double progress_ref = std::numeric_limits<double>::infinity();
  const auto record = [&](std::size_t epoch) {
    EpochRecord r;
    r.epoch = epoch;
    r.train_mse = dataset_mse(spec, theta, train, cfg.washout);
    r.test_mse = dataset_mse(spec, theta, test, cfg.washout);
    if (!std::isfinite(r.train_mse)) {
      throw NumericalError("training diverged at epoch " + std::to_string(epoch), epoch);
    }
    const double prev_best = res.history.empty() ? std::numeric_limits<double>::infinity()
                                                 : res.history.back().best_train_mse;
    if (r.train_mse < prev_best) {
      res.params = ParamVector(spec, theta);
      res.best_epoch = epoch;
    }
    if (r.train_mse < progress_ref * (1.0 - cfg.min_improvement)) {
      progress_ref = r.train_mse;
      last_progress = epoch;
    }
    r.best_train_mse = std::min(prev_best, r.train_mse);
    res.history.push_back(r);
    if (on_epoch) on_epoch(r);
  };
  record(0);

  const ModelState x0 = zero_state(spec);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(derive_seed(cfg.seed, 7));
  std::vector<std::vector<double>> grads;
  std::vector<double> g(theta.size());
  std::size_t t_adam = 0;
  const auto& K = kernels::active();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // Fisher-Yates with the library's own uniform draw, so the order is portable
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform01(shuffle_rng) * static_cast<double>(i));
      std::swap(order[i - 1], order[std::min(j, i - 1)]);
    }
    const double lr = cfg.learning_rate * std::pow(cfg.lr_decay, static_cast<double>(epoch - 1));
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t nb = std::min(cfg.batch_size, order.size() - start);
      grads.resize(nb);
      std::size_t count = 0;
      for (std::size_t b = 0; b < nb; ++b) count += (train[order[start + b]].size() - cfg.washout) * spec.n_y;
      try {
        parallel_for(nb, cfg.jobs, [&](std::size_t b) {
          const auto& s = train[order[start + b]];
          grads[b] = window_loss_and_gradient(spec, theta, x0, s.u, s.y, cfg.washout).grad;
        });
      } catch (const NumericalError&) {
        throw NumericalError("training diverged at epoch " + std::to_string(epoch), epoch);
      }
      std::fill(g.begin(), g.end(), 0.0);
      for (std::size_t b = 0; b < nb; ++b) K.axpy(g.size(), 1.0, grads[b].data(), g.data());
      const double inv = 1.0 / static_cast<double>(count);

      ++t_adam;
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_adam));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_adam));
      for (std::size_t i = 0; i < nt; ++i) {
        const double gi = g[frozen + i] * inv;
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
        theta[frozen + i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.adam_eps);
      }
    }
    record(epoch);
    if (epoch - last_progress >= cfg.patience) {
      res.early_stopped = true;
      break;
    }
  }
  return res;
}

// Evaluation ------------------------------------------------------------------------

ordered_json to_json(const EvalReport& r) {
  return ordered_json{{"channel_mse", r.channel_mse},
                      {"average", r.average},
                      {"n_sequences", r.n_sequences},
                      {"washout", r.washout}};
}

EvalReport score_predictions(const std::vector<Matrix>& pred, const std::vector<Sequence>& truth,
                             std::size_t washout) {
  if (pred.size() != truth.size()) throw DimensionError("score_predictions: count mismatch");
  if (truth.empty()) throw DimensionError("score_predictions: no sequences");
  const std::size_t ny = truth.front().y.cols();
  EvalReport r;
  r.channel_mse.assign(ny, 0.0);
  r.n_sequences = truth.size();
  r.washout = washout;
  std::size_t count = 0;
  for (std::size_t s = 0; s < truth.size(); ++s) {
    const Matrix& y = truth[s].y;
    if (pred[s].rows() != y.rows() || pred[s].cols() != ny) {
      throw DimensionError("score_predictions: shape mismatch");
    }
    if (washout >= y.rows()) throw ConfigError("washout", "must be shorter than every sequence");
    for (std::size_t k = washout; k < y.rows(); ++k) {
      for (std::size_t c = 0; c < ny; ++c) {
        const double e = pred[s](k, c) - y(k, c);
        r.channel_mse[c] += e * e;
      }
    }
    count += y.rows() - washout;
  }
  for (double& c : r.channel_mse) c /= static_cast<double>(count);
  r.average = std::accumulate(r.channel_mse.begin(), r.channel_mse.end(), 0.0) /
              static_cast<double>(ny);
  return r;
}

EvalReport evaluate_mse(const ModelSpec& spec, std::span<const double> params,
                        const std::vector<Sequence>& seqs, std::size_t washout) {
  const ModelState x0 = zero_state(spec);
  std::vector<Matrix> pred;
  pred.reserve(seqs.size());
  for (const auto& s : seqs) pred.push_back(simulate_outputs(spec, params, x0, s.u));
  return score_predictions(pred, seqs, washout);
}

EvalReport evaluate_mse(const ParamVector& params, const std::vector<Sequence>& seqs,
                        std::size_t washout) {
  return evaluate_mse(params.spec(), params.values(), seqs, washout);
}

Matrix predict(const ParamVector& params, const Sequence& seq) {
  return simulate_outputs(params.spec(), params.values(), zero_state(params.spec()), seq.u);
}

}  // namespace rnnmhe
