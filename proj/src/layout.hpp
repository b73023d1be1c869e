#pragma once

// Internal: weight layout and the per-architecture step / adjoint-step
// routines shared by simulation and the gradient code in model.cpp.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "rnnmhe/kernels.hpp"
#include "rnnmhe/model.hpp"

namespace rnnmhe::detail {

/// Pre-activations are clamped to this magnitude before exponentials.
inline constexpr double kSaturation = 50.0;

inline double sigmoid(double z) {
  z = std::clamp(z, -kSaturation, kSaturation);
  return 1.0 / (1.0 + std::exp(-z));
}

struct Layout {
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  Arch kind{};
  std::size_t n_u = 0, n_h = 0, n_y = 0, p = 0;
  std::size_t rows = 0;   // rows of the recurrent/hidden block W
  std::size_t in = 0;     // columns of W
  std::size_t state = 0;  // state length
  std::size_t feat = 0;   // readout feature length
  std::size_t w = 0, b = 0, C = 0, D = npos, c = npos;
  std::size_t frozen = 0, total = 0;
  double leak = 1.0;

  static Layout of(const ModelSpec& spec);
  static Layout of_unchecked(const ModelSpec& spec);
};

class Engine {
 public:
  Engine(const Layout& layout, std::span<const double> theta)
      : L_(layout), th_(theta.data()), K_(kernels::active()) {
    const std::size_t scratch = 2 * (L_.rows + L_.in + L_.state + L_.feat + L_.n_y) + 8;
    s1_.resize(scratch);
    s2_.resize(scratch);
  }

  /// Per-step transition tape (doubles).
  std::size_t tape_stride() const noexcept {
    switch (L_.kind) {
      case Arch::Lstm: return L_.in + 5 * L_.n_h;
      case Arch::Gru: return 2 * L_.in + 3 * L_.n_h;
      default: return 0;
    }
  }
  /// Per-step tape for the NNARX hidden layer of the output map.
  std::size_t feat_tape_stride() const noexcept {
    return (L_.kind == Arch::Nnarx && L_.n_h > 0) ? L_.n_h : 0;
  }

  void output(const double* x, const double* u, double* y, double* feat_tape) {
    const double* feat = feature(x, feat_tape);
    K_.gemv(L_.n_y, L_.feat, th_ + L_.C, feat, L_.c != Layout::npos ? th_ + L_.c : nullptr, y);
    if (L_.D != Layout::npos) {
      for (std::size_t j = 0; j < L_.n_y; ++j) {
        y[j] += K_.dot(L_.n_u, th_ + L_.D + j * L_.n_u, u);
      }
    }
  }

  void transition(const double* x, const double* u, const double* y, double* xn, double* tape) {
    switch (L_.kind) {
      case Arch::Lstm: lstm_forward(x, u, xn, tape); break;
      case Arch::Gru: gru_forward(x, u, xn, tape); break;
      case Arch::Esn: esn_forward(x, u, xn); break;
      case Arch::Nnarx: nnarx_shift(x, u, y, xn); break;
    }
  }

  /// dx += (d x_{k+1} / d x_k)^T dxn, grad += (d x_{k+1} / d theta)^T dxn, and
  /// for NNARX dy += the part of dxn that lands on the fed-back output.
  void backward_transition(const double* x, const double* /*u*/, const double* tape,
                           const double* dxn, double* dx, double* dy, double* grad) {
    switch (L_.kind) {
      case Arch::Lstm: lstm_backward(x, tape, dxn, dx, grad); break;
      case Arch::Gru: gru_backward(x, tape, dxn, dx, grad); break;
      case Arch::Esn: break;
      case Arch::Nnarx: nnarx_shift_backward(dxn, dx, dy); break;
    }
  }

  /// Adjoint of the output map; dx may be null when the state adjoint is not needed.
  void backward_output(const double* x, const double* u, const double* feat_tape,
                       const double* dy, double* dx, double* grad) {
    const double* feat = feature_from_tape(x, feat_tape);
    if (L_.feat > 0) K_.ger_acc(L_.n_y, L_.feat, dy, feat, grad + L_.C);
    if (L_.D != Layout::npos) K_.ger_acc(L_.n_y, L_.n_u, dy, u, grad + L_.D);
    if (L_.c != Layout::npos) {
      for (std::size_t j = 0; j < L_.n_y; ++j) grad[L_.c + j] += dy[j];
    }
    if (dx == nullptr || L_.feat == 0) return;

    double* dfeat = s1_.data();
    std::fill_n(dfeat, L_.feat, 0.0);
    K_.gemv_t_acc(L_.n_y, L_.feat, th_ + L_.C, dy, dfeat);
    switch (L_.kind) {
      case Arch::Lstm:
        for (std::size_t j = 0; j < L_.n_h; ++j) dx[L_.n_h + j] += dfeat[j];
        break;
      case Arch::Gru:
      case Arch::Esn:
        for (std::size_t j = 0; j < L_.n_h; ++j) dx[j] += dfeat[j];
        break;
      case Arch::Nnarx:
        if (L_.n_h == 0) {
          for (std::size_t j = 0; j < L_.state; ++j) dx[j] += dfeat[j];
        } else {
          double* dpre = s2_.data();
          for (std::size_t j = 0; j < L_.n_h; ++j) dpre[j] = dfeat[j] * (1.0 - feat[j] * feat[j]);
          K_.ger_acc(L_.rows, L_.in, dpre, x, grad + L_.w);
          for (std::size_t j = 0; j < L_.n_h; ++j) grad[L_.b + j] += dpre[j];
          K_.gemv_t_acc(L_.rows, L_.in, th_ + L_.w, dpre, dx);
        }
        break;
    }
  }

 private:
  const double* feature(const double* x, double* feat_tape) {
    switch (L_.kind) {
      case Arch::Lstm: return x + L_.n_h;
      case Arch::Gru:
      case Arch::Esn: return x;
      case Arch::Nnarx:
        if (L_.n_h == 0) return x;
        {
          double* a = feat_tape ? feat_tape : s1_.data();
          K_.gemv(L_.rows, L_.in, th_ + L_.w, x, th_ + L_.b, a);
          for (std::size_t j = 0; j < L_.n_h; ++j) a[j] = std::tanh(a[j]);
          return a;
        }
    }
    return x;
  }

  const double* feature_from_tape(const double* x, const double* feat_tape) const {
    switch (L_.kind) {
      case Arch::Lstm: return x + L_.n_h;
      case Arch::Nnarx: return L_.n_h == 0 ? x : feat_tape;
      default: return x;
    }
  }

  // LSTM tape: ui (in) | gates i,f,g,o (4h) | tanh(c') (h)
  void lstm_forward(const double* x, const double* u, double* xn, double* tape) {
    const std::size_t h = L_.n_h;
    double* ui = tape ? tape : s1_.data();
    double* gates = tape ? tape + L_.in : s2_.data();
    double* tc = tape ? tape + L_.in + 4 * h : s2_.data() + 4 * h;
    std::copy_n(u, L_.n_u, ui);
    std::copy_n(x + h, h, ui + L_.n_u);
    K_.gemv(L_.rows, L_.in, th_ + L_.w, ui, th_ + L_.b, gates);
    for (std::size_t j = 0; j < h; ++j) {
      const double ig = sigmoid(gates[j]);
      const double fg = sigmoid(gates[h + j]);
      const double gg = std::tanh(gates[2 * h + j]);
      const double og = sigmoid(gates[3 * h + j]);
      gates[j] = ig;
      gates[h + j] = fg;
      gates[2 * h + j] = gg;
      gates[3 * h + j] = og;
      const double c = fg * x[j] + ig * gg;
      const double t = std::tanh(c);
      tc[j] = t;
      xn[j] = c;
      xn[h + j] = og * t;
    }
  }

  void lstm_backward(const double* x, const double* tape, const double* dxn, double* dx,
                     double* grad) {
    const std::size_t h = L_.n_h;
    const double* ui = tape;
    const double* gates = tape + L_.in;
    const double* tc = tape + L_.in + 4 * h;
    double* dz = s1_.data();
    for (std::size_t j = 0; j < h; ++j) {
      const double ig = gates[j], fg = gates[h + j], gg = gates[2 * h + j], og = gates[3 * h + j];
      const double dh = dxn[h + j];
      const double dc = dxn[j] + dh * og * (1.0 - tc[j] * tc[j]);
      dz[j] = dc * gg * ig * (1.0 - ig);
      dz[h + j] = dc * x[j] * fg * (1.0 - fg);
      dz[2 * h + j] = dc * ig * (1.0 - gg * gg);
      dz[3 * h + j] = dh * tc[j] * og * (1.0 - og);
      dx[j] += dc * fg;
    }
    K_.ger_acc(L_.rows, L_.in, dz, ui, grad + L_.w);
    for (std::size_t j = 0; j < L_.rows; ++j) grad[L_.b + j] += dz[j];
    double* dui = s2_.data();
    std::fill_n(dui, L_.in, 0.0);
    K_.gemv_t_acc(L_.rows, L_.in, th_ + L_.w, dz, dui);
    for (std::size_t j = 0; j < h; ++j) dx[h + j] += dui[L_.n_u + j];
  }

  // GRU tape: ui (in) | z (h) | r (h) | ur = [u; r*h] (in) | n (h)
  void gru_forward(const double* x, const double* u, double* xn, double* tape) {
    const std::size_t h = L_.n_h;
    double* ui = tape ? tape : s1_.data();
    double* zr = tape ? tape + L_.in : s2_.data();
    double* ur = tape ? tape + L_.in + 2 * h : s1_.data() + L_.in;
    double* nn = tape ? tape + 2 * L_.in + 2 * h : s2_.data() + 2 * h;
    std::copy_n(u, L_.n_u, ui);
    std::copy_n(x, h, ui + L_.n_u);
    K_.gemv(2 * h, L_.in, th_ + L_.w, ui, th_ + L_.b, zr);
    for (std::size_t j = 0; j < 2 * h; ++j) zr[j] = sigmoid(zr[j]);
    std::copy_n(u, L_.n_u, ur);
    for (std::size_t j = 0; j < h; ++j) ur[L_.n_u + j] = zr[h + j] * x[j];
    K_.gemv(h, L_.in, th_ + L_.w + 2 * h * L_.in, ur, th_ + L_.b + 2 * h, nn);
    for (std::size_t j = 0; j < h; ++j) {
      nn[j] = std::tanh(nn[j]);
      xn[j] = zr[j] * x[j] + (1.0 - zr[j]) * nn[j];
    }
  }

  void gru_backward(const double* x, const double* tape, const double* dxn, double* dx,
                    double* grad) {
    const std::size_t h = L_.n_h;
    const double* ui = tape;
    const double* z = tape + L_.in;
    const double* r = z + h;
    const double* ur = tape + L_.in + 2 * h;
    const double* nn = tape + 2 * L_.in + 2 * h;
    double* dpre = s1_.data();       // h
    double* d2 = s1_.data() + h;     // 2h
    double* dur = s2_.data();        // in
    for (std::size_t j = 0; j < h; ++j) {
      const double dh = dxn[j];
      d2[j] = dh * (x[j] - nn[j]) * z[j] * (1.0 - z[j]);
      dpre[j] = dh * (1.0 - z[j]) * (1.0 - nn[j] * nn[j]);
      dx[j] += dh * z[j];
    }
    const std::size_t cand = 2 * h * L_.in;
    K_.ger_acc(h, L_.in, dpre, ur, grad + L_.w + cand);
    for (std::size_t j = 0; j < h; ++j) grad[L_.b + 2 * h + j] += dpre[j];
    std::fill_n(dur, L_.in, 0.0);
    K_.gemv_t_acc(h, L_.in, th_ + L_.w + cand, dpre, dur);
    for (std::size_t j = 0; j < h; ++j) {
      const double drh = dur[L_.n_u + j];
      d2[h + j] = drh * x[j] * r[j] * (1.0 - r[j]);
      dx[j] += drh * r[j];
    }
    K_.ger_acc(2 * h, L_.in, d2, ui, grad + L_.w);
    for (std::size_t j = 0; j < 2 * h; ++j) grad[L_.b + j] += d2[j];
    std::fill_n(dur, L_.in, 0.0);
    K_.gemv_t_acc(2 * h, L_.in, th_ + L_.w, d2, dur);
    for (std::size_t j = 0; j < h; ++j) dx[j] += dur[L_.n_u + j];
  }

  void esn_forward(const double* x, const double* u, double* xn) {
    const std::size_t h = L_.n_h;
    double* ui = s1_.data();
    double* pre = s2_.data();
    std::copy_n(u, L_.n_u, ui);
    std::copy_n(x, h, ui + L_.n_u);
    K_.gemv(h, L_.in, th_ + L_.w, ui, th_ + L_.b, pre);
    for (std::size_t j = 0; j < h; ++j) {
      xn[j] = (1.0 - L_.leak) * x[j] + L_.leak * std::tanh(pre[j]);
    }
  }

  // NNARX state: [u_{k-1} .. u_{k-p} | y_{k-1} .. y_{k-p}], newest first.
  void nnarx_shift(const double* x, const double* u, const double* y, double* xn) const {
    if (L_.p == 0) return;
    const std::size_t ub = L_.p * L_.n_u;
    std::copy_n(u, L_.n_u, xn);
    std::copy_n(x, ub - L_.n_u, xn + L_.n_u);
    std::copy_n(y, L_.n_y, xn + ub);
    std::copy_n(x + ub, L_.p * L_.n_y - L_.n_y, xn + ub + L_.n_y);
  }

  void nnarx_shift_backward(const double* dxn, double* dx, double* dy) const {
    if (L_.p == 0) return;
    const std::size_t ub = L_.p * L_.n_u;
    for (std::size_t j = 0; j + L_.n_u < ub; ++j) dx[j] += dxn[L_.n_u + j];
    for (std::size_t j = 0; j < L_.n_y; ++j) dy[j] += dxn[ub + j];
    for (std::size_t j = 0; j + L_.n_y < L_.p * L_.n_y; ++j) dx[ub + j] += dxn[ub + L_.n_y + j];
  }

  const Layout& L_;
  const double* th_;
  const kernels::KernelTable& K_;
  std::vector<double> s1_, s2_;
};

}  // namespace rnnmhe::detail
