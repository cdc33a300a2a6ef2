// Copyright 2026 The neuroheed authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "neuroheed/tape.hpp"
#include "neuroheed/tensor.hpp"

namespace neuroheed {

enum class PadMode { kValid, kCausal, kSame };

namespace detail {

struct ConvGeometry {
  std::size_t out_len;
  long left_pad;  // virtual zero padding on the left
};

inline ConvGeometry conv_geometry(std::size_t T, std::size_t L,
                                  std::size_t stride, std::size_t dilation,
                                  PadMode mode) {
  if (L < 1 || stride < 1 || dilation < 1) {
    throw std::invalid_argument("conv1d: L, stride, dilation must be >= 1");
  }
  std::size_t span = (L - 1) * dilation + 1;
  switch (mode) {
    case PadMode::kValid:
      if (T < span) {
        throw std::invalid_argument(
            "conv1d: input length " + std::to_string(T) +
            " shorter than kernel span " + std::to_string(span) +
            " in valid mode (empty output)");
      }
      return {(T - span) / stride + 1, 0};
    case PadMode::kCausal:
      return {(T - 1) / stride + 1, static_cast<long>(span - 1)};
    case PadMode::kSame:
      return {(T - 1) / stride + 1, static_cast<long>((span - 1) / 2)};
  }
  throw std::logic_error("conv1d: bad mode");
}

}  // namespace detail

/// 1-D convolution (correlation) of x[C_in, T] with kernels[C_out, C_in, L].
/// Causal mode left-pads so output frame j depends only on x[:, <= j*stride].
template <typename Real>
Var conv1d(Tape<Real>& t, Var x, Var w, std::size_t stride,
           PadMode mode = PadMode::kValid, std::size_t dilation = 1) {
  const auto& xv = t.value(x);
  const auto& wv = t.value(w);
  if (xv.rank() != 2 || wv.rank() != 3 || wv.shape[1] != xv.shape[0]) {
    throw std::invalid_argument("conv1d: expect x[Cin,T], w[Cout,Cin,L], got " +
                                xv.shape_str() + " and " + wv.shape_str());
  }
  std::size_t Cin = xv.shape[0], T = xv.shape[1];
  std::size_t Cout = wv.shape[0], L = wv.shape[2];
  auto geo = detail::conv_geometry(T, L, stride, dilation, mode);
  Tensor<Real> out = Tensor<Real>::zeros({Cout, geo.out_len});
  for (std::size_t co = 0; co < Cout; ++co) {
    for (std::size_t j = 0; j < geo.out_len; ++j) {
      Real acc = Real(0);
      long base = static_cast<long>(j * stride) - geo.left_pad;
      for (std::size_t ci = 0; ci < Cin; ++ci) {
        for (std::size_t l = 0; l < L; ++l) {
          long u = base + static_cast<long>(l * dilation);
          if (u < 0 || u >= static_cast<long>(T)) continue;
          acc += wv.at(co, ci, l) * xv.at(ci, static_cast<std::size_t>(u));
        }
      }
      out.at(co, j) = acc;
    }
  }
  bool ng = detail::any_grad(t, {x, w});
  int idx = t.push_value(std::move(out), ng);
  if (ng) {
    t.record([&t, x, w, idx, stride, dilation, geo, Cin, T, Cout, L] {
      const auto& g = t.grad_buffer(idx);
      const auto& xv2 = t.value(x);
      const auto& wv2 = t.value(w);
      bool gx = t.needs_grad(x), gw = t.needs_grad(w);
      auto* xgrad = gx ? &t.grad_buffer(x.index) : nullptr;
      auto* wgrad = gw ? &t.grad_buffer(w.index) : nullptr;
      for (std::size_t co = 0; co < Cout; ++co) {
        for (std::size_t j = 0; j < geo.out_len; ++j) {
          Real go = g.at(co, j);
          if (go == Real(0)) continue;
          long base = static_cast<long>(j * stride) - geo.left_pad;
          for (std::size_t ci = 0; ci < Cin; ++ci) {
            for (std::size_t l = 0; l < L; ++l) {
              long u = base + static_cast<long>(l * dilation);
              if (u < 0 || u >= static_cast<long>(T)) continue;
              auto uu = static_cast<std::size_t>(u);
              if (gx) xgrad->at(ci, uu) += go * wv2.at(co, ci, l);
              if (gw) wgrad->at(co, ci, l) += go * xv2.at(ci, uu);
            }
          }
        }
      }
    });
  }
  return Var{idx};
}

/// Depthwise 1-D convolution: x[C, T] with per-channel kernels w[C, L].
template <typename Real>
Var conv1d_depthwise(Tape<Real>& t, Var x, Var w, std::size_t stride,
                     PadMode mode = PadMode::kValid, std::size_t dilation = 1) {
  const auto& xv = t.value(x);
  const auto& wv = t.value(w);
  if (xv.rank() != 2 || wv.rank() != 2 || wv.shape[0] != xv.shape[0]) {
    throw std::invalid_argument("conv1d_depthwise: expect x[C,T], w[C,L]");
  }
  std::size_t C = xv.shape[0], T = xv.shape[1], L = wv.shape[1];
  auto geo = detail::conv_geometry(T, L, stride, dilation, mode);
  Tensor<Real> out = Tensor<Real>::zeros({C, geo.out_len});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t j = 0; j < geo.out_len; ++j) {
      Real acc = Real(0);
      long base = static_cast<long>(j * stride) - geo.left_pad;
      for (std::size_t l = 0; l < L; ++l) {
        long u = base + static_cast<long>(l * dilation);
        if (u < 0 || u >= static_cast<long>(T)) continue;
        acc += wv.at(c, l) * xv.at(c, static_cast<std::size_t>(u));
      }
      out.at(c, j) = acc;
    }
  }
  bool ng = detail::any_grad(t, {x, w});
  int idx = t.push_value(std::move(out), ng);
  if (ng) {
    t.record([&t, x, w, idx, stride, dilation, geo, C, T, L] {
      const auto& g = t.grad_buffer(idx);
      const auto& xv2 = t.value(x);
      const auto& wv2 = t.value(w);
      bool gx = t.needs_grad(x), gw = t.needs_grad(w);
      auto* xgrad = gx ? &t.grad_buffer(x.index) : nullptr;
      auto* wgrad = gw ? &t.grad_buffer(w.index) : nullptr;
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t j = 0; j < geo.out_len; ++j) {
          Real go = g.at(c, j);
          if (go == Real(0)) continue;
          long base = static_cast<long>(j * stride) - geo.left_pad;
          for (std::size_t l = 0; l < L; ++l) {
            long u = base + static_cast<long>(l * dilation);
            if (u < 0 || u >= static_cast<long>(T)) continue;
            auto uu = static_cast<std::size_t>(u);
            if (gx) xgrad->at(c, uu) += go * wv2.at(c, l);
            if (gw) wgrad->at(c, l) += go * xv2.at(c, uu);
          }
        }
      }
    });
  }
  return Var{idx};
}

// ---------------------------------------------------------------------------
// Normalization layers
// ---------------------------------------------------------------------------

/// Per-row layer normalization of x[R, C] with learnable gain/bias [C].
template <typename Real>
Var layer_norm_rows(Tape<Real>& t, Var x, Var gain, Var bias,
                    Real eps = Real(1e-5)) {
  const auto& xv = t.value(x);
  const auto& gv = t.value(gain);
  const auto& bv = t.value(bias);
  if (xv.rank() != 2 || gv.shape != std::vector<std::size_t>{xv.shape[1]} ||
      bv.shape != gv.shape) {
    throw std::invalid_argument("layer_norm_rows: bad shapes");
  }
  std::size_t R = xv.shape[0], C = xv.shape[1];
  if (R == 0) throw std::invalid_argument("layer_norm_rows: empty input");
  Tensor<Real> out = Tensor<Real>::zeros({R, C});
  std::vector<Real> mu(R), rstd(R);
  for (std::size_t i = 0; i < R; ++i) {
    Real s = 0, q = 0;
    for (std::size_t j = 0; j < C; ++j) s += xv.at(i, j);
    Real m = s / Real(C);
    for (std::size_t j = 0; j < C; ++j) {
      Real d = xv.at(i, j) - m;
      q += d * d;
    }
    Real r = Real(1) / std::sqrt(q / Real(C) + eps);
    mu[i] = m;
    rstd[i] = r;
    for (std::size_t j = 0; j < C; ++j)
      out.at(i, j) = gv.data[j] * (xv.at(i, j) - m) * r + bv.data[j];
  }
  bool ng = detail::any_grad(t, {x, gain, bias});
  int idx = t.push_value(std::move(out), ng);
  if (ng) {
    t.record([&t, x, gain, bias, idx, R, C, mu = std::move(mu),
              rstd = std::move(rstd)] {
      const auto& g = t.grad_buffer(idx);
      const auto& xv2 = t.value(x);
      const auto& gv2 = t.value(gain);
      for (std::size_t i = 0; i < R; ++i) {
        Real m = mu[i], r = rstd[i];
        Real mean_gh = 0, mean_ghx = 0;
        for (std::size_t j = 0; j < C; ++j) {
          Real xh = (xv2.at(i, j) - m) * r;
          Real gh = g.at(i, j) * gv2.data[j];
          mean_gh += gh;
          mean_ghx += gh * xh;
        }
        mean_gh /= Real(C);
        mean_ghx /= Real(C);
        if (t.needs_grad(x)) {
          auto& gx = t.grad_buffer(x.index);
          for (std::size_t j = 0; j < C; ++j) {
            Real xh = (xv2.at(i, j) - m) * r;
            Real gh = g.at(i, j) * gv2.data[j];
            gx.at(i, j) += r * (gh - mean_gh - xh * mean_ghx);
          }
        }
        if (t.needs_grad(gain)) {
          auto& gg = t.grad_buffer(gain.index);
          for (std::size_t j = 0; j < C; ++j)
            gg.data[j] += g.at(i, j) * (xv2.at(i, j) - m) * r;
        }
        if (t.needs_grad(bias)) {
          auto& gb = t.grad_buffer(bias.index);
          for (std::size_t j = 0; j < C; ++j) gb.data[j] += g.at(i, j);
        }
      }
    });
  }
  return Var{idx};
}

/// Global layer normalization of x[C, T]: one mean/variance over all C*T
/// elements, per-channel gain/bias.
template <typename Real>
Var global_layer_norm(Tape<Real>& t, Var x, Var gain, Var bias,
                      Real eps = Real(1e-5)) {
  const auto& xv = t.value(x);
  const auto& gv = t.value(gain);
  if (xv.rank() != 2 || gv.shape != std::vector<std::size_t>{xv.shape[0]}) {
    throw std::invalid_argument("global_layer_norm: bad shapes");
  }
  std::size_t C = xv.shape[0], T = xv.shape[1];
  std::size_t n = C * T;
  if (n == 0) throw std::invalid_argument("global_layer_norm: empty input");
  Real s = 0, q = 0;
  for (Real v : xv.data) s += v;
  Real m = s / Real(n);
  for (Real v : xv.data) q += (v - m) * (v - m);
  Real r = Real(1) / std::sqrt(q / Real(n) + eps);
  const auto& bv = t.value(bias);
  Tensor<Real> out = Tensor<Real>::zeros({C, T});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t u = 0; u < T; ++u)
      out.at(c, u) = gv.data[c] * (xv.at(c, u) - m) * r + bv.data[c];
  bool ng = detail::any_grad(t, {x, gain, bias});
  int idx = t.push_value(std::move(out), ng);
  if (ng) {
    t.record([&t, x, gain, bias, idx, C, T, m, r] {
      const auto& g = t.grad_buffer(idx);
      const auto& xv2 = t.value(x);
      const auto& gv2 = t.value(gain);
      std::size_t n2 = C * T;
      Real mean_gh = 0, mean_ghx = 0;
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t u = 0; u < T; ++u) {
          Real gh = g.at(c, u) * gv2.data[c];
          mean_gh += gh;
          mean_ghx += gh * (xv2.at(c, u) - m) * r;
        }
      mean_gh /= Real(n2);
      mean_ghx /= Real(n2);
      if (t.needs_grad(x)) {
        auto& gx = t.grad_buffer(x.index);
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t u = 0; u < T; ++u) {
            Real xh = (xv2.at(c, u) - m) * r;
            Real gh = g.at(c, u) * gv2.data[c];
            gx.at(c, u) += r * (gh - mean_gh - xh * mean_ghx);
          }
      }
      if (t.needs_grad(gain)) {
        auto& gg = t.grad_buffer(gain.index);
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t u = 0; u < T; ++u)
            gg.data[c] += g.at(c, u) * (xv2.at(c, u) - m) * r;
      }
      if (t.needs_grad(bias)) {
        auto& gb = t.grad_buffer(bias.index);
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t u = 0; u < T; ++u) gb.data[c] += g.at(c, u);
      }
    });
  }
  return Var{idx};
}

/// Running statistics for cumulative layer normalization across chunk
/// boundaries: element count, sum and sum of squares over all channels of all
/// frames seen so far.
template <typename Real>
struct CumNormCarry {
  std::size_t count = 0;
  Real sum = Real(0);
  Real sum_sq = Real(0);
};

/// Cumulative layer normalization of x[C, T]: statistics at frame t cover all
/// channels of frames 1..t (causal). Optional carry continues statistics from
/// a previous chunk; carried mode is inference-only (no gradients).
template <typename Real>
Var cum_layer_norm(Tape<Real>& t, Var x, Var gain, Var bias,
                   Real eps = Real(1e-5),
                   const CumNormCarry<Real>* carry_in = nullptr,
                   CumNormCarry<Real>* carry_out = nullptr) {
  const auto& xv = t.value(x);
  const auto& gv = t.value(gain);
  const auto& bv = t.value(bias);
  if (xv.rank() != 2 || gv.shape != std::vector<std::size_t>{xv.shape[0]} ||
      bv.shape != gv.shape) {
    throw std::invalid_argument("cum_layer_norm: bad shapes");
  }
  std::size_t C = xv.shape[0], T = xv.shape[1];
  if (T == 0) throw std::invalid_argument("cum_layer_norm: empty input");
  bool ng = detail::any_grad(t, {x, gain, bias});
  if (ng && carry_in != nullptr) {
    throw std::logic_error("cum_layer_norm: carry is inference-only");
  }
  std::size_t n0 = carry_in ? carry_in->count : 0;
  Real S = carry_in ? carry_in->sum : Real(0);
  Real Q = carry_in ? carry_in->sum_sq : Real(0);
  Tensor<Real> out = Tensor<Real>::zeros({C, T});
  std::vector<Real> mu(T), rstd(T);
  for (std::size_t u = 0; u < T; ++u) {
    for (std::size_t c = 0; c < C; ++c) {
      Real v = xv.at(c, u);
      S += v;
      Q += v * v;
    }
    std::size_t n = n0 + C * (u + 1);
    Real m = S / Real(n);
    Real var = Q / Real(n) - m * m;
    if (var < Real(0)) var = Real(0);
    Real r = Real(1) / std::sqrt(var + eps);
    mu[u] = m;
    rstd[u] = r;
    for (std::size_t c = 0; c < C; ++c)
      out.at(c, u) = gv.data[c] * (xv.at(c, u) - m) * r + bv.data[c];
  }
  if (carry_out) {
    carry_out->count = n0 + C * T;
    carry_out->sum = S;
    carry_out->sum_sq = Q;
  }
  int idx = t.push_value(std::move(out), ng);
  if (ng) {
    t.record([&t, x, gain, bias, idx, C, T, mu = std::move(mu),
              rstd = std::move(rstd)] {
      const auto& g = t.grad_buffer(idx);
      const auto& xv2 = t.value(x);
      const auto& gv2 = t.value(gain);
      // Suffix sums over frames t of the mean/variance pathways.
      std::vector<Real> A(T), B(T);
      for (std::size_t u = 0; u < T; ++u) {
        Real n = Real(C * (u + 1));
        Real a = 0, b = 0;
        for (std::size_t c = 0; c < C; ++c) {
          Real gh = g.at(c, u) * gv2.data[c];
          a += gh;
          b += gh * (xv2.at(c, u) - mu[u]);
        }
        A[u] = a * rstd[u] / n;
        B[u] = b * rstd[u] * rstd[u] * rstd[u] / n;
      }
      std::vector<Real> SA(T), SB(T), SC(T);
      Real sa = 0, sb = 0, sc = 0;
      for (std::size_t u = T; u-- > 0;) {
        sa += A[u];
        sb += B[u];
        sc += B[u] * mu[u];
        SA[u] = sa;
        SB[u] = sb;
        SC[u] = sc;
      }
      if (t.needs_grad(x)) {
        auto& gx = t.grad_buffer(x.index);
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t u = 0; u < T; ++u) {
            gx.at(c, u) += gv2.data[c] * g.at(c, u) * rstd[u] - SA[u] -
                           xv2.at(c, u) * SB[u] + SC[u];
          }
      }
      if (t.needs_grad(gain)) {
        auto& gg = t.grad_buffer(gain.index);
        for (std::size_t c = 0; c < C; ++c) {
          Real acc = 0;
          for (std::size_t u = 0; u < T; ++u)
            acc += g.at(c, u) * (xv2.at(c, u) - mu[u]) * rstd[u];
          gg.data[c] += acc;
        }
      }
      if (t.needs_grad(bias)) {
        auto& gb = t.grad_buffer(bias.index);
        for (std::size_t c = 0; c < C; ++c) {
          Real acc = 0;
          for (std::size_t u = 0; u < T; ++u) acc += g.at(c, u);
          gb.data[c] += acc;
        }
      }
    });
  }
  return Var{idx};
}

// ---------------------------------------------------------------------------
// Framing, overlap-add, interpolation, pooling
// ---------------------------------------------------------------------------

/// Overlap-and-add of frames[T_x, L] with the given hop. Output sample p is
/// the sum of all frame samples mapping to p; length (T_x - 1) * hop + L.
template <typename Real>
Var overlap_add(Tape<Real>& t, Var frames, std::size_t hop) {
  const auto& fv = t.value(frames);
  if (fv.rank() != 2) throw std::invalid_argument("overlap_add: rank 2 only");
  std::size_t Tx = fv.shape[0], L = fv.shape[1];
  if (hop == 0 || hop > L) {
    throw std::invalid_argument("overlap_add: need 0 < hop <= frame length");
  }
  std::size_t out_len = (Tx - 1) * hop + L;
  Tensor<Real> out = Tensor<Real>::zeros({out_len});
  for (std::size_t i = 0; i < Tx; ++i)
    for (std::size_t l = 0; l < L; ++l) out.data[i * hop + l] += fv.at(i, l);
  bool ng = detail::any_grad(t, {frames});
  int idx = t.push_value(std::move(out), ng);
  if (ng) {
    t.record([&t, frames, idx, Tx, L, hop] {
      const auto& g = t.grad_buffer(idx);
      auto& gf = t.grad_buffer(frames.index);
      for (std::size_t i = 0; i < Tx; ++i)
        for (std::size_t l = 0; l < L; ++l)
          gf.at(i, l) += g.data[i * hop + l];
    });
  }
  return Var{idx};
}

/// Precomputed linear-interpolation map: column j of the output blends input
/// columns i0[j] and i1[j] with weight w[j] on i1.
struct LerpMap {
  std::vector<std::size_t> i0, i1;
  std::vector<double> w;
  std::size_t out_len() const { return i0.size(); }
};

/// Endpoint-preserving stretch map from length t_in to t_out.
inline LerpMap stretch_lerp_map(std::size_t t_in, std::size_t t_out) {
  if (t_in < 1 || t_out < 1) {
    throw std::invalid_argument("stretch_lerp_map: lengths must be >= 1");
  }
  LerpMap m;
  m.i0.resize(t_out);
  m.i1.resize(t_out);
  m.w.resize(t_out);
  for (std::size_t j = 0; j < t_out; ++j) {
    double p = (t_out == 1) ? 0.0
                            : static_cast<double>(j) *
                                  static_cast<double>(t_in - 1) /
                                  static_cast<double>(t_out - 1);
    std::size_t i0 = static_cast<std::size_t>(p);
    if (i0 >= t_in - 1 && t_in > 1) i0 = t_in - 2;
    std::size_t i1 = (t_in == 1) ? 0 : i0 + 1;
    m.i0[j] = i0;
    m.i1[j] = i1;
    m.w[j] = (t_in == 1) ? 0.0 : p - static_cast<double>(i0);
  }
  return m;
}

/// Column-wise linear blend per a LerpMap: x[N, T_in] -> [N, map.out_len()].
template <typename Real>
Var gather_lerp_cols(Tape<Real>& t, Var x, const LerpMap& map) {
  const auto& xv = t.value(x);
  if (xv.rank() != 2) throw std::invalid_argument("gather_lerp_cols: rank 2");
  std::size_t N = xv.shape[0], Tin = xv.shape[1], Tout = map.out_len();
  for (std::size_t j = 0; j < Tout; ++j) {
    if (map.i0[j] >= Tin || map.i1[j] >= Tin) {
      throw std::invalid_argument("gather_lerp_cols: map index OOB");
    }
  }
  Tensor<Real> out = Tensor<Real>::zeros({N, Tout});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t j = 0; j < Tout; ++j) {
      Real w = static_cast<Real>(map.w[j]);
      out.at(n, j) = (Real(1) - w) * xv.at(n, map.i0[j]) +
                     w * xv.at(n, map.i1[j]);
    }
  bool ng = detail::any_grad(t, {x});
  int idx = t.push_value(std::move(out), ng);
  if (ng) {
    t.record([&t, x, idx, N, Tout, map] {
      const auto& g = t.grad_buffer(idx);
      auto& gx = t.grad_buffer(x.index);
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t j = 0; j < Tout; ++j) {
          Real w = static_cast<Real>(map.w[j]);
          gx.at(n, map.i0[j]) += (Real(1) - w) * g.at(n, j);
          gx.at(n, map.i1[j]) += w * g.at(n, j);
        }
    });
  }
  return Var{idx};
}

/// Repeat a vector v[N] as T columns -> [N, T].
template <typename Real>
Var repeat_col(Tape<Real>& t, Var v, std::size_t T) {
  const auto& vv = t.value(v);
  if (vv.rank() != 1) throw std::invalid_argument("repeat_col: rank 1 only");
  std::size_t N = vv.shape[0];
  Tensor<Real> out = Tensor<Real>::zeros({N, T});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t j = 0; j < T; ++j) out.at(n, j) = vv.data[n];
  bool ng = detail::any_grad(t, {v});
  int idx = t.push_value(std::move(out), ng);
  if (ng) {
    t.record([&t, v, idx, N, T] {
      const auto& g = t.grad_buffer(idx);
      auto& gv = t.grad_buffer(v.index);
      for (std::size_t n = 0; n < N; ++n) {
        Real acc = 0;
        for (std::size_t j = 0; j < T; ++j) acc += g.at(n, j);
        gv.data[n] += acc;
      }
    });
  }
  return Var{idx};
}

/// Max pooling along frames of x[C, T] (kernel = stride = width). Gradient
/// routes to the first maximal element of each window.
template <typename Real>
Var maxpool_cols(Tape<Real>& t, Var x, std::size_t width) {
  const auto& xv = t.value(x);
  if (xv.rank() != 2 || width < 1) {
    throw std::invalid_argument("maxpool_cols: bad arguments");
  }
  std::size_t C = xv.shape[0], T = xv.shape[1];
  if (T < width) throw std::invalid_argument("maxpool_cols: input too short");
  std::size_t To = T / width;
  Tensor<Real> out = Tensor<Real>::zeros({C, To});
  std::vector<std::size_t> argmax(C * To);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t j = 0; j < To; ++j) {
      std::size_t best = j * width;
      Real bv = xv.at(c, best);
      for (std::size_t k = 1; k < width; ++k) {
        Real v = xv.at(c, j * width + k);
        if (v > bv) {
          bv = v;
          best = j * width + k;
        }
      }
      out.at(c, j) = bv;
      argmax[c * To + j] = best;
    }
  bool ng = detail::any_grad(t, {x});
  int idx = t.push_value(std::move(out), ng);
  if (ng) {
    t.record([&t, x, idx, C, To, argmax = std::move(argmax)] {
      const auto& g = t.grad_buffer(idx);
      auto& gx = t.grad_buffer(x.index);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t j = 0; j < To; ++j)
          gx.at(c, argmax[c * To + j]) += g.at(c, j);
    });
  }
  return Var{idx};
}

}  // namespace neuroheed
