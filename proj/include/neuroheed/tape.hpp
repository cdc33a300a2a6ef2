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

#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "neuroheed/tensor.hpp"

namespace neuroheed {

/// Handle into a Tape slot. Plain index; all ops take the tape explicitly.
struct Var {
  int index = -1;
  bool valid() const { return index >= 0; }
};

/// Reverse-mode gradient tape. Forward ops append value slots and record a
/// backward closure; backward() replays the closures in exact reverse
/// execution order. Single-owner: a tape must not be shared across concurrent
/// executions, and backward() may run only once per recording.
template <typename Real>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  Var leaf(Tensor<Real> value, bool requires_grad = false) {
    return Var{push_value(std::move(value), requires_grad && recording_)};
  }

  const Tensor<Real>& value(Var v) const { return values_.at(v.index); }

  bool needs_grad(Var v) const { return needs_grad_.at(v.index); }

  /// Gradient buffer of a slot; zeros until backward() has run.
  const Tensor<Real>& grad(Var v) const {
    const_cast<Tape*>(this)->ensure_grad(v.index);
    return grads_[v.index];
  }

  void backward(Var loss) {
    if (!recording_) {
      throw std::logic_error("Tape::backward: tape is not recording");
    }
    if (backward_done_) {
      throw std::logic_error(
          "Tape::backward: called twice without re-recording");
    }
    if (value(loss).size() != 1) {
      throw std::invalid_argument("Tape::backward: loss must be scalar");
    }
    backward_done_ = true;
    ensure_grad(loss.index);
    grads_[loss.index].data[0] = Real(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      (*it)();
    }
  }

  std::size_t num_slots() const { return values_.size(); }

  // --- op implementation interface ---

  int push_value(Tensor<Real> value, bool needs_grad) {
    values_.push_back(std::move(value));
    needs_grad_.push_back(needs_grad);
    grads_.emplace_back();
    return static_cast<int>(values_.size()) - 1;
  }

  void record(std::function<void()> back) {
    nodes_.push_back(std::move(back));
  }

  Tensor<Real>& grad_buffer(int index) {
    ensure_grad(index);
    return grads_[index];
  }

 private:
  void ensure_grad(int index) {
    if (grads_[index].size() == 0 && values_[index].size() != 0) {
      grads_[index] = Tensor<Real>::zeros(values_[index].shape);
    }
  }

  bool recording_;
  bool backward_done_ = false;
  std::vector<Tensor<Real>> values_;
  std::vector<Tensor<Real>> grads_;
  std::vector<bool> needs_grad_;
  std::vector<std::function<void()>> nodes_;
};

namespace detail {

template <typename Real>
bool any_grad(const Tape<Real>& t, std::initializer_list<Var> vs) {
  if (!t.recording()) return false;
  for (Var v : vs) {
    if (t.needs_grad(v)) return true;
  }
  return false;
}

}  // namespace detail

template <typename Real>
Var constant(Tape<Real>& t, Tensor<Real> v) {
  return t.leaf(std::move(v), false);
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <typename Real>
Var add(Tape<Real>& t, Var a, Var b) {
  check_same_shape(t.value(a), t.value(b), "add");
  Tensor<Real> out = t.value(a);
  const auto& bv = t.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv.data[i];
  bool ng = detail::any_grad(t, {a, b});
  int idx = t.push_value(std::move(out), ng);
  if (ng) {
    t.record([&t, a, b, idx] {
      const auto& g = t.grad_buffer(idx);
      for (Var v : {a, b}) {
        if (!t.needs_grad(v)) continue;
        auto& gv = t.grad_buffer(v.index);
        for (std::size_t i = 0; i < g.size(); ++i) gv.data[i] += g.data[i];
      }
    });
  }
  return Var{idx};
}

template <typename Real>
Var sub(Tape<Real>& t, Var a, Var b) {
  check_same_shape(t.value(a), t.value(b), "sub");
  Tensor<Real> out = t.value(a);
  const auto& bv = t.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= bv.data[i];
  bool ng = detail::any_grad(t, {a, b});
  int idx = t.push_value(std::move(out), ng);
  if (ng) {
    t.record([&t, a, b, idx] {
      const auto& g = t.grad_buffer(idx);
      if (t.needs_grad(a)) {
        auto& ga = t.grad_buffer(a.index);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
      }
      if (t.needs_grad(b)) {
        auto& gb = t.grad_buffer(b.index);
        for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] -= g.data[i];
      }
    });
  }
  return Var{idx};
}

template <typename Real>
Var mul(Tape<Real>& t, Var a, Var b) {
  check_same_shape(t.value(a), t.value(b), "mul");
  Tensor<Real> out = t.value(a);
  const auto& bv = t.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv.data[i];
  bool ng = detail::any_grad(t, {a, b});
  int idx = t.push_value(std::move(out), ng);
  if (ng) {
    t.record([&t, a, b, idx] {
      const auto& g = t.grad_buffer(idx);
      const auto& av = t.value(a);
      const auto& bv2 = t.value(b);
      if (t.needs_grad(a)) {
        auto& ga = t.grad_buffer(a.index);
        for (std::size_t i = 0; i < g.size(); ++i)
          ga.data[i] += g.data[i] * bv2.data[i];
      }
      if (t.needs_grad(b)) {
        auto& gb = t.grad_buffer(b.index);
        for (std::size_t i = 0; i < g.size(); ++i)
          gb.data[i] += g.data[i] * av.data[i];
      }
    });
  }
  return Var{idx};
}

/// Elementwise division a / b.
template <typename Real>
Var div(Tape<Real>& t, Var a, Var b) {
  check_same_shape(t.value(a), t.value(b), "div");
  Tensor<Real> out = t.value(a);
  const auto& bv = t.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] /= bv.data[i];
  bool ng = detail::any_grad(t, {a, b});
  int idx = t.push_value(std::move(out), ng);
  if (ng) {
    t.record([&t, a, b, idx] {
      const auto& g = t.grad_buffer(idx);
      const auto& y = t.value(Var{idx});
      const auto& bv2 = t.value(b);
      if (t.needs_grad(a)) {
        auto& ga = t.grad_buffer(a.index);
        for (std::size_t i = 0; i < g.size(); ++i)
          ga.data[i] += g.data[i] / bv2.data[i];
      }
      if (t.needs_grad(b)) {
        auto& gb = t.grad_buffer(b.index);
        for (std::size_t i = 0; i < g.size(); ++i)
          gb.data[i] -= g.data[i] * y.data[i] / bv2.data[i];
      }
    });
  }
  return Var{idx};
}

/// out = mul_c * a + add_c, elementwise with scalar constants.
template <typename Real>
Var affine(Tape<Real>& t, Var a, Real mul_c, Real add_c = Real(0)) {
  Tensor<Real> out = t.value(a);
  for (auto& v : out.data) v = mul_c * v + add_c;
  bool ng = detail::any_grad(t, {a});
  int idx = t.push_value(std::move(out), ng);
  if (ng) {
    t.record([&t, a, mul_c, idx] {
      const auto& g = t.grad_buffer(idx);
      auto& ga = t.grad_buffer(a.index);
      for (std::size_t i = 0; i < g.size(); ++i)
        ga.data[i] += mul_c * g.data[i];
    });
  }
  return Var{idx};
}

namespace detail {

template <typename Real, typename F, typename DF>
Var unary_op(Tape<Real>& t, Var a, F f, DF df_from_xy) {
  Tensor<Real> out = t.value(a);
  for (auto& v : out.data) v = f(v);
  bool ng = any_grad(t, {a});
  int idx = t.push_value(std::move(out), ng);
  if (ng) {
    t.record([&t, a, idx, df_from_xy] {
      const auto& g = t.grad_buffer(idx);
      const auto& x = t.value(a);
      const auto& y = t.value(Var{idx});
      auto& ga = t.grad_buffer(a.index);
      for (std::size_t i = 0; i < g.size(); ++i)
        ga.data[i] += g.data[i] * df_from_xy(x.data[i], y.data[i]);
    });
  }
  return Var{idx};
}

}  // namespace detail

// ReLU subgradient at exactly 0 is 0.
template <typename Real>
Var relu(Tape<Real>& t, Var a) {
  return detail::unary_op(
      t, a, [](Real x) { return x > Real(0) ? x : Real(0); },
      [](Real x, Real) { return x > Real(0) ? Real(1) : Real(0); });
}

template <typename Real>
Var sigmoid(Tape<Real>& t, Var a) {
  return detail::unary_op(
      t, a,
      [](Real x) { return Real(1) / (Real(1) + std::exp(-x)); },
      [](Real, Real y) { return y * (Real(1) - y); });
}

template <typename Real>
Var tanh_op(Tape<Real>& t, Var a) {
  return detail::unary_op(
      t, a, [](Real x) { return std::tanh(x); },
      [](Real, Real y) { return Real(1) - y * y; });
}

template <typename Real>
Var log_op(Tape<Real>& t, Var a) {
  return detail::unary_op(
      t, a, [](Real x) { return std::log(x); },
      [](Real x, Real) { return Real(1) / x; });
}

template <typename Real>
Var sqrt_op(Tape<Real>& t, Var a) {
  return detail::unary_op(
      t, a, [](Real x) { return std::sqrt(x); },
      [](Real, Real y) { return Real(1) / (Real(2) * y); });
}

template <typename Real>
Var square(Tape<Real>& t, Var a) {
  return detail::unary_op(
      t, a, [](Real x) { return x * x; },
      [](Real x, Real) { return Real(2) * x; });
}

/// PReLU over [C, T] input with one learnable slope per channel (alpha: [C]).
template <typename Real>
Var prelu(Tape<Real>& t, Var x, Var alpha) {
  const auto& xv = t.value(x);
  const auto& av = t.value(alpha);
  if (xv.rank() != 2 || av.rank() != 1 || av.shape[0] != xv.shape[0]) {
    throw std::invalid_argument("prelu: expect x[C,T], alpha[C], got x " +
                                xv.shape_str() + " alpha " + av.shape_str());
  }
  std::size_t C = xv.shape[0], T = xv.shape[1];
  Tensor<Real> out = xv;
  for (std::size_t c = 0; c < C; ++c) {
    Real al = av.data[c];
    for (std::size_t u = 0; u < T; ++u) {
      Real v = out.at(c, u);
      if (v < Real(0)) out.at(c, u) = al * v;
    }
  }
  bool ng = detail::any_grad(t, {x, alpha});
  int idx = t.push_value(std::move(out), ng);
  if (ng) {
    t.record([&t, x, alpha, idx, C, T] {
      const auto& g = t.grad_buffer(idx);
      const auto& xv2 = t.value(x);
      const auto& av2 = t.value(alpha);
      if (t.needs_grad(x)) {
        auto& gx = t.grad_buffer(x.index);
        for (std::size_t c = 0; c < C; ++c) {
          Real al = av2.data[c];
          for (std::size_t u = 0; u < T; ++u) {
            Real xx = xv2.at(c, u);
            gx.at(c, u) += g.at(c, u) * (xx > Real(0) ? Real(1) : al);
          }
        }
      }
      if (t.needs_grad(alpha)) {
        auto& ga = t.grad_buffer(alpha.index);
        for (std::size_t c = 0; c < C; ++c) {
          Real acc = Real(0);
          for (std::size_t u = 0; u < T; ++u) {
            Real xx = xv2.at(c, u);
            if (xx < Real(0)) acc += g.at(c, u) * xx;
          }
          ga.data[c] += acc;
        }
      }
    });
  }
  return Var{idx};
}

// ---------------------------------------------------------------------------
// Broadcast adds
// ---------------------------------------------------------------------------

/// a[R,C] + b[C] broadcast over rows.
template <typename Real>
Var add_rowvec(Tape<Real>& t, Var a, Var b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  if (av.rank() != 2 || bv.rank() != 1 || bv.shape[0] != av.shape[1]) {
    throw std::invalid_argument("add_rowvec: got a " + av.shape_str() +
                                " b " + bv.shape_str());
  }
  std::size_t R = av.shape[0], C = av.shape[1];
  Tensor<Real> out = av;
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j) out.at(i, j) += bv.data[j];
  bool ng = detail::any_grad(t, {a, b});
  int idx = t.push_value(std::move(out), ng);
  if (ng) {
    t.record([&t, a, b, idx, R, C] {
      const auto& g = t.grad_buffer(idx);
      if (t.needs_grad(a)) {
        auto& ga = t.grad_buffer(a.index);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
      }
      if (t.needs_grad(b)) {
        auto& gb = t.grad_buffer(b.index);
        for (std::size_t i = 0; i < R; ++i)
          for (std::size_t j = 0; j < C; ++j) gb.data[j] += g.at(i, j);
      }
    });
  }
  return Var{idx};
}

/// a[R,C] + b[R] broadcast over columns (per-channel bias on [C,T] layouts).
template <typename Real>
Var add_colvec(Tape<Real>& t, Var a, Var b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  if (av.rank() != 2 || bv.rank() != 1 || bv.shape[0] != av.shape[0]) {
    throw std::invalid_argument("add_colvec: got a " + av.shape_str() +
                                " b " + bv.shape_str());
  }
  std::size_t R = av.shape[0], C = av.shape[1];
  Tensor<Real> out = av;
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j) out.at(i, j) += bv.data[i];
  bool ng = detail::any_grad(t, {a, b});
  int idx = t.push_value(std::move(out), ng);
  if (ng) {
    t.record([&t, a, b, idx, R, C] {
      const auto& g = t.grad_buffer(idx);
      if (t.needs_grad(a)) {
        auto& ga = t.grad_buffer(a.index);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
      }
      if (t.needs_grad(b)) {
        auto& gb = t.grad_buffer(b.index);
        for (std::size_t i = 0; i < R; ++i)
          for (std::size_t j = 0; j < C; ++j) gb.data[i] += g.at(i, j);
      }
    });
  }
  return Var{idx};
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

namespace detail {

// C[p,r] += A[p,q] * B[q,r]; ikj order for cache locality.
template <typename Real>
void gemm_acc(const Real* A, const Real* B, Real* C, std::size_t p,
              std::size_t q, std::size_t r, bool trans_a, bool trans_b) {
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t k = 0; k < q; ++k) {
      Real a = trans_a ? A[k * p + i] : A[i * q + k];
      if (a == Real(0)) continue;
      const Real* brow = trans_b ? nullptr : B + k * r;
      Real* crow = C + i * r;
      if (trans_b) {
        for (std::size_t j = 0; j < r; ++j) crow[j] += a * B[j * q + k];
      } else {
        for (std::size_t j = 0; j < r; ++j) crow[j] += a * brow[j];
      }
    }
  }
}

}  // namespace detail

template <typename Real>
Var matmul(Tape<Real>& t, Var a, Var b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.shape[1] != bv.shape[0]) {
    throw std::invalid_argument("matmul: dimension mismatch " +
                                av.shape_str() + " x " + bv.shape_str());
  }
  std::size_t p = av.shape[0], q = av.shape[1], r = bv.shape[1];
  Tensor<Real> out = Tensor<Real>::zeros({p, r});
  detail::gemm_acc(av.data.data(), bv.data.data(), out.data.data(), p, q, r,
                   false, false);
  bool ng = detail::any_grad(t, {a, b});
  int idx = t.push_value(std::move(out), ng);
  if (ng) {
    t.record([&t, a, b, idx, p, q, r] {
      const auto& g = t.grad_buffer(idx);
      const auto& av2 = t.value(a);
      const auto& bv2 = t.value(b);
      if (t.needs_grad(a)) {
        // dA = g * B^T
        auto& ga = t.grad_buffer(a.index);
        for (std::size_t i = 0; i < p; ++i)
          for (std::size_t j = 0; j < r; ++j) {
            Real gij = g.at(i, j);
            if (gij == Real(0)) continue;
            for (std::size_t k = 0; k < q; ++k)
              ga.at(i, k) += gij * bv2.at(k, j);
          }
      }
      if (t.needs_grad(b)) {
        // dB = A^T * g
        auto& gb = t.grad_buffer(b.index);
        detail::gemm_acc(av2.data.data(), g.data.data(), gb.data.data(), q, p,
                         r, true, false);
      }
    });
  }
  return Var{idx};
}

template <typename Real>
Var transpose(Tape<Real>& t, Var a) {
  const auto& av = t.value(a);
  if (av.rank() != 2) {
    throw std::invalid_argument("transpose: expect rank 2, got " +
                                av.shape_str());
  }
  std::size_t R = av.shape[0], C = av.shape[1];
  Tensor<Real> out = Tensor<Real>::zeros({C, R});
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j) out.at(j, i) = av.at(i, j);
  bool ng = detail::any_grad(t, {a});
  int idx = t.push_value(std::move(out), ng);
  if (ng) {
    t.record([&t, a, idx, R, C] {
      const auto& g = t.grad_buffer(idx);
      auto& ga = t.grad_buffer(a.index);
      for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j) ga.at(i, j) += g.at(j, i);
    });
  }
  return Var{idx};
}

template <typename Real>
Var reshape(Tape<Real>& t, Var a, std::vector<std::size_t> shape) {
  const auto& av = t.value(a);
  if (Tensor<Real>::numel(shape) != av.size()) {
    throw std::invalid_argument("reshape: element count mismatch");
  }
  Tensor<Real> out(shape, av.data);
  bool ng = detail::any_grad(t, {a});
  int idx = t.push_value(std::move(out), ng);
  if (ng) {
    t.record([&t, a, idx] {
      const auto& g = t.grad_buffer(idx);
      auto& ga = t.grad_buffer(a.index);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
    });
  }
  return Var{idx};
}

// ---------------------------------------------------------------------------
// Slicing / concatenation / gathering
// ---------------------------------------------------------------------------

template <typename Real>
Var slice_rows(Tape<Real>& t, Var a, std::size_t r0, std::size_t r1) {
  const auto& av = t.value(a);
  if (av.rank() != 2 || r1 > av.shape[0] || r0 >= r1) {
    throw std::invalid_argument("slice_rows: bad range");
  }
  std::size_t C = av.shape[1];
  Tensor<Real> out = Tensor<Real>::zeros({r1 - r0, C});
  std::copy(av.data.begin() + r0 * C, av.data.begin() + r1 * C,
            out.data.begin());
  bool ng = detail::any_grad(t, {a});
  int idx = t.push_value(std::move(out), ng);
  if (ng) {
    t.record([&t, a, idx, r0, C] {
      const auto& g = t.grad_buffer(idx);
      auto& ga = t.grad_buffer(a.index);
      for (std::size_t i = 0; i < g.size(); ++i)
        ga.data[r0 * C + i] += g.data[i];
    });
  }
  return Var{idx};
}

template <typename Real>
Var slice_cols(Tape<Real>& t, Var a, std::size_t c0, std::size_t c1) {
  const auto& av = t.value(a);
  if (av.rank() != 2 || c1 > av.shape[1] || c0 >= c1) {
    throw std::invalid_argument("slice_cols: bad range");
  }
  std::size_t R = av.shape[0], C = av.shape[1], W = c1 - c0;
  Tensor<Real> out = Tensor<Real>::zeros({R, W});
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < W; ++j) out.at(i, j) = av.at(i, c0 + j);
  bool ng = detail::any_grad(t, {a});
  int idx = t.push_value(std::move(out), ng);
  if (ng) {
    t.record([&t, a, idx, R, c0, W] {
      const auto& g = t.grad_buffer(idx);
      auto& ga = t.grad_buffer(a.index);
      for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < W; ++j) ga.at(i, c0 + j) += g.at(i, j);
    });
  }
  return Var{idx};
}

/// 1-D slice of a rank-1 tensor.
template <typename Real>
Var slice_vec(Tape<Real>& t, Var a, std::size_t i0, std::size_t i1) {
  const auto& av = t.value(a);
  if (av.rank() != 1 || i1 > av.shape[0] || i0 >= i1) {
    throw std::invalid_argument("slice_vec: bad range");
  }
  Tensor<Real> out = Tensor<Real>::zeros({i1 - i0});
  std::copy(av.data.begin() + i0, av.data.begin() + i1, out.data.begin());
  bool ng = detail::any_grad(t, {a});
  int idx = t.push_value(std::move(out), ng);
  if (ng) {
    t.record([&t, a, idx, i0] {
      const auto& g = t.grad_buffer(idx);
      auto& ga = t.grad_buffer(a.index);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data[i0 + i] += g.data[i];
    });
  }
  return Var{idx};
}

template <typename Real>
Var concat_rows(Tape<Real>& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  std::size_t C = t.value(parts[0]).shape.at(1);
  std::size_t R = 0;
  for (Var p : parts) {
    const auto& pv = t.value(p);
    if (pv.rank() != 2 || pv.shape[1] != C) {
      throw std::invalid_argument("concat_rows: column mismatch");
    }
    R += pv.shape[0];
  }
  Tensor<Real> out = Tensor<Real>::zeros({R, C});
  std::size_t off = 0;
  std::vector<std::size_t> offsets;
  for (Var p : parts) {
    const auto& pv = t.value(p);
    offsets.push_back(off);
    std::copy(pv.data.begin(), pv.data.end(), out.data.begin() + off);
    off += pv.size();
  }
  bool ng = false;
  for (Var p : parts) ng = ng || detail::any_grad(t, {p});
  int idx = t.push_value(std::move(out), ng);
  if (ng) {
    t.record([&t, parts, offsets, idx] {
      const auto& g = t.grad_buffer(idx);
      for (std::size_t k = 0; k < parts.size(); ++k) {
        if (!t.needs_grad(parts[k])) continue;
        auto& gp = t.grad_buffer(parts[k].index);
        for (std::size_t i = 0; i < gp.size(); ++i)
          gp.data[i] += g.data[offsets[k] + i];
      }
    });
  }
  return Var{idx};
}

/// Row gather: out[i, :] = a[indices[i], :]; index -1 yields a zero row.
/// Linear, so the adjoint is scatter-add over the same index map.
template <typename Real>
Var gather_rows(Tape<Real>& t, Var a, std::vector<long> indices) {
  const auto& av = t.value(a);
  if (av.rank() != 2) throw std::invalid_argument("gather_rows: rank 2 only");
  std::size_t C = av.shape[1];
  long R_in = static_cast<long>(av.shape[0]);
  Tensor<Real> out = Tensor<Real>::zeros({indices.size(), C});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    long s = indices[i];
    if (s < 0) continue;
    if (s >= R_in) throw std::invalid_argument("gather_rows: index OOB");
    std::copy(av.data.begin() + s * C, av.data.begin() + (s + 1) * C,
              out.data.begin() + i * C);
  }
  bool ng = detail::any_grad(t, {a});
  int idx = t.push_value(std::move(out), ng);
  if (ng) {
    t.record([&t, a, idx, indices = std::move(indices), C] {
      const auto& g = t.grad_buffer(idx);
      auto& ga = t.grad_buffer(a.index);
      for (std::size_t i = 0; i < indices.size(); ++i) {
        long s = indices[i];
        if (s < 0) continue;
        for (std::size_t j = 0; j < C; ++j)
          ga.data[s * C + j] += g.at(i, j);
      }
    });
  }
  return Var{idx};
}

/// Row scatter-add: out[indices[i], :] += a[i, :]; adjoint of gather_rows.
template <typename Real>
Var scatter_rows(Tape<Real>& t, Var a, const std::vector<long>& indices,
                 std::size_t n_out_rows) {
  const auto& av = t.value(a);
  if (av.rank() != 2 || indices.size() != av.shape[0]) {
    throw std::invalid_argument("scatter_rows: bad arguments");
  }
  std::size_t C = av.shape[1];
  Tensor<Real> out = Tensor<Real>::zeros({n_out_rows, C});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    long d = indices[i];
    if (d < 0) continue;
    if (d >= static_cast<long>(n_out_rows))
      throw std::invalid_argument("scatter_rows: index OOB");
    for (std::size_t j = 0; j < C; ++j) out.data[d * C + j] += av.at(i, j);
  }
  bool ng = detail::any_grad(t, {a});
  int idx = t.push_value(std::move(out), ng);
  if (ng) {
    t.record([&t, a, idx, indices, C] {
      const auto& g = t.grad_buffer(idx);
      auto& ga = t.grad_buffer(a.index);
      for (std::size_t i = 0; i < indices.size(); ++i) {
        long d = indices[i];
        if (d < 0) continue;
        for (std::size_t j = 0; j < C; ++j)
          ga.at(i, j) += g.data[d * C + j];
      }
    });
  }
  return Var{idx};
}

// ---------------------------------------------------------------------------
// Reductions and scalar utilities
// ---------------------------------------------------------------------------

template <typename Real>
Var sum_all(Tape<Real>& t, Var a) {
  const auto& av = t.value(a);
  Real s = Real(0);
  for (Real v : av.data) s += v;
  bool ng = detail::any_grad(t, {a});
  int idx = t.push_value(Tensor<Real>::scalar(s), ng);
  if (ng) {
    t.record([&t, a, idx] {
      Real g = t.grad_buffer(idx).data[0];
      auto& ga = t.grad_buffer(a.index);
      for (auto& v : ga.data) v += g;
    });
  }
  return Var{idx};
}

template <typename Real>
Var dot(Tape<Real>& t, Var a, Var b) {
  check_same_shape(t.value(a), t.value(b), "dot");
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  Real s = Real(0);
  for (std::size_t i = 0; i < av.size(); ++i) s += av.data[i] * bv.data[i];
  bool ng = detail::any_grad(t, {a, b});
  int idx = t.push_value(Tensor<Real>::scalar(s), ng);
  if (ng) {
    t.record([&t, a, b, idx] {
      Real g = t.grad_buffer(idx).data[0];
      const auto& av2 = t.value(a);
      const auto& bv2 = t.value(b);
      if (t.needs_grad(a)) {
        auto& ga = t.grad_buffer(a.index);
        for (std::size_t i = 0; i < ga.size(); ++i)
          ga.data[i] += g * bv2.data[i];
      }
      if (t.needs_grad(b)) {
        auto& gb = t.grad_buffer(b.index);
        for (std::size_t i = 0; i < gb.size(); ++i)
          gb.data[i] += g * av2.data[i];
      }
    });
  }
  return Var{idx};
}

/// Scale every element of a by a scalar-valued var s (shape [1]).
template <typename Real>
Var scale_by(Tape<Real>& t, Var a, Var s) {
  const auto& sv = t.value(s);
  if (sv.size() != 1) throw std::invalid_argument("scale_by: s must be [1]");
  Tensor<Real> out = t.value(a);
  Real sc = sv.data[0];
  for (auto& v : out.data) v *= sc;
  bool ng = detail::any_grad(t, {a, s});
  int idx = t.push_value(std::move(out), ng);
  if (ng) {
    t.record([&t, a, s, idx] {
      const auto& g = t.grad_buffer(idx);
      Real sc2 = t.value(s).data[0];
      const auto& av2 = t.value(a);
      if (t.needs_grad(a)) {
        auto& ga = t.grad_buffer(a.index);
        for (std::size_t i = 0; i < g.size(); ++i)
          ga.data[i] += sc2 * g.data[i];
      }
      if (t.needs_grad(s)) {
        Real acc = Real(0);
        for (std::size_t i = 0; i < g.size(); ++i)
          acc += g.data[i] * av2.data[i];
        t.grad_buffer(s.index).data[0] += acc;
      }
    });
  }
  return Var{idx};
}

/// Hard clamp of a scalar; gradient is zero outside [lo, hi].
template <typename Real>
Var clamp_scalar(Tape<Real>& t, Var a, Real lo, Real hi) {
  const auto& av = t.value(a);
  if (av.size() != 1) throw std::invalid_argument("clamp_scalar: scalar only");
  Real x = av.data[0];
  Real y = x < lo ? lo : (x > hi ? hi : x);
  bool ng = detail::any_grad(t, {a});
  int idx = t.push_value(Tensor<Real>::scalar(y), ng);
  if (ng) {
    t.record([&t, a, idx, lo, hi] {
      Real x2 = t.value(a).data[0];
      if (x2 >= lo && x2 <= hi) {
        t.grad_buffer(a.index).data[0] += t.grad_buffer(idx).data[0];
      }
    });
  }
  return Var{idx};
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

/// Row-wise softmax of a [R, C] tensor. With causal=true, entry (i, j) for
/// j > i is masked out before normalization (requires R == C).
template <typename Real>
Var softmax_rows(Tape<Real>& t, Var a, bool causal = false) {
  const auto& av = t.value(a);
  if (av.rank() != 2) throw std::invalid_argument("softmax_rows: rank 2 only");
  std::size_t R = av.shape[0], C = av.shape[1];
  if (causal && R != C) {
    throw std::invalid_argument("softmax_rows: causal mask needs square input");
  }
  Tensor<Real> out = Tensor<Real>::zeros({R, C});
  for (std::size_t i = 0; i < R; ++i) {
    std::size_t lim = causal ? i + 1 : C;
    Real mx = av.at(i, 0);
    for (std::size_t j = 1; j < lim; ++j) mx = std::max(mx, av.at(i, j));
    Real denom = Real(0);
    for (std::size_t j = 0; j < lim; ++j) {
      Real e = std::exp(av.at(i, j) - mx);
      out.at(i, j) = e;
      denom += e;
    }
    for (std::size_t j = 0; j < lim; ++j) out.at(i, j) /= denom;
  }
  bool ng = detail::any_grad(t, {a});
  int idx = t.push_value(std::move(out), ng);
  if (ng) {
    t.record([&t, a, idx, R, C, causal] {
      const auto& g = t.grad_buffer(idx);
      const auto& y = t.value(Var{idx});
      auto& ga = t.grad_buffer(a.index);
      for (std::size_t i = 0; i < R; ++i) {
        std::size_t lim = causal ? i + 1 : C;
        Real s = Real(0);
        for (std::size_t j = 0; j < lim; ++j) s += g.at(i, j) * y.at(i, j);
        for (std::size_t j = 0; j < lim; ++j)
          ga.at(i, j) += y.at(i, j) * (g.at(i, j) - s);
      }
    });
  }
  return Var{idx};
}

}  // namespace neuroheed
