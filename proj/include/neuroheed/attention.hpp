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
#include <stdexcept>

#include "neuroheed/ops.hpp"
#include "neuroheed/tape.hpp"

namespace neuroheed {

/// Parameters of one post-norm transformer block: single-head scaled
/// dot-product attention (N -> N projections) and a position-wise
/// feed-forward N -> 4N -> N, each wrapped in residual + layer norm.
struct AttentionVars {
  Var wq, bq, wk, bk, wv, bv, wo, bo;
  Var ff1_w, ff1_b, ff2_w, ff2_b;
  Var ln1_g, ln1_b, ln2_g, ln2_b;
};

/// One self-attention layer over x[T, N]. Attention weights per query row sum
/// to 1. With causal=true, queries attend only to positions <= their own.
template <typename Real>
Var self_attention_layer(Tape<Real>& t, Var x, const AttentionVars& p,
                         bool causal = false, Var* attn_weights = nullptr) {
  const auto& xv = t.value(x);
  if (xv.rank() != 2) {
    throw std::invalid_argument("self_attention_layer: expect x[T, N]");
  }
  std::size_t T = xv.shape[0], N = xv.shape[1];
  if (T == 0) {
    throw std::invalid_argument("self_attention_layer: empty sequence");
  }
  Var q = add_rowvec(t, matmul(t, x, p.wq), p.bq);
  Var k = add_rowvec(t, matmul(t, x, p.wk), p.bk);
  Var v = add_rowvec(t, matmul(t, x, p.wv), p.bv);
  Var scores = affine(t, matmul(t, q, transpose(t, k)),
                      Real(1) / std::sqrt(Real(N)));
  Var attn = softmax_rows(t, scores, causal);
  if (attn_weights) *attn_weights = attn;
  Var ctx = add_rowvec(t, matmul(t, matmul(t, attn, v), p.wo), p.bo);
  Var y = layer_norm_rows(t, add(t, x, ctx), p.ln1_g, p.ln1_b);
  Var ff = add_rowvec(t, matmul(t, relu(t, add_rowvec(t, matmul(t, y, p.ff1_w),
                                                      p.ff1_b)),
                                p.ff2_w),
                      p.ff2_b);
  return layer_norm_rows(t, add(t, y, ff), p.ln2_g, p.ln2_b);
}

/// Sinusoidal positional encoding table [T, N], positions offset..offset+T-1.
template <typename Real>
Tensor<Real> sinusoidal_positional_encoding(std::size_t T, std::size_t N,
                                            std::size_t offset = 0) {
  Tensor<Real> pe = Tensor<Real>::zeros({T, N});
  for (std::size_t pos = 0; pos < T; ++pos) {
    for (std::size_t i = 0; i < N; ++i) {
      double exponent = static_cast<double>(2 * (i / 2)) /
                        static_cast<double>(N);
      double angle = static_cast<double>(pos + offset) /
                     std::pow(10000.0, exponent);
      pe.at(pos, i) =
          static_cast<Real>((i % 2 == 0) ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

}  // namespace neuroheed
