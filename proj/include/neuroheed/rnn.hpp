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

#include <stdexcept>
#include <vector>

#include "neuroheed/ops.hpp"
#include "neuroheed/tape.hpp"

namespace neuroheed {

/// LSTM weights as tape vars: w_ih[In, 4H], w_hh[H, 4H], b[4H].
/// Gate order along the 4H axis: input, forget, cell candidate, output.
struct LstmVars {
  Var w_ih, w_hh, b;
};

/// Recurrent state as tape vars (h and c of shape [B, H]).
struct LstmState {
  Var h, c;
};

/// One batched LSTM step: x[B, In], state (h, c) of [B, H]. Sequence
/// processing is step composition; feeding a sequence in chunks with the
/// carried state is exactly equivalent to a single run.
template <typename Real>
LstmState lstm_step(Tape<Real>& t, Var x, LstmState state, const LstmVars& w) {
  const auto& xv = t.value(x);
  const auto& hv = t.value(state.h);
  const auto& wih = t.value(w.w_ih);
  const auto& whh = t.value(w.w_hh);
  if (xv.rank() != 2 || hv.rank() != 2 || xv.shape[0] != hv.shape[0]) {
    throw std::invalid_argument("lstm_step: batch mismatch");
  }
  std::size_t H = whh.shape[0];
  if (wih.shape[1] != 4 * H || hv.shape[1] != H ||
      !t.value(state.c).same_shape(hv)) {
    throw std::invalid_argument("lstm_step: state shape mismatch");
  }
  Var gates = add_rowvec(t, add(t, matmul(t, x, w.w_ih),
                                matmul(t, state.h, w.w_hh)),
                         w.b);
  Var i = sigmoid(t, slice_cols(t, gates, 0, H));
  Var f = sigmoid(t, slice_cols(t, gates, H, 2 * H));
  Var g = tanh_op(t, slice_cols(t, gates, 2 * H, 3 * H));
  Var o = sigmoid(t, slice_cols(t, gates, 3 * H, 4 * H));
  Var c_new = add(t, mul(t, f, state.c), mul(t, i, g));
  Var h_new = mul(t, o, tanh_op(t, c_new));
  return {h_new, c_new};
}

/// Run an LSTM over a time-major sequence xs (each [B, In]); returns per-step
/// hidden outputs and the final state.
template <typename Real>
std::vector<Var> lstm_sequence(Tape<Real>& t, const std::vector<Var>& xs,
                               LstmState& state, const LstmVars& w) {
  std::vector<Var> outs;
  outs.reserve(xs.size());
  for (Var x : xs) {
    state = lstm_step(t, x, state, w);
    outs.push_back(state.h);
  }
  return outs;
}

}  // namespace neuroheed
