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
#include <vector>

#include "neuroheed/tensor.hpp"

namespace neuroheed {

/// Adam optimizer state over a flat list of parameter tensors. Moments are
/// lazily shaped on the first step; the step counter is strictly increasing.
template <typename Real>
struct AdamState {
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real epsilon = Real(1e-8);
  std::size_t step = 0;
  std::vector<Tensor<Real>> m, v;
};

/// One bias-corrected Adam update, mutating params in place.
template <typename Real>
void adam_step(std::vector<Tensor<Real>*>& params,
               const std::vector<const Tensor<Real>*>& grads,
               AdamState<Real>& state, Real lr) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adam_step: params/grads count mismatch");
  }
  if (state.m.empty()) {
    for (auto* p : params) {
      state.m.push_back(Tensor<Real>::zeros(p->shape));
      state.v.push_back(Tensor<Real>::zeros(p->shape));
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: state size mismatch");
  }
  ++state.step;
  Real bc1 = Real(1) - std::pow(state.beta1, Real(state.step));
  Real bc2 = Real(1) - std::pow(state.beta2, Real(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<Real>& p = *params[k];
    const Tensor<Real>& g = *grads[k];
    if (!p.same_shape(g) || !p.same_shape(state.m[k])) {
      throw std::invalid_argument("adam_step: shape mismatch at parameter " +
                                  std::to_string(k));
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      Real gi = g.data[i];
      state.m[k].data[i] =
          state.beta1 * state.m[k].data[i] + (Real(1) - state.beta1) * gi;
      state.v[k].data[i] =
          state.beta2 * state.v[k].data[i] + (Real(1) - state.beta2) * gi * gi;
      Real mhat = state.m[k].data[i] / bc1;
      Real vhat = state.v[k].data[i] / bc2;
      p.data[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

}  // namespace neuroheed
