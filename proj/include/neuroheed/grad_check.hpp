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
#include <vector>

#include "neuroheed/tape.hpp"
#include "neuroheed/tensor.hpp"

namespace neuroheed {

/// Central finite-difference verification of reverse-mode gradients.
/// `f` builds a scalar loss on the given tape from leaf vars created for each
/// input tensor. Returns the max over all coordinates of
/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
/// Run at 64-bit precision; step h = 1e-5 * max(1, |x_i|) per coordinate.
/// The denominator floor is 1e-6 * max(1, |f|): central differences carry
/// ~eps * |f| / h of cancellation noise, so gradients far below that scale
/// cannot be resolved in relative terms and are compared against the floor
/// instead.
inline double grad_check(
    const std::function<Var(Tape<double>&, const std::vector<Var>&)>& f,
    std::vector<Tensor<double>> point) {
  auto eval = [&](const std::vector<Tensor<double>>& xs) {
    Tape<double> t(false);
    std::vector<Var> vars;
    vars.reserve(xs.size());
    for (const auto& x : xs) vars.push_back(t.leaf(x, false));
    Var y = f(t, vars);
    double v = t.value(y).data[0];
    if (!std::isfinite(v)) {
      throw std::runtime_error("grad_check: non-finite function value");
    }
    return v;
  };

  // Analytic gradients.
  Tape<double> t;
  std::vector<Var> vars;
  vars.reserve(point.size());
  for (const auto& x : point) vars.push_back(t.leaf(x, true));
  Var y = f(t, vars);
  if (t.value(y).size() != 1) {
    throw std::invalid_argument("grad_check: f must be scalar-valued");
  }
  t.backward(y);
  double floor =
      std::max(1e-12, 1e-6 * std::max(1.0, std::fabs(t.value(y).data[0])));

  double max_rel = 0.0;
  for (std::size_t k = 0; k < point.size(); ++k) {
    const Tensor<double>& analytic = t.grad(vars[k]);
    for (std::size_t i = 0; i < point[k].size(); ++i) {
      double x0 = point[k].data[i];
      double h = 1e-5 * std::max(1.0, std::fabs(x0));
      point[k].data[i] = x0 + h;
      double fp = eval(point);
      point[k].data[i] = x0 - h;
      double fm = eval(point);
      point[k].data[i] = x0;
      double numeric = (fp - fm) / (2.0 * h);
      double a = analytic.data[i];
      if (!std::isfinite(a) || !std::isfinite(numeric)) {
        throw std::runtime_error("grad_check: non-finite gradient");
      }
      double rel = std::fabs(a - numeric) /
                   std::max({std::fabs(a), std::fabs(numeric), floor});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace neuroheed
