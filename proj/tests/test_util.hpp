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

#include <random>
#include <vector>

#include "neuroheed/tensor.hpp"

namespace testutil {

template <typename Real>
neuroheed::Tensor<Real> random_tensor(std::vector<std::size_t> shape,
                                      std::mt19937_64& rng, Real lo = Real(-1),
                                      Real hi = Real(1)) {
  std::uniform_real_distribution<double> dist(static_cast<double>(lo),
                                              static_cast<double>(hi));
  auto t = neuroheed::Tensor<Real>::zeros(std::move(shape));
  for (auto& v : t.data) v = static_cast<Real>(dist(rng));
  return t;
}

template <typename Real>
std::vector<Real> random_vector(std::size_t n, std::mt19937_64& rng,
                                Real lo = Real(-1), Real hi = Real(1)) {
  std::uniform_real_distribution<double> dist(static_cast<double>(lo),
                                              static_cast<double>(hi));
  std::vector<Real> v(n);
  for (auto& x : v) x = static_cast<Real>(dist(rng));
  return v;
}

}  // namespace testutil
