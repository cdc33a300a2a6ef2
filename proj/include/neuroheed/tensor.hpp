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
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace neuroheed {

/// Dense row-major n-dimensional array. The value currency of the whole
/// library; ranks 1..3 are what the model actually uses.
template <typename Real>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<Real> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<Real> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (numel(shape) != data.size()) {
      throw std::invalid_argument("Tensor: shape/data size mismatch");
    }
  }

  static std::size_t numel(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<std::size_t> s) {
    std::size_t n = numel(s);
    return Tensor(std::move(s), std::vector<Real>(n, Real(0)));
  }

  static Tensor full(std::vector<std::size_t> s, Real v) {
    std::size_t n = numel(s);
    return Tensor(std::move(s), std::vector<Real>(n, v));
  }

  static Tensor scalar(Real v) { return Tensor({1}, {v}); }

  static Tensor from_vector(const std::vector<Real>& v) {
    return Tensor({v.size()}, v);
  }

  static Tensor identity(std::size_t n) {
    Tensor t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data[i * n + i] = Real(1);
    return t;
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.at(1); }

  Real& at(std::size_t i) { return data[i]; }
  Real at(std::size_t i) const { return data[i]; }
  Real& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  Real at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
  Real& at(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  Real at(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (Real v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> d(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      d[i] = static_cast<Other>(data[i]);
    }
    return Tensor<Other>(shape, std::move(d));
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) os << ",";
      os << shape[i];
    }
    os << "]";
    return os.str();
  }
};

template <typename Real>
void check_same_shape(const Tensor<Real>& a, const Tensor<Real>& b,
                      const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                a.shape_str() + " vs " + b.shape_str());
  }
}

}  // namespace neuroheed
