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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "neuroheed/adam.hpp"
#include "neuroheed/attention.hpp"
#include "neuroheed/grad_check.hpp"
#include "neuroheed/ops.hpp"
#include "neuroheed/rnn.hpp"
#include "neuroheed/tape.hpp"
#include "test_util.hpp"

using namespace neuroheed;
using testutil::random_tensor;

namespace {

constexpr double kGradTol = 1e-4;

// Shared oracle harness: grad-check a builder at `trials` random points.
double max_grad_err(
    const std::function<Var(Tape<double>&, const std::vector<Var>&)>& f,
    const std::vector<std::vector<std::size_t>>& shapes, int trials = 10,
    unsigned seed = 7) {
  std::mt19937_64 rng(seed);
  double worst = 0;
  for (int k = 0; k < trials; ++k) {
    std::vector<Tensor<double>> point;
    for (const auto& s : shapes) point.push_back(random_tensor<double>(s, rng));
    worst = std::max(worst, grad_check(f, std::move(point)));
  }
  return worst;
}

}  // namespace

TEST_CASE("matmul identity and orthogonal examples") {
  Tape<double> t(false);
  Var a = t.leaf(Tensor<double>({2, 2}, {1, 2, 3, 4}));
  Var i = t.leaf(Tensor<double>::identity(2));
  Var y = matmul(t, i, a);
  CHECK(t.value(y).data == std::vector<double>{1, 2, 3, 4});

  Var u = t.leaf(Tensor<double>({1, 2}, {1, 0}));
  Var v = t.leaf(Tensor<double>({2, 1}, {0, 1}));
  CHECK(t.value(matmul(t, u, v)).data[0] == 0.0);
}

TEST_CASE("matmul gradient of sum equals ones*b^T") {
  std::mt19937_64 rng(3);
  auto a = random_tensor<double>({3, 4}, rng);
  auto b = random_tensor<double>({4, 2}, rng);
  Tape<double> t;
  Var av = t.leaf(a, true);
  Var bv = t.leaf(b, false);
  Var s = sum_all(t, matmul(t, av, bv));
  t.backward(s);
  const auto& ga = t.grad(av);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 4; ++k) {
      double expect = 0;
      for (std::size_t j = 0; j < 2; ++j) expect += b.at(k, j);
      CHECK(ga.at(i, k) == doctest::Approx(expect).epsilon(1e-12));
    }
  // Finite-difference oracle.
  double err = max_grad_err(
      [](Tape<double>& tp, const std::vector<Var>& xs) {
        return sum_all(tp, matmul(tp, xs[0], xs[1]));
      },
      {{3, 4}, {4, 2}}, 3);
  CHECK(err <= 1e-6);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape<double> t(false);
  Var a = t.leaf(Tensor<double>::zeros({2, 3}));
  Var b = t.leaf(Tensor<double>::zeros({2, 3}));
  CHECK_THROWS_WITH_AS(matmul(t, a, b),
                       doctest::Contains("[2,3]"), std::invalid_argument);
}

TEST_CASE("conv1d identity kernel and framing formula") {
  Tape<double> t(false);
  Var x = t.leaf(Tensor<double>({1, 3}, {1, 2, 3}));
  Var w = t.leaf(Tensor<double>({1, 1, 1}, {1}));
  Var y = conv1d(t, x, w, 1, PadMode::kValid);
  CHECK(t.value(y).data == std::vector<double>{1, 2, 3});

  std::mt19937_64 rng(1);
  Var xl = t.leaf(random_tensor<double>({1, 8000}, rng));
  Var wl = t.leaf(random_tensor<double>({4, 1, 20}, rng));
  Var yl = conv1d(t, xl, wl, 10, PadMode::kValid);
  CHECK(t.value(yl).shape[1] == 799);
}

TEST_CASE("conv1d valid mode rejects too-short input") {
  Tape<double> t(false);
  Var x = t.leaf(Tensor<double>::zeros({1, 3}));
  Var w = t.leaf(Tensor<double>::zeros({1, 1, 5}));
  CHECK_THROWS_AS(conv1d(t, x, w, 1, PadMode::kValid), std::invalid_argument);
}

TEST_CASE("conv1d causal mode: future perturbations leave past outputs") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    auto x = random_tensor<double>({2, 31}, rng);
    auto w = random_tensor<double>({3, 2, 4}, rng);
    std::size_t stride = 1 + trial % 3;
    Tape<double> t(false);
    Var yv = conv1d(t, t.leaf(x), t.leaf(w), stride, PadMode::kCausal);
    Tensor<double> y0 = t.value(yv);
    std::uniform_int_distribution<std::size_t> pick(1, 30);
    std::size_t p = pick(rng);
    auto x2 = x;
    x2.at(trial % 2, p) += 1.5;
    Tape<double> t2(false);
    Tensor<double> y1 = t2.value(
        conv1d(t2, t2.leaf(x2), t2.leaf(w), stride, PadMode::kCausal));
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t j = 0; j < y0.shape[1]; ++j) {
        if (j * stride < p) CHECK(y0.at(c, j) == y1.at(c, j));
      }
  }
}

TEST_CASE("activation examples") {
  Tape<double> t(false);
  Var r = relu(t, t.leaf(Tensor<double>({1, 3}, {-1, 0, 2})));
  CHECK(t.value(r).data == std::vector<double>{0, 0, 2});

  Var alpha = t.leaf(Tensor<double>({1}, {0.25}));
  Var p = prelu(t, t.leaf(Tensor<double>({1, 2}, {-4, 4})), alpha);
  CHECK(t.value(p).data == std::vector<double>{-1, 4});

  Var s = sigmoid(t, t.leaf(Tensor<double>::scalar(0)));
  CHECK(t.value(s).data[0] == doctest::Approx(0.5));
}

TEST_CASE("gradient oracle: elementwise, reductions, structure ops") {
  CHECK(max_grad_err(
            [](Tape<double>& t, const std::vector<Var>& x) {
              Var y = mul(t, add(t, x[0], x[1]), sub(t, x[0], x[1]));
              return sum_all(t, mul(t, y, y));
            },
            {{3, 4}, {3, 4}}) <= kGradTol);
  CHECK(max_grad_err(
            [](Tape<double>& t, const std::vector<Var>& x) {
              Var d = div(t, x[0], affine(t, square(t, x[1]), 1.0, 1.5));
              return sum_all(t, d);
            },
            {{2, 5}, {2, 5}}) <= kGradTol);
  CHECK(max_grad_err(
            [](Tape<double>& t, const std::vector<Var>& x) {
              Var y = tanh_op(t, sigmoid(t, x[0]));
              return dot(t, y, y);
            },
            {{7}}) <= kGradTol);
  CHECK(max_grad_err(
            [](Tape<double>& t, const std::vector<Var>& x) {
              Var y = concat_rows(t, {slice_rows(t, x[0], 0, 2),
                                      slice_cols(t, transpose(t, x[0]), 0, 4)});
              return sum_all(t, square(t, y));
            },
            {{4, 4}}) <= kGradTol);
  CHECK(max_grad_err(
            [](Tape<double>& t, const std::vector<Var>& x) {
              return sum_all(
                  t, square(t, add_rowvec(t, add_colvec(t, x[0], x[1]), x[2])));
            },
            {{3, 5}, {3}, {5}}) <= kGradTol);
  CHECK(max_grad_err(
            [](Tape<double>& t, const std::vector<Var>& x) {
              Var y = scale_by(t, x[0], dot(t, x[1], x[1]));
              return sum_all(t, square(t, y));
            },
            {{2, 3}, {4}}) <= kGradTol);
  CHECK(max_grad_err(
            [](Tape<double>& t, const std::vector<Var>& x) {
              std::vector<long> idx = {2, -1, 0, 1, 2};
              Var g = gather_rows(t, x[0], idx);
              Var s = scatter_rows(t, g, {0, 1, 2, 3, 1}, 4);
              return sum_all(t, square(t, s));
            },
            {{3, 4}}) <= kGradTol);
}

TEST_CASE("gradient oracle: conv variants") {
  for (PadMode mode : {PadMode::kValid, PadMode::kCausal, PadMode::kSame}) {
    CHECK(max_grad_err(
              [mode](Tape<double>& t, const std::vector<Var>& x) {
                Var y = conv1d(t, x[0], x[1], 2, mode, 2);
                return sum_all(t, square(t, y));
              },
              {{2, 17}, {3, 2, 3}}, 10) <= kGradTol);
  }
  CHECK(max_grad_err(
            [](Tape<double>& t, const std::vector<Var>& x) {
              Var y = conv1d_depthwise(t, x[0], x[1], 1, PadMode::kCausal, 3);
              return sum_all(t, square(t, y));
            },
            {{3, 14}, {3, 3}}) <= kGradTol);
}

TEST_CASE("gradient oracle: softmax, norms, overlap-add, pooling, interp") {
  CHECK(max_grad_err(
            [](Tape<double>& t, const std::vector<Var>& x) {
              return sum_all(t, square(t, softmax_rows(t, x[0], false)));
            },
            {{4, 4}}) <= kGradTol);
  CHECK(max_grad_err(
            [](Tape<double>& t, const std::vector<Var>& x) {
              return sum_all(t, square(t, softmax_rows(t, x[0], true)));
            },
            {{5, 5}}) <= kGradTol);
  CHECK(max_grad_err(
            [](Tape<double>& t, const std::vector<Var>& x) {
              return sum_all(
                  t, square(t, layer_norm_rows(t, x[0], x[1], x[2])));
            },
            {{3, 6}, {6}, {6}}) <= kGradTol);
  CHECK(max_grad_err(
            [](Tape<double>& t, const std::vector<Var>& x) {
              return sum_all(
                  t, square(t, global_layer_norm(t, x[0], x[1], x[2])));
            },
            {{4, 6}, {4}, {4}}) <= kGradTol);
  CHECK(max_grad_err(
            [](Tape<double>& t, const std::vector<Var>& x) {
              return sum_all(t,
                             square(t, cum_layer_norm(t, x[0], x[1], x[2])));
            },
            {{4, 6}, {4}, {4}}) <= kGradTol);
  CHECK(max_grad_err(
            [](Tape<double>& t, const std::vector<Var>& x) {
              return sum_all(t, square(t, overlap_add(t, x[0], 2)));
            },
            {{5, 4}}) <= kGradTol);
  CHECK(max_grad_err(
            [](Tape<double>& t, const std::vector<Var>& x) {
              return sum_all(t, square(t, maxpool_cols(t, x[0], 2)));
            },
            {{3, 9}}) <= kGradTol);
  auto map = stretch_lerp_map(6, 11);
  CHECK(max_grad_err(
            [&map](Tape<double>& t, const std::vector<Var>& x) {
              return sum_all(t, square(t, gather_lerp_cols(t, x[0], map)));
            },
            {{3, 6}}) <= kGradTol);
  CHECK(max_grad_err(
            [](Tape<double>& t, const std::vector<Var>& x) {
              return sum_all(t, square(t, repeat_col(t, x[0], 5)));
            },
            {{4}}) <= kGradTol);
  CHECK(max_grad_err(
            [](Tape<double>& t, const std::vector<Var>& x) {
              return sum_all(t, square(t, prelu(t, x[0], x[1])));
            },
            {{3, 6}, {3}}) <= kGradTol);
}

TEST_CASE("self-attention: singleton, symmetry, permutation, row sums") {
  std::mt19937_64 rng(5);
  std::size_t N = 6;
  auto make_params = [&](Tape<double>& t, bool grad) {
    AttentionVars p;
    p.wq = t.leaf(random_tensor<double>({N, N}, rng), grad);
    p.bq = t.leaf(random_tensor<double>({N}, rng), grad);
    p.wk = t.leaf(random_tensor<double>({N, N}, rng), grad);
    p.bk = t.leaf(random_tensor<double>({N}, rng), grad);
    p.wv = t.leaf(random_tensor<double>({N, N}, rng), grad);
    p.bv = t.leaf(random_tensor<double>({N}, rng), grad);
    p.wo = t.leaf(random_tensor<double>({N, N}, rng), grad);
    p.bo = t.leaf(random_tensor<double>({N}, rng), grad);
    p.ff1_w = t.leaf(random_tensor<double>({N, 4 * N}, rng), grad);
    p.ff1_b = t.leaf(random_tensor<double>({4 * N}, rng), grad);
    p.ff2_w = t.leaf(random_tensor<double>({4 * N, N}, rng), grad);
    p.ff2_b = t.leaf(random_tensor<double>({N}, rng), grad);
    p.ln1_g = t.leaf(Tensor<double>::full({N}, 1.0), grad);
    p.ln1_b = t.leaf(Tensor<double>::zeros({N}), grad);
    p.ln2_g = t.leaf(Tensor<double>::full({N}, 1.0), grad);
    p.ln2_b = t.leaf(Tensor<double>::zeros({N}), grad);
    return p;
  };

  {
    // T = 1: the single attention weight must be exactly 1.
    Tape<double> t(false);
    auto p = make_params(t, false);
    Var attn;
    self_attention_layer(t, t.leaf(random_tensor<double>({1, N}, rng)), p,
                         false, &attn);
    CHECK(t.value(attn).data[0] == doctest::Approx(1.0));
  }
  {
    // Identical frames produce identical outputs per frame.
    Tape<double> t(false);
    auto p = make_params(t, false);
    auto row = testutil::random_vector<double>(N, rng);
    Tensor<double> x = Tensor<double>::zeros({4, N});
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < N; ++j) x.at(i, j) = row[j];
    auto y = t.value(self_attention_layer(t, t.leaf(x), p));
    for (std::size_t i = 1; i < 4; ++i)
      for (std::size_t j = 0; j < N; ++j)
        CHECK(y.at(i, j) == doctest::Approx(y.at(0, j)).epsilon(1e-12));
  }
  {
    // Without positional encoding, permuting frames permutes outputs.
    std::mt19937_64 r2(9);
    auto x = random_tensor<double>({4, N}, r2);
    std::vector<long> perm = {2, 0, 3, 1};
    Tensor<double> xp = Tensor<double>::zeros({4, N});
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < N; ++j) xp.at(i, j) = x.at(perm[i], j);
    Tape<double> t(false);
    auto p = make_params(t, false);
    auto y = t.value(self_attention_layer(t, t.leaf(x), p));
    auto yp = t.value(self_attention_layer(t, t.leaf(xp), p));
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < N; ++j)
        CHECK(yp.at(i, j) == doctest::Approx(y.at(perm[i], j)).epsilon(1e-9));
  }
  {
    // Attention rows sum to 1 +- 1e-6.
    Tape<double> t(false);
    auto p = make_params(t, false);
    Var attn;
    self_attention_layer(t, t.leaf(random_tensor<double>({7, N}, rng)), p,
                         false, &attn);
    const auto& a = t.value(attn);
    for (std::size_t i = 0; i < 7; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 7; ++j) s += a.at(i, j);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
  {
    // Empty sequence is an error.
    Tape<double> t(false);
    auto p = make_params(t, false);
    CHECK_THROWS_AS(
        self_attention_layer(t, t.leaf(Tensor<double>::zeros({0, N})), p),
        std::invalid_argument);
  }
}

TEST_CASE("gradient oracle: self-attention layer") {
  std::size_t N = 4, T = 5;
  // The key bias shifts every score in a softmax row by the same amount, so
  // the output is invariant to it and its true gradient is ~0; a relative
  // finite-difference check degenerates there. Keep it a non-grad constant.
  auto f = [N](Tape<double>& t, const std::vector<Var>& x) {
    AttentionVars p;
    p.wq = x[1]; p.bq = x[2]; p.wk = x[3];
    p.bk = t.leaf(Tensor<double>::full({N}, 0.3), false);
    p.wv = x[4]; p.bv = x[5]; p.wo = x[6]; p.bo = x[7];
    p.ff1_w = x[8]; p.ff1_b = x[9]; p.ff2_w = x[10]; p.ff2_b = x[11];
    p.ln1_g = x[12]; p.ln1_b = x[13]; p.ln2_g = x[14]; p.ln2_b = x[15];
    return sum_all(t, square(t, self_attention_layer(t, x[0], p)));
  };
  std::vector<std::vector<std::size_t>> shapes = {
      {T, N}, {N, N}, {N}, {N, N}, {N, N}, {N}, {N, N}, {N},
      {N, 4 * N}, {4 * N}, {4 * N, N}, {N}, {N}, {N}, {N}, {N}};
  CHECK(max_grad_err(f, shapes, 5) <= kGradTol);
}

TEST_CASE("lstm_step: zero weights, chunk equivalence, gradient") {
  std::size_t In = 3, H = 4;
  std::mt19937_64 rng(21);
  {
    Tape<double> t(false);
    LstmVars w{t.leaf(Tensor<double>::zeros({In, 4 * H})),
               t.leaf(Tensor<double>::zeros({H, 4 * H})),
               t.leaf(Tensor<double>::zeros({4 * H}))};
    LstmState s{t.leaf(Tensor<double>::zeros({1, H})),
                t.leaf(Tensor<double>::zeros({1, H}))};
    auto s2 = lstm_step(t, t.leaf(random_tensor<double>({1, In}, rng)), s, w);
    for (double v : t.value(s2.h).data) CHECK(v == 0.0);
    for (double v : t.value(s2.c).data) CHECK(v == 0.0);
  }
  {
    // Stepwise with carried state == both steps in one pass, bitwise.
    Tape<double> t(false);
    LstmVars w{t.leaf(random_tensor<double>({In, 4 * H}, rng)),
               t.leaf(random_tensor<double>({H, 4 * H}, rng)),
               t.leaf(random_tensor<double>({4 * H}, rng))};
    auto x1 = random_tensor<double>({1, In}, rng);
    auto x2 = random_tensor<double>({1, In}, rng);
    LstmState s{t.leaf(Tensor<double>::zeros({1, H})),
                t.leaf(Tensor<double>::zeros({1, H}))};
    auto sa = lstm_step(t, t.leaf(x1), s, w);
    auto sb = lstm_step(t, t.leaf(x2), sa, w);
    LstmState s0{t.leaf(Tensor<double>::zeros({1, H})),
                 t.leaf(Tensor<double>::zeros({1, H}))};
    std::vector<Var> seq = {t.leaf(x1), t.leaf(x2)};
    lstm_sequence(t, seq, s0, w);
    CHECK(t.value(sb.h).data == t.value(s0.h).data);
    CHECK(t.value(sb.c).data == t.value(s0.c).data);
  }
  {
    // State shape mismatch is an error.
    Tape<double> t(false);
    LstmVars w{t.leaf(Tensor<double>::zeros({In, 4 * H})),
               t.leaf(Tensor<double>::zeros({H, 4 * H})),
               t.leaf(Tensor<double>::zeros({4 * H}))};
    LstmState bad{t.leaf(Tensor<double>::zeros({1, H + 1})),
                  t.leaf(Tensor<double>::zeros({1, H + 1}))};
    CHECK_THROWS_AS(
        lstm_step(t, t.leaf(Tensor<double>::zeros({1, In})), bad, w),
        std::invalid_argument);
  }
  // Gradient of final h w.r.t. first input via finite differences.
  auto f = [In, H](Tape<double>& t, const std::vector<Var>& x) {
    LstmVars w{x[2], x[3], x[4]};
    LstmState s{t.leaf(Tensor<double>::zeros({1, H})),
                t.leaf(Tensor<double>::zeros({1, H}))};
    s = lstm_step(t, x[0], s, w);
    s = lstm_step(t, x[1], s, w);
    return sum_all(t, square(t, s.h));
  };
  CHECK(max_grad_err(f,
                     {{1, In}, {1, In}, {In, 4 * H}, {H, 4 * H}, {4 * H}},
                     10) <= kGradTol);
}

TEST_CASE("cumulative layer norm semantics") {
  std::mt19937_64 rng(31);
  {
    // Constant input: normalized core is 0, output equals bias.
    Tape<double> t(false);
    Var x = t.leaf(Tensor<double>::full({3, 5}, 2.5));
    Var g = t.leaf(Tensor<double>::full({3}, 1.3));
    Var b = t.leaf(Tensor<double>({3}, {0.1, -0.2, 0.3}));
    auto y = t.value(cum_layer_norm(t, x, g, b));
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t u = 0; u < 5; ++u)
        CHECK(y.at(c, u) ==
              doctest::Approx(t.value(b).data[c]).epsilon(1e-9));
  }
  {
    // Causality: editing the final frame leaves earlier outputs untouched.
    auto x = random_tensor<double>({4, 6}, rng);
    auto g = random_tensor<double>({4}, rng);
    auto b = random_tensor<double>({4}, rng);
    Tape<double> t(false);
    auto y0 = t.value(cum_layer_norm(t, t.leaf(x), t.leaf(g), t.leaf(b)));
    auto x2 = x;
    for (std::size_t c = 0; c < 4; ++c) x2.at(c, 5) += 3.0;
    auto y1 = t.value(cum_layer_norm(t, t.leaf(x2), t.leaf(g), t.leaf(b)));
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t u = 0; u < 5; ++u) CHECK(y0.at(c, u) == y1.at(c, u));
  }
  {
    // At the last frame, cLN statistics match whole-input layer norm stats.
    auto x = random_tensor<double>({4, 6}, rng);
    Tape<double> t(false);
    Var g = t.leaf(Tensor<double>::full({4}, 1.0));
    Var b = t.leaf(Tensor<double>::zeros({4}));
    auto y = t.value(cum_layer_norm(t, t.leaf(x), g, b));
    double s = 0, q = 0;
    for (double v : x.data) s += v;
    double m = s / 24.0;
    for (double v : x.data) q += (v - m) * (v - m);
    double r = 1.0 / std::sqrt(q / 24.0 + 1e-5);
    for (std::size_t c = 0; c < 4; ++c)
      CHECK(y.at(c, 5) ==
            doctest::Approx((x.at(c, 5) - m) * r).epsilon(1e-9));
  }
  {
    // Chunked evaluation with carry equals whole-sequence evaluation bitwise.
    auto x = random_tensor<double>({3, 8}, rng);
    auto g = random_tensor<double>({3}, rng);
    auto b = random_tensor<double>({3}, rng);
    Tape<double> t(false);
    auto whole = t.value(cum_layer_norm(t, t.leaf(x), t.leaf(g), t.leaf(b)));
    CumNormCarry<double> carry;
    Tensor<double> x1 = Tensor<double>::zeros({3, 3});
    Tensor<double> x2 = Tensor<double>::zeros({3, 5});
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t u = 0; u < 3; ++u) x1.at(c, u) = x.at(c, u);
      for (std::size_t u = 0; u < 5; ++u) x2.at(c, u) = x.at(c, u + 3);
    }
    auto y1 = t.value(cum_layer_norm<double>(t, t.leaf(x1), t.leaf(g),
                                             t.leaf(b), 1e-5, nullptr, &carry));
    auto y2 = t.value(cum_layer_norm<double>(t, t.leaf(x2), t.leaf(g),
                                             t.leaf(b), 1e-5, &carry, nullptr));
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t u = 0; u < 3; ++u) CHECK(y1.at(c, u) == whole.at(c, u));
      for (std::size_t u = 0; u < 5; ++u)
        CHECK(y2.at(c, u) == whole.at(c, u + 3));
    }
  }
  {
    // Empty input is an error.
    Tape<double> t(false);
    CHECK_THROWS_AS(cum_layer_norm(t, t.leaf(Tensor<double>::zeros({3, 0})),
                                   t.leaf(Tensor<double>::zeros({3})),
                                   t.leaf(Tensor<double>::zeros({3}))),
                    std::invalid_argument);
  }
}

TEST_CASE("adam: first step, zero gradient, step magnitude") {
  {
    Tensor<float> p = Tensor<float>::zeros({3});
    Tensor<float> g({3}, {0.5f, -2.0f, 1.0f});
    AdamState<float> st;
    std::vector<Tensor<float>*> ps = {&p};
    std::vector<const Tensor<float>*> gs = {&g};
    adam_step(ps, gs, st, 0.01f);
    for (std::size_t i = 0; i < 3; ++i) {
      float expect = -0.01f * (g.data[i] > 0 ? 1.0f : -1.0f);
      CHECK(p.data[i] == doctest::Approx(expect).epsilon(1e-4));
    }
  }
  {
    Tensor<float> p({2}, {1.0f, -2.0f});
    Tensor<float> g = Tensor<float>::zeros({2});
    AdamState<float> st;
    std::vector<Tensor<float>*> ps = {&p};
    std::vector<const Tensor<float>*> gs = {&g};
    adam_step(ps, gs, st, 0.1f);
    CHECK(p.data[0] == 1.0f);
    CHECK(p.data[1] == -2.0f);
  }
  {
    // Two steps with constant gradient: step magnitude non-increasing.
    Tensor<double> p = Tensor<double>::zeros({1});
    Tensor<double> g({1}, {0.7});
    AdamState<double> st;
    std::vector<Tensor<double>*> ps = {&p};
    std::vector<const Tensor<double>*> gs = {&g};
    adam_step(ps, gs, st, 0.01);
    double step1 = std::fabs(p.data[0]);
    double before = p.data[0];
    adam_step(ps, gs, st, 0.01);
    double step2 = std::fabs(p.data[0] - before);
    CHECK(step2 <= step1 + 1e-12);
  }
  {
    // Shape mismatch is an error.
    Tensor<double> p = Tensor<double>::zeros({2});
    Tensor<double> g = Tensor<double>::zeros({3});
    AdamState<double> st;
    std::vector<Tensor<double>*> ps = {&p};
    std::vector<const Tensor<double>*> gs = {&g};
    CHECK_THROWS_AS(adam_step(ps, gs, st, 0.1), std::invalid_argument);
  }
}

TEST_CASE("grad_check harness on known functions") {
  {
    // f(x) = sum(x^2) at [1, 2]: analytic [2, 4].
    double err = grad_check(
        [](Tape<double>& t, const std::vector<Var>& x) {
          return sum_all(t, square(t, x[0]));
        },
        {Tensor<double>({2}, {1, 2})});
    CHECK(err <= 1e-9);
  }
  {
    // Constant function: both gradients ~0.
    double err = grad_check(
        [](Tape<double>& t, const std::vector<Var>& x) {
          (void)x;
          return t.leaf(Tensor<double>::scalar(3.0));
        },
        {Tensor<double>({3}, {1, 2, 3})});
    CHECK(err <= 1e-9);
  }
}

TEST_CASE("tape: backward twice is an error") {
  Tape<double> t;
  Var x = t.leaf(Tensor<double>({2}, {1, 2}), true);
  Var y = sum_all(t, square(t, x));
  t.backward(y);
  CHECK_THROWS_AS(t.backward(y), std::logic_error);
}
