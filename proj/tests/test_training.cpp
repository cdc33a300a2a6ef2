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
#include <cmath>
#include <random>

#include "doctest.h"
#include "neuroheed/grad_check.hpp"
#include "neuroheed/training.hpp"
#include "test_util.hpp"

using namespace neuroheed;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.N = 8;
  c.L = 4;
  c.C = 8;
  c.P_r = 1;
  c.bottleneck = 8;
  c.dprnn_blocks = 2;
  c.dprnn_hidden = 8;
  c.dprnn_chunk = 10;
  c.spk_blocks = 2;
  c.spk_lstm_hidden = 8;
  return c;
}

/// Synthetic in-memory example sized for a tiny config (C EEG channels).
MixtureExample make_example(std::size_t n_samples, std::size_t channels,
                            std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  MixtureExample ex;
  ex.id = "mem_" + std::to_string(seed);
  auto fill = [&](AudioSignal& s) {
    s.sample_rate = 8000.0;
    s.samples = testutil::random_vector<double>(n_samples, rng, -0.9, 0.9);
  };
  fill(ex.target);
  fill(ex.interferer);
  ex.mixture.sample_rate = 8000.0;
  ex.mixture.samples.resize(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    ex.mixture.samples[i] = ex.target.samples[i] + ex.interferer.samples[i];
  }
  ex.eeg.sample_rate = 128.0;
  ex.eeg.preprocessed = true;
  ex.eeg.channels = testutil::random_tensor<double>(
      {channels, eeg_frames_for_samples(n_samples)}, rng);
  return ex;
}

double moving_avg(const std::vector<TrainLogEntry>& log, std::size_t end,
                  std::size_t span) {
  double s = 0.0;
  for (std::size_t i = end - span; i < end; ++i) s += log[i].loss;
  return s / static_cast<double>(span);
}

}  // namespace

TEST_CASE("lr schedule: pinned values, continuity, plateau, early stop") {
  TrainConfig cfg;
  CHECK(lr_at(1, cfg) == doctest::Approx(6.80e-9).epsilon(0.01));
  CHECK(lr_at(15000, cfg) == doctest::Approx(1.0206e-4).epsilon(0.001));
  // Continuous at the warmup joint: flat afterwards.
  CHECK(lr_at(15000, cfg) == lr_at(15001, cfg));
  CHECK(lr_at(15000, cfg) == lr_at(1000000, cfg));
  CHECK_THROWS_AS(lr_at(0, cfg), std::invalid_argument);

  // Plateau controller: 6 non-improving epochs halve; two rounds quarter.
  PlateauController pc;
  CHECK(pc.observe(1.0));
  for (int i = 0; i < 6; ++i) CHECK_FALSE(pc.observe(2.0));
  CHECK(pc.multiplier == 0.5);
  // An improvement resets both counters.
  CHECK(pc.observe(0.5));
  CHECK_FALSE(pc.stopped);
  for (int i = 0; i < 6; ++i) pc.observe(2.0);
  CHECK(pc.multiplier == 0.25);
  CHECK(lr_at(15000, cfg) * pc.multiplier ==
        doctest::Approx(2.55e-5).epsilon(0.001));
  // Four more non-improving epochs reach the early-stop patience of 10.
  for (int i = 0; i < 4; ++i) pc.observe(2.0);
  CHECK(pc.stopped);
}

TEST_CASE("si_sdr: worked examples, scale invariance, sentinels, clamp") {
  std::vector<double> s = {1, 0, 0, 0};
  std::vector<double> mix = {1, 1, 0, 0};
  CHECK(si_sdr_db(s, mix) == doctest::Approx(0.0).epsilon(1e-6));

  {
    Tape<double> t;
    Var est = t.leaf(Tensor<double>::from_vector(mix), true);
    Var loss = si_sdr_loss(t, est, s);
    CHECK(std::fabs(t.value(loss).data[0]) <= 1e-6);
  }

  // s + 0.1 * e with e orthogonal to s and ||e|| = ||s|| -> exactly 20 dB.
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 5; ++rep) {
    auto sv = testutil::random_vector<double>(64, rng);
    auto ev = testutil::random_vector<double>(64, rng);
    double ss = 0.0, es = 0.0;
    for (std::size_t i = 0; i < sv.size(); ++i) {
      ss += sv[i] * sv[i];
      es += ev[i] * sv[i];
    }
    double ee = 0.0;
    for (std::size_t i = 0; i < sv.size(); ++i) {
      ev[i] -= es / ss * sv[i];
      ee += ev[i] * ev[i];
    }
    double sc = std::sqrt(ss / ee);
    std::vector<double> est(sv.size());
    for (std::size_t i = 0; i < sv.size(); ++i) {
      est[i] = sv[i] + 0.1 * sc * ev[i];
    }
    CHECK(si_sdr_db(sv, est) == doctest::Approx(20.0).epsilon(1e-6));
  }

  // Scale invariance over random pairs.
  std::uniform_real_distribution<double> scale_dist(0.1, 10.0);
  for (int rep = 0; rep < 200; ++rep) {
    auto sv = testutil::random_vector<double>(32, rng);
    auto est = testutil::random_vector<double>(32, rng);
    double c = scale_dist(rng);
    std::vector<double> est2 = est;
    for (auto& v : est2) v *= c;
    CHECK(std::fabs(si_sdr_db(sv, est) - si_sdr_db(sv, est2)) <= 1e-9);
  }

  // Sentinels in the numeric form; defined errors in the training loss.
  CHECK(std::isinf(si_sdr_db(s, s)));
  CHECK(si_sdr_db(s, s) > 0);
  std::vector<double> orth = {0, 1, 0, 0};
  CHECK(si_sdr_db(s, orth) == -std::numeric_limits<double>::infinity());
  {
    Tape<double> t;
    Var est = t.leaf(Tensor<double>::from_vector(s), false);
    CHECK_THROWS_AS((void)si_sdr_loss(t, est, s), std::domain_error);
    Var o = t.leaf(Tensor<double>::from_vector(orth), false);
    CHECK_THROWS_AS((void)si_sdr_loss(t, o, s), std::domain_error);
  }

  // Near-perfect fit saturates at the training clamp: loss exactly -60.
  {
    std::vector<double> near = s;
    near[1] = 1e-9;
    Tape<double> t;
    Var est = t.leaf(Tensor<double>::from_vector(near), true);
    Var loss = si_sdr_loss(t, est, s);
    CHECK(t.value(loss).data[0] == -60.0);
  }
}

TEST_CASE("si_sdr_loss gradient matches finite differences") {
  std::mt19937_64 rng(7);
  std::vector<double> s = testutil::random_vector<double>(24, rng);
  double worst = 0.0;
  for (int rep = 0; rep < 5; ++rep) {
    Tensor<double> est = testutil::random_tensor<double>({24}, rng);
    double rel = grad_check(
        [&](Tape<double>& t, const std::vector<Var>& vars) {
          return si_sdr_loss(t, vars[0], s);
        },
        {est});
    worst = std::max(worst, rel);
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("sample_training_window: bounds, alignment, clipping, determinism") {
  TrainConfig cfg;
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 200; ++rep) {
    Window w = sample_training_window(96000, cfg, rng);  // 12 s: always valid
    CHECK(w.m < w.k);
    CHECK(w.k < w.n);
    CHECK(w.n <= 96000);
    CHECK(w.m % 250 == 0);
    CHECK(w.k % 250 == 0);
    std::size_t chunk = w.n - w.k;
    CHECK((chunk == 400 || chunk == 800 || chunk == 1600));
    std::size_t buffer = w.k - w.m;
    CHECK(buffer >= 8000);
    CHECK(buffer <= 80000);
    // EEG alignment via the 62.5 samples-per-frame ratio.
    CHECK(w.m_eeg * 125 == w.m * 2);  // m_eeg == m / 62.5, exactly
    CHECK(w.k_eeg * 125 == w.k * 2);
    CHECK(w.n_eeg == eeg_frames_for_samples(w.n));
  }
  // Audio sample 8000 maps to EEG frame 128.
  CHECK(eeg_frames_for_samples(8000) == 128);

  // Short utterance: buffer clipped to fit, never rejected.
  std::mt19937_64 rng2(6);
  for (int rep = 0; rep < 50; ++rep) {
    Window w = sample_training_window(8250, cfg, rng2);
    CHECK(w.n <= 8250);
    CHECK(w.m < w.k);
  }
  // Below the minimum (one chunk + one buffer slot): defined error.
  std::mt19937_64 rng3(7);
  CHECK_THROWS_AS((void)sample_training_window(500, cfg, rng3),
                  std::invalid_argument);

  // Fixed seed -> identical sequence.
  std::mt19937_64 ra(9), rb(9);
  for (int rep = 0; rep < 50; ++rep) {
    Window wa = sample_training_window(40000, cfg, ra);
    Window wb = sample_training_window(40000, cfg, rb);
    CHECK(wa.m == wb.m);
    CHECK(wa.k == wb.k);
    CHECK(wa.n == wb.n);
  }
}

TEST_CASE("augment_mixture: SNR bounds, determinism, fallback") {
  std::vector<MixtureExample> corpus;
  for (std::uint64_t i = 0; i < 4; ++i) {
    corpus.push_back(make_example(6000, 8, 10 + i));
  }
  TrainConfig cfg;
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 30; ++rep) {
    MixtureExample aug = augment_mixture(corpus[0], corpus, rng, cfg);
    double et = 0.0, ei = 0.0;
    for (std::size_t i = 0; i < aug.target.samples.size(); ++i) {
      et += aug.target.samples[i] * aug.target.samples[i];
      ei += aug.interferer.samples[i] * aug.interferer.samples[i];
    }
    double snr = 10.0 * std::log10(et / ei);
    CHECK(snr >= -10.0 - 1e-6);
    CHECK(snr <= 10.0 + 1e-6);
    for (std::size_t i = 0; i < aug.mixture.samples.size(); ++i) {
      REQUIRE(aug.mixture.samples[i] ==
              aug.target.samples[i] + aug.interferer.samples[i]);
    }
  }
  std::mt19937_64 ra(4), rb(4);
  MixtureExample a = augment_mixture(corpus[1], corpus, ra, cfg);
  MixtureExample b = augment_mixture(corpus[1], corpus, rb, cfg);
  CHECK(a.mixture.samples == b.mixture.samples);

  // Single-example corpus: falls back to the true interferer.
  std::vector<MixtureExample> lone = {corpus[0]};
  bool fell_back = false;
  std::mt19937_64 rc(5);
  MixtureExample f = augment_mixture(corpus[0], lone, rc, cfg, &fell_back);
  CHECK(fell_back);
  REQUIRE(f.interferer.samples.size() == corpus[0].interferer.samples.size());
}

TEST_CASE("two-pass objective: dropout path, accounting, detached pass 1") {
  ModelConfig mc = tiny_config();
  ModelParams params = init_params(mc, 21);
  MixtureExample ex = make_example(4000, mc.C, 77);
  TrainConfig cfg;
  cfg.buffer_lo_s = 0.25;
  cfg.buffer_hi_s = 0.25;
  cfg.chunk_choices_s = {0.05};
  std::mt19937_64 wrng(11);
  Window w = sample_training_window(ex.mixture.samples.size(), cfg, wrng);

  // p forced to 1: identical to the plain single-pass objective.
  {
    TrainConfig c1 = cfg;
    c1.dropout_p = 1.0;
    Tape<double> t;
    BoundParams bp = bind_params(t, params, false);
    std::mt19937_64 rng(1);
    TwoPassStats st;
    Var l2 = two_pass_window_loss(t, bp, params, ex, w, c1, rng, &st);
    Var l1 = single_pass_window_loss(t, bp, ex, w, c1);
    CHECK(t.value(l2).data[0] == t.value(l1).data[0]);
    CHECK(st.dropout_runs == 1);
    CHECK(st.pass1_runs == 0);
  }

  // p forced to 0: every step runs pass 1 exactly once.
  {
    TrainConfig c0 = cfg;
    c0.dropout_p = 0.0;
    TwoPassStats st;
    std::mt19937_64 rng(1);
    for (int i = 0; i < 3; ++i) {
      Tape<double> t;
      BoundParams bp = bind_params(t, params, false);
      (void)t.value(two_pass_window_loss(t, bp, params, ex, w, c0, rng, &st));
    }
    CHECK(st.pass1_runs == 3);
    CHECK(st.dropout_runs == 0);
  }

  // Pass 1 contributes zero gradient: running it recorded-on-the-main-tape
  // and then detaching its values yields bitwise-identical parameter
  // gradients to the gradient-free implementation.
  {
    TrainConfig c0 = cfg;
    c0.dropout_p = 0.0;
    std::vector<Tensor<double>> g_impl, g_ref;
    {
      Tape<double> t;
      BoundParams bp = bind_params(t, params, true);
      std::mt19937_64 rng(1);
      Var loss = two_pass_window_loss(t, bp, params, ex, w, c0, rng);
      t.backward(loss);
      for (const auto& name : params.names) g_impl.push_back(t.grad(bp(name)));
    }
    {
      Tape<double> t;
      BoundParams bp = bind_params(t, params, true);
      // Recorded pass 1 on the same tape, detached before use.
      Var x_past = t.leaf(
          Tensor<double>({1, w.k},
                         std::vector<double>(ex.mixture.samples.begin(),
                                             ex.mixture.samples.begin() +
                                                 static_cast<std::ptrdiff_t>(
                                                     w.k))),
          false);
      Tensor<double> eeg_past = Tensor<double>::zeros({mc.C, w.k_eeg});
      for (std::size_t c = 0; c < mc.C; ++c) {
        for (std::size_t i = 0; i < w.k_eeg; ++i) {
          eeg_past.at(c, i) = ex.eeg.channels.at(c, i);
        }
      }
      Var pass1 = forward_window(t, x_past, t.leaf(eeg_past, false),
                                 std::nullopt, bp, 0);
      Var past = t.leaf(Tensor<double>({1, t.value(pass1).size()},
                                       t.value(pass1).data),
                        false);  // detach
      Var a_s = speaker_encode(t, past, bp);
      Var x = t.leaf(
          Tensor<double>({1, w.n - w.m},
                         std::vector<double>(ex.mixture.samples.begin() +
                                                 static_cast<std::ptrdiff_t>(
                                                     w.m),
                                             ex.mixture.samples.begin() +
                                                 static_cast<std::ptrdiff_t>(
                                                     w.n))),
          false);
      Tensor<double> eeg_win = Tensor<double>::zeros({mc.C, w.n_eeg - w.m_eeg});
      for (std::size_t c = 0; c < mc.C; ++c) {
        for (std::size_t i = w.m_eeg; i < w.n_eeg; ++i) {
          eeg_win.at(c, i - w.m_eeg) = ex.eeg.channels.at(c, i);
        }
      }
      Var out = forward_window(t, x, t.leaf(eeg_win, false), a_s, bp, 0);
      std::size_t t_dec = decode_len(mc, w.n - w.m);
      std::vector<double> tgt(ex.target.samples.begin() +
                                  static_cast<std::ptrdiff_t>(w.m),
                              ex.target.samples.begin() +
                                  static_cast<std::ptrdiff_t>(w.m + t_dec));
      Var loss = si_sdr_loss(t, out, tgt, c0.loss_clamp_db);
      t.backward(loss);
      for (const auto& name : params.names) g_ref.push_back(t.grad(bp(name)));
    }
    REQUIRE(g_impl.size() == g_ref.size());
    for (std::size_t i = 0; i < g_impl.size(); ++i) {
      REQUIRE(g_impl[i].data == g_ref[i].data);
    }
  }
}

TEST_CASE("train_model: loss decreases overfitting one example; reproducible") {
  ModelConfig mc = tiny_config();
  MixtureExample ex = make_example(4000, mc.C, 55);

  TrainOptions opt;
  opt.train.buffer_lo_s = 0.25;
  opt.train.buffer_hi_s = 0.25;
  opt.train.chunk_choices_s = {0.05};
  opt.train.batch_size = 1;
  opt.train.warmup_n = 60;       // short ramp so the optimizer actually moves
  opt.train.augmentation = false;
  opt.train.windows_per_epoch = 120;
  opt.train.seed = 3;
  opt.epochs = 1;
  opt.online = false;

  TrainResult r =
      train_model({ex}, {}, init_params(mc, 5), opt);
  REQUIRE(r.steps.size() == 120);
  CHECK(r.optimizer_steps == 120);
  // 5-step moving average: clear downward trend while overfitting.
  double ma_early = moving_avg(r.steps, 10, 5);
  double ma_mid = moving_avg(r.steps, 60, 5);
  double ma_late = moving_avg(r.steps, 120, 5);
  MESSAGE("moving averages: ", ma_early, " ", ma_mid, " ", ma_late);
  CHECK(ma_mid < ma_early);
  CHECK(ma_late < ma_mid);
  for (const auto& e : r.steps) CHECK(e.lr > 0.0);

  // Bit-reproducible for fixed seed and config.
  TrainOptions opt2 = opt;
  opt2.train.windows_per_epoch = 10;
  TrainResult a = train_model({ex}, {}, init_params(mc, 5), opt2);
  TrainResult b = train_model({ex}, {}, init_params(mc, 5), opt2);
  REQUIRE(a.final_params.tensors.size() == b.final_params.tensors.size());
  for (std::size_t i = 0; i < a.final_params.tensors.size(); ++i) {
    REQUIRE(a.final_params.tensors[i].data == b.final_params.tensors[i].data);
  }
}
