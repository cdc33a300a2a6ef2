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
#include <complex>
#include <numbers>
#include <random>

#include "doctest.h"
#include "neuroheed/dsp.hpp"
#include "test_util.hpp"

using namespace neuroheed;
using testutil::random_vector;

namespace {

// Independent response oracle: direct DFT of the taps at one frequency.
double response_db(const FIRFilter& f, double freq_hz) {
  std::complex<double> acc(0.0, 0.0);
  for (std::size_t n = 0; n < f.taps.size(); ++n) {
    double phase = -2.0 * std::numbers::pi * freq_hz *
                   static_cast<double>(n) / f.fs;
    acc += f.taps[n] * std::complex<double>(std::cos(phase), std::sin(phase));
  }
  double mag = std::abs(acc);
  return 20.0 * std::log10(std::max(mag, 1e-300));
}

double power(const std::vector<double>& x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e / static_cast<double>(x.size());
}

AudioSignal sine(double freq, double fs, std::size_t n, double amp = 1.0) {
  AudioSignal s;
  s.sample_rate = fs;
  s.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.samples[i] =
        amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) /
                       fs);
  }
  return s;
}

}  // namespace

TEST_CASE("overlap_add_signal: identity, coverage, hand example, adjoint") {
  std::mt19937_64 rng(11);
  {
    // Single frame passes through unchanged.
    Tensor<double> f = Tensor<double>::zeros({1, 6});
    for (std::size_t i = 0; i < 6; ++i) f.at(0, i) = 0.5 * double(i) - 1.0;
    auto y = overlap_add_signal(f, 3);
    REQUIRE(y.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) CHECK(y[i] == f.at(0, i));
  }
  {
    // Two all-ones frames, L=4 hop=2 -> 1 1 2 2 1 1.
    Tensor<double> f = Tensor<double>::full({2, 4}, 1.0);
    auto y = overlap_add_signal(f, 2);
    std::vector<double> want = {1, 1, 2, 2, 1, 1};
    REQUIRE(y.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(y[i] == want[i]);
  }
  {
    // 50% overlap frames sliced from s: interior samples come back as 2*s.
    auto s = random_vector<double>(64, rng);
    std::size_t L = 8, hop = 4;
    auto y = overlap_add_signal(frame_signal(s, L, hop), hop);
    for (std::size_t i = hop; i + hop < y.size(); ++i) {
      CHECK(y[i] == doctest::Approx(2.0 * s[i]).epsilon(1e-12));
    }
  }
  {
    // Adjoint identity: <frame(s), F> == <s, overlap_add(F)>.
    std::size_t L = 20, hop = 10, n = 250;
    auto s = random_vector<double>(n, rng);
    auto fs_ = frame_signal(s, L, hop);
    Tensor<double> F = testutil::random_tensor<double>(fs_.shape, rng);
    double lhs = 0.0;
    for (std::size_t i = 0; i < F.size(); ++i) lhs += fs_.data[i] * F.data[i];
    auto y = overlap_add_signal(F, hop);
    double rhs = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) rhs += s[i] * y[i];
    CHECK(std::fabs(lhs - rhs) <= 1e-9 * std::max(1.0, std::fabs(lhs)));
  }
  CHECK_THROWS_AS(overlap_add_signal(Tensor<double>::zeros({2, 4}), 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(overlap_add_signal(Tensor<double>::zeros({2, 4}), 5),
                  std::invalid_argument);
}

TEST_CASE("design_bandpass: response contract via DFT oracle") {
  auto f = design_bandpass(1.0, 32.0, 8192.0);
  // Linear phase: symmetric taps.
  for (std::size_t i = 0; i < f.taps.size() / 2; ++i) {
    CHECK(f.taps[i] == doctest::Approx(f.taps[f.taps.size() - 1 - i])
                           .epsilon(1e-12));
  }
  CHECK(response_db(f, 0.0) <= -40.0);
  CHECK(std::fabs(response_db(f, std::sqrt(32.0))) <= 1.0);  // geometric mid
  CHECK(std::fabs(response_db(f, 10.0)) <= 1.0);
  CHECK(response_db(f, 0.45 * 8192.0) <= -40.0);
  CHECK(response_db(f, 50.0) <= -40.0);
  double sum = 0.0;
  for (double v : f.taps) sum += v;
  CHECK(std::fabs(sum) <= 1e-2);  // DC gain ~ 0
  CHECK_THROWS_AS(design_bandpass(32.0, 1.0, 8192.0), std::invalid_argument);
  CHECK_THROWS_AS(design_bandpass(1.0, 5000.0, 8192.0), std::invalid_argument);
  CHECK_THROWS_AS(design_bandpass(1.0, 32.0, 8192.0, 100),
                  std::invalid_argument);
}

TEST_CASE("preprocess_eeg: re-reference, decimation, 50 Hz rejection") {
  auto filt = design_bandpass(1.0, 32.0, 8192.0);
  {
    // Constant across channels -> all zeros after re-reference.
    EEGRecording raw;
    raw.channels = Tensor<double>::zeros({4, 8192});
    std::mt19937_64 rng(3);
    for (std::size_t u = 0; u < 8192; ++u) {
      double v = std::sin(0.01 * double(u));
      for (std::size_t c = 0; c < 4; ++c) raw.channels.at(c, u) = v;
    }
    auto out = preprocess_eeg(raw, 128.0, &filt);
    CHECK(out.preprocessed);
    CHECK(out.sample_rate == 128.0);
    CHECK(out.channels.shape == std::vector<std::size_t>({4, 128}));
    for (double v : out.channels.data) CHECK(std::fabs(v) <= 1e-12);
  }
  {
    // Channel mean per output sample ~ 0 for arbitrary input.
    EEGRecording raw;
    std::mt19937_64 rng(4);
    raw.channels = testutil::random_tensor<double>({4, 8192}, rng);
    auto out = preprocess_eeg(raw, 128.0, &filt);
    double scale = 0.0;
    for (double v : out.channels.data) scale = std::max(scale, std::fabs(v));
    for (std::size_t u = 0; u < out.channels.shape[1]; ++u) {
      double m = 0.0;
      for (std::size_t c = 0; c < 4; ++c) m += out.channels.at(c, u);
      CHECK(std::fabs(m / 4.0) <= 1e-9 * std::max(1.0, scale));
    }
  }
  {
    // 50 Hz tone comes out >= 40 dB below a 10 Hz tone treated identically.
    // Two antipodal channels survive re-referencing unchanged.
    auto run = [&](double freq) {
      EEGRecording raw;
      raw.channels = Tensor<double>::zeros({2, 4 * 8192});
      for (std::size_t u = 0; u < raw.channels.shape[1]; ++u) {
        double v = std::sin(2.0 * std::numbers::pi * freq * double(u) /
                            8192.0);
        raw.channels.at(0, u) = v;
        raw.channels.at(1, u) = -v;
      }
      auto out = preprocess_eeg(raw, 128.0, &filt);
      std::vector<double> ch(out.channels.shape[1]);
      // Skip the edge-transient region at both ends.
      std::size_t T = out.channels.shape[1];
      std::vector<double> mid;
      for (std::size_t u = T / 4; u < 3 * T / 4; ++u) {
        mid.push_back(out.channels.at(0, u));
      }
      return power(mid);
    };
    double p10 = run(10.0), p50 = run(50.0);
    CHECK(10.0 * std::log10(p50 / p10) <= -40.0);
  }
  {
    // Linearity of the whole pipeline.
    std::mt19937_64 rng(5);
    EEGRecording ra, rb, rc;
    ra.channels = testutil::random_tensor<double>({3, 8192}, rng);
    rb.channels = testutil::random_tensor<double>({3, 8192}, rng);
    rc.channels = Tensor<double>::zeros({3, 8192});
    double a = 1.7, b = -0.4;
    for (std::size_t i = 0; i < rc.channels.size(); ++i) {
      rc.channels.data[i] = a * ra.channels.data[i] + b * rb.channels.data[i];
    }
    auto oa = preprocess_eeg(ra, 128.0, &filt);
    auto ob = preprocess_eeg(rb, 128.0, &filt);
    auto oc = preprocess_eeg(rc, 128.0, &filt);
    double scale = 0.0;
    for (double v : oc.channels.data) scale = std::max(scale, std::fabs(v));
    for (std::size_t i = 0; i < oc.channels.size(); ++i) {
      double want = a * oa.channels.data[i] + b * ob.channels.data[i];
      CHECK(std::fabs(oc.channels.data[i] - want) <=
            1e-6 * std::max(1.0, scale));
    }
  }
  {
    EEGRecording raw;
    raw.channels = Tensor<double>::zeros({2, 100});
    raw.sample_rate = 1000.0;  // 1000/128 is not an integer
    CHECK_THROWS_AS(preprocess_eeg(raw, 128.0, &filt), std::invalid_argument);
    EEGRecording done;
    done.channels = Tensor<double>::zeros({2, 100});
    done.preprocessed = true;
    CHECK_THROWS_AS(preprocess_eeg(done, 128.0, &filt), std::invalid_argument);
  }
}

TEST_CASE("mix_at_snr: scaling, achieved SNR, exact decomposition") {
  std::mt19937_64 rng(6);
  {
    // Equal-power signals at 0 dB keep the interferer unscaled.
    auto t = sine(200.0, 8000.0, 8000);
    auto i = sine(300.0, 8000.0, 8000);
    // Equalize power exactly.
    double et = power(t.samples) * double(t.samples.size());
    double ei = power(i.samples) * double(i.samples.size());
    for (auto& v : i.samples) v *= std::sqrt(et / ei);
    auto [mix, scaled] = mix_at_snr(t, i, 0.0);
    for (std::size_t k = 0; k < i.samples.size(); ++k) {
      CHECK(std::fabs(scaled.samples[k] - i.samples[k]) <= 1e-9);
    }
    // +20 dB scales the equal-power interferer amplitude by 0.1.
    auto [mix20, scaled20] = mix_at_snr(t, i, 20.0);
    for (std::size_t k = 0; k < i.samples.size(); ++k) {
      CHECK(std::fabs(scaled20.samples[k] - 0.1 * i.samples[k]) <= 1e-9);
    }
  }
  {
    AudioSignal t, i;
    t.samples = random_vector<double>(4000, rng);
    for (auto& v : t.samples) v = quantize_sample(v);
    i.samples = random_vector<double>(4000, rng, -0.3, 0.3);
    for (double snr : {-10.0, -3.5, 0.0, 7.25, 10.0}) {
      auto [mix, scaled] = mix_at_snr(t, i, snr);
      double et = 0.0, es = 0.0;
      for (double v : t.samples) et += v * v;
      for (double v : scaled.samples) es += v * v;
      double achieved = 10.0 * std::log10(et / es);
      CHECK(std::fabs(achieved - snr) <= 1e-9);
      // Eq-style decomposition is exact in floating point.
      for (std::size_t k = 0; k < t.samples.size(); ++k) {
        CHECK(mix.samples[k] - scaled.samples[k] == t.samples[k]);
      }
    }
  }
  {
    AudioSignal t, z;
    t.samples = {1.0, 2.0};
    z.samples = {0.0, 0.0};
    CHECK_THROWS_AS(mix_at_snr(t, z, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(mix_at_snr(z, t, 0.0), std::invalid_argument);
    AudioSignal s;
    s.samples = {1.0};
    CHECK_THROWS_AS(mix_at_snr(t, s, 0.0), std::invalid_argument);
  }
}

TEST_CASE("interp_linear: endpoints, constants, identity, monotonicity") {
  {
    Tensor<double> seq = Tensor<double>::zeros({1, 2});
    seq.at(0, 1) = 1.0;
    auto out = interp_linear(seq, 3);
    CHECK(out.at(0, 0) == 0.0);
    CHECK(out.at(0, 1) == doctest::Approx(0.5));
    CHECK(out.at(0, 2) == 1.0);
  }
  {
    Tensor<double> seq = Tensor<double>::full({3, 5}, 2.5);
    for (std::size_t len : {1u, 4u, 17u}) {
      auto out = interp_linear(seq, len);
      for (double v : out.data) CHECK(v == doctest::Approx(2.5));
    }
  }
  {
    std::mt19937_64 rng(8);
    auto seq = testutil::random_tensor<double>({2, 9}, rng);
    auto out = interp_linear(seq, 9);
    for (std::size_t i = 0; i < seq.size(); ++i) {
      CHECK(out.data[i] == doctest::Approx(seq.data[i]).epsilon(1e-12));
    }
  }
  {
    // Monotone input stays monotone per channel.
    Tensor<double> seq = Tensor<double>::zeros({1, 6});
    for (std::size_t i = 0; i < 6; ++i) seq.at(0, i) = double(i * i);
    auto out = interp_linear(seq, 23);
    for (std::size_t k = 1; k < 23; ++k) {
      CHECK(out.at(0, k) >= out.at(0, k - 1));
    }
  }
  CHECK_THROWS_AS(interp_linear(Tensor<double>::zeros({1, 3}), 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(interp_linear(Tensor<double>::zeros({1, 0}), 3),
                  std::invalid_argument);
}

TEST_CASE("speech_envelope: rate, positivity, sinusoid mean") {
  // |sin| has mean 2/pi; the <=8 Hz low-pass of a 200 Hz rectified tone keeps
  // essentially only that DC term.
  auto s = sine(200.0, 8000.0, 2 * 8000, 0.8);
  auto env = speech_envelope(s);
  CHECK(env.size() == 256);  // 2 s at 128 Hz
  std::size_t n = env.size();
  for (std::size_t k = n / 4; k < 3 * n / 4; ++k) {
    CHECK(env[k] == doctest::Approx(0.8 * 2.0 / std::numbers::pi)
                        .epsilon(5e-2));
  }
}
