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

#include <chrono>
#include <cmath>
#include <functional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "neuroheed/grad_check.hpp"
#include "neuroheed/streaming.hpp"
#include "neuroheed/training.hpp"

namespace neuroheed {

// Release-gate invariant battery: quick, self-contained checks of the
// properties the rest of the system leans on. Every check runs on small
// configurations so the whole battery finishes in well under ten minutes.

struct VerifyCheck {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

/// Test hook: a nonzero `streaming_fault` is added to every streamed sample
/// before the streaming-offline comparison, so fault reporting itself can be
/// exercised end to end.
struct VerifyHooks {
  double streaming_fault = 0.0;
};

inline bool all_passed(const std::vector<VerifyCheck>& checks) {
  for (const auto& c : checks) {
    if (!c.passed) return false;
  }
  return true;
}

namespace detail {

inline ModelConfig verify_tiny(ExtractorKind kind) {
  ModelConfig c;
  c.N = 8;
  c.L = 4;
  c.C = 8;
  c.P_r = 1;
  c.bottleneck = 8;
  c.dprnn_blocks = 2;
  c.dprnn_hidden = 8;
  c.dprnn_chunk = 10;
  c.tcn_repeats = 2;
  c.tcn_blocks = 3;
  c.tcn_channels = 12;
  c.tcn_kernel = 3;
  c.spk_blocks = 2;
  c.spk_lstm_hidden = 8;
  c.extractor = kind;
  return c;
}

inline MixtureExample verify_example(std::size_t n_samples,
                                     std::size_t channels,
                                     std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.9, 0.9);
  MixtureExample ex;
  ex.id = "verify_" + std::to_string(seed);
  auto fill = [&](AudioSignal& s) {
    s.sample_rate = 8000.0;
    s.samples.resize(n_samples);
    for (auto& v : s.samples) v = u(rng);
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
  ex.eeg.channels = Tensor<double>::zeros(
      {channels, eeg_frames_for_samples(n_samples)});
  for (auto& v : ex.eeg.channels.data) v = u(rng);
  return ex;
}

inline Tensor<double> eeg_span_of(const MixtureExample& ex, std::size_t a,
                                  std::size_t b) {
  std::size_t C = ex.eeg.channels.shape[0];
  Tensor<double> out = Tensor<double>::zeros({C, b - a});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = a; i < b; ++i) {
      out.at(c, i - a) = ex.eeg.channels.at(c, i);
    }
  }
  return out;
}

inline std::vector<double> offline_pass(const MixtureExample& ex,
                                        const ModelParams& params) {
  Tape<double> t(false);
  BoundParams bp = bind_params(t, params, false);
  Tensor<double> x = Tensor<double>::zeros({1, ex.mixture.samples.size()});
  x.data = ex.mixture.samples;
  Var out = forward_offline(t, t.leaf(std::move(x), false),
                            t.leaf(ex.eeg.channels, false), bp);
  return t.value(out).data;
}

inline void run_check(std::vector<VerifyCheck>& out, const std::string& name,
                      const std::function<std::string()>& body,
                      std::ostream* log) {
  VerifyCheck c;
  c.name = name;
  auto t0 = std::chrono::steady_clock::now();
  try {
    c.detail = body();
    c.passed = true;
  } catch (const std::exception& e) {
    c.passed = false;
    c.detail = e.what();
  }
  c.seconds = std::chrono::duration<double>(
      std::chrono::steady_clock::now() - t0).count();
  if (log) {
    (*log) << (c.passed ? "PASS" : "FAIL") << "  " << c.name << "  ("
           << c.detail << ")  [" << c.seconds << " s]\n";
  }
  out.push_back(c);
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

}  // namespace detail

/// Runs the full battery; returns one record per property. A nonzero
/// `hooks.streaming_fault` must surface as a named streaming failure.
inline std::vector<VerifyCheck> run_verification(
    const VerifyHooks& hooks = {}, std::ostream* log = nullptr) {
  std::vector<VerifyCheck> checks;
  using detail::require;

  detail::run_check(checks, "gradient-oracle", [&] {
    ModelConfig c = detail::verify_tiny(ExtractorKind::kDprnn);
    ModelParams params = init_params(c, 12);
    MixtureExample ex = detail::verify_example(400, c.C, 2);
    // Finite differences over two small parameter tensors with everything
    // else held fixed.
    std::vector<std::string> probed = {"dec.w", "eeg.in_b"};
    double worst = 0.0;
    for (const auto& name : probed) {
      std::size_t idx = params.index_of(name);
      auto f = [&](Tape<double>& t, const std::vector<Var>& vs) {
        BoundParams patched = bind_params(t, params, false);
        patched.vars[name] = vs[0];
        Tensor<double> x = Tensor<double>::zeros({1, 400});
        x.data = ex.mixture.samples;
        Var out = forward_offline(t, t.leaf(std::move(x), false),
                                  t.leaf(ex.eeg.channels, false), patched);
        return si_sdr_loss(t, out, ex.target.samples);
      };
      double rel = grad_check(f, {params.tensors[idx]});
      worst = std::max(worst, rel);
    }
    require(worst <= 1e-4, "model gradient rel err " + std::to_string(worst));
    std::ostringstream os;
    os << "max rel err " << worst;
    return os.str();
  }, log);

  detail::run_check(checks, "si-sdr-worked-examples", [&] {
    std::vector<double> s = {1, 0, 0, 0};
    std::vector<double> x = {1, 1, 0, 0};
    std::vector<double> sh = {1, 0.1, 0, 0};
    require(std::fabs(si_sdr_db(s, x) - 0.0) <= 1e-6, "0 dB case");
    require(std::fabs(si_sdr_db(s, sh) - 20.0) <= 1e-6, "20 dB case");
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int k = 0; k < 200; ++k) {
      std::vector<double> a(32), b(32);
      for (auto& v : a) v = u(rng);
      for (auto& v : b) v = u(rng);
      std::vector<double> b2 = b;
      double cscale = std::exp(u(rng) * 3.0);
      for (auto& v : b2) v *= cscale;
      require(std::fabs(si_sdr_db(a, b) - si_sdr_db(a, b2)) <= 1e-9,
              "scale invariance");
    }
    return std::string("0 dB, 20 dB, scale invariance");
  }, log);

  detail::run_check(checks, "lr-schedule", [&] {
    TrainConfig tc;
    double l1 = lr_at(1, tc), l15k = lr_at(15000, tc);
    require(std::fabs(l1 - 6.80e-9) / 6.80e-9 <= 0.01, "lr_at(1)");
    require(std::fabs(l15k - 1.0206e-4) / 1.0206e-4 <= 0.001, "lr_at(15000)");
    std::ostringstream os;
    os << "lr(1)=" << l1 << " lr(15000)=" << l15k;
    return os.str();
  }, log);

  detail::run_check(checks, "framing-arithmetic", [&] {
    ModelConfig c;  // default L=20, hop=10
    require(c.frames_for(8000) == 799, "frames_for(8000)");
    require((799 - 1) * c.hop() + c.L == 8000, "decode length");
    return std::string("8000 samples <-> 799 frames");
  }, log);

  detail::run_check(checks, "causality", [&] {
    ModelConfig c = detail::verify_tiny(ExtractorKind::kCausalTcn);
    ModelParams params = init_params(c, 3);
    MixtureExample ex = detail::verify_example(8000, c.C, 7);
    std::vector<double> base = detail::offline_pass(ex, params);
    MixtureExample pert = ex;
    for (std::size_t i = 7800; i < 8000; ++i) pert.mixture.samples[i] += 0.5;
    std::size_t last = pert.eeg.channels.shape[1] - 1;
    for (std::size_t ch = 0; ch < c.C; ++ch) {
      pert.eeg.channels.at(ch, last) += 1.0;
    }
    std::vector<double> out = detail::offline_pass(pert, params);
    // Perturbing the tail of the input must leave the earlier output alone.
    std::size_t safe = 7600;
    for (std::size_t i = 0; i < safe; ++i) {
      require(out[i] == base[i], "future input leaked into sample " +
                                     std::to_string(i));
    }
    // And it must change SOMETHING (the model is not degenerate).
    bool changed = false;
    for (std::size_t i = safe; i < out.size(); ++i) changed |= out[i] != base[i];
    require(changed, "tail perturbation had no effect at all");
    return std::string("prefix bitwise stable under tail perturbation");
  }, log);

  detail::run_check(checks, "streaming-offline-equivalence", [&] {
    ModelConfig c = detail::verify_tiny(ExtractorKind::kCausalTcn);
    ModelParams params = init_params(c, 4);
    MixtureExample ex = detail::verify_example(24000, c.C, 9);
    StreamConfig sc;
    sc.speaker_encoder = false;
    sc.normalization = false;
    StreamRunResult r = run_stream(ex, params, sc);
    std::vector<double> off = detail::offline_pass(ex, params);
    require(r.output.size() == off.size(), "length mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < off.size(); ++i) {
      worst = std::max(worst,
                       std::fabs(r.output[i] + hooks.streaming_fault - off[i]));
    }
    require(worst <= 1e-5, "max-abs " + std::to_string(worst));
    std::ostringstream os;
    os << "max-abs " << worst;
    return os.str();
  }, log);

  detail::run_check(checks, "enrollment-identity", [&] {
    ModelConfig c = detail::verify_tiny(ExtractorKind::kCausalTcn);
    ModelParams params = init_params(c, 6);
    MixtureExample ex = detail::verify_example(26000, c.C, 13);
    StreamConfig sc;
    sc.normalization = false;
    std::size_t init = 8000, wc = 800;
    AudioSignal first;
    first.sample_rate = 8000.0;
    first.samples.assign(ex.mixture.samples.begin(),
                         ex.mixture.samples.begin() + init);
    std::size_t f0 = eeg_frames_for_samples(init);
    StreamState st = stream_init(first, detail::eeg_span_of(ex, 0, f0), params,
                                 sc);
    std::size_t pos = init, fed = f0, steps = 0;
    while (pos + wc <= ex.mixture.samples.size()) {
      std::vector<double> chunk(ex.mixture.samples.begin() + pos,
                                ex.mixture.samples.begin() + pos + wc);
      std::size_t avail = eeg_frames_for_samples(pos + wc);
      (void)stream_step(st, chunk, detail::eeg_span_of(ex, fed, avail));
      fed = avail;
      pos += wc;
      ++steps;
    }
    require(steps >= 20, "need >= 20 chunks");
    Tape<double> t(false);
    BoundParams bp = bind_params(t, params, false);
    SpeakerEncState probe = st.spk;
    Var a_inc = speaker_encode(t, t.leaf(Tensor<double>::zeros({1, 0}), false),
                               bp, &probe);
    Tensor<double> hist = Tensor<double>::zeros({1, st.spk_fed});
    for (std::size_t i = 0; i < st.spk_fed; ++i) hist.at(0, i) = st.emitted[i];
    SpeakerEncState whole = make_speaker_state(c);
    Var a_all = speaker_encode(t, t.leaf(std::move(hist), false), bp, &whole);
    const auto& vi = t.value(a_inc);
    const auto& vw = t.value(a_all);
    require(vi.size() == vw.size(), "attractor shape");
    for (std::size_t i = 0; i < vi.size(); ++i) {
      require(vi.data[i] == vw.data[i], "attractor differs at dim " +
                                            std::to_string(i));
    }
    std::ostringstream os;
    os << steps << " chunks, bitwise";
    return os.str();
  }, log);

  detail::run_check(checks, "normalization-guards", [&] {
    std::vector<double> a = {1.0, -2.0, 0.5};
    std::vector<double> z(3, 0.0);
    std::size_t warn = 0;
    require(inference_gain(a, z, &warn) == 1.0 && warn == 1,
            "zero-denominator guard");
    std::vector<double> huge = a;
    for (auto& v : huge) v *= 1e4;
    require(inference_gain(huge, a, &warn) == 10.0, "upper clamp");
    require(inference_gain(a, huge, &warn) == 0.1, "lower clamp");
    require(std::fabs(inference_gain(a, a, &warn) - 1.0) <= 1e-12,
            "unit gain");
    return std::string("clamp [0.1, 10], zero-denominator -> 1");
  }, log);

  detail::run_check(checks, "eeg-preprocessing", [&] {
    const double fs = 8192.0;
    const std::size_t T = 8192, C = 4;
    FIRFilter bp = design_bandpass(1.0, 32.0, fs);
    auto probe_rms = [&](double hz) {
      EEGRecording raw;
      raw.sample_rate = fs;
      raw.channels = Tensor<double>::zeros({C, T});
      for (std::size_t u = 0; u < T; ++u) {
        raw.channels.at(0, u) =
            std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(u) / fs);
      }
      EEGRecording out = preprocess_eeg(raw, 128.0, &bp);
      double e = 0.0;
      std::size_t n = 0;
      // Skip the edge transients of the zero-padded filter.
      for (std::size_t k = 16; k + 16 < out.channels.shape[1]; ++k) {
        e += out.channels.at(0, k) * out.channels.at(0, k);
        ++n;
      }
      return std::sqrt(e / static_cast<double>(n));
    };
    double atten_db = 20.0 * std::log10(probe_rms(10.0) / probe_rms(50.0));
    require(atten_db >= 40.0, "50 Hz attenuation " + std::to_string(atten_db));
    // Re-referenced channels stay zero-mean after filtering.
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(-1, 1);
    EEGRecording raw;
    raw.sample_rate = fs;
    raw.channels = Tensor<double>::zeros({C, T});
    for (auto& v : raw.channels.data) v = u(rng);
    EEGRecording out = preprocess_eeg(raw, 128.0, &bp);
    double worst = 0.0, rms = 0.0;
    for (std::size_t k = 0; k < out.channels.shape[1]; ++k) {
      double mean = 0.0;
      for (std::size_t ch = 0; ch < C; ++ch) {
        mean += out.channels.at(ch, k);
        rms += out.channels.at(ch, k) * out.channels.at(ch, k);
      }
      worst = std::max(worst, std::fabs(mean / static_cast<double>(C)));
    }
    rms = std::sqrt(rms / static_cast<double>(out.channels.size()));
    require(worst <= 1e-9 * std::max(1.0, rms),
            "channel mean " + std::to_string(worst));
    std::ostringstream os;
    os << "50 Hz down " << atten_db << " dB, channel mean " << worst;
    return os.str();
  }, log);

  return checks;
}

}  // namespace neuroheed
