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
#include "neuroheed/streaming.hpp"
#include "test_util.hpp"

using namespace neuroheed;

namespace {

ModelConfig tiny_dprnn() {
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

ModelConfig tiny_causal() {
  ModelConfig c = tiny_dprnn();
  c.extractor = ExtractorKind::kCausalTcn;
  c.tcn_repeats = 2;
  c.tcn_blocks = 3;
  c.tcn_channels = 12;
  c.tcn_kernel = 3;
  return c;
}

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

std::vector<double> offline_forward(const MixtureExample& ex,
                                    const ModelParams& params) {
  Tape<double> t(false);
  BoundParams bp = bind_params(t, params, false);
  Tensor<double> x = Tensor<double>::zeros({1, ex.mixture.samples.size()});
  x.data = ex.mixture.samples;
  Var out = forward_offline(t, t.leaf(std::move(x), false),
                            t.leaf(ex.eeg.channels, false), bp);
  return t.value(out).data;
}

}  // namespace

TEST_CASE("config validation and usage errors") {
  StreamConfig bad;
  bad.wc_s = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = StreamConfig{};
  bad.init_s = 0.05;  // < wc
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  ModelConfig mc = tiny_dprnn();
  ModelParams params = init_params(mc, 1);
  MixtureExample ex = make_example(16000, mc.C, 5);
  StreamConfig cfg;
  cfg.wb_s = 0.5;
  AudioSignal first;
  first.sample_rate = 8000.0;
  first.samples.assign(ex.mixture.samples.begin(),
                       ex.mixture.samples.begin() + 4000);  // too short
  CHECK_THROWS_AS((void)stream_init(first, ex.eeg.channels, params, cfg),
                  std::invalid_argument);

  first.samples.assign(ex.mixture.samples.begin(),
                       ex.mixture.samples.begin() + 8000);
  StreamState st = stream_init(first, ex.eeg.channels, params, cfg);
  std::vector<double> wrong(123, 0.0);
  CHECK_THROWS_AS((void)stream_step(st, wrong, Tensor<double>::zeros({8, 0})),
                  std::invalid_argument);
  StreamState cold;
  CHECK_THROWS_AS((void)stream_step(cold, wrong, Tensor<double>()),
                  std::logic_error);
  CHECK_THROWS_AS((void)rtf_report(cold), std::invalid_argument);
}

TEST_CASE("inference_gain: ratio, guard, clamp") {
  std::vector<double> a = {1.0, -2.0, 0.5};
  std::size_t warn = 0;
  CHECK(inference_gain(a, a, &warn) == doctest::Approx(1.0).epsilon(1e-12));
  std::vector<double> twice = a;
  for (auto& v : twice) v *= 2.0;
  // Emitted history twice the re-extraction -> chunk scaled x2.
  CHECK(inference_gain(twice, a, &warn) == doctest::Approx(2.0));
  CHECK(warn == 0);
  std::vector<double> zero(3, 0.0);
  CHECK(inference_gain(a, zero, &warn) == 1.0);
  CHECK(warn == 1);
  std::vector<double> huge = a;
  for (auto& v : huge) v *= 1e4;
  CHECK(inference_gain(huge, a, &warn) == 10.0);
  CHECK(inference_gain(a, huge, &warn) == 0.1);
  CHECK(inference_gain(a, zero, nullptr) == 1.0);  // guard works without counter
}

TEST_CASE("window accounting: 4 s, 1 s init, w_c 0.1 -> 30 steps of 800") {
  ModelConfig mc = tiny_dprnn();
  ModelParams params = init_params(mc, 3);
  MixtureExample ex = make_example(32000, mc.C, 9);
  StreamConfig cfg;
  cfg.wb_s = 0.5;  // small buffer keeps the test quick
  StreamRunResult r = run_stream(ex, params, cfg);
  CHECK(r.steps == 30);
  CHECK(r.leftover_samples == 0);
  CHECK(r.output.size() == 32000);  // 8000 init + 30 * 800
  CHECK(r.report.chunks == 31);    // init + 30 steps
  CHECK(r.report.rtf > 0.0);
  CHECK(r.report.max_latency_s >= r.report.p95_latency_s);
}

TEST_CASE("init covering the whole utterance degenerates to one pass") {
  ModelConfig mc = tiny_dprnn();
  ModelParams params = init_params(mc, 4);
  MixtureExample ex = make_example(16000, mc.C, 11);
  StreamConfig cfg;
  cfg.init_s = 2.0;
  StreamRunResult r = run_stream(ex, params, cfg);
  CHECK(r.steps == 0);
  std::vector<double> off = offline_forward(ex, params);
  REQUIRE(r.output.size() == off.size());
  for (std::size_t i = 0; i < off.size(); ++i) {
    REQUIRE(r.output[i] == off[i]);
  }
}

TEST_CASE("causal streaming equals the offline causal pass") {
  ModelConfig mc = tiny_causal();
  ModelParams params = init_params(mc, 6);
  StreamConfig cfg;
  cfg.speaker_encoder = false;
  cfg.normalization = false;
  for (std::uint64_t seed : {21ull, 22ull}) {
    MixtureExample ex = make_example(32000, mc.C, seed);
    StreamRunResult r = run_stream(ex, params, cfg);
    std::vector<double> off = offline_forward(ex, params);
    REQUIRE(r.output.size() == off.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < off.size(); ++i) {
      worst = std::max(worst, std::fabs(r.output[i] - off[i]));
    }
    MESSAGE("streamed vs offline max-abs: ", worst);
    CHECK(worst <= 1e-5);
  }
}

TEST_CASE("incremental self-enrollment equals whole-history enrollment") {
  ModelConfig mc = tiny_causal();
  ModelParams params = init_params(mc, 8);
  MixtureExample ex = make_example(26000, mc.C, 31);  // 1 s init + 22 chunks
  StreamConfig cfg;
  cfg.normalization = false;

  std::size_t init = 8000, wc = 800;
  AudioSignal first;
  first.sample_rate = 8000.0;
  first.samples.assign(ex.mixture.samples.begin(),
                       ex.mixture.samples.begin() + init);
  std::size_t f0 = eeg_frames_for_samples(init);
  Tensor<double> eeg0 = Tensor<double>::zeros({mc.C, f0});
  for (std::size_t c = 0; c < mc.C; ++c) {
    for (std::size_t i = 0; i < f0; ++i) eeg0.at(c, i) = ex.eeg.channels.at(c, i);
  }
  StreamState st = stream_init(first, eeg0, params, cfg);
  std::size_t pos = init, fed = f0;
  std::size_t steps = 0;
  while (pos + wc <= ex.mixture.samples.size()) {
    std::vector<double> chunk(
        ex.mixture.samples.begin() + static_cast<std::ptrdiff_t>(pos),
        ex.mixture.samples.begin() + static_cast<std::ptrdiff_t>(pos + wc));
    std::size_t avail = eeg_frames_for_samples(pos + wc);
    Tensor<double> frames = Tensor<double>::zeros({mc.C, avail - fed});
    for (std::size_t c = 0; c < mc.C; ++c) {
      for (std::size_t i = fed; i < avail; ++i) {
        frames.at(c, i - fed) = ex.eeg.channels.at(c, i);
      }
    }
    (void)stream_step(st, chunk, frames);
    fed = avail;
    pos += wc;
    ++steps;
  }
  REQUIRE(steps >= 20);
  REQUIRE(st.spk.frames_seen > 0);

  // Carried-state attractor.
  Tape<double> t(false);
  BoundParams bp = bind_params(t, params, false);
  SpeakerEncState probe = st.spk;
  Var a_inc = speaker_encode(t, t.leaf(Tensor<double>::zeros({1, 0}), false),
                             bp, &probe);
  // Whole-history attractor over exactly the samples the engine enrolled.
  Tensor<double> hist = Tensor<double>::zeros({1, st.spk_fed});
  for (std::size_t i = 0; i < st.spk_fed; ++i) hist.at(0, i) = st.emitted[i];
  SpeakerEncState whole = make_speaker_state(mc);
  Var a_whole = speaker_encode(t, t.leaf(std::move(hist), false), bp, &whole);

  const auto& vi = t.value(a_inc);
  const auto& vw = t.value(a_whole);
  REQUIRE(vi.size() == vw.size());
  for (std::size_t i = 0; i < vi.size(); ++i) {
    REQUIRE(vi.data[i] == vw.data[i]);  // bitwise
  }
}

TEST_CASE("windowed DPRNN stream with enrollment and normalization runs") {
  ModelConfig mc = tiny_dprnn();
  ModelParams params = init_params(mc, 10);
  MixtureExample ex = make_example(24000, mc.C, 41);
  StreamConfig cfg;
  cfg.wb_s = 1.0;
  StreamRunResult r = run_stream(ex, params, cfg);
  CHECK(r.steps == 20);
  CHECK(r.output.size() == 24000);
  for (double v : r.output) CHECK(std::isfinite(v));
}
