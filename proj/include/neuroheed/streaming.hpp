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

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "neuroheed/data.hpp"
#include "neuroheed/model.hpp"

namespace neuroheed {

// Online sliding-window engine. Two evaluation regimes share one interface:
//
//  * causal_tcn: fully incremental. Only the frames introduced by the new
//    chunk are computed, continuing carried depthwise-conv contexts and
//    cumulative-norm statistics; the EEG attention is re-run over the whole
//    causally-masked prefix (its per-row arithmetic is prefix-stable). The
//    decoder's overlap-add leaves the last L - hop samples of each chunk
//    missing the next frame's contribution; they are emitted provisionally
//    and completed in place on the following step, so the finished history
//    matches the offline pass exactly.
//
//  * dprnn / tcn: per-window recomputation. Each step re-extracts the
//    trailing buffer-plus-chunk window with the non-causal model and emits
//    the final w_c slice (the network is trained non-causally and evaluated
//    causally, window by window). Inference normalization rescales the chunk
//    by the energy ratio between the previously emitted buffer region and
//    its fresh re-extraction.

struct StreamConfig {
  double wb_s = 2.5;    // buffered context
  double wc_s = 0.1;    // chunk advanced per step
  double init_s = 1.0;  // initial whole-segment pass
  bool normalization = true;
  bool speaker_encoder = true;

  void validate() const {
    if (wc_s <= 0.0 || wb_s < 0.0 || init_s < wc_s) {
      throw std::invalid_argument(
          "StreamConfig: need wc > 0, wb >= 0, init >= wc");
    }
  }
};

struct ChunkTiming {
  double audio_s = 0.0;
  double wall_s = 0.0;
  bool violation = false;  // wall time exceeded the chunk's audio budget
};

struct StreamState {
  const ModelParams* params = nullptr;
  StreamConfig cfg;
  std::size_t wb = 0, wc = 0, init = 0;  // samples

  // Trailing input kept for window forming; buf_start is its absolute index.
  std::vector<double> audio_buf;
  std::size_t buf_start = 0;
  std::size_t received = 0;  // total mixture samples pushed

  Tensor<double> eeg;  // [C, frames received]

  std::vector<double> emitted;  // s_hat^p, full past output
  std::size_t tail_len = 0;     // provisional trailing samples (causal mode)
  std::size_t spk_fed = 0;      // emitted samples already self-enrolled

  SpeakerEncState spk;
  CausalTcnState tcn;
  std::size_t frames_done = 0;  // encoder frames decoded (causal mode)

  std::vector<ChunkTiming> timings;
  std::size_t steps = 0;
  std::size_t norm_warnings = 0;
  bool initialized = false;

  std::size_t cursor() const { return emitted.size(); }
};

// ---------------------------------------------------------------------------
// Inference normalization (energy ratio over the buffer region)
// ---------------------------------------------------------------------------

/// Gain relating the previously emitted buffer-region audio to its fresh
/// re-extraction, clamped to [0.1, 10]. A zero-energy denominator yields
/// gain 1 and bumps the warning counter (never NaN).
inline double inference_gain(const std::vector<double>& emitted_buffer,
                             const std::vector<double>& reextracted_buffer,
                             std::size_t* warnings = nullptr) {
  if (emitted_buffer.size() != reextracted_buffer.size()) {
    throw std::invalid_argument("inference_gain: buffer length mismatch");
  }
  double en = 0.0, ed = 0.0;
  for (double v : emitted_buffer) en += v * v;
  for (double v : reextracted_buffer) ed += v * v;
  if (ed <= 0.0) {
    if (warnings) ++*warnings;
    std::fprintf(stderr,
                 "warning: inference normalization denominator is zero; "
                 "gain forced to 1\n");
    return 1.0;
  }
  return std::clamp(std::sqrt(en / ed), 0.1, 10.0);
}

namespace detail {

inline std::size_t to_samples(double seconds) {
  return static_cast<std::size_t>(std::llround(seconds * 8000.0));
}

inline void append_eeg(StreamState& st, const Tensor<double>& frames) {
  if (frames.size() == 0) return;
  if (frames.rank() != 2) {
    throw std::invalid_argument("stream: EEG chunk must be [C, frames]");
  }
  if (st.eeg.size() == 0) {
    st.eeg = frames;
    return;
  }
  if (frames.shape[0] != st.eeg.shape[0]) {
    throw std::invalid_argument("stream: EEG channel count changed");
  }
  std::size_t C = st.eeg.shape[0];
  std::size_t T0 = st.eeg.shape[1], T1 = frames.shape[1];
  Tensor<double> merged = Tensor<double>::zeros({C, T0 + T1});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < T0; ++i) merged.at(c, i) = st.eeg.at(c, i);
    for (std::size_t i = 0; i < T1; ++i) {
      merged.at(c, T0 + i) = frames.at(c, i);
    }
  }
  st.eeg = std::move(merged);
}

inline Tensor<double> eeg_span(const StreamState& st, std::size_t a,
                               std::size_t b) {
  std::size_t C = st.eeg.shape[0];
  Tensor<double> out = Tensor<double>::zeros({C, b - a});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = a; i < b; ++i) out.at(c, i - a) = st.eeg.at(c, i);
  }
  return out;
}

/// Keeps only what later steps can still reference.
inline void trim_audio(StreamState& st) {
  const ModelConfig& c = st.params->config;
  std::size_t need = c.causal() ? (c.L - c.hop()) : (st.wb + st.wc);
  if (st.audio_buf.size() > need) {
    std::size_t drop = st.audio_buf.size() - need;
    st.audio_buf.erase(st.audio_buf.begin(),
                       st.audio_buf.begin() + static_cast<std::ptrdiff_t>(drop));
    st.buf_start += drop;
  }
}

/// Feeds newly finalized output samples to the carried speaker encoder.
inline void self_enroll(StreamState& st) {
  if (!st.cfg.speaker_encoder) return;
  std::size_t final_end = st.emitted.size() - st.tail_len;
  if (final_end <= st.spk_fed) return;
  Tape<double> t(false);
  BoundParams bp = bind_params(t, *st.params, false);
  Tensor<double> chunk = Tensor<double>::zeros({1, final_end - st.spk_fed});
  std::copy(st.emitted.begin() + static_cast<std::ptrdiff_t>(st.spk_fed),
            st.emitted.begin() + static_cast<std::ptrdiff_t>(final_end),
            chunk.data.begin());
  (void)speaker_encode(t, t.leaf(std::move(chunk), false), bp, &st.spk);
  st.spk_fed = final_end;
}

/// a^s from the carried state without consuming new audio.
inline std::optional<Var> current_attractor(Tape<double>& t, StreamState& st,
                                            const BoundParams& bp) {
  if (!st.cfg.speaker_encoder || st.spk.frames_seen == 0) return std::nullopt;
  SpeakerEncState probe = st.spk;  // empty feed must not mutate the carry
  Var a_s = speaker_encode(t, t.leaf(Tensor<double>::zeros({1, 0}), false),
                           bp, &probe);
  return a_s;
}

/// Incremental causal decode of the frames covering audio [from_sample,
/// st.received). Returns the overlap-added samples spanning
/// [frames_done * hop, received) and advances frames_done / tcn state.
inline std::vector<double> causal_advance(StreamState& st) {
  const ModelConfig& c = st.params->config;
  std::size_t total_frames = c.frames_for(st.received);
  std::size_t first = st.frames_done;
  if (first >= total_frames) return {};
  std::size_t begin_sample = first * c.hop();
  Tape<double> t(false);
  BoundParams bp = bind_params(t, *st.params, false);
  Tensor<double> x = Tensor<double>::zeros({1, st.received - begin_sample});
  for (std::size_t i = begin_sample; i < st.received; ++i) {
    x.at(0, i - begin_sample) = st.audio_buf[i - st.buf_start];
  }
  std::optional<Var> a_s = current_attractor(t, st, bp);
  Var out = forward_window(t, t.leaf(std::move(x), false),
                           t.leaf(st.eeg, false), a_s, bp, first, &st.tcn);
  st.frames_done = total_frames;
  return t.value(out).data;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

/// Processes the first `init_s` seconds as one whole segment (zero a^s) and
/// seeds the emitted history and the self-enrollment state.
inline StreamState stream_init(const AudioSignal& x_first,
                               const Tensor<double>& eeg_first,
                               const ModelParams& params,
                               const StreamConfig& cfg) {
  cfg.validate();
  params.config.validate();
  StreamState st;
  st.params = &params;
  st.cfg = cfg;
  st.wb = detail::to_samples(cfg.wb_s);
  st.wc = detail::to_samples(cfg.wc_s);
  st.init = detail::to_samples(cfg.init_s);
  if (st.wc % params.config.hop() != 0) {
    throw std::invalid_argument(
        "stream_init: w_c must be a whole number of encoder hops");
  }
  if (x_first.samples.size() != st.init) {
    throw std::invalid_argument(
        "stream_init: need exactly " + std::to_string(st.init) +
        " samples of initial audio, got " +
        std::to_string(x_first.samples.size()));
  }
  std::size_t want_frames = eeg_frames_for_samples(st.init);
  if (eeg_first.rank() != 2 || eeg_first.shape[1] < want_frames) {
    throw std::invalid_argument(
        "stream_init: need at least " + std::to_string(want_frames) +
        " EEG frames for the initial segment");
  }
  auto t0 = std::chrono::steady_clock::now();
  st.audio_buf = x_first.samples;
  st.received = st.init;
  detail::append_eeg(st, eeg_first);
  if (cfg.speaker_encoder && params.config.speaker_encoder_enabled) {
    st.spk = make_speaker_state(params.config);
  } else {
    st.cfg.speaker_encoder = false;
  }

  const ModelConfig& c = params.config;
  if (c.causal()) {
    st.tcn = make_causal_tcn_state(c);
    st.emitted = detail::causal_advance(st);
    st.tail_len = c.L - c.hop();
  } else {
    Tape<double> t(false);
    BoundParams bp = bind_params(t, params, false);
    Tensor<double> x = Tensor<double>::zeros({1, st.init});
    x.data = x_first.samples;
    Var out = forward_window(
        t, t.leaf(std::move(x), false),
        t.leaf(detail::eeg_span(st, 0, want_frames), false), std::nullopt, bp,
        0);
    st.emitted = t.value(out).data;
    st.tail_len = 0;
  }
  detail::self_enroll(st);
  detail::trim_audio(st);
  double wall = std::chrono::duration<double>(
      std::chrono::steady_clock::now() - t0).count();
  st.timings.push_back({cfg.init_s, wall, wall > cfg.init_s});
  st.initialized = true;
  return st;
}

/// Advances the stream by one w_c chunk; returns the emitted chunk (in causal
/// mode its trailing L - hop samples are provisional and are completed in
/// the stored history on the next step).
inline std::vector<double> stream_step(StreamState& st,
                                       const std::vector<double>& x_new,
                                       const Tensor<double>& eeg_new) {
  if (!st.initialized) throw std::logic_error("stream_step: not initialized");
  if (x_new.size() != st.wc) {
    throw std::invalid_argument(
        "stream_step: expected a chunk of " + std::to_string(st.wc) +
        " samples, got " + std::to_string(x_new.size()));
  }
  auto t0 = std::chrono::steady_clock::now();
  st.audio_buf.insert(st.audio_buf.end(), x_new.begin(), x_new.end());
  st.received += st.wc;
  detail::append_eeg(st, eeg_new);
  // Whole EEG frames only: 12.8 frames per 0.1 s chunk means the fractional
  // credit accumulates until a frame completes.
  std::size_t frames_avail = eeg_frames_for_samples(st.received);
  if (st.eeg.shape[1] < frames_avail) {
    throw std::invalid_argument(
        "stream_step: EEG lags audio (" + std::to_string(st.eeg.shape[1]) +
        " frames for " + std::to_string(st.received) + " samples)");
  }

  const ModelConfig& c = st.params->config;
  std::vector<double> chunk;
  if (c.causal()) {
    std::vector<double> fresh = detail::causal_advance(st);
    // fresh spans [emitted - tail_len, received): complete the provisional
    // tail in place, then append the rest.
    for (std::size_t i = 0; i < st.tail_len; ++i) {
      st.emitted[st.emitted.size() - st.tail_len + i] += fresh[i];
    }
    st.emitted.insert(st.emitted.end(), fresh.begin() + st.tail_len,
                      fresh.end());
    chunk.assign(st.emitted.end() - st.wc, st.emitted.end());
  } else {
    std::size_t win_len = std::min<std::size_t>(st.wb + st.wc, st.received);
    std::size_t win_start = st.received - win_len;
    std::size_t eeg_a = static_cast<std::size_t>(
        std::floor(static_cast<double>(win_start) / 62.5 + 1e-9));
    Tape<double> t(false);
    BoundParams bp = bind_params(t, *st.params, false);
    Tensor<double> x = Tensor<double>::zeros({1, win_len});
    for (std::size_t i = 0; i < win_len; ++i) {
      x.at(0, i) = st.audio_buf[win_start + i - st.buf_start];
    }
    std::optional<Var> a_s = detail::current_attractor(t, st, bp);
    Var out = forward_window(t, t.leaf(std::move(x), false),
                             t.leaf(detail::eeg_span(st, eeg_a, frames_avail),
                                    false),
                             a_s, bp, 0);
    const auto& ov = t.value(out);
    std::size_t dec = ov.size();
    chunk.assign(ov.data.end() - static_cast<std::ptrdiff_t>(st.wc),
                 ov.data.end());
    if (st.cfg.normalization && dec > st.wc) {
      std::vector<double> re(ov.data.begin(),
                             ov.data.end() - static_cast<std::ptrdiff_t>(st.wc));
      std::vector<double> prev(
          st.emitted.begin() + static_cast<std::ptrdiff_t>(win_start),
          st.emitted.begin() + static_cast<std::ptrdiff_t>(win_start +
                                                           re.size()));
      double g = inference_gain(prev, re, &st.norm_warnings);
      for (auto& v : chunk) v *= g;
    }
    st.emitted.insert(st.emitted.end(), chunk.begin(), chunk.end());
  }
  detail::self_enroll(st);
  detail::trim_audio(st);
  ++st.steps;
  double wall = std::chrono::duration<double>(
      std::chrono::steady_clock::now() - t0).count();
  st.timings.push_back({st.cfg.wc_s, wall, wall > st.cfg.wc_s});
  return chunk;
}

// ---------------------------------------------------------------------------
// RTF reporting
// ---------------------------------------------------------------------------

struct RtfReport {
  double rtf = 0.0;  // audio seconds / wall seconds; > 1 = faster than live
  double max_latency_s = 0.0;
  double p95_latency_s = 0.0;
  std::size_t chunks = 0;
  std::size_t realtime_violations = 0;
};

inline RtfReport rtf_report(const StreamState& st) {
  if (st.timings.empty()) {
    throw std::invalid_argument("rtf_report: no processed chunks");
  }
  RtfReport r;
  double audio = 0.0, wall = 0.0;
  std::vector<double> lat;
  for (const auto& c : st.timings) {
    audio += c.audio_s;
    wall += c.wall_s;
    lat.push_back(c.wall_s);
    if (c.violation) ++r.realtime_violations;
  }
  r.rtf = audio / std::max(wall, 1e-12);
  r.chunks = st.timings.size();
  std::sort(lat.begin(), lat.end());
  r.max_latency_s = lat.back();
  r.p95_latency_s = lat[static_cast<std::size_t>(
      std::ceil(0.95 * static_cast<double>(lat.size())) - 1)];
  return r;
}

// ---------------------------------------------------------------------------
// File replay
// ---------------------------------------------------------------------------

struct StreamRunResult {
  std::vector<double> output;  // finished history (tail completed)
  RtfReport report;
  std::size_t steps = 0;
  std::size_t leftover_samples = 0;  // trailing remainder < w_c, unprocessed
};

/// Replays a stored example through the engine: 1 s init, then w_c steps,
/// EEG delivered in whole frames as they become available.
inline StreamRunResult run_stream(const MixtureExample& ex,
                                  const ModelParams& params,
                                  const StreamConfig& cfg) {
  cfg.validate();
  std::size_t init = detail::to_samples(cfg.init_s);
  std::size_t wc = detail::to_samples(cfg.wc_s);
  const auto& x = ex.mixture.samples;
  if (x.size() < init) {
    throw std::invalid_argument("run_stream: utterance shorter than init");
  }
  AudioSignal first;
  first.sample_rate = ex.mixture.sample_rate;
  first.samples.assign(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(init));
  std::size_t f0 = eeg_frames_for_samples(init);
  Tensor<double> eeg0 = Tensor<double>::zeros({ex.eeg.channels.shape[0], f0});
  for (std::size_t c = 0; c < eeg0.shape[0]; ++c) {
    for (std::size_t i = 0; i < f0; ++i) eeg0.at(c, i) = ex.eeg.channels.at(c, i);
  }
  StreamState st = stream_init(first, eeg0, params, cfg);

  std::size_t pos = init;
  std::size_t fed_frames = f0;
  while (pos + wc <= x.size()) {
    std::vector<double> chunk(x.begin() + static_cast<std::ptrdiff_t>(pos),
                              x.begin() + static_cast<std::ptrdiff_t>(pos + wc));
    std::size_t avail = std::min(eeg_frames_for_samples(pos + wc),
                                 ex.eeg.channels.shape[1]);
    Tensor<double> frames =
        Tensor<double>::zeros({ex.eeg.channels.shape[0], avail - fed_frames});
    for (std::size_t c = 0; c < frames.shape[0]; ++c) {
      for (std::size_t i = fed_frames; i < avail; ++i) {
        frames.at(c, i - fed_frames) = ex.eeg.channels.at(c, i);
      }
    }
    (void)stream_step(st, chunk, frames);
    fed_frames = avail;
    pos += wc;
  }
  StreamRunResult r;
  r.output = st.emitted;
  r.report = rtf_report(st);
  r.steps = st.steps;
  r.leftover_samples = x.size() - pos;
  return r;
}

}  // namespace neuroheed
