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
#include <numbers>
#include <stdexcept>
#include <utility>
#include <vector>

#include "neuroheed/tensor.hpp"

namespace neuroheed {

/// Single-channel audio. Speech in this project is fixed at 8 kHz.
struct AudioSignal {
  std::vector<double> samples;
  double sample_rate = 8000.0;
};

/// Multi-channel EEG, [C, T]. Raw recordings are 8192 Hz; preprocessing
/// re-references, band-passes 1-32 Hz and decimates to 128 Hz.
struct EEGRecording {
  Tensor<double> channels;  // [C, T]
  double sample_rate = 8192.0;
  bool preprocessed = false;
};

/// Linear-phase FIR filter (symmetric taps).
struct FIRFilter {
  std::vector<double> taps;
  double low_hz = 0.0;
  double high_hz = 0.0;
  double fs = 0.0;
};

namespace detail {

inline double sinc(double x) {
  if (x == 0.0) return 1.0;
  double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

}  // namespace detail

/// Hamming-windowed sinc band-pass. The 1 Hz lower edge is what drives the
/// filter order: the transition band must fit between DC and the edge, which
/// takes ~16k taps at 8192 Hz for >40 dB DC rejection. Keep `taps` odd so the
/// group delay (taps-1)/2 is an integer number of samples.
inline FIRFilter design_bandpass(double low_hz, double high_hz, double fs,
                                 std::size_t taps = 16385) {
  if (!(0.0 < low_hz && low_hz < high_hz && high_hz < 0.5 * fs)) {
    throw std::invalid_argument("design_bandpass: invalid band edges");
  }
  if (taps % 2 == 0 || taps < 3) {
    throw std::invalid_argument("design_bandpass: taps must be odd and >= 3");
  }
  FIRFilter f;
  f.low_hz = low_hz;
  f.high_hz = high_hz;
  f.fs = fs;
  f.taps.resize(taps);
  double mid = static_cast<double>(taps - 1) / 2.0;
  for (std::size_t i = 0; i < taps; ++i) {
    double n = static_cast<double>(i) - mid;
    double lp_hi = 2.0 * high_hz / fs * detail::sinc(2.0 * high_hz / fs * n);
    double lp_lo = 2.0 * low_hz / fs * detail::sinc(2.0 * low_hz / fs * n);
    double w = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi *
                                      static_cast<double>(i) /
                                      static_cast<double>(taps - 1));
    f.taps[i] = (lp_hi - lp_lo) * w;
  }
  return f;
}

/// Hamming-windowed sinc low-pass (used for envelope extraction).
inline FIRFilter design_lowpass(double cutoff_hz, double fs,
                                std::size_t taps = 2049) {
  if (!(0.0 < cutoff_hz && cutoff_hz < 0.5 * fs)) {
    throw std::invalid_argument("design_lowpass: invalid cutoff");
  }
  if (taps % 2 == 0 || taps < 3) {
    throw std::invalid_argument("design_lowpass: taps must be odd and >= 3");
  }
  FIRFilter f;
  f.low_hz = 0.0;
  f.high_hz = cutoff_hz;
  f.fs = fs;
  f.taps.resize(taps);
  double mid = static_cast<double>(taps - 1) / 2.0;
  for (std::size_t i = 0; i < taps; ++i) {
    double n = static_cast<double>(i) - mid;
    double w = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi *
                                      static_cast<double>(i) /
                                      static_cast<double>(taps - 1));
    f.taps[i] = 2.0 * cutoff_hz / fs * detail::sinc(2.0 * cutoff_hz / fs * n) *
                w;
  }
  return f;
}

/// Zero-phase evaluation of `filter` on `x` at a single output position
/// `center` (input-sample index): group delay is compensated by centering the
/// symmetric kernel on the output sample. Samples beyond the signal edges are
/// treated as zero.
inline double fir_apply_at(const FIRFilter& filter,
                           const std::vector<double>& x, std::ptrdiff_t center) {
  std::ptrdiff_t half = static_cast<std::ptrdiff_t>(filter.taps.size() - 1) / 2;
  std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.size());
  double acc = 0.0;
  std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, half - center);
  std::ptrdiff_t j1 = std::min<std::ptrdiff_t>(
      static_cast<std::ptrdiff_t>(filter.taps.size()), half - center + n);
  for (std::ptrdiff_t j = j0; j < j1; ++j) {
    acc += filter.taps[static_cast<std::size_t>(j)] *
           x[static_cast<std::size_t>(center - half + j)];
  }
  return acc;
}

/// Re-reference to the per-sample average over channels, band-pass 1-32 Hz and
/// decimate 8192 Hz -> 128 Hz. The band-pass doubles as the anti-alias filter
/// (32 Hz is far below the 64 Hz post-decimation Nyquist), and the filter is
/// only evaluated at the surviving sample positions. Pass a prebuilt filter to
/// amortize the design across calls.
inline EEGRecording preprocess_eeg(const EEGRecording& raw,
                                   double out_rate = 128.0,
                                   const FIRFilter* filter = nullptr) {
  if (raw.preprocessed) {
    throw std::invalid_argument("preprocess_eeg: input already preprocessed");
  }
  if (raw.channels.rank() != 2) {
    throw std::invalid_argument("preprocess_eeg: expect channels [C, T]");
  }
  double ratio = raw.sample_rate / out_rate;
  std::size_t decim = static_cast<std::size_t>(std::llround(ratio));
  if (decim < 1 || std::fabs(ratio - static_cast<double>(decim)) > 1e-9) {
    throw std::invalid_argument(
        "preprocess_eeg: non-integer decimation factor");
  }
  std::size_t C = raw.channels.shape[0], T = raw.channels.shape[1];
  FIRFilter local;
  if (!filter) {
    local = design_bandpass(1.0, 32.0, raw.sample_rate);
    filter = &local;
  }
  // Re-reference.
  Tensor<double> reref = raw.channels;
  for (std::size_t u = 0; u < T; ++u) {
    double mean = 0.0;
    for (std::size_t c = 0; c < C; ++c) mean += reref.at(c, u);
    mean /= static_cast<double>(C);
    for (std::size_t c = 0; c < C; ++c) reref.at(c, u) -= mean;
  }
  std::size_t T_out = T / decim;
  EEGRecording out;
  out.channels = Tensor<double>::zeros({C, T_out});
  out.sample_rate = out_rate;
  out.preprocessed = true;
  std::vector<double> row(T);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t u = 0; u < T; ++u) row[u] = reref.at(c, u);
    for (std::size_t k = 0; k < T_out; ++k) {
      out.channels.at(c, k) =
          fir_apply_at(*filter, row, static_cast<std::ptrdiff_t>(k * decim));
    }
  }
  return out;
}

/// Audio samples are kept on a fixed-point grid of 2^-40 (|x| < 8). Two grid
/// values sum without rounding in a double (3 + 40 < 53 bits), which is what
/// makes mixture - scaled_interferer == target hold bitwise.
inline double quantize_sample(double x) {
  return std::ldexp(std::round(std::ldexp(x, 40)), -40);
}

/// Scale `interferer` so that 10*log10(||target||^2 / ||scaled||^2) equals
/// `snr_db`, and return (target + scaled, scaled). The scaled interferer is
/// snapped to the sample grid; if `target` is grid-aligned (synthesized audio
/// always is) the decomposition mixture - scaled_interferer == target is
/// bitwise exact.
inline std::pair<AudioSignal, AudioSignal> mix_at_snr(
    const AudioSignal& target, const AudioSignal& interferer, double snr_db) {
  if (target.samples.size() != interferer.samples.size()) {
    throw std::invalid_argument("mix_at_snr: length mismatch");
  }
  double et = 0.0, ei = 0.0;
  for (double v : target.samples) et += v * v;
  for (double v : interferer.samples) ei += v * v;
  if (et <= 0.0) throw std::invalid_argument("mix_at_snr: zero-energy target");
  if (ei <= 0.0) {
    throw std::invalid_argument("mix_at_snr: zero-energy interferer");
  }
  double scale = std::sqrt(et / ei) * std::pow(10.0, -snr_db / 20.0);
  AudioSignal scaled;
  scaled.sample_rate = interferer.sample_rate;
  scaled.samples.resize(interferer.samples.size());
  for (std::size_t i = 0; i < interferer.samples.size(); ++i) {
    scaled.samples[i] = quantize_sample(interferer.samples[i] * scale);
  }
  AudioSignal mix;
  mix.sample_rate = target.sample_rate;
  mix.samples.resize(target.samples.size());
  for (std::size_t i = 0; i < target.samples.size(); ++i) {
    mix.samples[i] = target.samples[i] + scaled.samples[i];
  }
  return {std::move(mix), std::move(scaled)};
}

/// Strided framing of a signal into [T_x, L] with T_x = (|s| - L) / hop + 1.
inline Tensor<double> frame_signal(const std::vector<double>& s, std::size_t L,
                                   std::size_t hop) {
  if (hop == 0 || L == 0) {
    throw std::invalid_argument("frame_signal: L and hop must be positive");
  }
  if (s.size() < L) throw std::invalid_argument("frame_signal: signal < L");
  std::size_t T_x = (s.size() - L) / hop + 1;
  Tensor<double> frames = Tensor<double>::zeros({T_x, L});
  for (std::size_t f = 0; f < T_x; ++f) {
    for (std::size_t i = 0; i < L; ++i) frames.at(f, i) = s[f * hop + i];
  }
  return frames;
}

/// Overlap-add of frames [T_x, L] with the given hop; output length
/// (T_x - 1) * hop + L. This is the exact adjoint of frame_signal.
inline std::vector<double> overlap_add_signal(const Tensor<double>& frames,
                                              std::size_t hop) {
  if (frames.rank() != 2 || frames.shape[0] == 0) {
    throw std::invalid_argument("overlap_add_signal: expect frames [T_x, L]");
  }
  std::size_t T_x = frames.shape[0], L = frames.shape[1];
  if (hop == 0 || hop > L) {
    throw std::invalid_argument("overlap_add_signal: need 0 < hop <= L");
  }
  std::vector<double> out((T_x - 1) * hop + L, 0.0);
  for (std::size_t f = 0; f < T_x; ++f) {
    for (std::size_t i = 0; i < L; ++i) out[f * hop + i] += frames.at(f, i);
  }
  return out;
}

/// Per-channel linear resampling of seq [N, T_r] to [N, target_len] with
/// endpoints preserved.
inline Tensor<double> interp_linear(const Tensor<double>& seq,
                                    std::size_t target_len) {
  if (seq.rank() != 2 || seq.shape[1] == 0) {
    throw std::invalid_argument("interp_linear: expect seq [N, T_r], T_r >= 1");
  }
  if (target_len < 1) {
    throw std::invalid_argument("interp_linear: target_len must be >= 1");
  }
  std::size_t N = seq.shape[0], T_r = seq.shape[1];
  Tensor<double> out = Tensor<double>::zeros({N, target_len});
  for (std::size_t k = 0; k < target_len; ++k) {
    double pos = (target_len == 1 || T_r == 1)
                     ? 0.0
                     : static_cast<double>(k) * static_cast<double>(T_r - 1) /
                           static_cast<double>(target_len - 1);
    std::size_t i0 = static_cast<std::size_t>(pos);
    if (i0 >= T_r - 1 && T_r > 1) i0 = T_r - 2;
    std::size_t i1 = (T_r == 1) ? 0 : i0 + 1;
    double w = pos - static_cast<double>(i0);
    for (std::size_t c = 0; c < N; ++c) {
      out.at(c, k) = (1.0 - w) * seq.at(c, i0) + w * seq.at(c, i1);
    }
  }
  return out;
}

/// Broadband envelope of speech resampled to `out_rate` (default 128 Hz):
/// rectify, low-pass below `cutoff_hz`, then sample at the (possibly
/// fractional) output grid via linear interpolation — valid because the
/// low-passed signal is heavily oversampled at the audio rate.
inline std::vector<double> speech_envelope(const AudioSignal& audio,
                                           double out_rate = 128.0,
                                           double cutoff_hz = 8.0,
                                           const FIRFilter* filter = nullptr) {
  FIRFilter local;
  if (!filter) {
    local = design_lowpass(cutoff_hz, audio.sample_rate);
    filter = &local;
  }
  std::vector<double> rect(audio.samples.size());
  for (std::size_t i = 0; i < rect.size(); ++i) {
    rect[i] = std::fabs(audio.samples[i]);
  }
  double step = audio.sample_rate / out_rate;
  std::size_t T_out = static_cast<std::size_t>(
      std::floor(static_cast<double>(audio.samples.size()) / step + 1e-9));
  std::vector<double> env(T_out);
  for (std::size_t k = 0; k < T_out; ++k) {
    double pos = static_cast<double>(k) * step;
    std::size_t i0 = static_cast<std::size_t>(pos);
    double w = pos - static_cast<double>(i0);
    double a = fir_apply_at(*filter, rect, static_cast<std::ptrdiff_t>(i0));
    double b = (w == 0.0) ? a
                          : fir_apply_at(*filter, rect,
                                         static_cast<std::ptrdiff_t>(i0 + 1));
    env[k] = (1.0 - w) * a + w * b;
  }
  return env;
}

}  // namespace neuroheed
