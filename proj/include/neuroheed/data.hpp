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

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "neuroheed/checkpoint.hpp"
#include "neuroheed/dsp.hpp"

namespace neuroheed {

// Synthetic two-speaker speech + EEG corpus. Audio is stored as float32, so
// corpus samples live on a coarser fixed-point grid than the in-memory one:
// 2^-18 with |x| < 32 needs at most 5 + 18 = 23 mantissa bits, hence every
// stored value - and the sum target + interferer - is exact in float32. That
// keeps the mixture decomposition bitwise even after a disk round trip.
inline double quantize_stored_sample(double x) {
  return std::ldexp(std::round(std::ldexp(x, 18)), -18);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a,
                                 std::uint64_t b = 0) {
  // splitmix64 over the combined words; cheap, well-distributed stream split.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (a + 1) +
                    0xbf58476d1ce4e5b9ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Speech surrogate
// ---------------------------------------------------------------------------

/// Speech-like surrogate: Gaussian noise carrier with a per-speaker spectral
/// tilt (tilt > 0: one-pole low-pass, darker; tilt < 0: pre-emphasis,
/// brighter) and a syllabic-rate raised-cosine amplitude modulation at a
/// random rate in (3.5, 5.5) Hz. Unit RMS, snapped to the storage grid.
inline AudioSignal synth_speech(double duration_s, std::mt19937_64& rng,
                                double tilt = 0.0, double sample_rate = 8000.0) {
  if (duration_s < 1.0) {
    throw std::invalid_argument("synth_speech: duration must be >= 1 s");
  }
  std::size_t n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> carrier(n);
  for (auto& v : carrier) v = gauss(rng);
  if (tilt >= 0.0) {
    double a = 0.9 * tilt;
    double prev = 0.0;
    for (auto& v : carrier) {
      prev = (1.0 - a) * v + a * prev;
      v = prev;
    }
  } else {
    double a = -0.9 * tilt;
    double prev = 0.0;
    for (auto& v : carrier) {
      double cur = v;
      v = cur - a * prev;
      prev = cur;
    }
  }
  std::uniform_real_distribution<double> fm_dist(3.5, 5.5);
  std::uniform_real_distribution<double> ph_dist(0.0, 2.0 * std::numbers::pi);
  double fm = fm_dist(rng), phase = ph_dist(rng);
  AudioSignal out;
  out.sample_rate = sample_rate;
  out.samples.resize(n);
  double energy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double tsec = static_cast<double>(i) / sample_rate;
    // Modulation in [0.25, 1]: never fully silent, strong peak at fm.
    double m = 0.25 + 0.375 * (1.0 + std::cos(2.0 * std::numbers::pi * fm * tsec + phase));
    out.samples[i] = carrier[i] * m;
    energy += out.samples[i] * out.samples[i];
  }
  double inv_rms = 1.0 / std::sqrt(energy / static_cast<double>(n));
  for (auto& v : out.samples) v = quantize_stored_sample(v * inv_rms);
  return out;
}

// ---------------------------------------------------------------------------
// EEG surrogate
// ---------------------------------------------------------------------------

struct EEGSynthParams {
  double attended_gain = 1.0;
  double distractor_gain = 0.3;
  double noise_gain = 0.5;
  double lag_lo_s = 0.05;
  double lag_hi_s = 0.25;
  std::size_t channels = 64;
  double rate = 128.0;
};

namespace detail {

/// Envelope of `audio` at the EEG rate, normalized to unit RMS (so the
/// attended/distractor gains are comparable regardless of signal level).
inline std::vector<double> unit_envelope(const AudioSignal& audio, double rate,
                                         const FIRFilter* lp = nullptr) {
  std::vector<double> env = speech_envelope(audio, rate, 8.0, lp);
  double e = 0.0;
  for (double v : env) e += v * v;
  if (e > 0.0) {
    double inv = 1.0 / std::sqrt(e / static_cast<double>(env.size()));
    for (auto& v : env) v *= inv;
  }
  return env;
}

}  // namespace detail

/// EEG surrogate at 128 Hz: each channel is the attended envelope (gain 1.0)
/// plus the distractor envelope (gain 0.3), each delayed by a per-channel lag
/// in [50, 250] ms, plus pink noise. Attention is encoded purely via the gain
/// asymmetry. Lags are a fixed function of the channel index - a subject's
/// response latencies are stable across trials - which is what lets a single
/// linear decoder work across recordings; the rng drives only the noise. The
/// output is produced directly at the preprocessed rate (band-limited by
/// construction), so `preprocessed` is set.
inline EEGRecording synth_eeg(const AudioSignal& attended,
                              const AudioSignal& distractor,
                              const EEGSynthParams& cfg, std::mt19937_64& rng,
                              const FIRFilter* envelope_lp = nullptr) {
  if (attended.samples.size() != distractor.samples.size()) {
    throw std::invalid_argument("synth_eeg: stimulus length mismatch");
  }
  std::vector<double> env_a =
      detail::unit_envelope(attended, cfg.rate, envelope_lp);
  std::vector<double> env_d =
      detail::unit_envelope(distractor, cfg.rate, envelope_lp);
  std::size_t T = env_a.size();
  EEGRecording eeg;
  eeg.sample_rate = cfg.rate;
  eeg.preprocessed = true;
  eeg.channels = Tensor<double>::zeros({cfg.channels, T});
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto channel_lag = [&](std::uint64_t stream, std::size_t c) {
    double u = static_cast<double>(derive_seed(stream, c) >> 11) * 0x1p-53;
    return static_cast<std::size_t>(
        std::llround((cfg.lag_lo_s + (cfg.lag_hi_s - cfg.lag_lo_s) * u) *
                     cfg.rate));
  };
  for (std::size_t c = 0; c < cfg.channels; ++c) {
    std::size_t lag_a = channel_lag(1, c);
    std::size_t lag_d = channel_lag(2, c);
    // Pink noise via a cascade of leaky integrators (unit-RMS normalized).
    std::vector<double> pink(T);
    double b0 = 0.0, b1 = 0.0, b2 = 0.0, pe = 0.0;
    for (std::size_t i = 0; i < T; ++i) {
      double w = gauss(rng);
      b0 = 0.99765 * b0 + 0.0990460 * w;
      b1 = 0.96300 * b1 + 0.2965164 * w;
      b2 = 0.57000 * b2 + 1.0526913 * w;
      pink[i] = b0 + b1 + b2 + 0.1848 * w;
      pe += pink[i] * pink[i];
    }
    double pinv = pe > 0.0 ? 1.0 / std::sqrt(pe / static_cast<double>(T)) : 0.0;
    for (std::size_t i = 0; i < T; ++i) {
      double va = i >= lag_a ? env_a[i - lag_a] : 0.0;
      double vd = i >= lag_d ? env_d[i - lag_d] : 0.0;
      eeg.channels.at(c, i) = cfg.attended_gain * va +
                              cfg.distractor_gain * vd +
                              cfg.noise_gain * pink[i] * pinv;
    }
  }
  return eeg;
}

// ---------------------------------------------------------------------------
// Corpus
// ---------------------------------------------------------------------------

struct CorpusConfig {
  std::size_t n_train = 200;
  std::size_t n_val = 30;
  std::size_t n_test = 30;
  double train_len_lo = 1.0, train_len_hi = 10.0;  // also val
  double test_len_lo = 1.0, test_len_hi = 15.0;
  double base_snr_db = 0.0;
  double tilt_speaker0 = 0.8;   // darker narrator
  double tilt_speaker1 = -0.8;  // brighter narrator
  // Long source "stories" per speaker; utterance windows are cut from them.
  // Split ratio 75/12.5/12.5 is enforced at the stimulus level: indices
  // [0, 24) train, [24, 28) val, [28, 32) test, with no sharing.
  std::size_t stimuli_per_speaker = 32;
  double stimulus_len_s = 15.0;
  EEGSynthParams eeg;
  std::uint64_t seed = 1;

  std::pair<std::size_t, std::size_t> stimulus_range(
      const std::string& split) const {
    std::size_t n = stimuli_per_speaker;
    std::size_t a = n * 3 / 4, b = a + n / 8;
    if (split == "train") return {0, a};
    if (split == "val") return {a, b};
    if (split == "test") return {b, n};
    throw std::invalid_argument("unknown split: " + split);
  }
};

struct ExampleRecord {
  std::string id;
  std::string split;
  std::string mixture_path, target_path, interferer_path, eeg_path;
  std::size_t attended_speaker = 0;
  std::size_t n_samples = 0;
  std::size_t n_eeg_frames = 0;
  double duration_s = 0.0;
  double snr_db = 0.0;
  std::size_t stimulus_att = 0, stimulus_dis = 0;
  std::size_t offset_att = 0, offset_dis = 0;
};

struct Manifest {
  std::vector<ExampleRecord> records;

  std::vector<ExampleRecord> split(const std::string& name) const {
    std::vector<ExampleRecord> out;
    for (const auto& r : records) {
      if (r.split == name) out.push_back(r);
    }
    return out;
  }
};

inline nlohmann::json record_to_json(const ExampleRecord& r) {
  return {{"id", r.id},
          {"split", r.split},
          {"mixture", r.mixture_path},
          {"target", r.target_path},
          {"interferer", r.interferer_path},
          {"eeg", r.eeg_path},
          {"attended_speaker", r.attended_speaker},
          {"n_samples", r.n_samples},
          {"n_eeg_frames", r.n_eeg_frames},
          {"duration_s", r.duration_s},
          {"snr_db", r.snr_db},
          {"stimulus_att", r.stimulus_att},
          {"stimulus_dis", r.stimulus_dis},
          {"offset_att", r.offset_att},
          {"offset_dis", r.offset_dis}};
}

inline ExampleRecord record_from_json(const nlohmann::json& j) {
  ExampleRecord r;
  r.id = j.at("id");
  r.split = j.at("split");
  r.mixture_path = j.at("mixture");
  r.target_path = j.at("target");
  r.interferer_path = j.at("interferer");
  r.eeg_path = j.at("eeg");
  r.attended_speaker = j.at("attended_speaker");
  r.n_samples = j.at("n_samples");
  r.n_eeg_frames = j.at("n_eeg_frames");
  r.duration_s = j.at("duration_s");
  r.snr_db = j.at("snr_db");
  r.stimulus_att = j.at("stimulus_att");
  r.stimulus_dis = j.at("stimulus_dis");
  r.offset_att = j.at("offset_att");
  r.offset_dis = j.at("offset_dis");
  return r;
}

inline void save_manifest(const std::string& path, const Manifest& m) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& r : m.records) f << record_to_json(r).dump() << "\n";
  if (!f) throw std::runtime_error("write failed: " + path);
}

inline Manifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  Manifest m;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    m.records.push_back(record_from_json(nlohmann::json::parse(line)));
  }
  return m;
}

/// 62.5 audio samples per EEG frame (8000 / 128).
inline std::size_t eeg_frames_for_samples(std::size_t n_samples) {
  return static_cast<std::size_t>(
      std::floor(static_cast<double>(n_samples) / 62.5 + 1e-9));
}

namespace detail {

/// Mixing on the storage grid: scale the interferer for the requested SNR and
/// snap it to the 2^-18 grid, so mixture = target + interferer is float32
/// exact (both operands grid-aligned).
inline std::pair<AudioSignal, AudioSignal> mix_on_storage_grid(
    const AudioSignal& target, const AudioSignal& interferer, double snr_db) {
  if (target.samples.size() != interferer.samples.size()) {
    throw std::invalid_argument("mix_on_storage_grid: length mismatch");
  }
  double et = 0.0, ei = 0.0;
  for (double v : target.samples) et += v * v;
  for (double v : interferer.samples) ei += v * v;
  if (et <= 0.0 || ei <= 0.0) {
    throw std::invalid_argument("mix_on_storage_grid: zero-energy input");
  }
  double scale = std::sqrt(et / ei) * std::pow(10.0, -snr_db / 20.0);
  AudioSignal scaled;
  scaled.sample_rate = interferer.sample_rate;
  scaled.samples.resize(interferer.samples.size());
  AudioSignal mix;
  mix.sample_rate = target.sample_rate;
  mix.samples.resize(target.samples.size());
  for (std::size_t i = 0; i < target.samples.size(); ++i) {
    scaled.samples[i] = quantize_stored_sample(interferer.samples[i] * scale);
    mix.samples[i] = target.samples[i] + scaled.samples[i];
  }
  return {std::move(mix), std::move(scaled)};
}

inline AudioSignal window_of(const AudioSignal& s, std::size_t offset,
                             std::size_t n) {
  AudioSignal out;
  out.sample_rate = s.sample_rate;
  out.samples.assign(s.samples.begin() + static_cast<std::ptrdiff_t>(offset),
                     s.samples.begin() + static_cast<std::ptrdiff_t>(offset + n));
  return out;
}

}  // namespace detail

/// Generates the full corpus under `root`: NHAR arrays in root/arrays and a
/// manifest at root/manifest.jsonl. Pure function of the config (seed
/// included). Returns the manifest.
inline Manifest build_corpus(const CorpusConfig& cfg, const std::string& root) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(root) / "arrays");
  // Shared envelope low-pass (design once; it dominates EEG synthesis cost).
  FIRFilter env_lp = design_lowpass(8.0, 8000.0);

  // Story cache: stimulus (speaker, index) -> long unit-RMS signal.
  std::map<std::pair<std::size_t, std::size_t>, AudioSignal> stories;
  auto story = [&](std::size_t speaker, std::size_t idx) -> const AudioSignal& {
    auto key = std::make_pair(speaker, idx);
    auto it = stories.find(key);
    if (it == stories.end()) {
      std::mt19937_64 rng(derive_seed(cfg.seed, 1000 + speaker, idx));
      double tilt = speaker == 0 ? cfg.tilt_speaker0 : cfg.tilt_speaker1;
      it = stories.emplace(key, synth_speech(cfg.stimulus_len_s, rng, tilt))
               .first;
    }
    return it->second;
  };

  Manifest manifest;
  const struct {
    const char* name;
    std::size_t count;
  } splits[] = {{"train", cfg.n_train}, {"val", cfg.n_val}, {"test", cfg.n_test}};
  std::size_t stim_samples = static_cast<std::size_t>(
      std::llround(cfg.stimulus_len_s * 8000.0));
  for (std::size_t si = 0; si < 3; ++si) {
    auto [stim_lo, stim_hi] = cfg.stimulus_range(splits[si].name);
    bool is_test = std::string(splits[si].name) == "test";
    double len_lo = is_test ? cfg.test_len_lo : cfg.train_len_lo;
    double len_hi = is_test ? cfg.test_len_hi : cfg.train_len_hi;
    for (std::size_t i = 0; i < splits[si].count; ++i) {
      std::mt19937_64 rng(derive_seed(cfg.seed, 2000 + si, i));
      ExampleRecord rec;
      rec.split = splits[si].name;
      rec.id = rec.split + "_" + std::to_string(i);
      rec.attended_speaker = rng() & 1;
      std::uniform_real_distribution<double> len_dist(len_lo, len_hi);
      rec.duration_s = len_dist(rng);
      rec.n_samples = static_cast<std::size_t>(
          std::llround(rec.duration_s * 8000.0));
      if (rec.n_samples > stim_samples) rec.n_samples = stim_samples;
      std::uniform_int_distribution<std::size_t> stim_dist(stim_lo, stim_hi - 1);
      rec.stimulus_att = stim_dist(rng);
      rec.stimulus_dis = stim_dist(rng);
      std::uniform_int_distribution<std::size_t> off_dist(
          0, stim_samples - rec.n_samples);
      rec.offset_att = off_dist(rng);
      rec.offset_dis = off_dist(rng);
      rec.snr_db = cfg.base_snr_db;

      std::size_t dis_speaker = 1 - rec.attended_speaker;
      AudioSignal target = detail::window_of(
          story(rec.attended_speaker, rec.stimulus_att), rec.offset_att,
          rec.n_samples);
      AudioSignal dis = detail::window_of(story(dis_speaker, rec.stimulus_dis),
                                          rec.offset_dis, rec.n_samples);
      auto [mixture, interferer] =
          detail::mix_on_storage_grid(target, dis, rec.snr_db);
      EEGRecording eeg = synth_eeg(target, interferer, cfg.eeg, rng, &env_lp);
      rec.n_eeg_frames = eeg.channels.shape[1];

      auto arr = [&](const std::string& kind) {
        return "arrays/" + rec.id + "_" + kind + ".nha";
      };
      rec.mixture_path = arr("mix");
      rec.target_path = arr("tgt");
      rec.interferer_path = arr("itf");
      rec.eeg_path = arr("eeg");
      auto abs = [&](const std::string& rel) {
        return (fs::path(root) / rel).string();
      };
      save_array(abs(rec.mixture_path),
                 Tensor<double>{{mixture.samples.size()}, mixture.samples},
                 8000.0);
      save_array(abs(rec.target_path),
                 Tensor<double>{{target.samples.size()}, target.samples},
                 8000.0);
      save_array(abs(rec.interferer_path),
                 Tensor<double>{{interferer.samples.size()}, interferer.samples},
                 8000.0);
      save_array(abs(rec.eeg_path), eeg.channels, cfg.eeg.rate);
      manifest.records.push_back(std::move(rec));
    }
  }
  save_manifest((fs::path(root) / "manifest.jsonl").string(), manifest);
  return manifest;
}

struct MixtureExample {
  std::string id;
  AudioSignal mixture, target, interferer;
  EEGRecording eeg;
  std::size_t attended_speaker = 0;
};

/// Loads one example and validates the length contracts. Checksum errors
/// surface from the array loader (which names the file); length violations
/// name the manifest entry.
inline MixtureExample load_example(const std::string& root,
                                   const ExampleRecord& rec) {
  namespace fs = std::filesystem;
  auto load_audio = [&](const std::string& rel) {
    double rate = 0.0;
    Tensor<double> t = load_array((fs::path(root) / rel).string(), &rate);
    if (t.rank() != 1 || t.size() != rec.n_samples) {
      throw std::runtime_error("load_example: entry " + rec.id + ": " + rel +
                               " has " + std::to_string(t.size()) +
                               " samples, manifest says " +
                               std::to_string(rec.n_samples));
    }
    AudioSignal s;
    s.sample_rate = rate;
    s.samples = std::move(t.data);
    return s;
  };
  MixtureExample ex;
  ex.id = rec.id;
  ex.attended_speaker = rec.attended_speaker;
  ex.mixture = load_audio(rec.mixture_path);
  ex.target = load_audio(rec.target_path);
  ex.interferer = load_audio(rec.interferer_path);
  double eeg_rate = 0.0;
  Tensor<double> ch =
      load_array((fs::path(root) / rec.eeg_path).string(), &eeg_rate);
  std::size_t expect = eeg_frames_for_samples(rec.n_samples);
  if (ch.rank() != 2 || ch.shape[1] != rec.n_eeg_frames ||
      rec.n_eeg_frames != expect) {
    throw std::runtime_error(
        "load_example: entry " + rec.id + ": EEG shape " + ch.shape_str() +
        " inconsistent with " + std::to_string(rec.n_samples) +
        " audio samples (expect " + std::to_string(expect) + " frames)");
  }
  ex.eeg.channels = std::move(ch);
  ex.eeg.sample_rate = eeg_rate;
  ex.eeg.preprocessed = true;
  return ex;
}

// ---------------------------------------------------------------------------
// Attention identifiability (linear decoder sanity check)
// ---------------------------------------------------------------------------

/// Fits a ridge least-squares decoder from lagged EEG features to the
/// attended envelope on the train split, then scores each test example by
/// whether the reconstruction correlates more with the attended than with the
/// distractor envelope. Returns the fraction of test examples where it does.
/// This certifies the synthetic task carries attention information before any
/// model training is attempted.
inline double attention_decoder_accuracy(const Manifest& manifest,
                                         const std::string& root,
                                         std::size_t max_train_examples = 40,
                                         std::size_t channel_stride = 4,
                                         std::size_t n_lags = 8,
                                         std::size_t lag_stride = 4) {
  auto train = manifest.split("train");
  auto test = manifest.split("test");
  if (train.empty() || test.empty()) {
    throw std::invalid_argument(
        "attention_decoder_accuracy: need train and test examples");
  }
  if (train.size() > max_train_examples) train.resize(max_train_examples);
  FIRFilter env_lp = design_lowpass(8.0, 8000.0);

  std::size_t n_ch = 0;  // derived from the first example
  std::size_t D = 0;
  Eigen::MatrixXd G;
  Eigen::VectorXd b;
  auto features = [&](const EEGRecording& eeg) {
    std::size_t C = eeg.channels.shape[0], T = eeg.channels.shape[1];
    std::size_t used = (C + channel_stride - 1) / channel_stride;
    Eigen::MatrixXd X(T, used * n_lags);
    for (std::size_t ci = 0, c = 0; c < C; c += channel_stride, ++ci) {
      for (std::size_t l = 0; l < n_lags; ++l) {
        std::size_t lag = l * lag_stride;
        for (std::size_t t = 0; t < T; ++t) {
          X(static_cast<Eigen::Index>(t),
            static_cast<Eigen::Index>(ci * n_lags + l)) =
              t >= lag ? eeg.channels.at(c, t - lag) : 0.0;
        }
      }
    }
    return X;
  };

  for (const auto& rec : train) {
    MixtureExample ex = load_example(root, rec);
    Eigen::MatrixXd X = features(ex.eeg);
    if (D == 0) {
      n_ch = ex.eeg.channels.shape[0];
      D = static_cast<std::size_t>(X.cols());
      G = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(D),
                                static_cast<Eigen::Index>(D));
      b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(D));
    }
    std::vector<double> env =
        detail::unit_envelope(ex.target, ex.eeg.sample_rate, &env_lp);
    Eigen::Map<Eigen::VectorXd> y(env.data(),
                                  static_cast<Eigen::Index>(env.size()));
    G.noalias() += X.transpose() * X;
    b.noalias() += X.transpose() * y;
  }
  (void)n_ch;
  double lambda = 1e-3 * G.trace() / static_cast<double>(D);
  G.diagonal().array() += lambda;
  Eigen::VectorXd w = G.ldlt().solve(b);

  auto pearson = [](const Eigen::VectorXd& a, const Eigen::VectorXd& c) {
    Eigen::VectorXd da = a.array() - a.mean();
    Eigen::VectorXd dc = c.array() - c.mean();
    double denom = std::sqrt(da.squaredNorm() * dc.squaredNorm());
    return denom > 0.0 ? da.dot(dc) / denom : 0.0;
  };

  std::size_t hits = 0;
  for (const auto& rec : test) {
    MixtureExample ex = load_example(root, rec);
    Eigen::MatrixXd X = features(ex.eeg);
    Eigen::VectorXd pred = X * w;
    std::vector<double> ea =
        detail::unit_envelope(ex.target, ex.eeg.sample_rate, &env_lp);
    std::vector<double> ed =
        detail::unit_envelope(ex.interferer, ex.eeg.sample_rate, &env_lp);
    Eigen::Map<Eigen::VectorXd> ya(ea.data(),
                                   static_cast<Eigen::Index>(ea.size()));
    Eigen::Map<Eigen::VectorXd> yd(ed.data(),
                                   static_cast<Eigen::Index>(ed.size()));
    if (pearson(pred, ya) > pearson(pred, yd)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

}  // namespace neuroheed
