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
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "neuroheed/adam.hpp"
#include "neuroheed/data.hpp"
#include "neuroheed/model.hpp"
#include "neuroheed/tape.hpp"

namespace neuroheed {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
  // Warmup: lr = lr_scale * d_model^-0.5 * step * warmup_n^-1.5, then flat
  // (subject to plateau halving).
  double lr_scale = 0.1;
  std::size_t d_model = 64;
  std::size_t warmup_n = 15000;
  std::size_t plateau_patience = 6;
  double plateau_factor = 0.5;
  std::size_t early_stop_patience = 10;
  std::size_t batch_size = 4;
  double dropout_p = 0.2;  // speaker-encoder dropout (online training)
  bool augmentation = true;
  double augment_snr_lo = -10.0, augment_snr_hi = 10.0;
  std::vector<double> chunk_choices_s = {0.05, 0.1, 0.2};
  double buffer_lo_s = 1.0, buffer_hi_s = 10.0;
  std::size_t windows_per_epoch = 2000;
  double loss_clamp_db = 60.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (dropout_p < 0.0 || dropout_p > 1.0) {
      throw std::invalid_argument("TrainConfig: dropout_p must be in [0, 1]");
    }
    if (plateau_patience < 1 || early_stop_patience < 1) {
      throw std::invalid_argument("TrainConfig: patience values must be >= 1");
    }
    if (batch_size < 1 || warmup_n < 1 || chunk_choices_s.empty()) {
      throw std::invalid_argument("TrainConfig: degenerate configuration");
    }
  }
};

// ---------------------------------------------------------------------------
// Learning-rate schedule
// ---------------------------------------------------------------------------

/// Warmup ramp, then flat at the warmup-end value; continuous at the joint.
inline double lr_at(std::size_t step, const TrainConfig& cfg) {
  if (step < 1) throw std::invalid_argument("lr_at: step must be >= 1");
  double base = cfg.lr_scale / std::sqrt(static_cast<double>(cfg.d_model));
  double s = static_cast<double>(std::min(step, cfg.warmup_n));
  return base * s * std::pow(static_cast<double>(cfg.warmup_n), -1.5);
}

/// Validation-plateau controller: halves the lr multiplier after `patience`
/// consecutive epochs without a new best, stops after `stop` of them.
struct PlateauController {
  std::size_t patience = 6;
  std::size_t stop_patience = 10;
  double factor = 0.5;

  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::size_t since_halve = 0;
  double multiplier = 1.0;
  bool stopped = false;

  /// Feeds one epoch's validation loss; returns true if it improved the best.
  bool observe(double val_loss) {
    if (val_loss < best) {
      best = val_loss;
      since_best = 0;
      since_halve = 0;
      return true;
    }
    ++since_best;
    ++since_halve;
    if (since_halve >= patience) {
      multiplier *= factor;
      since_halve = 0;
    }
    if (since_best >= stop_patience) stopped = true;
    return false;
  }
};

// ---------------------------------------------------------------------------
// SI-SDR
// ---------------------------------------------------------------------------

/// Numeric SI-SDR in dB. Returns +inf for a perfect (scaled) reconstruction
/// and -inf for an estimate orthogonal to the reference; callers decide how
/// to treat the sentinels. Throws only on structural misuse.
inline double si_sdr_db(const std::vector<double>& s,
                        const std::vector<double>& est) {
  if (s.size() != est.size() || s.empty()) {
    throw std::invalid_argument("si_sdr_db: length mismatch or empty");
  }
  double ss = 0.0, se = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    ss += s[i] * s[i];
    se += s[i] * est[i];
  }
  if (ss <= 0.0) throw std::invalid_argument("si_sdr_db: zero-energy reference");
  if (se == 0.0) return -std::numeric_limits<double>::infinity();
  double alpha = se / ss;
  double err = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    double d = est[i] - alpha * s[i];
    err += d * d;
  }
  if (err == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(alpha * alpha * ss / err);
}

/// Differentiable negative SI-SDR of `est` (a rank-1 var on the tape) against
/// the constant reference `s`. The SI-SDR value is clamped to
/// [-clamp_db, clamp_db] before negation - training only; evaluation uses the
/// unclamped numeric form. Exact singularities (orthogonal estimate, perfect
/// reconstruction) are structural failures and throw with a diagnostic.
inline Var si_sdr_loss(Tape<double>& t, Var est, const std::vector<double>& s,
                       double clamp_db = 60.0) {
  const auto& ev = t.value(est);
  if (ev.rank() != 1 || ev.size() != s.size() || s.empty()) {
    throw std::invalid_argument("si_sdr_loss: length mismatch or empty");
  }
  double ss = 0.0;
  for (double v : s) ss += v * v;
  if (ss <= 0.0) {
    throw std::invalid_argument("si_sdr_loss: zero-energy reference");
  }
  Var s_const = t.leaf(Tensor<double>::from_vector(s), false);
  Var se = dot(t, est, s_const);
  if (t.value(se).data[0] == 0.0) {
    throw std::domain_error(
        "si_sdr_loss: estimate orthogonal to reference (SI-SDR = -inf)");
  }
  Var alpha = affine(t, se, 1.0 / ss);           // <est, s> / ||s||^2
  Var proj = scale_by(t, s_const, alpha);        // alpha * s
  Var err = sub(t, est, proj);
  Var err_energy = dot(t, err, err);
  if (t.value(err_energy).data[0] == 0.0) {
    throw std::domain_error(
        "si_sdr_loss: exact reconstruction (SI-SDR = +inf)");
  }
  Var sig_energy = affine(t, mul(t, alpha, alpha), ss);  // alpha^2 ||s||^2
  double k = 10.0 / std::log(10.0);
  Var si_sdr = affine(t, sub(t, log_op(t, sig_energy), log_op(t, err_energy)),
                      k);
  return affine(t, clamp_scalar(t, si_sdr, -clamp_db, clamp_db), -1.0);
}

// ---------------------------------------------------------------------------
// Window sampling
// ---------------------------------------------------------------------------

/// Sampled training window: audio indices 0 <= m < k < n <= T with the
/// buffer [m, k) and the chunk [k, n), plus the aligned EEG frame indices.
/// m and k are snapped to multiples of 250 samples (the lcm of the 62.5
/// samples-per-EEG-frame ratio and the encoder hop), so their EEG and
/// encoder-frame coordinates are exact integers.
struct Window {
  std::size_t m = 0, k = 0, n = 0;
  std::size_t m_eeg = 0, k_eeg = 0, n_eeg = 0;
};

inline Window sample_training_window(std::size_t n_samples,
                                     const TrainConfig& cfg,
                                     std::mt19937_64& rng) {
  constexpr std::size_t kGrid = 250;
  std::uniform_int_distribution<std::size_t> pick(
      0, cfg.chunk_choices_s.size() - 1);
  std::size_t chunk = static_cast<std::size_t>(
      std::llround(cfg.chunk_choices_s[pick(rng)] * 8000.0));
  std::uniform_real_distribution<double> buf_dist(cfg.buffer_lo_s,
                                                  cfg.buffer_hi_s);
  std::size_t buffer = static_cast<std::size_t>(
      std::llround(buf_dist(rng) * 8000.0 / kGrid)) * kGrid;
  if (n_samples < chunk + kGrid) {
    throw std::invalid_argument(
        "sample_training_window: utterance of " + std::to_string(n_samples) +
        " samples is shorter than the minimum chunk+buffer");
  }
  if (buffer + chunk > n_samples) {
    // Clip the buffer to fit rather than rejecting the utterance.
    buffer = (n_samples - chunk) / kGrid * kGrid;
  }
  std::size_t slots = (n_samples - buffer - chunk) / kGrid;
  std::uniform_int_distribution<std::size_t> m_dist(0, slots);
  Window w;
  w.m = m_dist(rng) * kGrid;
  w.k = w.m + buffer;
  w.n = w.k + chunk;
  w.m_eeg = w.m * 128 / 8000;  // exact: m is a multiple of 250
  w.k_eeg = w.k * 128 / 8000;
  w.n_eeg = eeg_frames_for_samples(w.n);
  return w;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

/// Remixes `ex` with an interferer window taken from a random *other* example
/// (cyclically tiled to the needed length) at an SNR drawn from the
/// configured range. With no other example available, falls back to the true
/// interferer (re-scaled); `fell_back` reports that.
inline MixtureExample augment_mixture(const MixtureExample& ex,
                                      const std::vector<MixtureExample>& corpus,
                                      std::mt19937_64& rng,
                                      const TrainConfig& cfg,
                                      bool* fell_back = nullptr) {
  std::uniform_real_distribution<double> snr_dist(cfg.augment_snr_lo,
                                                  cfg.augment_snr_hi);
  double snr = snr_dist(rng);
  std::vector<const MixtureExample*> donors;
  for (const auto& cand : corpus) {
    if (cand.id != ex.id) donors.push_back(&cand);
  }
  if (fell_back) *fell_back = donors.empty();
  AudioSignal raw_interferer;
  raw_interferer.sample_rate = ex.interferer.sample_rate;
  std::size_t T = ex.target.samples.size();
  if (donors.empty()) {
    raw_interferer.samples = ex.interferer.samples;
  } else {
    std::uniform_int_distribution<std::size_t> d_dist(0, donors.size() - 1);
    const auto& donor = donors[d_dist(rng)]->interferer.samples;
    std::uniform_int_distribution<std::size_t> o_dist(0, donor.size() - 1);
    std::size_t off = o_dist(rng);
    raw_interferer.samples.resize(T);
    for (std::size_t i = 0; i < T; ++i) {
      raw_interferer.samples[i] = donor[(off + i) % donor.size()];
    }
  }
  MixtureExample out = ex;
  auto [mixture, scaled] = mix_at_snr(ex.target, raw_interferer, snr);
  out.mixture = std::move(mixture);
  out.interferer = std::move(scaled);
  return out;
}

// ---------------------------------------------------------------------------
// Window losses (single-pass and two-pass)
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> subvec(const std::vector<double>& v, std::size_t a,
                                  std::size_t b) {
  return std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(a),
                             v.begin() + static_cast<std::ptrdiff_t>(b));
}

inline Tensor<double> eeg_slice(const Tensor<double>& eeg, std::size_t a,
                                std::size_t b) {
  std::size_t C = eeg.shape[0];
  Tensor<double> out = Tensor<double>::zeros({C, b - a});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = a; i < b; ++i) out.at(c, i - a) = eeg.at(c, i);
  }
  return out;
}

inline Var audio_leaf(Tape<double>& t, const std::vector<double>& v) {
  return t.leaf(Tensor<double>({1, v.size()}, v), false);
}

}  // namespace detail

/// Decoded length for an input of n samples (whole frames only).
inline std::size_t decode_len(const ModelConfig& c, std::size_t n) {
  return n - (n - c.L) % c.hop();
}

/// Extraction loss for one window without self-enrollment: forward on
/// x[m:n] with a^s = 0, negative SI-SDR against the target window.
inline Var single_pass_window_loss(Tape<double>& t, const BoundParams& bp,
                                   const MixtureExample& ex, const Window& w,
                                   const TrainConfig& cfg) {
  const ModelConfig& c = *bp.cfg;
  Var x = detail::audio_leaf(t, detail::subvec(ex.mixture.samples, w.m, w.n));
  Var eeg;
  std::size_t frame_begin = 0;
  if (c.causal()) {
    eeg = t.leaf(detail::eeg_slice(ex.eeg.channels, 0, w.n_eeg), false);
    frame_begin = w.m / c.hop();
  } else {
    eeg = t.leaf(detail::eeg_slice(ex.eeg.channels, w.m_eeg, w.n_eeg), false);
  }
  Var out = forward_window(t, x, eeg, std::nullopt, bp, frame_begin);
  std::size_t t_dec = decode_len(c, w.n - w.m);
  return si_sdr_loss(t, out,
                     detail::subvec(ex.target.samples, w.m, w.m + t_dec),
                     cfg.loss_clamp_db);
}

struct TwoPassStats {
  std::size_t pass1_runs = 0;
  std::size_t dropout_runs = 0;
};

/// Autoregressive training objective. With probability `dropout_p` the
/// speaker encoder is dropped (a^s = 0, single pass). Otherwise pass 1
/// produces the pseudo past s_hat[0:k] with a^s = 0 and no gradient
/// recording, and pass 2 extracts the window conditioned on the auditory
/// attractor self-enrolled from that pseudo past.
inline Var two_pass_window_loss(Tape<double>& t, const BoundParams& bp,
                                const ModelParams& params,
                                const MixtureExample& ex, const Window& w,
                                const TrainConfig& cfg, std::mt19937_64& rng,
                                TwoPassStats* stats = nullptr) {
  const ModelConfig& c = *bp.cfg;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng) < cfg.dropout_p) {
    if (stats) ++stats->dropout_runs;
    return single_pass_window_loss(t, bp, ex, w, cfg);
  }
  // Pass 1: pseudo past on a gradient-free tape.
  std::vector<double> pseudo_past;
  {
    Tape<double> t1(false);
    BoundParams bp1 = bind_params(t1, params, false);
    Var x_past =
        detail::audio_leaf(t1, detail::subvec(ex.mixture.samples, 0, w.k));
    Var eeg_past =
        t1.leaf(detail::eeg_slice(ex.eeg.channels, 0, w.k_eeg), false);
    Var out = forward_window(t1, x_past, eeg_past, std::nullopt, bp1, 0);
    pseudo_past = t1.value(out).data;
  }
  if (stats) ++stats->pass1_runs;
  // Pass 2: self-enroll from the pseudo past, extract the window.
  Var past = detail::audio_leaf(t, pseudo_past);
  Var a_s = speaker_encode(t, past, bp);
  Var x = detail::audio_leaf(t, detail::subvec(ex.mixture.samples, w.m, w.n));
  Var eeg;
  std::size_t frame_begin = 0;
  if (c.causal()) {
    eeg = t.leaf(detail::eeg_slice(ex.eeg.channels, 0, w.n_eeg), false);
    frame_begin = w.m / c.hop();
  } else {
    eeg = t.leaf(detail::eeg_slice(ex.eeg.channels, w.m_eeg, w.n_eeg), false);
  }
  Var out = forward_window(t, x, eeg, a_s, bp, frame_begin);
  std::size_t t_dec = decode_len(c, w.n - w.m);
  return si_sdr_loss(t, out,
                     detail::subvec(ex.target.samples, w.m, w.m + t_dec),
                     cfg.loss_clamp_db);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainLogEntry {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

struct EpochLogEntry {
  std::size_t epoch = 0;
  double val_loss = 0.0;
  double lr_multiplier = 1.0;
  bool improved = false;
};

struct TrainOptions {
  TrainConfig train;
  std::size_t epochs = 10;
  bool online = false;  // two-pass objective with speaker-encoder dropout
  double val_max_s = 4.0;
  std::size_t max_val_examples = 16;
  std::size_t start_step = 0;  // resume: continue step numbering from here
};

struct TrainResult {
  ModelParams best_params;
  ModelParams final_params;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<TrainLogEntry> steps;
  std::vector<EpochLogEntry> epoch_log;
  bool early_stopped = false;
  TwoPassStats two_pass;
  std::size_t optimizer_steps = 0;
  std::size_t skipped_windows = 0;
};

/// Mean single-pass loss over (a capped number of) validation examples,
/// each truncated to `val_max_s` seconds. Gradient-free.
inline double validation_loss(const std::vector<MixtureExample>& val_set,
                              const ModelParams& params,
                              const TrainOptions& opt) {
  const ModelConfig& c = params.config;
  std::size_t count = std::min(val_set.size(), opt.max_val_examples);
  if (count == 0) {
    throw std::invalid_argument("validation_loss: empty validation set");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const MixtureExample& ex = val_set[i];
    std::size_t n = std::min(
        ex.mixture.samples.size(),
        static_cast<std::size_t>(std::llround(opt.val_max_s * 8000.0)));
    Window w;
    w.n = n;
    w.n_eeg = eeg_frames_for_samples(n);
    Tape<double> t(false);
    BoundParams bp = bind_params(t, params, false);
    total += t.value(single_pass_window_loss(t, bp, ex, w, opt.train))
                 .data[0];
  }
  return total / static_cast<double>(count);
}

/// Full schedule-driven training run. Deterministic for a fixed seed and
/// single-threaded execution. Returns both the best-validation and the final
/// parameters plus the complete logs.
inline TrainResult train_model(const std::vector<MixtureExample>& train_set,
                               const std::vector<MixtureExample>& val_set,
                               ModelParams params, const TrainOptions& opt) {
  opt.train.validate();
  if (train_set.empty()) {
    throw std::invalid_argument("train_model: empty training set");
  }
  TrainResult res;
  res.optimizer_steps = opt.start_step;
  std::mt19937_64 rng(derive_seed(opt.train.seed, 3000 + opt.start_step));
  PlateauController plateau{opt.train.plateau_patience,
                            opt.train.early_stop_patience,
                            opt.train.plateau_factor};
  AdamState<double> adam;
  std::size_t steps_per_epoch = std::max<std::size_t>(
      1, opt.train.windows_per_epoch / opt.train.batch_size);
  std::uniform_int_distribution<std::size_t> ex_dist(0, train_set.size() - 1);

  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      Tape<double> t;
      BoundParams bp = bind_params(t, params, true);
      std::vector<Var> losses;
      while (losses.size() < opt.train.batch_size) {
        const MixtureExample& base = train_set[ex_dist(rng)];
        MixtureExample aug;
        const MixtureExample* ex = &base;
        if (opt.train.augmentation) {
          aug = augment_mixture(base, train_set, rng, opt.train);
          ex = &aug;
        }
        Window w;
        try {
          w = sample_training_window(ex->mixture.samples.size(), opt.train,
                                     rng);
        } catch (const std::invalid_argument&) {
          ++res.skipped_windows;
          if (res.skipped_windows > 100 * opt.train.batch_size) {
            throw std::runtime_error(
                "train_model: no utterance admits a training window");
          }
          continue;
        }
        losses.push_back(
            opt.online ? two_pass_window_loss(t, bp, params, *ex, w,
                                              opt.train, rng, &res.two_pass)
                       : single_pass_window_loss(t, bp, *ex, w, opt.train));
      }
      Var mean_loss = losses[0];
      for (std::size_t i = 1; i < losses.size(); ++i) {
        mean_loss = add(t, mean_loss, losses[i]);
      }
      mean_loss = affine(t, mean_loss,
                         1.0 / static_cast<double>(losses.size()));
      t.backward(mean_loss);

      std::vector<Tensor<double>*> ptrs;
      std::vector<const Tensor<double>*> grads;
      double gn2 = 0.0;
      for (std::size_t i = 0; i < params.names.size(); ++i) {
        ptrs.push_back(&params.tensors[i]);
        const Tensor<double>& g = t.grad(bp(params.names[i]));
        grads.push_back(&g);
        for (double v : g.data) gn2 += v * v;
      }
      std::size_t step = res.optimizer_steps + 1;
      double lr = lr_at(step, opt.train) * plateau.multiplier;
      adam_step(ptrs, grads, adam, lr);
      res.optimizer_steps = step;
      res.steps.push_back(
          {step, t.value(mean_loss).data[0], lr, std::sqrt(gn2)});
    }

    double val = val_set.empty()
                     ? res.steps.back().loss
                     : validation_loss(val_set, params, opt);
    bool improved = plateau.observe(val);
    if (improved || res.epoch_log.empty()) {
      res.best_val = std::min(res.best_val, val);
      res.best_params = params;
    }
    res.epoch_log.push_back({epoch, val, plateau.multiplier, improved});
    if (plateau.stopped) {
      res.early_stopped = true;
      break;
    }
  }
  res.final_params = params;
  if (res.best_params.names.empty()) res.best_params = params;
  return res;
}

// ---------------------------------------------------------------------------
// Log serialization
// ---------------------------------------------------------------------------

inline void save_train_log(const std::string& path, const TrainResult& r) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& e : r.steps) {
    nlohmann::json j = {{"kind", "step"},
                        {"step", e.step},
                        {"loss", e.loss},
                        {"lr", e.lr},
                        {"grad_norm", e.grad_norm}};
    f << j.dump() << "\n";
  }
  for (const auto& e : r.epoch_log) {
    nlohmann::json j = {{"kind", "epoch"},
                        {"epoch", e.epoch},
                        {"val_loss", e.val_loss},
                        {"lr_multiplier", e.lr_multiplier},
                        {"improved", e.improved}};
    f << j.dump() << "\n";
  }
}

}  // namespace neuroheed
