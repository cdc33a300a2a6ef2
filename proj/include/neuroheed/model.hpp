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

#include <cstddef>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "neuroheed/attention.hpp"
#include "neuroheed/dsp.hpp"
#include "neuroheed/ops.hpp"
#include "neuroheed/rnn.hpp"
#include "neuroheed/tape.hpp"
#include "neuroheed/tensor.hpp"

namespace neuroheed {

enum class ExtractorKind { kDprnn, kTcn, kCausalTcn };

inline const char* extractor_name(ExtractorKind k) {
  switch (k) {
    case ExtractorKind::kDprnn: return "dprnn";
    case ExtractorKind::kTcn: return "tcn";
    case ExtractorKind::kCausalTcn: return "causal_tcn";
  }
  return "?";
}

inline ExtractorKind extractor_from_name(const std::string& s) {
  if (s == "dprnn") return ExtractorKind::kDprnn;
  if (s == "tcn") return ExtractorKind::kTcn;
  if (s == "causal_tcn") return ExtractorKind::kCausalTcn;
  throw std::invalid_argument("unknown extractor: " + s);
}

struct ModelConfig {
  std::size_t N = 64;   // embedding dim
  std::size_t L = 20;   // encoder kernel (hop L/2)
  std::size_t C = 64;   // EEG channels
  std::size_t P_r = 5;  // EEG self-attention layers
  ExtractorKind extractor = ExtractorKind::kDprnn;
  bool speaker_encoder_enabled = true;
  std::size_t bottleneck = 64;
  // DPRNN
  std::size_t dprnn_blocks = 6;
  std::size_t dprnn_hidden = 128;
  std::size_t dprnn_chunk = 100;  // intra-chunk length, 50% overlap
  // TCN
  std::size_t tcn_repeats = 4;
  std::size_t tcn_blocks = 8;
  std::size_t tcn_channels = 512;
  std::size_t tcn_kernel = 3;
  // speaker encoder
  std::size_t spk_blocks = 3;
  std::size_t spk_lstm_hidden = 64;
  double audio_rate = 8000.0;
  double eeg_rate = 128.0;

  std::size_t hop() const { return L / 2; }

  void validate() const {
    if (L < 2 || L % 2 != 0) {
      throw std::invalid_argument("ModelConfig: L must be even and >= 2");
    }
    if (N < 1 || P_r < 1) {
      throw std::invalid_argument("ModelConfig: N and P_r must be >= 1");
    }
    if (dprnn_chunk < 2 || dprnn_chunk % 2 != 0) {
      throw std::invalid_argument("ModelConfig: dprnn_chunk must be even");
    }
  }

  bool causal() const { return extractor == ExtractorKind::kCausalTcn; }

  /// Encoder frame count for T input samples.
  std::size_t frames_for(std::size_t T) const {
    if (T < L) {
      throw std::invalid_argument(
          "input length " + std::to_string(T) + " below the minimum of " +
          std::to_string(L) + " samples (one encoder frame)");
    }
    return (T - L) / hop() + 1;
  }

  /// Causal TCN receptive field in encoder frames (depthwise convs only; the
  /// cumulative norms are handled by carried statistics, not by lookback).
  std::size_t causal_receptive_frames() const {
    std::size_t span = 0;
    for (std::size_t b = 0; b < tcn_blocks; ++b) {
      span += (tcn_kernel - 1) * (std::size_t(1) << b);
    }
    return 1 + tcn_repeats * span;
  }
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

enum class InitKind { kFanIn, kZeros, kOnes, kPrelu };

struct ParamSpec {
  std::string name;
  std::vector<std::size_t> shape;
  InitKind init;
  std::size_t fan_in = 0;
};

/// Deterministic, ordered parameter layout for a config.
inline std::vector<ParamSpec> param_specs(const ModelConfig& c) {
  c.validate();
  std::vector<ParamSpec> out;
  auto add = [&out](std::string name, std::vector<std::size_t> shape,
                    InitKind k, std::size_t fan_in = 0) {
    out.push_back({std::move(name), std::move(shape), k, fan_in});
  };
  auto add_ln = [&](const std::string& base, std::size_t d) {
    add(base + "_g", {d}, InitKind::kOnes);
    add(base + "_b", {d}, InitKind::kZeros);
  };
  std::size_t N = c.N, L = c.L, B = c.bottleneck;

  add("enc.w", {N, 1, L}, InitKind::kFanIn, L);

  add("eeg.in_w", {c.C, N}, InitKind::kFanIn, c.C);
  add("eeg.in_b", {N}, InitKind::kZeros);
  for (std::size_t i = 0; i < c.P_r; ++i) {
    std::string p = "eeg.sa" + std::to_string(i) + ".";
    for (const char* nm : {"wq", "wk", "wv", "wo"}) {
      add(p + nm, {N, N}, InitKind::kFanIn, N);
    }
    for (const char* nm : {"bq", "bk", "bv", "bo"}) {
      add(p + nm, {N}, InitKind::kZeros);
    }
    add(p + "ff1_w", {N, 4 * N}, InitKind::kFanIn, N);
    add(p + "ff1_b", {4 * N}, InitKind::kZeros);
    add(p + "ff2_w", {4 * N, N}, InitKind::kFanIn, 4 * N);
    add(p + "ff2_b", {N}, InitKind::kZeros);
    add_ln(p + "ln1", N);
    add_ln(p + "ln2", N);
  }

  if (c.speaker_encoder_enabled) {
    for (std::size_t r = 0; r < c.spk_blocks; ++r) {
      std::string p = "spk.res" + std::to_string(r) + ".";
      add(p + "w1", {N, N, 3}, InitKind::kFanIn, 3 * N);
      add(p + "b1", {N}, InitKind::kZeros);
      add_ln(p + "cn1", N);
      add(p + "a1", {N}, InitKind::kPrelu);
      add(p + "w2", {N, N, 3}, InitKind::kFanIn, 3 * N);
      add(p + "b2", {N}, InitKind::kZeros);
      add_ln(p + "cn2", N);
      add(p + "a2", {N}, InitKind::kPrelu);
    }
    std::size_t H = c.spk_lstm_hidden;
    add("spk.lstm.w_ih", {N, 4 * H}, InitKind::kFanIn, N);
    add("spk.lstm.w_hh", {H, 4 * H}, InitKind::kFanIn, H);
    add("spk.lstm.b", {4 * H}, InitKind::kZeros);
    add("spk.head_w", {H, N}, InitKind::kFanIn, H);
    add("spk.head_b", {N}, InitKind::kZeros);
  }

  // Attractor fusion input: [features ; A^r ; a^s].
  if (c.extractor == ExtractorKind::kDprnn) {
    add("ext.fuse_w", {3 * N, B}, InitKind::kFanIn, 3 * N);
    add("ext.fuse_b", {B}, InitKind::kZeros);
    std::size_t H = c.dprnn_hidden;
    for (std::size_t i = 0; i < c.dprnn_blocks; ++i) {
      for (const char* path : {"intra", "inter"}) {
        std::string p =
            "ext.b" + std::to_string(i) + "." + path + ".";
        for (const char* dir : {"fwd", "bwd"}) {
          add(p + dir + ".w_ih", {B, 4 * H}, InitKind::kFanIn, B);
          add(p + dir + ".w_hh", {H, 4 * H}, InitKind::kFanIn, H);
          add(p + dir + ".b", {4 * H}, InitKind::kZeros);
        }
        add(p + "proj_w", {2 * H, B}, InitKind::kFanIn, 2 * H);
        add(p + "proj_b", {B}, InitKind::kZeros);
        add_ln(p + "ln", B);
      }
    }
  } else {
    std::size_t H = c.tcn_channels, K = c.tcn_kernel;
    for (std::size_t i = 0; i < c.tcn_repeats * c.tcn_blocks; ++i) {
      std::string p = "ext.b" + std::to_string(i) + ".";
      std::size_t fuse_in = (i == 0 ? N : B) + 2 * N;
      add(p + "fuse_w", {fuse_in, B}, InitKind::kFanIn, fuse_in);
      add(p + "fuse_b", {B}, InitKind::kZeros);
      add(p + "in_w", {B, H}, InitKind::kFanIn, B);
      add(p + "in_b", {H}, InitKind::kZeros);
      add(p + "a1", {H}, InitKind::kPrelu);
      add_ln(p + "n1", H);
      add(p + "dw_w", {H, K}, InitKind::kFanIn, K);
      add(p + "a2", {H}, InitKind::kPrelu);
      add_ln(p + "n2", H);
      add(p + "out_w", {H, B}, InitKind::kFanIn, H);
      add(p + "out_b", {B}, InitKind::kZeros);
    }
  }
  add("ext.mask_w", {B, N}, InitKind::kFanIn, B);
  add("ext.mask_b", {N}, InitKind::kZeros);

  add("dec.w", {N, L}, InitKind::kFanIn, N);
  add("dec.b", {L}, InitKind::kZeros);
  return out;
}

struct ModelParams {
  ModelConfig config;
  std::vector<std::string> names;
  std::vector<Tensor<double>> tensors;

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == name) return i;
    }
    throw std::out_of_range("ModelParams: no parameter named " + name);
  }
};

inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p;
  p.config = cfg;
  std::mt19937_64 rng(seed);
  for (const auto& spec : param_specs(cfg)) {
    Tensor<double> t = Tensor<double>::zeros(spec.shape);
    switch (spec.init) {
      case InitKind::kZeros:
        break;
      case InitKind::kOnes:
        for (auto& v : t.data) v = 1.0;
        break;
      case InitKind::kPrelu:
        for (auto& v : t.data) v = 0.25;
        break;
      case InitKind::kFanIn: {
        double lim = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
        std::uniform_real_distribution<double> dist(-lim, lim);
        for (auto& v : t.data) v = dist(rng);
        break;
      }
    }
    p.names.push_back(spec.name);
    p.tensors.push_back(std::move(t));
  }
  return p;
}

/// Parameters bound to a tape as leaf vars, looked up by name.
struct BoundParams {
  const ModelConfig* cfg = nullptr;
  std::unordered_map<std::string, Var> vars;

  Var operator()(const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) {
      throw std::out_of_range("BoundParams: no parameter named " + name);
    }
    return it->second;
  }
  bool has(const std::string& name) const { return vars.count(name) != 0; }
};

inline BoundParams bind_params(Tape<double>& t, const ModelParams& p,
                               bool requires_grad) {
  BoundParams b;
  b.cfg = &p.config;
  for (std::size_t i = 0; i < p.names.size(); ++i) {
    b.vars.emplace(p.names[i], t.leaf(p.tensors[i], requires_grad));
  }
  return b;
}

// ---------------------------------------------------------------------------
// Components
// ---------------------------------------------------------------------------

namespace detail {

/// y = w^T x + b on channel-major data: x[C_in, T] -> [C_out, T].
inline Var linear_cols(Tape<double>& t, Var x, Var w, Var b) {
  return transpose(t, add_rowvec(t, matmul(t, transpose(t, x), w), b));
}

inline AttentionVars sa_vars(const BoundParams& p, const std::string& prefix) {
  AttentionVars v;
  v.wq = p(prefix + "wq");
  v.bq = p(prefix + "bq");
  v.wk = p(prefix + "wk");
  v.bk = p(prefix + "bk");
  v.wv = p(prefix + "wv");
  v.bv = p(prefix + "bv");
  v.wo = p(prefix + "wo");
  v.bo = p(prefix + "bo");
  v.ff1_w = p(prefix + "ff1_w");
  v.ff1_b = p(prefix + "ff1_b");
  v.ff2_w = p(prefix + "ff2_w");
  v.ff2_b = p(prefix + "ff2_b");
  v.ln1_g = p(prefix + "ln1_g");
  v.ln1_b = p(prefix + "ln1_b");
  v.ln2_g = p(prefix + "ln2_g");
  v.ln2_b = p(prefix + "ln2_b");
  return v;
}

}  // namespace detail

/// Speech encoder: conv1d(1 -> N, kernel L, stride L/2, valid) + ReLU.
/// x is [1, T]; returns X[N, T_x].
inline Var speech_encode(Tape<double>& t, Var x, const BoundParams& p) {
  const auto& xv = t.value(x);
  if (xv.rank() != 2 || xv.shape[0] != 1) {
    throw std::invalid_argument("speech_encode: expect x[1, T]");
  }
  p.cfg->frames_for(xv.shape[1]);  // validates minimum length
  return relu(t, conv1d(t, x, p("enc.w"), p.cfg->hop(), PadMode::kValid));
}

/// EEG encoder: linear C -> N, sinusoidal PE, P_r self-attention layers.
/// eeg is [C, T_r] (preprocessed, 128 Hz); returns A^r[N, T_r]. With
/// causal=true the attention is masked so frame j sees only frames <= j,
/// which makes prefix evaluation bitwise-stable under future extension.
inline Var eeg_encode(Tape<double>& t, Var eeg, const BoundParams& p,
                      bool causal) {
  const auto& ev = t.value(eeg);
  if (ev.rank() != 2 || ev.shape[0] != p.cfg->C) {
    throw std::invalid_argument("eeg_encode: expect eeg[C, T_r] with C = " +
                                std::to_string(p.cfg->C));
  }
  std::size_t T_r = ev.shape[1];
  Var h = add_rowvec(t, matmul(t, transpose(t, eeg), p("eeg.in_w")),
                     p("eeg.in_b"));
  Var pe = t.leaf(sinusoidal_positional_encoding<double>(T_r, p.cfg->N), false);
  h = add(t, h, pe);
  for (std::size_t i = 0; i < p.cfg->P_r; ++i) {
    h = self_attention_layer(
        t, h, detail::sa_vars(p, "eeg.sa" + std::to_string(i) + "."), causal);
  }
  return transpose(t, h);
}

/// Convenience overload for recordings; refuses raw (unpreprocessed) EEG.
inline Var eeg_encode(Tape<double>& t, const EEGRecording& eeg,
                      const BoundParams& p, bool causal) {
  if (!eeg.preprocessed) {
    throw std::invalid_argument(
        "eeg_encode: recording must be preprocessed (re-referenced, "
        "band-passed, decimated to 128 Hz)");
  }
  return eeg_encode(t, t.leaf(eeg.channels, false), p, causal);
}

// ---------------------------------------------------------------------------
// Speaker encoder (shared speech encoder -> 3 ResNet blocks -> LSTM -> head)
// ---------------------------------------------------------------------------

/// Inference-time carry for incremental self-enrollment. All processing is
/// strictly causal, so feeding audio chunk-by-chunk with this state is
/// bitwise identical to one pass over the concatenation.
struct SpeakerEncState {
  struct Block {
    Tensor<double> ctx1, ctx2;  // [N, 2] left context of each kernel-3 conv
    CumNormCarry<double> cn1, cn2;
    Tensor<double> pending;  // [N, 0 or 1] frame awaiting a pool partner
  };
  std::vector<Block> blocks;
  Tensor<double> h, c;              // LSTM state [1, H]
  std::vector<double> audio_tail;   // trailing samples < one full frame step
  std::size_t frames_seen = 0;      // LSTM steps taken so far
  bool initialized = false;
};

inline SpeakerEncState make_speaker_state(const ModelConfig& c) {
  SpeakerEncState s;
  s.blocks.resize(c.spk_blocks);
  for (auto& b : s.blocks) {
    b.ctx1 = Tensor<double>::zeros({c.N, 2});
    b.ctx2 = Tensor<double>::zeros({c.N, 2});
    b.pending = Tensor<double>::zeros({c.N, 0});
  }
  s.h = Tensor<double>::zeros({1, c.spk_lstm_hidden});
  s.c = Tensor<double>::zeros({1, c.spk_lstm_hidden});
  s.initialized = true;
  return s;
}

namespace detail {

/// Concatenate a value context [C, W] in front of x[C, T] along time.
inline Var prepend_cols(Tape<double>& t, const Tensor<double>& ctx, Var x) {
  if (ctx.shape[1] == 0) return x;
  Var c = t.leaf(ctx, false);
  return transpose(t, concat_rows(t, {transpose(t, c), transpose(t, x)}));
}

}  // namespace detail

/// Self-enrollment from past extracted speech. `past` is [1, T] audio; with a
/// carried state only the new chunk is supplied. Returns a^s (shape [N]).
/// Carried mode is inference-only (the training path always re-runs whole).
inline Var speaker_encode(Tape<double>& t, Var past, const BoundParams& p,
                          SpeakerEncState* state = nullptr) {
  const ModelConfig& c = *p.cfg;
  if (!c.speaker_encoder_enabled) {
    throw std::logic_error("speaker_encode: disabled in config");
  }
  if (state && !state->initialized) {
    throw std::invalid_argument("speaker_encode: uninitialized state");
  }
  const auto& pv = t.value(past);
  if (pv.rank() != 2 || pv.shape[0] != 1) {
    throw std::invalid_argument("speaker_encode: expect past[1, T]");
  }

  // Assemble audio = carried tail + new chunk.
  std::vector<double> audio;
  if (state) audio = state->audio_tail;
  audio.insert(audio.end(), pv.data.begin(), pv.data.end());
  bool fresh = !state || state->frames_seen == 0;
  if (audio.size() < c.L && fresh) {
    throw std::invalid_argument(
        "speaker_encode: need at least " + std::to_string(c.L) +
        " samples (one encoder frame) of past audio");
  }

  SpeakerEncState scratch = state ? *state : make_speaker_state(c);
  std::size_t n_frames =
      audio.size() >= c.L ? (audio.size() - c.L) / c.hop() + 1 : 0;
  scratch.audio_tail.assign(audio.begin() + n_frames * c.hop(), audio.end());

  Var h_var = t.leaf(scratch.h, false);
  Var c_var = t.leaf(scratch.c, false);
  if (n_frames > 0) {
    Var enc_in;
    if (t.needs_grad(past)) {
      // Gradients flow through the raw audio: no detached copies allowed,
      // which also rules out carried state (inference-only).
      if (state) {
        throw std::logic_error("speaker_encode: carry is inference-only");
      }
      enc_in = past;
    } else {
      Tensor<double> block = Tensor<double>::zeros({1, audio.size()});
      block.data = audio;
      enc_in = t.leaf(block, false);
    }
    Var y = relu(t, conv1d(t, enc_in, p("enc.w"), c.hop(), PadMode::kValid));
    for (std::size_t r = 0; r < c.spk_blocks; ++r) {
      std::string pref = "spk.res" + std::to_string(r) + ".";
      auto& bs = scratch.blocks[r];
      // conv1 (causal kernel 3 via explicit left context).
      Var xin = y;
      Var ext1 = detail::prepend_cols(t, bs.ctx1, xin);
      Var c1 = add_colvec(
          t, conv1d(t, ext1, p(pref + "w1"), 1, PadMode::kValid),
          p(pref + "b1"));
      {  // update ctx1 from the (possibly context-extended) input
        const auto& xe = t.value(ext1);
        std::size_t T = xe.shape[1];
        Tensor<double> nc = Tensor<double>::zeros({c.N, 2});
        for (std::size_t ch = 0; ch < c.N; ++ch)
          for (std::size_t k = 0; k < 2; ++k)
            nc.at(ch, k) = xe.at(ch, T - 2 + k);
        bs.ctx1 = std::move(nc);
      }
      CumNormCarry<double> cn_out1;
      Var n1 = cum_layer_norm<double>(t, c1, p(pref + "cn1_g"),
                                      p(pref + "cn1_b"), 1e-5,
                                      state ? &bs.cn1 : nullptr, &cn_out1);
      bs.cn1 = cn_out1;
      Var a1 = prelu(t, n1, p(pref + "a1"));
      Var ext2 = detail::prepend_cols(t, bs.ctx2, a1);
      Var c2 = add_colvec(
          t, conv1d(t, ext2, p(pref + "w2"), 1, PadMode::kValid),
          p(pref + "b2"));
      {
        const auto& xe = t.value(ext2);
        std::size_t T = xe.shape[1];
        Tensor<double> nc = Tensor<double>::zeros({c.N, 2});
        for (std::size_t ch = 0; ch < c.N; ++ch)
          for (std::size_t k = 0; k < 2; ++k)
            nc.at(ch, k) = xe.at(ch, T - 2 + k);
        bs.ctx2 = std::move(nc);
      }
      CumNormCarry<double> cn_out2;
      Var n2 = cum_layer_norm<double>(t, c2, p(pref + "cn2_g"),
                                      p(pref + "cn2_b"), 1e-5,
                                      state ? &bs.cn2 : nullptr, &cn_out2);
      bs.cn2 = cn_out2;
      Var res = add(t, xin, prelu(t, n2, p(pref + "a2")));
      // Pool stride 2 with carried parity.
      Var pool_in = detail::prepend_cols(t, bs.pending, res);
      const auto& piv = t.value(pool_in);
      std::size_t Tp = piv.shape[1];
      std::size_t leftover = Tp % 2;
      Tensor<double> pend = Tensor<double>::zeros({c.N, leftover});
      if (leftover) {
        for (std::size_t ch = 0; ch < c.N; ++ch)
          pend.at(ch, 0) = piv.at(ch, Tp - 1);
      }
      bs.pending = std::move(pend);
      if (Tp < 2) {
        // Nothing poolable yet at this level; deeper levels see no frames.
        n_frames = 0;
        y = pool_in;  // unused
        break;
      }
      if (leftover) pool_in = slice_cols(t, pool_in, 0, Tp - 1);
      y = maxpool_cols(t, pool_in, 2);
      n_frames = t.value(y).shape[1];
    }
    if (n_frames > 0) {
      LstmVars w{p("spk.lstm.w_ih"), p("spk.lstm.w_hh"), p("spk.lstm.b")};
      LstmState st{h_var, c_var};
      Var yt = transpose(t, y);  // [F, N]
      for (std::size_t f = 0; f < n_frames; ++f) {
        st = lstm_step(t, slice_rows(t, yt, f, f + 1), st, w);
      }
      h_var = st.h;
      c_var = st.c;
      scratch.frames_seen += n_frames;
    }
  }
  scratch.h = t.value(h_var);
  scratch.c = t.value(c_var);
  if (scratch.frames_seen == 0) {
    throw std::invalid_argument(
        "speaker_encode: not enough past audio to produce one summary frame");
  }
  Var a_s = reshape(
      t, add_rowvec(t, matmul(t, h_var, p("spk.head_w")), p("spk.head_b")),
      {c.N});
  if (state) *state = std::move(scratch);
  return a_s;
}

// ---------------------------------------------------------------------------
// Extractor
// ---------------------------------------------------------------------------

/// Inference carry for the causal TCN path: depthwise-conv left contexts and
/// cumulative-norm statistics per block, so chunked evaluation matches a
/// single pass bitwise.
struct CausalTcnState {
  struct Block {
    Tensor<double> ctx;  // [H, (kernel-1)*dilation]
    CumNormCarry<double> cn1, cn2;
  };
  std::vector<Block> blocks;
  bool initialized = false;
};

inline CausalTcnState make_causal_tcn_state(const ModelConfig& c) {
  CausalTcnState s;
  s.blocks.resize(c.tcn_repeats * c.tcn_blocks);
  for (std::size_t i = 0; i < s.blocks.size(); ++i) {
    std::size_t d = std::size_t(1) << (i % c.tcn_blocks);
    s.blocks[i].ctx =
        Tensor<double>::zeros({c.tcn_channels, (c.tcn_kernel - 1) * d});
  }
  s.initialized = true;
  return s;
}

namespace detail {

inline Var dprnn_extract(Tape<double>& t, Var fused, const BoundParams& p) {
  const ModelConfig& c = *p.cfg;
  std::size_t Tx = t.value(fused).shape[0];
  std::size_t B = c.bottleneck, K = c.dprnn_chunk, hop = K / 2;
  std::size_t nC = Tx <= K ? 1 : (Tx - K + hop - 1) / hop + 1;
  // Segment into 50%-overlapping chunks; padded rows map to index -1 (zeros).
  // Layout is k-major: row k*nC + ch holds chunk ch, position k.
  std::vector<long> seg(K * nC, -1);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t ch = 0; ch < nC; ++ch) {
      std::size_t src = ch * hop + k;
      if (src < Tx) seg[k * nC + ch] = static_cast<long>(src);
    }
  }
  Var y = gather_rows(t, fused, seg);
  Tensor<double> zero_state = Tensor<double>::zeros({0, 0});

  auto bilstm_proj = [&](const std::string& pref, std::size_t steps,
                         std::size_t batch, auto slice_step) -> Var {
    LstmVars wf{p(pref + "fwd.w_ih"), p(pref + "fwd.w_hh"), p(pref + "fwd.b")};
    LstmVars wb{p(pref + "bwd.w_ih"), p(pref + "bwd.w_hh"), p(pref + "bwd.b")};
    std::size_t H = c.dprnn_hidden;
    Var zs = t.leaf(Tensor<double>::zeros({batch, H}), false);
    std::vector<Var> hf(steps), hb(steps);
    LstmState sf{zs, zs};
    for (std::size_t s = 0; s < steps; ++s) {
      sf = lstm_step(t, slice_step(s), sf, wf);
      hf[s] = sf.h;
    }
    LstmState sb{zs, zs};
    for (std::size_t s = steps; s-- > 0;) {
      sb = lstm_step(t, slice_step(s), sb, wb);
      hb[s] = sb.h;
    }
    std::vector<Var> outs(steps);
    for (std::size_t s = 0; s < steps; ++s) {
      Var cc = transpose(
          t, concat_rows(t, {transpose(t, hf[s]), transpose(t, hb[s])}));
      outs[s] = add_rowvec(t, matmul(t, cc, p(pref + "proj_w")),
                           p(pref + "proj_b"));
    }
    return concat_rows(t, outs);  // step-major [steps*batch, B]
  };

  for (std::size_t i = 0; i < c.dprnn_blocks; ++i) {
    std::string base = "ext.b" + std::to_string(i) + ".";
    {  // intra: sequence over within-chunk position k, batch = chunks.
      auto slice_step = [&](std::size_t k) {
        return slice_rows(t, y, k * nC, (k + 1) * nC);
      };
      Var z = bilstm_proj(base + "intra.", K, nC, slice_step);
      y = layer_norm_rows(t, add(t, y, z), p(base + "intra.ln_g"),
                          p(base + "intra.ln_b"));
    }
    {  // inter: sequence over chunk index, batch = within-chunk positions.
      auto slice_step = [&](std::size_t ch) {
        std::vector<long> idx(K);
        for (std::size_t k = 0; k < K; ++k)
          idx[k] = static_cast<long>(k * nC + ch);
        return gather_rows(t, y, idx);
      };
      Var z_cmaj = bilstm_proj(base + "inter.", nC, K, slice_step);
      // Back from c-major step output to the k-major chunk layout.
      std::vector<long> to_kmajor(K * nC);
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t ch = 0; ch < nC; ++ch)
          to_kmajor[k * nC + ch] = static_cast<long>(ch * K + k);
      Var z = gather_rows(t, z_cmaj, to_kmajor);
      y = layer_norm_rows(t, add(t, y, z), p(base + "inter.ln_g"),
                          p(base + "inter.ln_b"));
    }
  }
  // Overlap-add merge back to [Tx, B], averaging overlapped coverage.
  Var merged = scatter_rows(t, y, seg, Tx);
  Tensor<double> invcov = Tensor<double>::zeros({Tx, B});
  {
    std::vector<double> cov(Tx, 0.0);
    for (long s : seg) {
      if (s >= 0) cov[static_cast<std::size_t>(s)] += 1.0;
    }
    for (std::size_t r = 0; r < Tx; ++r)
      for (std::size_t ccol = 0; ccol < B; ++ccol)
        invcov.at(r, ccol) = 1.0 / cov[r];
  }
  return mul(t, merged, t.leaf(invcov, false));
}

inline Var tcn_extract(Tape<double>& t, Var X, Var ar, Var as_rep,
                       const BoundParams& p, CausalTcnState* state) {
  const ModelConfig& c = *p.cfg;
  bool causal = c.causal();
  if (state && !causal) {
    throw std::logic_error("extract: state carry requires causal_tcn");
  }
  if (state && !state->initialized) {
    throw std::invalid_argument("extract: uninitialized causal state");
  }
  Var y = X;  // [N or B, Tx] channel-major
  for (std::size_t i = 0; i < c.tcn_repeats * c.tcn_blocks; ++i) {
    std::string pref = "ext.b" + std::to_string(i) + ".";
    std::size_t d = std::size_t(1) << (i % c.tcn_blocks);
    Var fin = concat_rows(t, {y, ar, as_rep});
    Var res = linear_cols(t, fin, p(pref + "fuse_w"), p(pref + "fuse_b"));
    Var z = linear_cols(t, res, p(pref + "in_w"), p(pref + "in_b"));
    z = prelu(t, z, p(pref + "a1"));
    CumNormCarry<double> cn1_out;
    if (causal) {
      z = cum_layer_norm<double>(t, z, p(pref + "n1_g"), p(pref + "n1_b"),
                                 1e-5, state ? &state->blocks[i].cn1 : nullptr,
                                 &cn1_out);
      if (state) state->blocks[i].cn1 = cn1_out;
    } else {
      z = global_layer_norm(t, z, p(pref + "n1_g"), p(pref + "n1_b"));
    }
    if (causal && state) {
      const Tensor<double>& ctx = state->blocks[i].ctx;
      Var ext = prepend_cols(t, ctx, z);
      {  // refresh context with the trailing frames of the extended input
        const auto& zv = t.value(ext);
        std::size_t W = ctx.shape[1], T = zv.shape[1];
        Tensor<double> nc = Tensor<double>::zeros({c.tcn_channels, W});
        for (std::size_t chn = 0; chn < c.tcn_channels; ++chn)
          for (std::size_t k = 0; k < W; ++k)
            nc.at(chn, k) = zv.at(chn, T - W + k);
        state->blocks[i].ctx = std::move(nc);
      }
      z = conv1d_depthwise(t, ext, p(pref + "dw_w"), 1, PadMode::kValid, d);
    } else {
      z = conv1d_depthwise(t, z, p(pref + "dw_w"), 1,
                           causal ? PadMode::kCausal : PadMode::kSame, d);
    }
    z = prelu(t, z, p(pref + "a2"));
    CumNormCarry<double> cn2_out;
    if (causal) {
      z = cum_layer_norm<double>(t, z, p(pref + "n2_g"), p(pref + "n2_b"),
                                 1e-5, state ? &state->blocks[i].cn2 : nullptr,
                                 &cn2_out);
      if (state) state->blocks[i].cn2 = cn2_out;
    } else {
      z = global_layer_norm(t, z, p(pref + "n2_g"), p(pref + "n2_b"));
    }
    z = linear_cols(t, z, p(pref + "out_w"), p(pref + "out_b"));
    y = add(t, res, z);
  }
  return y;
}

}  // namespace detail

/// Mask estimation. X is [N, Tx]; `ar_aligned` is A^r already aligned to Tx
/// columns; `a_s` is the auditory attractor or absent (absent == zeros, the
/// documented sentinel). Returns mask M[N, Tx] (nonnegative, final ReLU).
/// `state` carries causal-TCN streaming context (inference only).
inline Var extract(Tape<double>& t, Var X, Var ar_aligned,
                   std::optional<Var> a_s, const BoundParams& p,
                   CausalTcnState* state = nullptr) {
  const ModelConfig& c = *p.cfg;
  const auto& xv = t.value(X);
  std::size_t Tx = xv.shape[1];
  if (xv.shape[0] != c.N || t.value(ar_aligned).shape !=
                                std::vector<std::size_t>{c.N, Tx}) {
    throw std::invalid_argument("extract: embedding/attractor shape mismatch");
  }
  Var as_vec = a_s ? *a_s : t.leaf(Tensor<double>::zeros({c.N}), false);
  if (t.value(as_vec).shape != std::vector<std::size_t>{c.N}) {
    throw std::invalid_argument("extract: a^s must have dim N");
  }
  Var as_rep = repeat_col(t, as_vec, Tx);
  Var h;
  if (c.extractor == ExtractorKind::kDprnn) {
    if (state) throw std::logic_error("extract: state carry requires causal_tcn");
    Var fin = concat_rows(t, {X, ar_aligned, as_rep});
    Var fused = add_rowvec(t, matmul(t, transpose(t, fin), p("ext.fuse_w")),
                           p("ext.fuse_b"));  // [Tx, B]
    h = transpose(t, detail::dprnn_extract(t, fused, p));
  } else {
    h = detail::tcn_extract(t, X, ar_aligned, as_rep, p, state);
  }
  return relu(t, detail::linear_cols(t, h, p("ext.mask_w"), p("ext.mask_b")));
}

/// Decoder: linear N -> L per frame, then overlap-add with hop L/2.
/// Returns the waveform [T_out] with T_out = (Tx - 1) * L/2 + L.
inline Var speech_decode(Tape<double>& t, Var S, const BoundParams& p) {
  const auto& sv = t.value(S);
  if (sv.rank() != 2 || sv.shape[0] != p.cfg->N || sv.shape[1] == 0) {
    throw std::invalid_argument("speech_decode: expect S[N, Tx], Tx >= 1");
  }
  Var frames = add_rowvec(t, matmul(t, transpose(t, S), p("dec.w")),
                          p("dec.b"));
  return overlap_add(t, frames, p.cfg->hop());
}

// ---------------------------------------------------------------------------
// Attractor alignment
// ---------------------------------------------------------------------------

/// Endpoint-preserving interpolation map (offline / windowed evaluation):
/// both streams are assumed to span the same interval.
inline LerpMap offline_attractor_map(std::size_t t_r, std::size_t t_x) {
  return stretch_lerp_map(t_r, t_x);
}

/// Causal alignment on the absolute time axis. Audio frame g (global encoder
/// frame index; the window's first frame is `frame_begin`) starts at sample
/// g*hop, i.e. at EEG-frame position p = g*hop/(audio_rate/eeg_rate). The
/// frame blends EEG frames j-2 and j-1 (j = floor(p)) so that every needed
/// frame is already recorded when the audio frame becomes available; the
/// fixed two-frame delay (<= 15.6 ms) keeps streaming and offline runs on the
/// identical map.
inline LerpMap causal_attractor_map(const ModelConfig& c,
                                    std::size_t frame_begin,
                                    std::size_t n_frames,
                                    std::size_t t_r_avail) {
  double spf = c.audio_rate / c.eeg_rate;  // audio samples per EEG frame
  LerpMap m;
  m.i0.resize(n_frames);
  m.i1.resize(n_frames);
  m.w.resize(n_frames);
  for (std::size_t f = 0; f < n_frames; ++f) {
    double p = static_cast<double>((frame_begin + f) * c.hop()) / spf;
    long j = static_cast<long>(std::floor(p));
    long a = j - 2, b = j - 1;
    if (a < 0) a = 0;
    if (b < 0) b = 0;
    if (b >= static_cast<long>(t_r_avail)) {
      throw std::invalid_argument("causal_attractor_map: EEG not yet available");
    }
    if (a >= static_cast<long>(t_r_avail)) a = b;
    m.i0[f] = static_cast<std::size_t>(a);
    m.i1[f] = static_cast<std::size_t>(b);
    m.w[f] = p - static_cast<double>(j);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Full passes
// ---------------------------------------------------------------------------

/// Utterance-level forward (speaker encoder excluded; a^s = zeros sentinel).
/// x is [1, T] audio, eeg is [C, T_r] preprocessed EEG.
inline Var forward_offline(Tape<double>& t, Var x, Var eeg,
                           const BoundParams& p) {
  const ModelConfig& c = *p.cfg;
  Var X = speech_encode(t, x, p);
  std::size_t Tx = t.value(X).shape[1];
  Var ar = eeg_encode(t, eeg, p, c.causal());
  std::size_t Tr = t.value(ar).shape[1];
  LerpMap map = c.causal() ? causal_attractor_map(c, 0, Tx, Tr)
                           : offline_attractor_map(Tr, Tx);
  Var ar_x = gather_lerp_cols(t, ar, map);
  Var M = extract(t, X, ar_x, std::nullopt, p);
  return speech_decode(t, mul(t, X, M), p);
}

/// Window-level forward used by the online engine. `a_s` comes from
/// self-enrollment (or absent when the speaker encoder is off). For the
/// windowed extractors the EEG covers the window; for causal_tcn the caller
/// supplies the full EEG prefix plus `frame_begin`/`state` (see streaming).
inline Var forward_window(Tape<double>& t, Var x_win, Var eeg,
                          std::optional<Var> a_s, const BoundParams& p,
                          std::size_t frame_begin = 0,
                          CausalTcnState* state = nullptr) {
  const ModelConfig& c = *p.cfg;
  Var X = speech_encode(t, x_win, p);
  std::size_t Tx = t.value(X).shape[1];
  Var ar = eeg_encode(t, eeg, p, c.causal());
  std::size_t Tr = t.value(ar).shape[1];
  LerpMap map = c.causal() ? causal_attractor_map(c, frame_begin, Tx, Tr)
                           : offline_attractor_map(Tr, Tx);
  Var ar_x = gather_lerp_cols(t, ar, map);
  Var M = extract(t, X, ar_x, a_s, p, state);
  return speech_decode(t, mul(t, X, M), p);
}

}  // namespace neuroheed
