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

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "neuroheed/dsp.hpp"
#include "neuroheed/model.hpp"
#include "neuroheed/tensor.hpp"

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

namespace neuroheed {

// Self-describing raw-array file ("NHAR"): float32 payload with shape and
// sample-rate header plus a trailing CRC-32. Checkpoints ("NHCK") bundle a
// JSON config with named float32 tensors under one checksum.

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void f32(float v) { raw(&v, 4); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void raw(const void* p, std::size_t n) {
    const char* c = static_cast<const char*>(p);
    bytes.insert(bytes.end(), c, c + n);
  }
  std::vector<char> bytes;
};

class ByteReader {
 public:
  ByteReader(const std::vector<char>& b, std::size_t offset, std::string ctx)
      : bytes_(b), pos_(offset), ctx_(std::move(ctx)) {}
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  double f64() { return get<double>(); }
  float f32() { return get<float>(); }
  std::string str() {
    std::uint64_t n = u64();
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void raw(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }

 private:
  template <typename T>
  T get() {
    T v;
    raw(&v, sizeof(T));
    return v;
  }
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw std::runtime_error(ctx_ + ": truncated file");
    }
  }
  const std::vector<char>& bytes_;
  std::size_t pos_;
  std::string ctx_;
};

inline std::uint32_t crc_of(const std::vector<char>& b, std::size_t from,
                            std::size_t to) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(b.data() + from),
              static_cast<uInt>(to - from)));
}

inline void write_file(const std::string& path, const std::vector<char>& b) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(b.data(), static_cast<std::streamsize>(b.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

inline std::vector<char> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  f.seekg(0, std::ios::end);
  std::vector<char> b(static_cast<std::size_t>(f.tellg()));
  f.seekg(0);
  f.read(b.data(), static_cast<std::streamsize>(b.size()));
  if (!f) throw std::runtime_error("read failed: " + path);
  return b;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// NHAR arrays
// ---------------------------------------------------------------------------

inline void save_array(const std::string& path, const Tensor<double>& t,
                       double sample_rate) {
  detail::ByteWriter w;
  w.raw("NHAR", 4);
  w.u32(1);  // version
  w.f64(sample_rate);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape) w.u64(d);
  for (double v : t.data) w.f32(static_cast<float>(v));
  w.u32(detail::crc_of(w.bytes, 4, w.bytes.size()));
  detail::write_file(path, w.bytes);
}

inline Tensor<double> load_array(const std::string& path,
                                 double* sample_rate = nullptr) {
  auto bytes = detail::read_file(path);
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "NHAR", 4) != 0) {
    throw std::runtime_error(path + ": not an NHAR array file");
  }
  if (bytes.size() < 4 + 4) throw std::runtime_error(path + ": truncated file");
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  if (stored != detail::crc_of(bytes, 4, bytes.size() - 4)) {
    throw std::runtime_error(path + ": checksum mismatch");
  }
  detail::ByteReader r(bytes, 4, path);
  std::uint32_t version = r.u32();
  if (version != 1) {
    throw std::runtime_error(path + ": unsupported version " +
                             std::to_string(version));
  }
  double rate = r.f64();
  std::uint32_t rank = r.u32();
  std::vector<std::size_t> shape(rank);
  std::size_t n = 1;
  for (auto& d : shape) {
    d = static_cast<std::size_t>(r.u64());
    n *= d;
  }
  Tensor<double> t = Tensor<double>::zeros(shape);
  for (std::size_t i = 0; i < n; ++i) t.data[i] = r.f32();
  if (sample_rate) *sample_rate = rate;
  return t;
}

// ---------------------------------------------------------------------------
// ModelConfig JSON
// ---------------------------------------------------------------------------

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"N", c.N},
          {"L", c.L},
          {"C", c.C},
          {"P_r", c.P_r},
          {"extractor", extractor_name(c.extractor)},
          {"speaker_encoder_enabled", c.speaker_encoder_enabled},
          {"bottleneck", c.bottleneck},
          {"dprnn_blocks", c.dprnn_blocks},
          {"dprnn_hidden", c.dprnn_hidden},
          {"dprnn_chunk", c.dprnn_chunk},
          {"tcn_repeats", c.tcn_repeats},
          {"tcn_blocks", c.tcn_blocks},
          {"tcn_channels", c.tcn_channels},
          {"tcn_kernel", c.tcn_kernel},
          {"spk_blocks", c.spk_blocks},
          {"spk_lstm_hidden", c.spk_lstm_hidden},
          {"audio_rate", c.audio_rate},
          {"eeg_rate", c.eeg_rate}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.N = j.at("N");
  c.L = j.at("L");
  c.C = j.at("C");
  c.P_r = j.at("P_r");
  c.extractor = extractor_from_name(j.at("extractor"));
  c.speaker_encoder_enabled = j.at("speaker_encoder_enabled");
  c.bottleneck = j.at("bottleneck");
  c.dprnn_blocks = j.at("dprnn_blocks");
  c.dprnn_hidden = j.at("dprnn_hidden");
  c.dprnn_chunk = j.at("dprnn_chunk");
  c.tcn_repeats = j.at("tcn_repeats");
  c.tcn_blocks = j.at("tcn_blocks");
  c.tcn_channels = j.at("tcn_channels");
  c.tcn_kernel = j.at("tcn_kernel");
  c.spk_blocks = j.at("spk_blocks");
  c.spk_lstm_hidden = j.at("spk_lstm_hidden");
  c.audio_rate = j.at("audio_rate");
  c.eeg_rate = j.at("eeg_rate");
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// NHCK checkpoints
// ---------------------------------------------------------------------------

/// Writes params plus free-form metadata (training step, lr, ...).
inline void save_checkpoint(const std::string& path, const ModelParams& p,
                            const nlohmann::json& metadata = {}) {
  detail::ByteWriter w;
  w.raw("NHCK", 4);
  w.u32(1);
  nlohmann::json head = {{"config", config_to_json(p.config)},
                         {"metadata", metadata}};
  w.str(head.dump());
  w.u64(p.names.size());
  for (std::size_t i = 0; i < p.names.size(); ++i) {
    w.str(p.names[i]);
    const auto& t = p.tensors[i];
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape) w.u64(d);
    for (double v : t.data) w.f32(static_cast<float>(v));
  }
  w.u32(detail::crc_of(w.bytes, 4, w.bytes.size()));
  detail::write_file(path, w.bytes);
}

/// Loads and validates a checkpoint: every parameter expected by the stored
/// config must be present with the right shape. Any mismatch is reported with
/// the offending tensor names.
inline ModelParams load_checkpoint(const std::string& path,
                                   nlohmann::json* metadata = nullptr) {
  auto bytes = detail::read_file(path);
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "NHCK", 4) != 0) {
    throw std::runtime_error(path + ": not an NHCK checkpoint");
  }
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  if (stored != detail::crc_of(bytes, 4, bytes.size() - 4)) {
    throw std::runtime_error(path + ": checksum mismatch");
  }
  detail::ByteReader r(bytes, 4, path);
  std::uint32_t version = r.u32();
  if (version != 1) {
    throw std::runtime_error(path + ": unsupported version " +
                             std::to_string(version));
  }
  nlohmann::json head = nlohmann::json::parse(r.str());
  ModelParams p;
  p.config = config_from_json(head.at("config"));
  if (metadata) *metadata = head.value("metadata", nlohmann::json::object());
  std::uint64_t n = r.u64();
  std::vector<std::string> names;
  std::vector<Tensor<double>> tensors;
  for (std::uint64_t i = 0; i < n; ++i) {
    names.push_back(r.str());
    std::uint32_t rank = r.u32();
    std::vector<std::size_t> shape(rank);
    std::size_t sz = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(r.u64());
      sz *= d;
    }
    Tensor<double> t = Tensor<double>::zeros(shape);
    for (std::size_t k = 0; k < sz; ++k) t.data[k] = r.f32();
    tensors.push_back(std::move(t));
  }
  // Validate against the config's expected layout, reporting all mismatches.
  std::string problems;
  auto specs = param_specs(p.config);
  if (specs.size() != names.size()) {
    problems += "tensor count " + std::to_string(names.size()) + " != " +
                std::to_string(specs.size()) + "; ";
  }
  for (const auto& spec : specs) {
    bool found = false;
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == spec.name) {
        found = true;
        if (tensors[i].shape != spec.shape) {
          problems += spec.name + " shape " + tensors[i].shape_str() + "; ";
        }
        p.names.push_back(names[i]);
        p.tensors.push_back(tensors[i]);
        break;
      }
    }
    if (!found) problems += spec.name + " missing; ";
  }
  if (!problems.empty()) {
    throw std::runtime_error(path + ": incompatible checkpoint: " + problems);
  }
  return p;
}

}  // namespace neuroheed
