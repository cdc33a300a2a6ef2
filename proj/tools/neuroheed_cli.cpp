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

// Operator entry points: synth, train, infer, eval, verify.
// Exit codes: 0 success, 1 usage error, 2 verification failure, 3 data error.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <zlib.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "neuroheed/checkpoint.hpp"
#include "neuroheed/eval.hpp"
#include "neuroheed/streaming.hpp"
#include "neuroheed/training.hpp"
#include "neuroheed/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace neuroheed;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kVerifyFail = 2;
constexpr int kDataError = 3;

// ---------------------------------------------------------------------------
// Configuration resolution: file < environment < command-line flags.
// The fully resolved tree is snapshotted into every run directory.
// ---------------------------------------------------------------------------

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file: " + path);
  json j;
  f >> j;
  if (!j.is_object()) {
    throw std::runtime_error("config file must hold a JSON object: " + path);
  }
  return j;
}

void apply_env(json& cfg) {
  if (const char* s = std::getenv("NEUROHEED_SEED")) {
    cfg["seed"] = std::stoull(s);
  }
  if (const char* s = std::getenv("NEUROHEED_THREADS")) {
    cfg["threads"] = std::stoull(s);
  }
}

template <typename T>
void maybe(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

ModelConfig model_from_section(const json& cfg) {
  ModelConfig c;
  if (!cfg.contains("model")) return c;
  const json& j = cfg.at("model");
  maybe(j, "N", c.N);
  maybe(j, "L", c.L);
  maybe(j, "C", c.C);
  maybe(j, "P_r", c.P_r);
  if (j.contains("extractor")) {
    c.extractor = extractor_from_name(j.at("extractor").get<std::string>());
  }
  maybe(j, "speaker_encoder_enabled", c.speaker_encoder_enabled);
  maybe(j, "bottleneck", c.bottleneck);
  maybe(j, "dprnn_blocks", c.dprnn_blocks);
  maybe(j, "dprnn_hidden", c.dprnn_hidden);
  maybe(j, "dprnn_chunk", c.dprnn_chunk);
  maybe(j, "tcn_repeats", c.tcn_repeats);
  maybe(j, "tcn_blocks", c.tcn_blocks);
  maybe(j, "tcn_channels", c.tcn_channels);
  maybe(j, "tcn_kernel", c.tcn_kernel);
  maybe(j, "spk_blocks", c.spk_blocks);
  maybe(j, "spk_lstm_hidden", c.spk_lstm_hidden);
  c.validate();
  return c;
}

TrainConfig train_from_section(const json& cfg) {
  TrainConfig t;
  if (!cfg.contains("train")) return t;
  const json& j = cfg.at("train");
  maybe(j, "lr_scale", t.lr_scale);
  maybe(j, "d_model", t.d_model);
  maybe(j, "warmup_n", t.warmup_n);
  maybe(j, "plateau_patience", t.plateau_patience);
  maybe(j, "plateau_factor", t.plateau_factor);
  maybe(j, "early_stop_patience", t.early_stop_patience);
  maybe(j, "batch_size", t.batch_size);
  maybe(j, "dropout_p", t.dropout_p);
  maybe(j, "augmentation", t.augmentation);
  maybe(j, "augment_snr_lo", t.augment_snr_lo);
  maybe(j, "augment_snr_hi", t.augment_snr_hi);
  maybe(j, "chunk_choices_s", t.chunk_choices_s);
  maybe(j, "buffer_lo_s", t.buffer_lo_s);
  maybe(j, "buffer_hi_s", t.buffer_hi_s);
  maybe(j, "windows_per_epoch", t.windows_per_epoch);
  maybe(j, "loss_clamp_db", t.loss_clamp_db);
  return t;
}

CorpusConfig corpus_from_section(const json& cfg) {
  CorpusConfig c;
  if (!cfg.contains("corpus")) return c;
  const json& j = cfg.at("corpus");
  maybe(j, "n_train", c.n_train);
  maybe(j, "n_val", c.n_val);
  maybe(j, "n_test", c.n_test);
  maybe(j, "train_len_lo", c.train_len_lo);
  maybe(j, "train_len_hi", c.train_len_hi);
  maybe(j, "test_len_lo", c.test_len_lo);
  maybe(j, "test_len_hi", c.test_len_hi);
  maybe(j, "base_snr_db", c.base_snr_db);
  maybe(j, "tilt_speaker0", c.tilt_speaker0);
  maybe(j, "tilt_speaker1", c.tilt_speaker1);
  maybe(j, "stimuli_per_speaker", c.stimuli_per_speaker);
  maybe(j, "stimulus_len_s", c.stimulus_len_s);
  if (j.contains("eeg")) {
    const json& e = j.at("eeg");
    maybe(e, "attended_gain", c.eeg.attended_gain);
    maybe(e, "distractor_gain", c.eeg.distractor_gain);
    maybe(e, "noise_gain", c.eeg.noise_gain);
    maybe(e, "lag_lo_s", c.eeg.lag_lo_s);
    maybe(e, "lag_hi_s", c.eeg.lag_hi_s);
    maybe(e, "channels", c.eeg.channels);
  }
  return c;
}

json corpus_to_section(const CorpusConfig& c) {
  return {{"n_train", c.n_train},
          {"n_val", c.n_val},
          {"n_test", c.n_test},
          {"train_len_lo", c.train_len_lo},
          {"train_len_hi", c.train_len_hi},
          {"test_len_lo", c.test_len_lo},
          {"test_len_hi", c.test_len_hi},
          {"base_snr_db", c.base_snr_db},
          {"tilt_speaker0", c.tilt_speaker0},
          {"tilt_speaker1", c.tilt_speaker1},
          {"stimuli_per_speaker", c.stimuli_per_speaker},
          {"stimulus_len_s", c.stimulus_len_s},
          {"eeg",
           {{"attended_gain", c.eeg.attended_gain},
            {"distractor_gain", c.eeg.distractor_gain},
            {"noise_gain", c.eeg.noise_gain},
            {"lag_lo_s", c.eeg.lag_lo_s},
            {"lag_hi_s", c.eeg.lag_hi_s},
            {"channels", c.eeg.channels}}},
          {"seed", c.seed}};
}

json train_to_section(const TrainConfig& t) {
  return {{"lr_scale", t.lr_scale},
          {"d_model", t.d_model},
          {"warmup_n", t.warmup_n},
          {"plateau_patience", t.plateau_patience},
          {"plateau_factor", t.plateau_factor},
          {"early_stop_patience", t.early_stop_patience},
          {"batch_size", t.batch_size},
          {"dropout_p", t.dropout_p},
          {"augmentation", t.augmentation},
          {"augment_snr_lo", t.augment_snr_lo},
          {"augment_snr_hi", t.augment_snr_hi},
          {"chunk_choices_s", t.chunk_choices_s},
          {"buffer_lo_s", t.buffer_lo_s},
          {"buffer_hi_s", t.buffer_hi_s},
          {"windows_per_epoch", t.windows_per_epoch},
          {"loss_clamp_db", t.loss_clamp_db},
          {"seed", t.seed}};
}

std::string fingerprint(const json& j) {
  std::string s = j.dump();
  std::uint32_t crc = static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(s.data()),
              static_cast<uInt>(s.size())));
  char buf[9];
  std::snprintf(buf, sizeof(buf), "%08x", crc);
  return buf;
}

void write_snapshot(const fs::path& dir, const json& resolved) {
  fs::create_directories(dir);
  std::ofstream f(dir / "config_snapshot.json");
  if (!f) {
    throw std::runtime_error("cannot write config snapshot in " +
                             dir.string());
  }
  f << resolved.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// 16-bit PCM WAV export
// ---------------------------------------------------------------------------

void write_wav16(const std::string& path, const std::vector<double>& samples,
                 double rate) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  auto u32 = [&](std::uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), 4);
  };
  auto u16 = [&](std::uint16_t v) {
    f.write(reinterpret_cast<const char*>(&v), 2);
  };
  std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  std::uint32_t sr = static_cast<std::uint32_t>(std::llround(rate));
  f.write("RIFF", 4);
  u32(36 + data_bytes);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  u32(16);
  u16(1);  // PCM
  u16(1);  // mono
  u32(sr);
  u32(sr * 2);  // byte rate
  u16(2);       // block align
  u16(16);      // bits per sample
  f.write("data", 4);
  u32(data_bytes);
  for (double v : samples) {
    double c = std::clamp(v, -1.0, 32767.0 / 32768.0);
    u16(static_cast<std::uint16_t>(
        static_cast<std::int16_t>(std::lround(c * 32768.0))));
  }
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

std::vector<MixtureExample> load_split(const std::string& corpus_root,
                                       const Manifest& manifest,
                                       const std::string& split,
                                       std::size_t max_examples) {
  std::vector<MixtureExample> out;
  for (const auto& rec : manifest.split(split)) {
    if (max_examples > 0 && out.size() >= max_examples) break;
    out.push_back(load_example(corpus_root, rec));
  }
  if (out.empty()) {
    throw std::runtime_error("no examples in split '" + split + "'");
  }
  return out;
}

std::vector<double> infer_offline(const MixtureExample& ex,
                                  const ModelParams& params) {
  Tape<double> t(false);
  BoundParams bp = bind_params(t, params, false);
  Tensor<double> x = Tensor<double>::zeros({1, ex.mixture.samples.size()});
  x.data = ex.mixture.samples;
  Var out = forward_offline(t, t.leaf(std::move(x), false),
                            t.leaf(ex.eeg.channels, false), bp);
  return t.value(out).data;
}

std::vector<double> truncated(const std::vector<double>& v, std::size_t n) {
  return std::vector<double>(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(
                                            std::min(n, v.size())));
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_synth(const json& resolved, const std::string& out_dir, bool force) {
  CorpusConfig cfg = corpus_from_section(resolved);
  cfg.seed = resolved.value("seed", cfg.seed);
  fs::path root(out_dir);
  if (fs::exists(root) && !fs::is_empty(root) && !force) {
    std::cerr << "error: output directory " << out_dir
              << " is not empty (use --force to overwrite)\n";
    return kDataError;
  }
  fs::create_directories(root);
  Manifest m = build_corpus(cfg, out_dir);
  write_snapshot(root, resolved);
  std::cout << "corpus: " << m.records.size() << " examples\n"
            << "manifest: " << (root / "manifest.jsonl").string() << "\n";
  return kOk;
}

int cmd_train(const json& resolved, const std::string& corpus_root,
              const std::string& out_dir, const std::string& mode,
              const std::string& warm_start, const std::string& resume,
              std::size_t epochs, std::size_t max_examples) {
  bool online = mode == "online";
  ModelConfig mc = model_from_section(resolved);
  mc.speaker_encoder_enabled = online;

  Manifest manifest = load_manifest(
      (fs::path(corpus_root) / "manifest.jsonl").string());
  auto train_set = load_split(corpus_root, manifest, "train", max_examples);
  auto val_set = load_split(corpus_root, manifest, "val", max_examples);

  TrainOptions opt;
  opt.train = train_from_section(resolved);
  opt.train.seed = resolved.value("seed", opt.train.seed);
  opt.online = online;
  opt.epochs = epochs;

  ModelParams params = init_params(mc, opt.train.seed);
  if (!warm_start.empty()) {
    ModelParams from = load_checkpoint(warm_start);
    if (from.config.extractor != mc.extractor) {
      std::cerr << "error: warm-start checkpoint uses extractor '"
                << extractor_name(from.config.extractor)
                << "' but this run uses '" << extractor_name(mc.extractor)
                << "'\n";
      return kDataError;
    }
    std::vector<std::string> mismatched;
    std::size_t copied = 0;
    for (std::size_t i = 0; i < from.names.size(); ++i) {
      auto it = std::find(params.names.begin(), params.names.end(),
                          from.names[i]);
      if (it == params.names.end()) continue;
      std::size_t k =
          static_cast<std::size_t>(it - params.names.begin());
      if (params.tensors[k].shape != from.tensors[i].shape) {
        mismatched.push_back(from.names[i]);
        continue;
      }
      params.tensors[k] = from.tensors[i];
      ++copied;
    }
    if (!mismatched.empty()) {
      std::cerr << "error: warm-start checkpoint incompatible; mismatched "
                   "tensors:";
      for (const auto& n : mismatched) std::cerr << " " << n;
      std::cerr << "\n";
      return kDataError;
    }
    std::cout << "warm start: copied " << copied << " tensors from "
              << warm_start << "\n";
  }
  if (!resume.empty()) {
    json meta;
    ModelParams from = load_checkpoint(resume, &meta);
    if (from.config.extractor != mc.extractor ||
        from.names != params.names) {
      std::cerr << "error: resume checkpoint does not match this run's "
                   "configuration\n";
      return kDataError;
    }
    params = std::move(from);
    opt.start_step = meta.value("optimizer_steps", std::size_t{0});
    std::cout << "resuming from step " << opt.start_step << "\n";
  }

  TrainResult res = train_model(train_set, val_set, std::move(params), opt);

  fs::path out(out_dir);
  fs::create_directories(out);
  json meta = {{"mode", mode},
               {"optimizer_steps", res.optimizer_steps},
               {"best_val", res.best_val},
               {"early_stopped", res.early_stopped}};
  save_checkpoint((out / "best.nhck").string(), res.best_params, meta);
  save_checkpoint((out / "final.nhck").string(), res.final_params, meta);
  save_train_log((out / "train_log.jsonl").string(), res);
  write_snapshot(out, resolved);
  std::cout << "steps: " << res.optimizer_steps
            << "  best val loss: " << res.best_val
            << (res.early_stopped ? "  (early stop)" : "") << "\n"
            << "checkpoints: " << (out / "best.nhck").string() << ", "
            << (out / "final.nhck").string() << "\n";
  return kOk;
}

int cmd_infer(const json& resolved, const std::string& corpus_root,
              const std::string& checkpoint, const std::string& out_dir,
              const std::string& split, const std::string& mode,
              double wb, double wc, bool no_inf_norm, bool no_1s_init,
              bool no_speaker_encoder, bool wav, std::size_t max_examples) {
  ModelParams params = load_checkpoint(checkpoint);
  if (resolved.contains("model") &&
      resolved.at("model").contains("extractor")) {
    std::string want = resolved.at("model").at("extractor");
    if (want != extractor_name(params.config.extractor)) {
      std::cerr << "error: config requests extractor '" << want
                << "' but checkpoint " << checkpoint << " holds '"
                << extractor_name(params.config.extractor) << "'\n";
      return kUsage;
    }
  }
  Manifest manifest = load_manifest(
      (fs::path(corpus_root) / "manifest.jsonl").string());

  StreamConfig sc;
  sc.wb_s = wb;
  sc.wc_s = wc;
  sc.normalization = !no_inf_norm;
  sc.speaker_encoder = !no_speaker_encoder;
  sc.init_s = no_1s_init ? wc : 1.0;
  json run_cfg = resolved;
  run_cfg["infer"] = {{"mode", mode},        {"wb_s", sc.wb_s},
                      {"wc_s", sc.wc_s},     {"normalization", sc.normalization},
                      {"init_s", sc.init_s}, {"speaker_encoder",
                                              sc.speaker_encoder},
                      {"checkpoint", checkpoint}};
  std::string fp = fingerprint(run_cfg);
  fs::path dir = fs::path(out_dir) / (mode + "_" + fp);
  fs::create_directories(dir);
  write_snapshot(dir, run_cfg);

  std::vector<UtteranceResult> results;
  double audio_total = 0.0, wall_total = 0.0, max_lat = 0.0;
  std::vector<double> lats;
  std::size_t violations = 0;
  std::size_t done = 0;
  for (const auto& rec : manifest.split(split)) {
    if (max_examples > 0 && done >= max_examples) break;
    MixtureExample ex = load_example(corpus_root, rec);
    std::vector<double> est;
    if (mode == "offline") {
      est = infer_offline(ex, params);
    } else {
      if (ex.mixture.samples.size() < detail::to_samples(sc.init_s)) {
        continue;  // shorter than the initialization segment
      }
      StreamRunResult r = run_stream(ex, params, sc);
      est = std::move(r.output);
      audio_total += static_cast<double>(ex.mixture.samples.size() -
                                         r.leftover_samples) / 8000.0;
      for (double l : {r.report.max_latency_s}) max_lat = std::max(max_lat, l);
      wall_total += (static_cast<double>(ex.mixture.samples.size() -
                                         r.leftover_samples) / 8000.0) /
                    std::max(r.report.rtf, 1e-12);
      lats.push_back(r.report.p95_latency_s);
      violations += r.report.realtime_violations;
    }
    std::size_t n = est.size();
    results.push_back(evaluate_utterance(
        ex.id, truncated(ex.target.samples, n), est,
        truncated(ex.mixture.samples, n), truncated(ex.interferer.samples, n),
        8000.0, mode, fp));
    Tensor<double> t = Tensor<double>::zeros({n});
    t.data = est;
    save_array((dir / (ex.id + "_est.nha")).string(), t, 8000.0);
    if (wav) {
      write_wav16((dir / (ex.id + "_est.wav")).string(), est, 8000.0);
    }
    ++done;
  }
  if (results.empty()) {
    std::cerr << "error: no examples evaluated from split '" << split
              << "'\n";
    return kDataError;
  }
  std::optional<StreamSummary> ss;
  if (mode == "online") {
    StreamSummary s;
    s.rtf = audio_total / std::max(wall_total, 1e-12);
    s.max_latency_s = max_lat;
    std::sort(lats.begin(), lats.end());
    s.p95_latency_s = lats.empty() ? 0.0 : lats[lats.size() - 1];
    s.realtime_violations = violations;
    ss = s;
  }
  EvalReport report = make_report(std::move(results), ss);
  save_report((dir / "report.json").string(), report);
  std::cout << "utterances: " << report.aggregates.count
            << "  mean SI-SDRi: " << report.aggregates.mean_si_sdri
            << " dB  PPR: " << report.aggregates.ppr_percent << " %\n";
  if (ss) {
    std::cout << "RTF: " << ss->rtf << "  max latency: " << ss->max_latency_s
              << " s\n";
  }
  std::cout << "report: " << (dir / "report.json").string() << "\n";
  return kOk;
}

int cmd_eval(const std::string& report_path, const std::string& corpus_root,
             const std::string& estimates_dir, const std::string& split,
             const std::string& out_path) {
  EvalReport report;
  if (!report_path.empty()) {
    report = load_report(report_path);
  } else {
    Manifest manifest = load_manifest(
        (fs::path(corpus_root) / "manifest.jsonl").string());
    std::vector<UtteranceResult> results;
    for (const auto& rec : manifest.split(split)) {
      fs::path est_path = fs::path(estimates_dir) / (rec.id + "_est.nha");
      if (!fs::exists(est_path)) continue;
      MixtureExample ex = load_example(corpus_root, rec);
      Tensor<double> est = load_array(est_path.string());
      std::size_t n = est.size();
      results.push_back(evaluate_utterance(
          ex.id, truncated(ex.target.samples, n), est.data,
          truncated(ex.mixture.samples, n),
          truncated(ex.interferer.samples, n)));
    }
    if (results.empty()) {
      throw std::runtime_error("no estimates found in " + estimates_dir);
    }
    report = make_report(std::move(results));
  }
  std::cout << "utterances: " << report.aggregates.count << "\n"
            << "mean SI-SDRi: " << report.aggregates.mean_si_sdri
            << " dB (var " << report.aggregates.var_si_sdri << ", "
            << report.aggregates.infinite_count << " infinite excluded)\n"
            << "quartiles: " << report.aggregates.q25 << " / "
            << report.aggregates.q50 << " / " << report.aggregates.q75
            << " dB\n"
            << "mean sdr_plain improvement: "
            << report.aggregates.mean_sdri_plain << " dB\n"
            << "PPR: " << report.aggregates.ppr_percent << " %\n"
            << "note: " << report.note << "\n";
  for (const auto& b : report.buckets) {
    std::cout << "  length [" << b.lo_s << ", " << b.hi_s << ") s: "
              << b.mean_si_sdri << " dB over " << b.count << "\n";
  }
  if (!out_path.empty()) save_report(out_path, report);
  return kOk;
}

int cmd_verify(double inject_fault) {
  VerifyHooks hooks;
  hooks.streaming_fault = inject_fault;
  auto checks = run_verification(hooks, &std::cout);
  if (all_passed(checks)) {
    std::cout << "verification: all " << checks.size()
              << " properties passed\n";
    return kOk;
  }
  std::cerr << "verification FAILED:";
  for (const auto& c : checks) {
    if (!c.passed) std::cerr << " " << c.name;
  }
  std::cerr << "\n";
  return kVerifyFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EEG-steered target speaker extraction"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  app.add_option("--config", config_path, "JSON configuration file")
      ->each([](const std::string&) {});
  app.add_option("--seed", seed, "override the run seed")
      ->each([&](const std::string&) { seed_set = true; });

  // synth
  auto* synth = app.add_subcommand("synth", "build the synthetic corpus");
  std::string synth_out = "corpus";
  bool force = false;
  synth->add_option("--out", synth_out, "corpus output directory");
  synth->add_flag("--force", force, "overwrite a non-empty directory");

  // train
  auto* train = app.add_subcommand("train", "train a model");
  std::string train_corpus = "corpus", train_out = "run", train_mode =
      "offline", warm_start, resume;
  std::size_t epochs = 10, train_max = 0;
  train->add_option("--corpus", train_corpus, "corpus directory");
  train->add_option("--out", train_out, "run directory");
  train->add_option("--mode", train_mode, "offline or online")
      ->check(CLI::IsMember({"offline", "online"}));
  train->add_option("--warm-start", warm_start,
                    "offline checkpoint to initialize from (online mode)");
  train->add_option("--resume", resume,
                    "checkpoint to resume from (continues step numbering)");
  train->add_option("--epochs", epochs, "number of epochs");
  train->add_option("--max-examples", train_max,
                    "cap examples per split (0 = all)");

  // infer
  auto* infer = app.add_subcommand("infer", "run extraction + evaluation");
  std::string inf_corpus = "corpus", inf_ckpt, inf_out = "run",
              inf_split = "test", inf_mode = "offline";
  double wb = 2.5, wc = 0.1;
  bool no_inf_norm = false, no_1s_init = false, no_spk = false, wav = false;
  std::size_t inf_max = 0;
  infer->add_option("--corpus", inf_corpus, "corpus directory");
  infer->add_option("--checkpoint", inf_ckpt, "model checkpoint")->required();
  infer->add_option("--out", inf_out, "output directory");
  infer->add_option("--split", inf_split, "manifest split")
      ->check(CLI::IsMember({"train", "val", "test"}));
  infer->add_option("--mode", inf_mode, "offline or online")
      ->check(CLI::IsMember({"offline", "online"}));
  infer->add_option("--wb", wb, "streaming buffer length in seconds");
  infer->add_option("--wc", wc, "streaming chunk length in seconds");
  infer->add_flag("--no-inf-norm", no_inf_norm,
                  "disable inference normalization");
  infer->add_flag("--no-1s-init", no_1s_init,
                  "skip the 1 s initialization segment");
  infer->add_flag("--no-speaker-encoder", no_spk,
                  "disable the self-enrolled speaker encoder");
  infer->add_flag("--wav", wav, "also export 16-bit PCM WAV");
  infer->add_option("--max-examples", inf_max, "cap utterances (0 = all)");

  // eval
  auto* evalc = app.add_subcommand("eval", "summarize or recompute a report");
  std::string ev_report, ev_corpus = "corpus", ev_estimates, ev_split = "test",
              ev_out;
  evalc->add_option("--report", ev_report, "existing report to summarize");
  evalc->add_option("--corpus", ev_corpus, "corpus directory");
  evalc->add_option("--estimates", ev_estimates,
                    "directory of <id>_est.nha files");
  evalc->add_option("--split", ev_split, "manifest split");
  evalc->add_option("--out", ev_out, "write the recomputed report here");

  // verify
  auto* verify = app.add_subcommand("verify", "run the invariant battery");
  double inject_fault = 0.0;
  verify->add_option("--inject-fault", inject_fault,
                     "test hook: perturb streamed output by this amount")
      ->group("");  // hidden

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    json resolved = load_config_file(config_path);
    apply_env(resolved);
    if (seed_set) resolved["seed"] = seed;
    if (!resolved.contains("seed")) resolved["seed"] = 1;
    // Persist fully resolved sections so a snapshot alone reproduces the run.
    resolved["model"] = config_to_json(model_from_section(resolved));
    resolved["train"] = train_to_section(train_from_section(resolved));
    resolved["corpus"] = corpus_to_section(corpus_from_section(resolved));

    if (synth->parsed()) return cmd_synth(resolved, synth_out, force);
    if (train->parsed()) {
      return cmd_train(resolved, train_corpus, train_out, train_mode,
                       warm_start, resume, epochs, train_max);
    }
    if (infer->parsed()) {
      return cmd_infer(resolved, inf_corpus, inf_ckpt, inf_out, inf_split,
                       inf_mode, wb, wc, no_inf_norm, no_1s_init, no_spk, wav,
                       inf_max);
    }
    if (evalc->parsed()) {
      if (ev_report.empty() && ev_estimates.empty()) {
        std::cerr << "error: eval needs --report or --estimates\n";
        return kUsage;
      }
      return cmd_eval(ev_report, ev_corpus, ev_estimates, ev_split, ev_out);
    }
    if (verify->parsed()) return cmd_verify(inject_fault);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataError;
  }
  return kUsage;
}
