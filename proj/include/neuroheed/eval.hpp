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
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "neuroheed/training.hpp"

namespace neuroheed {

// Evaluation metrics and report emission.
//
// A deliberate simplification, surfaced in every report: the "sdr_plain"
// numbers are plain scale-sensitive SNR improvements, NOT BSS-eval SDRi
// (no allowed-distortion filter). They must not be compared against
// literature SDRi values.
//
// Degenerate metric values (perfect reconstruction -> +inf, orthogonal
// estimate -> -inf) are kept as IEEE infinities, excluded from every mean,
// and counted separately.

inline constexpr const char* kSdrPlainNote =
    "sdr_plain is a plain SNR improvement (10*log10(||s||^2/||e||^2)), "
    "not BSS-eval SDRi; do not compare against BSS-eval numbers";

/// si_sdr(s, s_hat) - si_sdr(s, x). Infinite components propagate as
/// sentinels (the output term dominates).
inline double si_sdri(const std::vector<double>& s,
                      const std::vector<double>& s_hat,
                      const std::vector<double>& x) {
  if (s.size() != s_hat.size() || s.size() != x.size()) {
    throw std::invalid_argument("si_sdri: length mismatch");
  }
  double out = si_sdr_db(s, s_hat);
  double in = si_sdr_db(s, x);
  if (!std::isfinite(out)) return out;
  if (!std::isfinite(in)) return in > 0 ? -std::numeric_limits<double>::infinity()
                                        : std::numeric_limits<double>::infinity();
  return out - in;
}

/// Scale-sensitive SNR in dB: 10*log10(||s||^2 / ||s_hat - s||^2).
inline double sdr_plain_db(const std::vector<double>& s,
                           const std::vector<double>& s_hat) {
  if (s.size() != s_hat.size()) {
    throw std::invalid_argument("sdr_plain_db: length mismatch");
  }
  double sig = 0.0, err = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    sig += s[i] * s[i];
    double e = s_hat[i] - s[i];
    err += e * e;
  }
  if (err == 0.0) return std::numeric_limits<double>::infinity();
  if (sig == 0.0) return -std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(sig / err);
}

/// SNR improvement of the estimate over the unprocessed mixture.
inline double sdri_plain(const std::vector<double>& s,
                         const std::vector<double>& s_hat,
                         const std::vector<double>& x) {
  double out = sdr_plain_db(s, s_hat);
  double in = sdr_plain_db(s, x);
  if (!std::isfinite(out)) return out;
  if (!std::isfinite(in)) return in > 0 ? -std::numeric_limits<double>::infinity()
                                        : std::numeric_limits<double>::infinity();
  return out - in;
}

struct UtteranceResult {
  std::string id;
  double si_sdr_in = 0.0;
  double si_sdr_out = 0.0;
  double si_sdri_db = 0.0;  // == si_sdr_out - si_sdr_in when both finite
  double sdr_plain_in = 0.0;
  double sdr_plain_out = 0.0;
  double sdri_plain_db = 0.0;
  double si_sdri_vs_interferer = 0.0;
  bool ppr_positive = false;          // criterion (i): SI-SDRi strictly > 0
  bool ppr_target_preferred = false;  // criterion (ii): target beats interferer
  double length_s = 0.0;
  std::string mode = "offline";
  std::string config_fingerprint;
};

/// All metrics for one utterance against target, interferer, and mixture.
inline UtteranceResult evaluate_utterance(const std::string& id,
                                          const std::vector<double>& target,
                                          const std::vector<double>& estimate,
                                          const std::vector<double>& mixture,
                                          const std::vector<double>& interferer,
                                          double sample_rate = 8000.0,
                                          const std::string& mode = "offline",
                                          const std::string& fingerprint = "") {
  if (target.size() != estimate.size() || target.size() != mixture.size() ||
      target.size() != interferer.size()) {
    throw std::invalid_argument("evaluate_utterance: length mismatch for " + id);
  }
  UtteranceResult r;
  r.id = id;
  r.si_sdr_in = si_sdr_db(target, mixture);
  r.si_sdr_out = si_sdr_db(target, estimate);
  r.si_sdri_db = si_sdri(target, estimate, mixture);
  r.sdr_plain_in = sdr_plain_db(target, mixture);
  r.sdr_plain_out = sdr_plain_db(target, estimate);
  r.sdri_plain_db = sdri_plain(target, estimate, mixture);
  r.si_sdri_vs_interferer = si_sdri(interferer, estimate, mixture);
  bool finite = std::isfinite(r.si_sdri_db);
  r.ppr_positive = r.si_sdri_db > 0.0;  // +inf counts as positive
  r.ppr_target_preferred =
      (finite || r.si_sdri_db > 0)
          ? r.si_sdri_db > r.si_sdri_vs_interferer
          : false;
  r.length_s = static_cast<double>(target.size()) / sample_rate;
  r.mode = mode;
  r.config_fingerprint = fingerprint;
  return r;
}

/// Fraction (percent) of utterances passing BOTH PPR criteria.
inline double ppr(const std::vector<UtteranceResult>& results) {
  if (results.empty()) throw std::invalid_argument("ppr: empty result set");
  std::size_t pass = 0;
  for (const auto& r : results) {
    if (r.ppr_positive && r.ppr_target_preferred) ++pass;
  }
  return 100.0 * static_cast<double>(pass) /
         static_cast<double>(results.size());
}

struct LengthBucket {
  double lo_s = 0.0;
  double hi_s = 0.0;
  std::size_t count = 0;           // finite SI-SDRi entries averaged
  std::size_t infinite_count = 0;  // sentinels in this bucket, not averaged
  double mean_si_sdri = 0.0;
};

inline std::vector<double> default_length_edges() {
  return {1.0, 3.0, 5.0, 7.0, 9.0, 11.0, 13.0, 15.0};
}

/// Mean finite SI-SDRi per length bucket [edges[i], edges[i+1]) (the last
/// bucket is closed on the right). Empty buckets are omitted.
inline std::vector<LengthBucket> bucket_by_length(
    const std::vector<UtteranceResult>& results,
    const std::vector<double>& edges = default_length_edges()) {
  if (edges.size() < 2) {
    throw std::invalid_argument("bucket_by_length: need at least two edges");
  }
  std::vector<LengthBucket> buckets(edges.size() - 1);
  for (std::size_t b = 0; b + 1 < edges.size(); ++b) {
    buckets[b].lo_s = edges[b];
    buckets[b].hi_s = edges[b + 1];
  }
  for (const auto& r : results) {
    double len = r.length_s;
    if (len < edges.front() || len > edges.back()) continue;
    std::size_t b = buckets.size() - 1;
    for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
      if (len < edges[i + 1]) {
        b = i;
        break;
      }
    }
    if (std::isfinite(r.si_sdri_db)) {
      buckets[b].mean_si_sdri += r.si_sdri_db;
      ++buckets[b].count;
    } else {
      ++buckets[b].infinite_count;
    }
  }
  std::vector<LengthBucket> out;
  for (auto& b : buckets) {
    if (b.count == 0 && b.infinite_count == 0) continue;
    if (b.count > 0) b.mean_si_sdri /= static_cast<double>(b.count);
    out.push_back(b);
  }
  return out;
}

struct EvalAggregates {
  std::size_t count = 0;
  std::size_t finite_count = 0;
  std::size_t infinite_count = 0;
  double mean_si_sdri = 0.0;
  double var_si_sdri = 0.0;  // population variance over finite entries
  double mean_sdri_plain = 0.0;
  std::size_t sdr_plain_infinite_count = 0;
  // Violin-ready quantiles of finite SI-SDRi.
  double q05 = 0.0, q25 = 0.0, q50 = 0.0, q75 = 0.0, q95 = 0.0;
  double ppr_percent = 0.0;
};

namespace detail {

inline double quantile_sorted(const std::vector<double>& v, double q) {
  if (v.empty()) return 0.0;
  double pos = q * static_cast<double>(v.size() - 1);
  std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  std::size_t hi = std::min(lo + 1, v.size() - 1);
  double frac = pos - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

}  // namespace detail

inline EvalAggregates compute_aggregates(
    const std::vector<UtteranceResult>& results) {
  if (results.empty()) {
    throw std::invalid_argument("compute_aggregates: empty result set");
  }
  EvalAggregates a;
  a.count = results.size();
  std::vector<double> finite;
  double plain_sum = 0.0;
  std::size_t plain_n = 0;
  for (const auto& r : results) {
    if (std::isfinite(r.si_sdri_db)) {
      finite.push_back(r.si_sdri_db);
    } else {
      ++a.infinite_count;
    }
    if (std::isfinite(r.sdri_plain_db)) {
      plain_sum += r.sdri_plain_db;
      ++plain_n;
    } else {
      ++a.sdr_plain_infinite_count;
    }
  }
  a.finite_count = finite.size();
  if (!finite.empty()) {
    double sum = 0.0;
    for (double v : finite) sum += v;
    a.mean_si_sdri = sum / static_cast<double>(finite.size());
    double ss = 0.0;
    for (double v : finite) {
      double d = v - a.mean_si_sdri;
      ss += d * d;
    }
    a.var_si_sdri = ss / static_cast<double>(finite.size());
    std::sort(finite.begin(), finite.end());
    a.q05 = detail::quantile_sorted(finite, 0.05);
    a.q25 = detail::quantile_sorted(finite, 0.25);
    a.q50 = detail::quantile_sorted(finite, 0.50);
    a.q75 = detail::quantile_sorted(finite, 0.75);
    a.q95 = detail::quantile_sorted(finite, 0.95);
  }
  if (plain_n > 0) a.mean_sdri_plain = plain_sum / static_cast<double>(plain_n);
  a.ppr_percent = ppr(results);
  return a;
}

struct StreamSummary {
  double rtf = 0.0;
  double max_latency_s = 0.0;
  double p95_latency_s = 0.0;
  std::size_t realtime_violations = 0;
};

struct EvalReport {
  std::vector<UtteranceResult> records;
  EvalAggregates aggregates;
  std::vector<LengthBucket> buckets;
  std::string note = kSdrPlainNote;
  std::optional<StreamSummary> stream;  // online mode only
};

/// Builds a report with aggregates and length buckets derived from records
/// (records sorted by id so the aggregation fold is deterministic).
inline EvalReport make_report(std::vector<UtteranceResult> records,
                              std::optional<StreamSummary> stream =
                                  std::nullopt) {
  std::sort(records.begin(), records.end(),
            [](const UtteranceResult& a, const UtteranceResult& b) {
              return a.id < b.id;
            });
  EvalReport rep;
  rep.aggregates = compute_aggregates(records);
  rep.buckets = bucket_by_length(records);
  rep.records = std::move(records);
  rep.stream = stream;
  return rep;
}

// ---------------------------------------------------------------------------
// Serialization (JSON; infinities encoded as tagged strings)
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json num_to_json(double v) {
  if (std::isfinite(v)) return v;
  return v > 0 ? "+inf" : "-inf";
}

inline double num_from_json(const nlohmann::json& j) {
  if (j.is_number()) return j.get<double>();
  std::string s = j.get<std::string>();
  if (s == "+inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  throw std::runtime_error("eval report: bad numeric value '" + s + "'");
}

}  // namespace detail

inline nlohmann::json result_to_json(const UtteranceResult& r) {
  return nlohmann::json{
      {"id", r.id},
      {"si_sdr_in", detail::num_to_json(r.si_sdr_in)},
      {"si_sdr_out", detail::num_to_json(r.si_sdr_out)},
      {"si_sdri", detail::num_to_json(r.si_sdri_db)},
      {"sdr_plain_in", detail::num_to_json(r.sdr_plain_in)},
      {"sdr_plain_out", detail::num_to_json(r.sdr_plain_out)},
      {"sdri_plain", detail::num_to_json(r.sdri_plain_db)},
      {"si_sdri_vs_interferer", detail::num_to_json(r.si_sdri_vs_interferer)},
      {"ppr_positive", r.ppr_positive},
      {"ppr_target_preferred", r.ppr_target_preferred},
      {"length_s", r.length_s},
      {"mode", r.mode},
      {"config_fingerprint", r.config_fingerprint}};
}

inline UtteranceResult result_from_json(const nlohmann::json& j) {
  UtteranceResult r;
  r.id = j.at("id").get<std::string>();
  r.si_sdr_in = detail::num_from_json(j.at("si_sdr_in"));
  r.si_sdr_out = detail::num_from_json(j.at("si_sdr_out"));
  r.si_sdri_db = detail::num_from_json(j.at("si_sdri"));
  r.sdr_plain_in = detail::num_from_json(j.at("sdr_plain_in"));
  r.sdr_plain_out = detail::num_from_json(j.at("sdr_plain_out"));
  r.sdri_plain_db = detail::num_from_json(j.at("sdri_plain"));
  r.si_sdri_vs_interferer = detail::num_from_json(j.at("si_sdri_vs_interferer"));
  r.ppr_positive = j.at("ppr_positive").get<bool>();
  r.ppr_target_preferred = j.at("ppr_target_preferred").get<bool>();
  r.length_s = j.at("length_s").get<double>();
  r.mode = j.at("mode").get<std::string>();
  r.config_fingerprint = j.at("config_fingerprint").get<std::string>();
  return r;
}

inline nlohmann::json report_to_json(const EvalReport& rep) {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : rep.records) recs.push_back(result_to_json(r));
  nlohmann::json agg{{"count", rep.aggregates.count},
                     {"finite_count", rep.aggregates.finite_count},
                     {"infinite_count", rep.aggregates.infinite_count},
                     {"mean_si_sdri", rep.aggregates.mean_si_sdri},
                     {"var_si_sdri", rep.aggregates.var_si_sdri},
                     {"mean_sdri_plain", rep.aggregates.mean_sdri_plain},
                     {"sdr_plain_infinite_count",
                      rep.aggregates.sdr_plain_infinite_count},
                     {"q05", rep.aggregates.q05},
                     {"q25", rep.aggregates.q25},
                     {"q50", rep.aggregates.q50},
                     {"q75", rep.aggregates.q75},
                     {"q95", rep.aggregates.q95},
                     {"ppr_percent", rep.aggregates.ppr_percent}};
  nlohmann::json buckets = nlohmann::json::array();
  for (const auto& b : rep.buckets) {
    buckets.push_back({{"lo_s", b.lo_s},
                       {"hi_s", b.hi_s},
                       {"count", b.count},
                       {"infinite_count", b.infinite_count},
                       {"mean_si_sdri", b.mean_si_sdri}});
  }
  nlohmann::json j{{"records", recs},
                   {"aggregates", agg},
                   {"buckets", buckets},
                   {"note", rep.note}};
  if (rep.stream) {
    j["stream"] = {{"rtf", rep.stream->rtf},
                   {"max_latency_s", rep.stream->max_latency_s},
                   {"p95_latency_s", rep.stream->p95_latency_s},
                   {"realtime_violations", rep.stream->realtime_violations}};
  }
  return j;
}

/// Parses a report and re-derives the aggregates from the records; any
/// disagreement beyond 1e-9 is a corruption error.
inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport rep;
  for (const auto& rj : j.at("records")) {
    rep.records.push_back(result_from_json(rj));
  }
  rep.note = j.at("note").get<std::string>();
  if (j.contains("stream")) {
    StreamSummary s;
    s.rtf = j["stream"].at("rtf").get<double>();
    s.max_latency_s = j["stream"].at("max_latency_s").get<double>();
    s.p95_latency_s = j["stream"].at("p95_latency_s").get<double>();
    s.realtime_violations =
        j["stream"].at("realtime_violations").get<std::size_t>();
    rep.stream = s;
  }
  rep.aggregates = compute_aggregates(rep.records);
  rep.buckets = bucket_by_length(rep.records);
  const auto& agg = j.at("aggregates");
  auto close = [](double a, double b) {
    return std::fabs(a - b) <= 1e-9 * std::max({1.0, std::fabs(a),
                                                std::fabs(b)});
  };
  bool ok = agg.at("count").get<std::size_t>() == rep.aggregates.count &&
            agg.at("finite_count").get<std::size_t>() ==
                rep.aggregates.finite_count &&
            agg.at("infinite_count").get<std::size_t>() ==
                rep.aggregates.infinite_count &&
            close(agg.at("mean_si_sdri").get<double>(),
                  rep.aggregates.mean_si_sdri) &&
            close(agg.at("ppr_percent").get<double>(),
                  rep.aggregates.ppr_percent);
  if (!ok) {
    throw std::runtime_error(
        "eval report: stored aggregates disagree with records "
        "(corrupt or hand-edited report)");
  }
  return rep;
}

inline void save_report(const std::string& path, const EvalReport& rep) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_report: cannot open " + path);
  f << report_to_json(rep).dump(2) << "\n";
}

inline EvalReport load_report(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_report: cannot open " + path);
  nlohmann::json j;
  f >> j;
  return report_from_json(j);
}

}  // namespace neuroheed
