// Copyright 2026 The knn-tts Authors
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

// Evaluation harness: speaker-similarity (SECS) scoring, lambda sweeps,
// split-half similarity matrices, 95% confidence intervals, and
// reference-duration ablations.
//
// Real SECS consumes embeddings from an external speaker encoder
// (EmbeddingSet JSON). The model-free proxy embedding is the mean feature
// frame of a sequence or database.

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "knntts/error.hpp"
#include "knntts/feature_store.hpp"
#include "knntts/frame_matrix.hpp"
#include "knntts/parallel.hpp"
#include "knntts/retrieval.hpp"
#include "knntts/search_index.hpp"

namespace knntts {

/// Cosine similarity of two speaker embeddings.
inline double Secs(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) Fail(ErrorCode::kDimensionMismatch, "dimension mismatch in SECS");
  const double na = Norm(a);
  const double nb = Norm(b);
  RequireNorm(na, "SECS operand");
  RequireNorm(nb, "SECS operand");
  return std::clamp(Dot(a, b) / (na * nb), -1.0, 1.0);
}

inline std::vector<float> MeanRow(const FrameMatrix& frames) {
  std::vector<double> acc(frames.cols(), 0.0);
  for (std::size_t i = 0; i < frames.rows(); ++i) {
    auto row = frames.row(i);
    for (std::size_t d = 0; d < row.size(); ++d) acc[d] += row[d];
  }
  std::vector<float> out(acc.size());
  const double scale = 1.0 / static_cast<double>(frames.rows());
  for (std::size_t d = 0; d < acc.size(); ++d) out[d] = static_cast<float>(acc[d] * scale);
  return out;
}

inline std::vector<float> CentroidEmbedding(const FeatureSequence& seq) {
  return MeanRow(seq.frames);
}
inline std::vector<float> CentroidEmbedding(const UnitDatabase& db) { return MeanRow(db.units()); }

/// SECS between a sequence's centroid and a reference embedding.
inline double ProxySecs(const FeatureSequence& seq, std::span<const float> reference) {
  return Secs(CentroidEmbedding(seq), reference);
}

// ---------------------------------------------------------------------------
// Embedding sets and similarity matrices

struct Embedding {
  std::string utterance_id;
  std::vector<float> values;
};

struct EmbeddingSet {
  std::string label;
  std::vector<Embedding> items;

  std::size_t dim() const { return items.empty() ? 0 : items.front().values.size(); }
};

inline void ValidateEmbeddingSet(const EmbeddingSet& set) {
  const std::size_t dim = set.dim();
  for (const auto& e : set.items) {
    if (e.values.size() != dim || dim == 0) {
      Fail(ErrorCode::kDimensionMismatch, "dimension mismatch in embedding set '" + set.label + "'");
    }
    for (float v : e.values) {
      if (!std::isfinite(v)) {
        Fail(ErrorCode::kNonFinite, "embedding '" + e.utterance_id + "' contains NaN or Inf");
      }
    }
    RequireNorm(Norm(e.values), ("embedding '" + e.utterance_id + "'").c_str());
  }
}

inline nlohmann::json EmbeddingSetToJson(const EmbeddingSet& set) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& e : set.items) {
    items.push_back({{"utterance_id", e.utterance_id}, {"embedding", e.values}});
  }
  return {{"label", set.label}, {"dim", set.dim()}, {"items", items}};
}

inline EmbeddingSet EmbeddingSetFromJson(const nlohmann::json& doc) {
  EmbeddingSet set;
  try {
    set.label = doc.at("label").get<std::string>();
    const auto dim = doc.at("dim").get<std::size_t>();
    for (const auto& item : doc.at("items")) {
      set.items.push_back({item.at("utterance_id").get<std::string>(),
                           item.at("embedding").get<std::vector<float>>()});
      if (set.items.back().values.size() != dim) {
        Fail(ErrorCode::kDimensionMismatch, "dimension mismatch: embedding '" +
                                                set.items.back().utterance_id +
                                                "' does not have dim " + std::to_string(dim));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorCode::kBadManifest, std::string("invalid embedding set: ") + e.what());
  }
  ValidateEmbeddingSet(set);
  return set;
}

inline EmbeddingSet LoadEmbeddingSet(const std::filesystem::path& path) {
  return EmbeddingSetFromJson(ReadJsonFile(path));
}

enum class SplitPolicy { kHalfAB, kFull };

inline std::string_view SplitPolicyName(SplitPolicy p) {
  return p == SplitPolicy::kHalfAB ? "half_AB" : "full";
}

inline SplitPolicy ParseSplitPolicy(std::string_view name) {
  if (name == "half_AB") return SplitPolicy::kHalfAB;
  if (name == "full") return SplitPolicy::kFull;
  Fail(ErrorCode::kInvalidArgument, "unknown split policy '" + std::string(name) + "'");
}

struct SimilarityReport {
  std::vector<std::string> labels;
  std::vector<std::vector<double>> matrix;
  SplitPolicy split_policy = SplitPolicy::kHalfAB;
};

/// Mean pairwise SECS between groups.
///
/// half_AB: each group splits by order into A (first ceil(n/2) items) and B
/// (the rest); cell (i, j) averages secs(a, b) over a in A_i, b in B_j.
/// full: off-diagonal cells average over all cross pairs; diagonal cells
/// over all distinct unordered pairs within the group.
inline SimilarityReport SimilarityMatrix(const std::vector<EmbeddingSet>& groups,
                                         SplitPolicy policy) {
  if (groups.size() < 2) Fail(ErrorCode::kGroupTooSmall, "similarity matrix needs >= 2 groups");
  const std::size_t dim = groups.front().dim();
  for (const auto& g : groups) {
    ValidateEmbeddingSet(g);
    if (g.items.size() < 2) {
      Fail(ErrorCode::kGroupTooSmall, "group '" + g.label + "' needs at least 2 embeddings");
    }
    if (g.dim() != dim) {
      Fail(ErrorCode::kDimensionMismatch, "dimension mismatch: group '" + g.label + "'");
    }
  }
  const std::size_t n = groups.size();
  SimilarityReport report;
  report.split_policy = policy;
  report.matrix.assign(n, std::vector<double>(n, 0.0));
  for (const auto& g : groups) report.labels.push_back(g.label);

  auto mean_cross = [](std::span<const Embedding> lhs, std::span<const Embedding> rhs) {
    double sum = 0.0;
    for (const auto& a : lhs) {
      for (const auto& b : rhs) sum += Secs(a.values, b.values);
    }
    return sum / static_cast<double>(lhs.size() * rhs.size());
  };

  for (std::size_t i = 0; i < n; ++i) {
    std::span<const Embedding> gi = groups[i].items;
    for (std::size_t j = 0; j < n; ++j) {
      std::span<const Embedding> gj = groups[j].items;
      if (policy == SplitPolicy::kHalfAB) {
        const std::size_t a_size = (gi.size() + 1) / 2;
        const std::size_t b_start = (gj.size() + 1) / 2;
        report.matrix[i][j] = mean_cross(gi.first(a_size), gj.subspan(b_start));
      } else if (i != j) {
        report.matrix[i][j] = mean_cross(gi, gj);
      } else {
        double sum = 0.0;
        std::size_t pairs = 0;
        for (std::size_t a = 0; a < gi.size(); ++a) {
          for (std::size_t b = a + 1; b < gi.size(); ++b, ++pairs) {
            sum += Secs(gi[a].values, gi[b].values);
          }
        }
        report.matrix[i][j] = sum / static_cast<double>(pairs);
      }
    }
  }
  return report;
}

inline nlohmann::json SimilarityReportToJson(const SimilarityReport& report) {
  return {{"labels", report.labels},
          {"matrix", report.matrix},
          {"split_policy", SplitPolicyName(report.split_policy)}};
}

// ---------------------------------------------------------------------------
// Confidence intervals

inline constexpr double kZ95 = 1.96;

struct CiSummary {
  double mean = 0.0;
  double halfwidth = 0.0;
  std::size_t n = 0;
};

/// Normal-approximation 95% interval: mean +- 1.96 * s / sqrt(n), with the
/// n - 1 sample standard deviation. halfwidth is 0 for a single value.
inline CiSummary AggregateCi(std::span<const double> values) {
  if (values.empty()) Fail(ErrorCode::kEmptyInput, "cannot aggregate an empty list");
  double sum = 0.0;
  for (double v : values) {
    if (!std::isfinite(v)) Fail(ErrorCode::kNonFinite, "CI input contains NaN or Inf");
    sum += v;
  }
  const auto n = values.size();
  const double mean = sum / static_cast<double>(n);
  if (n == 1) return {mean, 0.0, 1};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double stddev = std::sqrt(ss / static_cast<double>(n - 1));
  return {mean, kZ95 * stddev / std::sqrt(static_cast<double>(n)), n};
}

// ---------------------------------------------------------------------------
// Lambda sweep

struct SweepPoint {
  double lambda = 0.0;
  ConversionResult result;
};

/// Converts `source` once per lambda. Neighbors are searched once and shared,
/// since selection does not depend on lambda.
inline std::vector<SweepPoint> LambdaSweep(const FeatureSequence& source, const UnitDatabase& db,
                                           const SearchIndex& index, int k,
                                           std::span<const double> lambdas,
                                           std::size_t threads = 1) {
  for (double l : lambdas) ValidateLambda(l);
  ValidateConversionInputs(source, db, {k, 0.0, DistanceMetric::kCosine});
  const auto neighbors = BatchSearch(source.frames, index, k, threads);
  std::vector<SweepPoint> points;
  points.reserve(lambdas.size());
  for (double l : lambdas) {
    points.push_back({l, AssembleConversion(source, db, {k, l, DistanceMetric::kCosine}, neighbors)});
  }
  return points;
}

inline std::vector<SweepPoint> LambdaSweep(const FeatureSequence& source, const UnitDatabase& db,
                                           int k, std::span<const double> lambdas,
                                           std::size_t threads = 1) {
  return LambdaSweep(source, db, BuildIndex(db), k, lambdas, threads);
}

// ---------------------------------------------------------------------------
// External scores and ablations

/// Precomputed per-utterance metrics (WER, UTMOS, ...), in file order.
struct ExternalScores {
  struct Entry {
    std::string utterance_id;
    std::string metric_name;
    double value = 0.0;
  };
  std::vector<Entry> entries;
};

inline ExternalScores ParseScoresCsv(std::string_view text) {
  ExternalScores scores;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != "utterance_id,metric_name,value") {
        Fail(ErrorCode::kBadManifest, "score CSV header must be 'utterance_id,metric_name,value'");
      }
      continue;
    }
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string::npos || line.find(',', c2 + 1) != std::string::npos) {
      Fail(ErrorCode::kBadManifest, "score CSV line " + std::to_string(line_no) +
                                        " must have three fields");
    }
    ExternalScores::Entry e{line.substr(0, c1), line.substr(c1 + 1, c2 - c1 - 1), 0.0};
    const char* first = line.data() + c2 + 1;
    const char* last = line.data() + line.size();
    auto [ptr, ec] = std::from_chars(first, last, e.value);
    if (ec != std::errc() || ptr != last || !std::isfinite(e.value)) {
      Fail(ErrorCode::kBadManifest, "score CSV line " + std::to_string(line_no) +
                                        " has an invalid value");
    }
    scores.entries.push_back(std::move(e));
  }
  if (line_no == 0) Fail(ErrorCode::kBadManifest, "score CSV is empty");
  return scores;
}

inline ExternalScores LoadScoresCsv(const std::filesystem::path& path) {
  return ParseScoresCsv(detail::ReadFileBytes(path));
}

struct AblationRow {
  double duration_seconds = 0.0;
  std::uint64_t seed = 0;
  std::string utterance_id;
  std::string metric_name;
  double value = 0.0;
};

inline constexpr std::string_view kProxySecsMetric = "proxy_secs";

struct AblationConfig {
  std::vector<double> durations;
  std::vector<std::uint64_t> seeds;
  int k = kDefaultK;
  double lambda = kDefaultLambda;
  std::size_t block_size = kDefaultBlockSize;
};

/// For every (duration, seed) cell: subset the database, convert every
/// source, and emit proxy SECS against the full database's centroid plus any
/// external scores for that source. Rows are ordered by (duration, seed,
/// source, metric) in input order, independent of the worker count.
inline std::vector<AblationRow> AblationRun(std::span<const FeatureSequence> sources,
                                            const UnitDatabase& db, const AblationConfig& config,
                                            const ExternalScores* scores = nullptr,
                                            std::size_t threads = 1) {
  if (sources.empty()) Fail(ErrorCode::kEmptyInput, "ablation needs at least one source");
  if (config.durations.empty() || config.seeds.empty()) {
    Fail(ErrorCode::kEmptyInput, "ablation needs durations and seeds");
  }
  ValidateLambda(config.lambda);
  for (const auto& src : sources) ValidateConversionInputs(src, db, {config.k, config.lambda});
  for (double d : config.durations) {
    if (!std::isfinite(d) || d <= 0.0) {
      Fail(ErrorCode::kInvalidArgument, "ablation durations must be positive");
    }
    if (FramesForDuration(d, db.frame_rate_hz()) > db.size()) {
      Fail(ErrorCode::kDurationExceeded, "duration " + std::to_string(d) +
                                             " s exceeds database duration " +
                                             std::to_string(DatabaseDuration(db)) + " s");
    }
    ValidateK(config.k, FramesForDuration(d, db.frame_rate_hz()));
  }

  std::map<std::string, std::vector<const ExternalScores::Entry*>> by_utterance;
  if (scores) {
    std::set<std::string> known;
    for (const auto& s : sources) known.insert(s.source_id);
    for (const auto& e : scores->entries) {
      if (!known.contains(e.utterance_id)) {
        Fail(ErrorCode::kUnknownUtterance,
             "external score references unknown utterance '" + e.utterance_id + "'");
      }
      by_utterance[e.utterance_id].push_back(&e);
    }
  }

  const std::vector<float> target = CentroidEmbedding(db);
  const std::size_t cells = config.durations.size() * config.seeds.size();
  std::vector<std::vector<AblationRow>> per_cell(cells);
  ParallelFor(cells, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t c = begin; c < end; ++c) {
      const double duration = config.durations[c / config.seeds.size()];
      const std::uint64_t seed = config.seeds[c % config.seeds.size()];
      const UnitDatabase subset = SubsetDatabase(db, {duration, seed});
      const SearchIndex index = BuildIndex(subset, config.block_size);
      auto& rows = per_cell[c];
      for (const auto& src : sources) {
        const auto result =
            ConvertIndexed(src, subset, index, {config.k, config.lambda, DistanceMetric::kCosine});
        rows.push_back({duration, seed, src.source_id, std::string(kProxySecsMetric),
                        ProxySecs(result.converted, target)});
        if (auto it = by_utterance.find(src.source_id); it != by_utterance.end()) {
          for (const auto* e : it->second) {
            rows.push_back({duration, seed, src.source_id, e->metric_name, e->value});
          }
        }
      }
    }
  });
  std::vector<AblationRow> rows;
  for (auto& cell : per_cell) {
    std::move(cell.begin(), cell.end(), std::back_inserter(rows));
  }
  return rows;
}

/// Shortest round-trip decimal form.
inline std::string FormatDouble(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline std::string AblationCsv(std::span<const AblationRow> rows) {
  std::string out = "duration_s,seed,utterance_id,metric_name,value\n";
  for (const auto& r : rows) {
    out += FormatDouble(r.duration_seconds) + "," + std::to_string(r.seed) + "," +
           r.utterance_id + "," + r.metric_name + "," + FormatDouble(r.value) + "\n";
  }
  return out;
}

}  // namespace knntts
