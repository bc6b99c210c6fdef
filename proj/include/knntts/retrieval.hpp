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

// Frame-level kNN unit selection and source/target interpolation.
//
// Each source frame is replaced by the uniform average of its k
// cosine-nearest database units, then blended with the original frame:
//
//   converted = lambda * selected + (1 - lambda) * source
//
// This header holds the definitional path: every distance goes through
// CosineDistance. search_index.hpp provides the same contract over a
// normalized index.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "knntts/error.hpp"
#include "knntts/feature_store.hpp"
#include "knntts/frame_matrix.hpp"
#include "knntts/parallel.hpp"

namespace knntts {

enum class DistanceMetric { kCosine };

inline constexpr int kDefaultK = 4;
inline constexpr double kDefaultLambda = 1.0;

struct ConversionSpec {
  int k = kDefaultK;
  double lambda = kDefaultLambda;
  DistanceMetric metric = DistanceMetric::kCosine;
};

inline void ValidateLambda(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    Fail(ErrorCode::kInvalidArgument, "lambda must lie in [0, 1], got " + std::to_string(lambda));
  }
}

inline void ValidateK(int k, std::size_t database_size) {
  if (k < 1) Fail(ErrorCode::kInvalidArgument, "k must be >= 1, got " + std::to_string(k));
  if (static_cast<std::size_t>(k) > database_size) {
    Fail(ErrorCode::kInvalidArgument, "k=" + std::to_string(k) + " exceeds database size N=" +
                                          std::to_string(database_size));
  }
}

inline void ValidateSpec(const ConversionSpec& spec, const UnitDatabase& db) {
  ValidateK(spec.k, db.size());
  ValidateLambda(spec.lambda);
}

inline void RequireNorm(double norm, const char* what) {
  if (!(norm >= kMinNorm)) Fail(ErrorCode::kZeroNorm, std::string(what) + " has zero norm");
}

/// 1 - cos(a, b), clamped to [0, 2].
inline double CosineDistance(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    Fail(ErrorCode::kDimensionMismatch, "dimension mismatch in cosine distance");
  }
  const double na = Norm(a);
  const double nb = Norm(b);
  RequireNorm(na, "cosine distance operand");
  RequireNorm(nb, "cosine distance operand");
  return std::clamp(1.0 - Dot(a, b) / (na * nb), 0.0, 2.0);
}

struct Neighbor {
  std::size_t row = 0;
  double distance = 0.0;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Strict (distance, row) order: ties go to the lower row index.
inline bool NeighborLess(const Neighbor& a, const Neighbor& b) noexcept {
  return a.distance < b.distance || (a.distance == b.distance && a.row < b.row);
}

/// The k nearest database rows by cosine distance, ascending.
inline std::vector<Neighbor> TopK(std::span<const float> query, const UnitDatabase& db, int k) {
  ValidateK(k, db.size());
  if (query.size() != db.dim()) {
    Fail(ErrorCode::kDimensionMismatch, "dimension mismatch: query D=" +
                                            std::to_string(query.size()) + ", database D=" +
                                            std::to_string(db.dim()));
  }
  const double qn = Norm(query);
  RequireNorm(qn, "query");
  std::vector<Neighbor> all(db.size());
  for (std::size_t i = 0; i < db.size(); ++i) {
    const double cos = Dot(query, db.unit(i)) / (qn * db.norm(i));
    all[i] = {i, std::clamp(1.0 - cos, 0.0, 2.0)};
  }
  std::partial_sort(all.begin(), all.begin() + k, all.end(), NeighborLess);
  all.resize(static_cast<std::size_t>(k));
  return all;
}

/// Uniform mean of the given database rows, accumulated in double.
inline void MeanOfRows(const UnitDatabase& db, std::span<const Neighbor> rows,
                       std::span<float> out) {
  const std::size_t dim = db.dim();
  std::vector<double> acc(dim, 0.0);
  for (const Neighbor& n : rows) {
    auto unit = db.unit(n.row);
    for (std::size_t d = 0; d < dim; ++d) acc[d] += unit[d];
  }
  const double scale = 1.0 / static_cast<double>(rows.size());
  for (std::size_t d = 0; d < dim; ++d) out[d] = static_cast<float>(acc[d] * scale);
}

/// Mean of the k nearest units to `query`.
inline std::vector<float> SelectUnit(std::span<const float> query, const UnitDatabase& db, int k) {
  const auto neighbors = TopK(query, db, k);
  std::vector<float> out(db.dim());
  MeanOfRows(db, neighbors, out);
  return out;
}

/// Writes lambda * selected + (1 - lambda) * source into `out`. The endpoints
/// copy their operand so lambda = 0 and lambda = 1 are bit-exact. Interior
/// values are computed in double, so each output lies between its inputs.
inline void InterpolateInto(std::span<const float> selected, std::span<const float> source,
                            double lambda, std::span<float> out) {
  if (selected.size() != source.size() || out.size() != source.size()) {
    Fail(ErrorCode::kDimensionMismatch, "dimension mismatch in interpolation");
  }
  ValidateLambda(lambda);
  if (lambda == 0.0) {
    std::copy(source.begin(), source.end(), out.begin());
  } else if (lambda == 1.0) {
    std::copy(selected.begin(), selected.end(), out.begin());
  } else {
    for (std::size_t d = 0; d < out.size(); ++d) {
      out[d] = static_cast<float>(lambda * selected[d] + (1.0 - lambda) * source[d]);
    }
  }
}

inline std::vector<float> Interpolate(std::span<const float> selected,
                                      std::span<const float> source, double lambda) {
  std::vector<float> out(source.size());
  InterpolateInto(selected, source, lambda, out);
  return out;
}

struct ConversionResult {
  FeatureSequence converted;
  FeatureSequence selected;
  std::size_t k = 0;
  /// Row-major T x k; row t lists frame t's neighbors in ascending distance.
  std::vector<Neighbor> neighbors;

  std::span<const Neighbor> neighbors_of(std::size_t t) const {
    return std::span(neighbors).subspan(t * k, k);
  }
};

inline void ValidateConversionInputs(const FeatureSequence& source, const UnitDatabase& db,
                                     const ConversionSpec& spec) {
  ValidateSequence(source);
  if (source.dim() != db.dim()) {
    Fail(ErrorCode::kDimensionMismatch, "dimension mismatch: source D=" +
                                            std::to_string(source.dim()) + ", database D=" +
                                            std::to_string(db.dim()));
  }
  ValidateSpec(spec, db);
}

/// Builds selected/converted frames from per-frame neighbor lists. Shared by
/// the definitional and indexed search paths.
inline ConversionResult AssembleConversion(const FeatureSequence& source, const UnitDatabase& db,
                                           const ConversionSpec& spec,
                                           std::vector<Neighbor> neighbors) {
  const std::size_t frames = source.num_frames();
  const auto k = static_cast<std::size_t>(spec.k);
  ConversionResult result{
      {FrameMatrix(frames, db.dim()), source.frame_rate_hz, source.source_id},
      {FrameMatrix(frames, db.dim()), source.frame_rate_hz, source.source_id},
      k,
      std::move(neighbors)};
  for (std::size_t t = 0; t < frames; ++t) {
    MeanOfRows(db, result.neighbors_of(t), result.selected.frames.row(t));
    InterpolateInto(result.selected.frames.row(t), source.frames.row(t), spec.lambda,
                    result.converted.frames.row(t));
  }
  return result;
}

/// Converts every source frame independently through TopK. Frames are
/// searched in parallel over `threads` workers; output is thread-invariant.
inline ConversionResult Convert(const FeatureSequence& source, const UnitDatabase& db,
                                const ConversionSpec& spec, std::size_t threads = 1) {
  ValidateConversionInputs(source, db, spec);
  const auto k = static_cast<std::size_t>(spec.k);
  std::vector<Neighbor> neighbors(source.num_frames() * k);
  ParallelFor(source.num_frames(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t t = begin; t < end; ++t) {
      const auto top = TopK(source.frames.row(t), db, spec.k);
      std::copy(top.begin(), top.end(), neighbors.begin() + static_cast<std::ptrdiff_t>(t * k));
    }
  });
  return AssembleConversion(source, db, spec, std::move(neighbors));
}

}  // namespace knntts
