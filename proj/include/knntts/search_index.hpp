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

// Exact cosine top-k over L2-normalized database rows.
//
// Distances are 1 - q.u for unit vectors q and u. The scan walks the index in
// blocks of `block_size` rows; within a block, queries are processed in tiles
// of eight so each row is read once per tile. Every (query, row) dot product
// uses the same lane order as Dot(), so results do not depend on tiling or on
// the worker count. Per-query best-k sets live in a fixed-size max-heap keyed
// by (distance, row), which keeps the lower row index on exact ties.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <span>
#include <vector>

#include "knntts/error.hpp"
#include "knntts/feature_store.hpp"
#include "knntts/frame_matrix.hpp"
#include "knntts/parallel.hpp"
#include "knntts/retrieval.hpp"

namespace knntts {

inline constexpr std::size_t kDefaultBlockSize = 1024;

class SearchIndex {
 public:
  std::size_t size() const noexcept { return normalized_.rows(); }
  std::size_t dim() const noexcept { return normalized_.cols(); }
  std::size_t block_size() const noexcept { return block_size_; }
  const FrameMatrix& normalized_units() const noexcept { return normalized_; }
  std::span<const std::size_t> row_map() const noexcept { return row_map_; }

  friend SearchIndex BuildIndex(const UnitDatabase& db, std::size_t block_size);

 private:
  FrameMatrix normalized_;
  std::vector<std::size_t> row_map_;
  std::size_t block_size_ = kDefaultBlockSize;
};

/// Normalizes every database row in one pass; row_map is the identity.
inline SearchIndex BuildIndex(const UnitDatabase& db, std::size_t block_size = kDefaultBlockSize) {
  if (block_size == 0) Fail(ErrorCode::kInvalidArgument, "block_size must be >= 1");
  SearchIndex index;
  index.block_size_ = block_size;
  index.normalized_ = FrameMatrix(db.size(), db.dim());
  index.row_map_.resize(db.size());
  for (std::size_t i = 0; i < db.size(); ++i) {
    index.row_map_[i] = i;
    const double inv = 1.0 / db.norm(i);
    auto src = db.unit(i);
    auto dst = index.normalized_.row(i);
    for (std::size_t d = 0; d < src.size(); ++d) dst[d] = static_cast<float>(src[d] * inv);
  }
  return index;
}

namespace detail {

class BestK {
 public:
  explicit BestK(std::size_t k) : k_(k) { heap_.reserve(k); }

  void offer(const Neighbor& candidate) {
    if (heap_.size() < k_) {
      heap_.push_back(candidate);
      std::push_heap(heap_.begin(), heap_.end(), NeighborLess);
    } else if (NeighborLess(candidate, heap_.front())) {
      std::pop_heap(heap_.begin(), heap_.end(), NeighborLess);
      heap_.back() = candidate;
      std::push_heap(heap_.begin(), heap_.end(), NeighborLess);
    }
  }

  /// Ascending order; empties the heap.
  void drain_sorted(std::span<Neighbor> out) {
    std::sort_heap(heap_.begin(), heap_.end(), NeighborLess);
    std::copy(heap_.begin(), heap_.end(), out.begin());
    heap_.clear();
  }

 private:
  std::size_t k_;
  std::vector<Neighbor> heap_;
};

// Dot products of Q queries against one row, lane-for-lane identical to Dot().
// GCC/Clang vector extension: one 8-float register per query, loaded with
// memcpy so rows need no particular alignment.
typedef float Lanes8 __attribute__((vector_size(32)));

template <std::size_t Q>
void TileDots(const float* const* queries, const float* row, std::size_t dim, double* out) {
  const std::size_t body = dim - dim % kDotLanes;
  Lanes8 acc[Q] = {};
  for (std::size_t d = 0; d < body; d += kDotLanes) {
    Lanes8 r;
    std::memcpy(&r, row + d, sizeof(r));
    for (std::size_t q = 0; q < Q; ++q) {
      Lanes8 x;
      std::memcpy(&x, queries[q] + d, sizeof(x));
      acc[q] += x * r;
    }
  }
  for (std::size_t q = 0; q < Q; ++q) {
    float tail[kDotLanes];
    std::memcpy(tail, &acc[q], sizeof(tail));
    for (std::size_t d = body; d < dim; ++d) tail[d - body] += queries[q][d] * row[d];
    double sum = 0.0;
    for (float v : tail) sum += static_cast<double>(v);
    out[q] = sum;
  }
}

template <std::size_t Q>
void ScanTile(const SearchIndex& index, const float* const* queries, std::size_t row_begin,
              std::size_t row_end, BestK* heaps) {
  double dots[Q];
  for (std::size_t r = row_begin; r < row_end; ++r) {
    TileDots<Q>(queries, index.normalized_units().row(r).data(), index.dim(), dots);
    for (std::size_t q = 0; q < Q; ++q) {
      heaps[q].offer({index.row_map()[r], std::clamp(1.0 - dots[q], 0.0, 2.0)});
    }
  }
}

inline constexpr std::size_t kQueryTile = 8;

}  // namespace detail

/// Exact top-k for each query row. Returns M x k neighbors, row-major, each
/// row ascending by (distance, database row).
inline std::vector<Neighbor> BatchSearch(const FrameMatrix& queries, const SearchIndex& index,
                                         int k, std::size_t threads = 1) {
  ValidateK(k, index.size());
  if (queries.rows() > 0 && queries.cols() != index.dim()) {
    Fail(ErrorCode::kDimensionMismatch, "dimension mismatch: queries D=" +
                                            std::to_string(queries.cols()) + ", index D=" +
                                            std::to_string(index.dim()));
  }
  if (!queries.all_finite()) Fail(ErrorCode::kNonFinite, "queries contain NaN or Inf");
  const std::size_t m = queries.rows();
  const std::size_t dim = index.dim();
  const auto kk = static_cast<std::size_t>(k);

  FrameMatrix normalized(m, dim);
  for (std::size_t i = 0; i < m; ++i) {
    const double n = Norm(queries.row(i));
    RequireNorm(n, ("query " + std::to_string(i)).c_str());
    const double inv = 1.0 / n;
    auto src = queries.row(i);
    auto dst = normalized.row(i);
    for (std::size_t d = 0; d < dim; ++d) dst[d] = static_cast<float>(src[d] * inv);
  }

  std::vector<Neighbor> out(m * kk);
  ParallelFor(m, threads, [&](std::size_t begin, std::size_t end) {
    std::vector<detail::BestK> heaps(end - begin, detail::BestK(kk));
    for (std::size_t block = 0; block < index.size(); block += index.block_size()) {
      const std::size_t block_end = std::min(index.size(), block + index.block_size());
      for (std::size_t q = begin; q < end; q += detail::kQueryTile) {
        const std::size_t tile = std::min(detail::kQueryTile, end - q);
        const float* tile_queries[detail::kQueryTile];
        for (std::size_t j = 0; j < tile; ++j) tile_queries[j] = normalized.row(q + j).data();
        detail::BestK* tile_heaps = heaps.data() + (q - begin);
        switch (tile) {
          case 8: detail::ScanTile<8>(index, tile_queries, block, block_end, tile_heaps); break;
          case 7: detail::ScanTile<7>(index, tile_queries, block, block_end, tile_heaps); break;
          case 6: detail::ScanTile<6>(index, tile_queries, block, block_end, tile_heaps); break;
          case 5: detail::ScanTile<5>(index, tile_queries, block, block_end, tile_heaps); break;
          case 4: detail::ScanTile<4>(index, tile_queries, block, block_end, tile_heaps); break;
          case 3: detail::ScanTile<3>(index, tile_queries, block, block_end, tile_heaps); break;
          case 2: detail::ScanTile<2>(index, tile_queries, block, block_end, tile_heaps); break;
          default: detail::ScanTile<1>(index, tile_queries, block, block_end, tile_heaps); break;
        }
      }
    }
    for (std::size_t q = begin; q < end; ++q) {
      heaps[q - begin].drain_sorted(std::span(out).subspan(q * kk, kk));
    }
  });
  return out;
}

/// Same contract as Convert(), searching through a prebuilt index of `db`.
inline ConversionResult ConvertIndexed(const FeatureSequence& source, const UnitDatabase& db,
                                       const SearchIndex& index, const ConversionSpec& spec,
                                       std::size_t threads = 1) {
  ValidateConversionInputs(source, db, spec);
  if (index.size() != db.size() || index.dim() != db.dim()) {
    Fail(ErrorCode::kInvalidArgument, "index was not built from this database");
  }
  return AssembleConversion(source, db, spec, BatchSearch(source.frames, index, spec.k, threads));
}

}  // namespace knntts
