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

// Feature files, unit databases and duration-limited database subsets.
//
// KNNF layout (little-endian):
//   bytes 0-3    magic "KNNF"
//   bytes 4-7    u32 version (= 1)
//   bytes 8-11   u32 T (frames)
//   bytes 12-15  u32 D (dims)
//   bytes 16-19  f32 frame rate in Hz
//   bytes 20-    T*D f32 payload, row-major

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "knntts/error.hpp"
#include "knntts/frame_matrix.hpp"
#include "knntts/rng.hpp"

namespace knntts {

inline constexpr std::array<std::uint8_t, 4> kKnnfMagic = {0x4B, 0x4E, 0x4E, 0x46};
inline constexpr std::uint32_t kKnnfVersion = 1;
inline constexpr std::size_t kKnnfHeaderBytes = 20;
inline constexpr float kDefaultFrameRateHz = 50.0f;
/// Rows and queries with an L2 norm below this are rejected.
inline constexpr double kMinNorm = 1e-8;

struct FeatureSequence {
  FrameMatrix frames;
  float frame_rate_hz = kDefaultFrameRateHz;
  std::string source_id;

  std::size_t num_frames() const noexcept { return frames.rows(); }
  std::size_t dim() const noexcept { return frames.cols(); }
  double duration_seconds() const noexcept {
    return static_cast<double>(num_frames()) / frame_rate_hz;
  }

  friend bool operator==(const FeatureSequence&, const FeatureSequence&) = default;
};

inline void ValidateFrameRate(float frame_rate_hz) {
  if (!std::isfinite(frame_rate_hz) || frame_rate_hz <= 0.0f) {
    Fail(ErrorCode::kInvalidFrameRate,
         "frame rate must be positive and finite, got " + std::to_string(frame_rate_hz));
  }
}

inline void ValidateSequence(const FeatureSequence& seq) {
  if (seq.num_frames() == 0 || seq.dim() == 0) {
    Fail(ErrorCode::kEmptyShape, "feature sequence '" + seq.source_id + "' has zero frames or dims");
  }
  ValidateFrameRate(seq.frame_rate_hz);
  if (!seq.frames.all_finite()) {
    Fail(ErrorCode::kNonFinite, "feature sequence '" + seq.source_id + "' contains NaN or Inf");
  }
}

namespace detail {

inline void PutU32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t GetU32(std::string_view bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[offset + i])) << (8 * i);
  }
  return v;
}

inline std::string ReadFileBytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) Fail(ErrorCode::kIo, "cannot open '" + path.string() + "' for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) Fail(ErrorCode::kIo, "read failed for '" + path.string() + "'");
  return bytes;
}

inline void WriteFileBytes(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) Fail(ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) Fail(ErrorCode::kIo, "write failed for '" + path.string() + "'");
}

}  // namespace detail

/// Serializes a validated sequence to KNNF bytes.
inline std::string EncodeFeatures(const FeatureSequence& seq) {
  ValidateSequence(seq);
  if (seq.num_frames() > UINT32_MAX || seq.dim() > UINT32_MAX) {
    Fail(ErrorCode::kInvalidArgument, "sequence shape exceeds the u32 header fields");
  }
  std::string out;
  out.reserve(kKnnfHeaderBytes + seq.frames.data().size() * 4);
  out.append(reinterpret_cast<const char*>(kKnnfMagic.data()), kKnnfMagic.size());
  detail::PutU32(out, kKnnfVersion);
  detail::PutU32(out, static_cast<std::uint32_t>(seq.num_frames()));
  detail::PutU32(out, static_cast<std::uint32_t>(seq.dim()));
  detail::PutU32(out, std::bit_cast<std::uint32_t>(seq.frame_rate_hz));
  for (float v : seq.frames.data()) detail::PutU32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

/// Parses KNNF bytes. Rejects anything that would not round-trip exactly.
inline FeatureSequence DecodeFeatures(std::string_view bytes, std::string source_id = {}) {
  if (bytes.size() < kKnnfMagic.size() ||
      std::memcmp(bytes.data(), kKnnfMagic.data(), kKnnfMagic.size()) != 0) {
    Fail(ErrorCode::kBadMagic, "missing KNNF magic in '" + source_id + "'");
  }
  if (bytes.size() < kKnnfHeaderBytes) {
    Fail(ErrorCode::kTruncated, "header of '" + source_id + "' is shorter than 20 bytes");
  }
  const std::uint32_t version = detail::GetU32(bytes, 4);
  if (version != kKnnfVersion) {
    Fail(ErrorCode::kUnsupportedVersion, "KNNF version " + std::to_string(version) + " in '" +
                                             source_id + "' is not supported");
  }
  const std::uint32_t frames = detail::GetU32(bytes, 8);
  const std::uint32_t dims = detail::GetU32(bytes, 12);
  const float frame_rate = std::bit_cast<float>(detail::GetU32(bytes, 16));
  if (frames == 0 || dims == 0) {
    Fail(ErrorCode::kEmptyShape, "'" + source_id + "' declares T=" + std::to_string(frames) +
                                     ", D=" + std::to_string(dims));
  }
  ValidateFrameRate(frame_rate);
  const std::uint64_t count = std::uint64_t{frames} * dims;
  const std::uint64_t expected = kKnnfHeaderBytes + count * 4;
  if (bytes.size() < expected) {
    Fail(ErrorCode::kTruncated, "'" + source_id + "' payload holds " +
                                    std::to_string(bytes.size() - kKnnfHeaderBytes) +
                                    " bytes, header implies " + std::to_string(count * 4));
  }
  if (bytes.size() > expected) {
    Fail(ErrorCode::kSizeMismatch, "'" + source_id + "' has trailing bytes after the payload");
  }
  std::vector<float> data(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = std::bit_cast<float>(detail::GetU32(bytes, kKnnfHeaderBytes + 4 * i));
  }
  FeatureSequence seq{FrameMatrix(frames, dims, std::move(data)), frame_rate, std::move(source_id)};
  if (!seq.frames.all_finite()) {
    Fail(ErrorCode::kNonFinite, "'" + seq.source_id + "' contains NaN or Inf");
  }
  return seq;
}

/// Writes `seq` as KNNF. Nothing is written if validation fails.
inline void SaveFeatures(const FeatureSequence& seq, const std::filesystem::path& path) {
  detail::WriteFileBytes(path, EncodeFeatures(seq));
}

/// Reads a KNNF file; source_id becomes the file stem.
inline FeatureSequence LoadFeatures(const std::filesystem::path& path) {
  return DecodeFeatures(detail::ReadFileBytes(path), path.stem().string());
}

struct Provenance {
  std::string_view source_id;
  std::size_t frame_index = 0;
};

/// One utterance's contiguous block of database rows.
struct UtteranceSpan {
  std::string source_id;
  std::size_t first_row = 0;
  std::size_t num_rows = 0;

  friend bool operator==(const UtteranceSpan&, const UtteranceSpan&) = default;
};

/// Target-speaker frames available for selection. Immutable after
/// construction; every row is finite with L2 norm >= kMinNorm.
class UnitDatabase {
 public:
  /// Row-concatenates `sequences` in order. Errors on empty input, mismatched
  /// D or frame rate, invalid sequences, and zero-norm frames.
  static UnitDatabase FromSequences(std::span<const FeatureSequence> sequences,
                                    std::string speaker_id) {
    if (sequences.empty()) Fail(ErrorCode::kEmptyInput, "no feature sequences for database");
    UnitDatabase db;
    db.speaker_id_ = std::move(speaker_id);
    db.frame_rate_hz_ = sequences.front().frame_rate_hz;
    const std::size_t dim = sequences.front().dim();
    std::size_t total = 0;
    for (const auto& seq : sequences) {
      ValidateSequence(seq);
      if (seq.dim() != dim) {
        Fail(ErrorCode::kDimensionMismatch,
             "dimension mismatch: '" + seq.source_id + "' has D=" + std::to_string(seq.dim()) +
                 ", expected D=" + std::to_string(dim));
      }
      if (seq.frame_rate_hz != db.frame_rate_hz_) {
        Fail(ErrorCode::kFrameRateMismatch,
             "frame rate mismatch: '" + seq.source_id + "' has " +
                 std::to_string(seq.frame_rate_hz) + " Hz");
      }
      total += seq.num_frames();
    }
    std::vector<float> data;
    data.reserve(total * dim);
    for (const auto& seq : sequences) {
      db.utterances_.push_back({seq.source_id, data.size() / dim, seq.num_frames()});
      data.insert(data.end(), seq.frames.data().begin(), seq.frames.data().end());
    }
    db.units_ = FrameMatrix(total, dim, std::move(data));
    db.ComputeNorms();
    return db;
  }

  /// Rebuilds a database from stored units and utterance spans (which must
  /// tile the rows in order).
  static UnitDatabase FromUnits(FrameMatrix units, std::vector<UtteranceSpan> utterances,
                                float frame_rate_hz, std::string speaker_id) {
    ValidateFrameRate(frame_rate_hz);
    if (units.rows() == 0 || units.cols() == 0) {
      Fail(ErrorCode::kEmptyShape, "database has no units");
    }
    if (!units.all_finite()) Fail(ErrorCode::kNonFinite, "database units contain NaN or Inf");
    std::size_t next = 0;
    for (const auto& u : utterances) {
      if (u.first_row != next || u.num_rows == 0) {
        Fail(ErrorCode::kBadManifest, "utterance spans do not tile the database rows");
      }
      next += u.num_rows;
    }
    if (next != units.rows()) {
      Fail(ErrorCode::kBadManifest, "utterance spans cover " + std::to_string(next) +
                                        " rows, database has " + std::to_string(units.rows()));
    }
    UnitDatabase db;
    db.units_ = std::move(units);
    db.utterances_ = std::move(utterances);
    db.frame_rate_hz_ = frame_rate_hz;
    db.speaker_id_ = std::move(speaker_id);
    db.ComputeNorms();
    return db;
  }

  std::size_t size() const noexcept { return units_.rows(); }
  std::size_t dim() const noexcept { return units_.cols(); }
  float frame_rate_hz() const noexcept { return frame_rate_hz_; }
  const std::string& speaker_id() const noexcept { return speaker_id_; }
  const FrameMatrix& units() const noexcept { return units_; }
  std::span<const float> unit(std::size_t row) const noexcept { return units_.row(row); }
  double norm(std::size_t row) const noexcept { return norms_[row]; }
  const std::vector<UtteranceSpan>& utterances() const noexcept { return utterances_; }

  Provenance provenance(std::size_t row) const {
    auto it = std::upper_bound(
        utterances_.begin(), utterances_.end(), row,
        [](std::size_t r, const UtteranceSpan& u) { return r < u.first_row; });
    const UtteranceSpan& span = *std::prev(it);
    return {span.source_id, row - span.first_row};
  }

  /// Rows of one utterance as a standalone sequence.
  FeatureSequence utterance_sequence(std::size_t index) const {
    const UtteranceSpan& u = utterances_.at(index);
    auto values = units_.data().subspan(u.first_row * dim(), u.num_rows * dim());
    return {FrameMatrix(u.num_rows, dim(), {values.begin(), values.end()}), frame_rate_hz_,
            u.source_id};
  }

 private:
  UnitDatabase() = default;

  void ComputeNorms() {
    norms_.resize(units_.rows());
    for (std::size_t i = 0; i < units_.rows(); ++i) {
      norms_[i] = Norm(units_.row(i));
      if (!(norms_[i] >= kMinNorm)) {
        const Provenance p = provenance(i);
        Fail(ErrorCode::kZeroNorm, "zero-norm frame " + std::to_string(p.frame_index) +
                                       " in '" + std::string(p.source_id) + "'");
      }
    }
  }

  FrameMatrix units_;
  std::vector<double> norms_;
  std::vector<UtteranceSpan> utterances_;
  float frame_rate_hz_ = kDefaultFrameRateHz;
  std::string speaker_id_;
};

/// Loads each KNNF path in order and concatenates. source_id of each
/// utterance is the path as given.
inline UnitDatabase BuildDatabase(std::span<const std::filesystem::path> paths,
                                  std::string speaker_id) {
  if (paths.empty()) Fail(ErrorCode::kEmptyInput, "empty path list for database");
  std::vector<FeatureSequence> seqs;
  seqs.reserve(paths.size());
  for (const auto& p : paths) {
    seqs.push_back(LoadFeatures(p));
    seqs.back().source_id = p.generic_string();
  }
  return UnitDatabase::FromSequences(seqs, std::move(speaker_id));
}

inline double DatabaseDuration(const UnitDatabase& db) noexcept {
  return static_cast<double>(db.size()) / db.frame_rate_hz();
}

struct SubsetSpec {
  double duration_seconds = 0.0;
  std::uint64_t seed = 0;
};

/// ceil(seconds * rate), ignoring float noise such as 0.3 * 50 = 15.000000000000002.
inline std::size_t FramesForDuration(double seconds, double frame_rate_hz) {
  const double exact = seconds * frame_rate_hz;
  const double nearest = std::round(exact);
  if (std::abs(exact - nearest) <= 1e-9 * std::max(1.0, nearest)) {
    return static_cast<std::size_t>(nearest);
  }
  return static_cast<std::size_t>(std::ceil(exact));
}

/// Whole utterances in seeded shuffle order until the requested duration is
/// reached; the utterance that would overflow contributes only a frame prefix.
inline UnitDatabase SubsetDatabase(const UnitDatabase& db, const SubsetSpec& spec) {
  if (!std::isfinite(spec.duration_seconds) || spec.duration_seconds <= 0.0) {
    Fail(ErrorCode::kInvalidArgument, "subset duration must be positive");
  }
  const std::size_t wanted = FramesForDuration(spec.duration_seconds, db.frame_rate_hz());
  if (wanted > db.size()) {
    Fail(ErrorCode::kDurationExceeded,
         "requested " + std::to_string(spec.duration_seconds) + " s but database holds " +
             std::to_string(DatabaseDuration(db)) + " s");
  }
  std::vector<std::size_t> order(db.utterances().size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng::Engine engine(spec.seed);
  rng::Shuffle(std::span(order), engine);

  const std::size_t dim = db.dim();
  std::vector<float> data;
  data.reserve(wanted * dim);
  std::vector<UtteranceSpan> spans;
  std::size_t taken = 0;
  for (std::size_t index : order) {
    if (taken >= wanted) break;
    const UtteranceSpan& u = db.utterances()[index];
    const std::size_t n = std::min(u.num_rows, wanted - taken);
    auto values = db.units().data().subspan(u.first_row * dim, n * dim);
    data.insert(data.end(), values.begin(), values.end());
    spans.push_back({u.source_id, taken, n});
    taken += n;
  }
  return UnitDatabase::FromUnits(FrameMatrix(taken, dim, std::move(data)), std::move(spans),
                                 db.frame_rate_hz(), db.speaker_id());
}

// Database manifest: {"speaker_id": ..., "files": [relative KNNF paths]}.
// Stored database:   {"format": "knntts-database", "version": 1, "speaker_id",
//                     "frame_rate_hz", "dim", "num_units", "units_file",
//                     "utterances": [{"source_id", "frames"}]}

inline constexpr std::string_view kDatabaseFormat = "knntts-database";

struct DatabaseManifest {
  std::string speaker_id;
  std::vector<std::string> files;
};

inline nlohmann::json ReadJsonFile(const std::filesystem::path& path) {
  const std::string text = detail::ReadFileBytes(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorCode::kBadManifest, "'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

inline void WriteJsonFile(const std::filesystem::path& path, const nlohmann::json& doc) {
  detail::WriteFileBytes(path, doc.dump(2) + "\n");
}

inline DatabaseManifest ParseManifest(const nlohmann::json& doc) {
  try {
    DatabaseManifest m;
    m.speaker_id = doc.at("speaker_id").get<std::string>();
    m.files = doc.at("files").get<std::vector<std::string>>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorCode::kBadManifest, std::string("invalid database manifest: ") + e.what());
  }
}

/// Builds a database from a manifest; file paths resolve against the
/// manifest's directory and the manifest entries become source ids.
inline UnitDatabase BuildDatabaseFromManifest(const std::filesystem::path& manifest_path) {
  const DatabaseManifest m = ParseManifest(ReadJsonFile(manifest_path));
  if (m.files.empty()) Fail(ErrorCode::kEmptyInput, "manifest lists no files");
  const auto base = manifest_path.parent_path();
  std::vector<FeatureSequence> seqs;
  for (const auto& f : m.files) {
    seqs.push_back(LoadFeatures(base / f));
    seqs.back().source_id = f;
  }
  return UnitDatabase::FromSequences(seqs, m.speaker_id);
}

/// Writes the database JSON at `path` and its units as `<stem>.units.knnf`
/// next to it.
inline void SaveDatabase(const UnitDatabase& db, const std::filesystem::path& path) {
  const std::string units_name = path.stem().string() + ".units.knnf";
  FeatureSequence units{db.units(), db.frame_rate_hz(), db.speaker_id()};
  SaveFeatures(units, path.parent_path() / units_name);
  nlohmann::json utts = nlohmann::json::array();
  for (const auto& u : db.utterances()) {
    utts.push_back({{"source_id", u.source_id}, {"frames", u.num_rows}});
  }
  nlohmann::json doc = {{"format", kDatabaseFormat},
                        {"version", 1},
                        {"speaker_id", db.speaker_id()},
                        {"frame_rate_hz", db.frame_rate_hz()},
                        {"dim", db.dim()},
                        {"num_units", db.size()},
                        {"units_file", units_name},
                        {"utterances", utts}};
  WriteJsonFile(path, doc);
}

/// Loads either a stored database or a manifest (built on the fly).
inline UnitDatabase LoadDatabase(const std::filesystem::path& path) {
  const nlohmann::json doc = ReadJsonFile(path);
  if (!doc.is_object()) Fail(ErrorCode::kBadManifest, "'" + path.string() + "' is not an object");
  if (!doc.contains("units_file")) return BuildDatabaseFromManifest(path);
  try {
    if (doc.at("format").get<std::string>() != kDatabaseFormat ||
        doc.at("version").get<int>() != 1) {
      Fail(ErrorCode::kBadManifest, "'" + path.string() + "' has an unknown database format");
    }
    FeatureSequence units =
        LoadFeatures(path.parent_path() / doc.at("units_file").get<std::string>());
    std::vector<UtteranceSpan> spans;
    std::size_t next = 0;
    for (const auto& u : doc.at("utterances")) {
      const auto n = u.at("frames").get<std::size_t>();
      spans.push_back({u.at("source_id").get<std::string>(), next, n});
      next += n;
    }
    if (doc.at("dim").get<std::size_t>() != units.dim() ||
        doc.at("num_units").get<std::size_t>() != units.num_frames()) {
      Fail(ErrorCode::kBadManifest, "'" + path.string() + "' shape disagrees with its units file");
    }
    return UnitDatabase::FromUnits(std::move(units.frames), std::move(spans),
                                   units.frame_rate_hz, doc.at("speaker_id").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorCode::kBadManifest, "invalid database file '" + path.string() + "': " + e.what());
  }
}

}  // namespace knntts
