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

// Synthetic feature corpora with known ground truth.
//
// Every frame is phone_centroid[p] + speaker_offset[s] + session[s][u] + noise:
// content clusters shared across speakers plus one offset per speaker, so
// nearby frames share a phone while keeping their speaker. Scales are
// expected Euclidean norms: each vector element is drawn from
// N(0, (scale / sqrt(dim))^2). With noise_scale < content_scale / 4 a frame
// is always closer to its own centroid (after removing its speaker offset)
// than to any other.
//
// session_scale adds a per-utterance offset around the speaker offset
// (recording-condition variability). It is 0 by default; a small database
// then samples few sessions and its centroid drifts from the speaker's.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "json.hpp"
#include "knntts/error.hpp"
#include "knntts/feature_store.hpp"
#include "knntts/frame_matrix.hpp"
#include "knntts/rng.hpp"

namespace knntts::synth {

struct SynthConfig {
  std::size_t n_phones = 8;
  std::size_t dim = 64;
  std::size_t n_speakers = 2;
  std::size_t frames_per_utterance = 250;
  std::size_t utterances_per_speaker = 8;
  double content_scale = 1.0;
  double speaker_scale = 0.5;
  double noise_scale = 0.05;
  double session_scale = 0.0;
  std::uint64_t seed = 0;
};

struct SynthTruth {
  FrameMatrix phone_centroids;
  FrameMatrix speaker_offsets;
  /// labels[speaker][utterance][frame] = phone id.
  std::vector<std::vector<std::vector<std::uint32_t>>> labels;
};

struct SynthCorpus {
  /// utterances[speaker][utterance]
  std::vector<std::vector<FeatureSequence>> utterances;
  SynthTruth truth;
};

inline void ValidateConfig(const SynthConfig& c) {
  if (c.n_phones == 0 || c.dim == 0 || c.n_speakers == 0 || c.frames_per_utterance == 0 ||
      c.utterances_per_speaker == 0) {
    Fail(ErrorCode::kInvalidArgument, "synthetic config counts must be positive");
  }
  if (!(c.content_scale > 0.0) || !(c.speaker_scale > 0.0) || !(c.noise_scale >= 0.0) ||
      !(c.session_scale >= 0.0) || !std::isfinite(c.content_scale) ||
      !std::isfinite(c.speaker_scale) || !std::isfinite(c.noise_scale) ||
      !std::isfinite(c.session_scale)) {
    Fail(ErrorCode::kInvalidArgument,
         "content_scale and speaker_scale must be > 0, noise and session scales >= 0");
  }
}

inline std::string UtteranceId(std::size_t speaker, std::size_t utterance) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "spk%zu_utt%03zu", speaker, utterance);
  return buf;
}

namespace detail {

inline constexpr int kMaxResampleAttempts = 1000;

inline double SquaredDistance(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    const double diff = static_cast<double>(a[d]) - b[d];
    s += diff * diff;
  }
  return s;
}

inline void DrawGaussianVector(rng::Engine& engine, double scale, std::span<float> out) {
  const double sigma = scale / std::sqrt(static_cast<double>(out.size()));
  for (float& v : out) v = static_cast<float>(sigma * engine.gaussian());
}

// Draws `count` vectors whose pairwise distances are all >= scale,
// redrawing each new vector until it clears the ones before it.
inline FrameMatrix DrawSeparated(rng::Engine& engine, std::size_t count, std::size_t dim,
                                 double scale, const char* what) {
  FrameMatrix out(count, dim);
  for (std::size_t i = 0; i < count; ++i) {
    int attempts = 0;
    for (;;) {
      DrawGaussianVector(engine, scale, out.row(i));
      bool separated = true;
      for (std::size_t j = 0; j < i && separated; ++j) {
        separated = SquaredDistance(out.row(i), out.row(j)) >= scale * scale;
      }
      if (separated) break;
      if (++attempts >= kMaxResampleAttempts) {
        Fail(ErrorCode::kSeparationUnattainable,
             std::string("could not separate ") + what + " in dim " + std::to_string(dim));
      }
    }
  }
  return out;
}

}  // namespace detail

inline SynthCorpus Generate(const SynthConfig& config) {
  ValidateConfig(config);
  const std::size_t dim = config.dim;
  SynthCorpus corpus;
  {
    rng::Engine engine(rng::DeriveSeed(config.seed, 0));
    corpus.truth.phone_centroids =
        detail::DrawSeparated(engine, config.n_phones, dim, config.content_scale, "phone centroids");
  }
  {
    rng::Engine engine(rng::DeriveSeed(config.seed, 1));
    corpus.truth.speaker_offsets = detail::DrawSeparated(engine, config.n_speakers, dim,
                                                         config.speaker_scale, "speaker offsets");
  }
  const double noise_sigma = config.noise_scale / std::sqrt(static_cast<double>(dim));
  corpus.utterances.resize(config.n_speakers);
  corpus.truth.labels.resize(config.n_speakers);
  std::vector<float> session(dim);
  for (std::size_t s = 0; s < config.n_speakers; ++s) {
    auto offset = corpus.truth.speaker_offsets.row(s);
    for (std::size_t u = 0; u < config.utterances_per_speaker; ++u) {
      rng::Engine engine(rng::DeriveSeed(config.seed, 2, s, u));
      detail::DrawGaussianVector(engine, config.session_scale, session);
      FrameMatrix frames(config.frames_per_utterance, dim);
      std::vector<std::uint32_t> labels(config.frames_per_utterance);
      for (std::size_t t = 0; t < config.frames_per_utterance; ++t) {
        const auto p = static_cast<std::uint32_t>(engine.below(config.n_phones));
        labels[t] = p;
        auto centroid = corpus.truth.phone_centroids.row(p);
        auto frame = frames.row(t);
        for (std::size_t d = 0; d < dim; ++d) {
          const double noise = noise_sigma > 0.0 ? noise_sigma * engine.gaussian() : 0.0;
          frame[d] = static_cast<float>(static_cast<double>(centroid[d]) + offset[d] +
                                        session[d] + noise);
        }
      }
      corpus.utterances[s].push_back(
          {std::move(frames), kDefaultFrameRateHz, UtteranceId(s, u)});
      corpus.truth.labels[s].push_back(std::move(labels));
    }
  }
  return corpus;
}

/// Nearest phone centroid per frame after removing the speaker offset;
/// ties go to the lower phone id.
inline std::vector<std::uint32_t> LabelFrames(const FeatureSequence& frames,
                                              const SynthTruth& truth, std::size_t speaker) {
  if (speaker >= truth.speaker_offsets.rows()) {
    Fail(ErrorCode::kUnknownSpeaker, "speaker " + std::to_string(speaker) + " not in truth");
  }
  if (frames.dim() != truth.phone_centroids.cols()) {
    Fail(ErrorCode::kDimensionMismatch, "dimension mismatch between frames and truth");
  }
  auto offset = truth.speaker_offsets.row(speaker);
  std::vector<std::uint32_t> labels(frames.num_frames());
  std::vector<float> shifted(frames.dim());
  for (std::size_t t = 0; t < frames.num_frames(); ++t) {
    auto frame = frames.frames.row(t);
    double best = INFINITY;
    std::uint32_t best_id = 0;
    for (std::size_t p = 0; p < truth.phone_centroids.rows(); ++p) {
      auto c = truth.phone_centroids.row(p);
      double s = 0.0;
      for (std::size_t d = 0; d < frame.size(); ++d) {
        const double diff = static_cast<double>(frame[d]) - offset[d] - c[d];
        s += diff * diff;
      }
      if (s < best) {
        best = s;
        best_id = static_cast<std::uint32_t>(p);
      }
    }
    labels[t] = best_id;
  }
  return labels;
}

inline nlohmann::json TruthToJson(const SynthTruth& truth, const SynthConfig& config) {
  auto matrix_json = [](const FrameMatrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < m.rows(); ++i) {
      auto r = m.row(i);
      rows.push_back(std::vector<float>(r.begin(), r.end()));
    }
    return rows;
  };
  nlohmann::json labels = nlohmann::json::array();
  for (std::size_t s = 0; s < truth.labels.size(); ++s) {
    for (std::size_t u = 0; u < truth.labels[s].size(); ++u) {
      labels.push_back({{"speaker", s},
                        {"utterance", u},
                        {"source_id", UtteranceId(s, u)},
                        {"phones", truth.labels[s][u]}});
    }
  }
  nlohmann::json cfg = {{"n_phones", config.n_phones},
                        {"dim", config.dim},
                        {"n_speakers", config.n_speakers},
                        {"frames_per_utterance", config.frames_per_utterance},
                        {"utterances_per_speaker", config.utterances_per_speaker},
                        {"content_scale", config.content_scale},
                        {"speaker_scale", config.speaker_scale},
                        {"noise_scale", config.noise_scale},
                        {"session_scale", config.session_scale},
                        {"seed", config.seed}};
  return {{"config", cfg},
          {"phone_centroids", matrix_json(truth.phone_centroids)},
          {"speaker_offsets", matrix_json(truth.speaker_offsets)},
          {"labels", labels}};
}

}  // namespace knntts::synth
