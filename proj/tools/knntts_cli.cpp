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

// knntts: command-line front end for unit databases, kNN conversion, lambda
// sweeps, similarity matrices, duration ablations and synthetic corpora.
//
// Exit codes: 0 success, 1 I/O failure, 2 validation failure. Failures print
// one line to stderr: "knntts: error code=<code> <message>".
//
// Every command that writes artifacts also writes a run manifest next to its
// output ({tool_version, command, args, seeds, input_hashes}).

#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "knntts/knntts.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitIo = 1;
constexpr int kExitValidation = 2;

std::string Sha256Hex(const fs::path& path) {
  const std::string bytes = knntts::detail::ReadFileBytes(path);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    knntts::Fail(knntts::ErrorCode::kIo, "SHA-256 failed for '" + path.string() + "'");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof(buf), "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

void EnsureParentDir(const fs::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  if (ec) {
    knntts::Fail(knntts::ErrorCode::kIo, "cannot create directory '" +
                                             path.parent_path().string() + "': " + ec.message());
  }
}

void EnsureDir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) knntts::Fail(knntts::ErrorCode::kIo, "cannot create '" + dir.string() + "'");
}

void WriteRunManifest(const fs::path& path, const std::string& command, const json& args,
                      const std::vector<std::uint64_t>& seeds,
                      const std::vector<fs::path>& inputs) {
  json hashes = json::object();
  for (const auto& in : inputs) hashes[in.generic_string()] = Sha256Hex(in);
  knntts::WriteJsonFile(path, {{"tool_version", knntts::kVersion},
                               {"command", command},
                               {"args", args},
                               {"seeds", seeds},
                               {"input_hashes", hashes}});
}

fs::path RunManifestFor(const fs::path& out) {
  return fs::path(out).concat(".run.json");
}

// Stored databases reference a units file; hash it along with the JSON.
std::vector<fs::path> DatabaseInputs(const fs::path& db_path) {
  std::vector<fs::path> inputs{db_path};
  const json doc = knntts::ReadJsonFile(db_path);
  if (doc.contains("units_file")) {
    inputs.push_back(db_path.parent_path() / doc.at("units_file").get<std::string>());
  } else if (doc.contains("files")) {
    for (const auto& f : knntts::ParseManifest(doc).files) {
      inputs.push_back(db_path.parent_path() / f);
    }
  }
  return inputs;
}

std::string LambdaTag(double lambda) { return knntts::FormatDouble(lambda); }

std::string LambdaLabel(double lambda) { return "lambda=" + knntts::FormatDouble(lambda); }

// ---------------------------------------------------------------------------

struct BuildDbArgs {
  std::string manifest;
  std::string out;
};

void RunBuildDb(const BuildDbArgs& a) {
  const auto db = knntts::BuildDatabaseFromManifest(a.manifest);
  EnsureParentDir(a.out);
  knntts::SaveDatabase(db, a.out);
  WriteRunManifest(RunManifestFor(a.out), "build-db", {{"manifest", a.manifest}, {"out", a.out}},
                   {}, DatabaseInputs(a.manifest));
  std::cout << "N=" << db.size() << " D=" << db.dim()
            << " duration_s=" << knntts::FormatDouble(knntts::DatabaseDuration(db)) << "\n";
}

struct ConvertArgs {
  std::string source;
  std::string db;
  std::string out;
  int k = knntts::kDefaultK;
  double lambda = knntts::kDefaultLambda;
  std::string emit_neighbors;
  std::size_t threads = 0;
  std::size_t block_size = knntts::kDefaultBlockSize;
};

void RunConvert(const ConvertArgs& a) {
  const auto source = knntts::LoadFeatures(a.source);
  const auto db = knntts::LoadDatabase(a.db);
  const knntts::ConversionSpec spec{a.k, a.lambda, knntts::DistanceMetric::kCosine};
  knntts::ValidateConversionInputs(source, db, spec);
  const auto index = knntts::BuildIndex(db, a.block_size);
  const auto result = knntts::ConvertIndexed(source, db, index, spec, a.threads);
  EnsureParentDir(a.out);
  knntts::SaveFeatures(result.converted, a.out);
  if (!a.emit_neighbors.empty()) {
    std::string csv = "t,rank,db_row,distance\n";
    for (std::size_t t = 0; t < source.num_frames(); ++t) {
      const auto row = result.neighbors_of(t);
      for (std::size_t r = 0; r < row.size(); ++r) {
        csv += std::to_string(t) + "," + std::to_string(r) + "," + std::to_string(row[r].row) +
               "," + knntts::FormatDouble(row[r].distance) + "\n";
      }
    }
    EnsureParentDir(a.emit_neighbors);
    knntts::detail::WriteFileBytes(a.emit_neighbors, csv);
  }
  auto inputs = DatabaseInputs(a.db);
  inputs.insert(inputs.begin(), a.source);
  WriteRunManifest(RunManifestFor(a.out), "convert",
                   {{"source", a.source},
                    {"db", a.db},
                    {"out", a.out},
                    {"k", a.k},
                    {"lambda", a.lambda},
                    {"emit_neighbors", a.emit_neighbors},
                    {"block_size", a.block_size}},
                   {}, inputs);
}

struct SweepArgs {
  std::vector<std::string> sources;
  std::string db;
  std::string out_dir;
  int k = knntts::kDefaultK;
  std::vector<double> lambdas{0.0, 0.25, 0.5, 0.75, 1.0};
  std::size_t threads = 0;
};

void RunSweep(const SweepArgs& a) {
  const auto db = knntts::LoadDatabase(a.db);
  std::vector<knntts::FeatureSequence> sources;
  for (const auto& s : a.sources) sources.push_back(knntts::LoadFeatures(s));
  for (double l : a.lambdas) knntts::ValidateLambda(l);
  for (const auto& s : sources) {
    knntts::ValidateConversionInputs(s, db, {a.k, 0.0, knntts::DistanceMetric::kCosine});
  }
  const auto index = knntts::BuildIndex(db);
  const auto target = knntts::CentroidEmbedding(db);
  const fs::path dir = a.out_dir;
  EnsureDir(dir);

  std::vector<knntts::EmbeddingSet> per_lambda(a.lambdas.size());
  for (std::size_t i = 0; i < a.lambdas.size(); ++i) per_lambda[i].label = LambdaLabel(a.lambdas[i]);
  std::string csv = "lambda,utterance_id,proxy_secs\n";
  for (const auto& src : sources) {
    const auto points = knntts::LambdaSweep(src, db, index, a.k, a.lambdas, a.threads);
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto& converted = points[i].result.converted;
      knntts::SaveFeatures(converted,
                           dir / (src.source_id + ".lambda_" + LambdaTag(points[i].lambda) + ".knnf"));
      csv += knntts::FormatDouble(points[i].lambda) + "," + src.source_id + "," +
             knntts::FormatDouble(knntts::ProxySecs(converted, target)) + "\n";
      per_lambda[i].items.push_back({src.source_id, knntts::CentroidEmbedding(converted)});
    }
  }
  knntts::detail::WriteFileBytes(dir / "summary.csv", csv);
  for (std::size_t i = 0; i < a.lambdas.size(); ++i) {
    knntts::WriteJsonFile(dir / ("embeddings.lambda_" + LambdaTag(a.lambdas[i]) + ".json"),
                          knntts::EmbeddingSetToJson(per_lambda[i]));
  }
  auto inputs = DatabaseInputs(a.db);
  for (const auto& s : a.sources) inputs.emplace_back(s);
  WriteRunManifest(dir / "run.json", "sweep",
                   {{"sources", a.sources},
                    {"db", a.db},
                    {"out_dir", a.out_dir},
                    {"k", a.k},
                    {"lambdas", a.lambdas}},
                   {}, inputs);
}

struct SecsMatrixArgs {
  std::vector<std::string> groups;
  std::string policy = "half_AB";
  std::string out;
};

void RunSecsMatrix(const SecsMatrixArgs& a) {
  const auto policy = knntts::ParseSplitPolicy(a.policy);
  std::vector<knntts::EmbeddingSet> groups;
  for (const auto& g : a.groups) groups.push_back(knntts::LoadEmbeddingSet(g));
  const auto report = knntts::SimilarityMatrix(groups, policy);
  EnsureParentDir(a.out);
  knntts::WriteJsonFile(a.out, knntts::SimilarityReportToJson(report));
  std::vector<fs::path> inputs(a.groups.begin(), a.groups.end());
  WriteRunManifest(RunManifestFor(a.out), "secs-matrix",
                   {{"groups", a.groups}, {"policy", a.policy}, {"out", a.out}}, {}, inputs);
}

struct AblateArgs {
  std::vector<std::string> sources;
  std::string db;
  std::vector<double> durations;
  std::vector<std::uint64_t> seeds;
  int k = knntts::kDefaultK;
  double lambda = knntts::kDefaultLambda;
  std::string scores;
  std::string out;
  std::size_t threads = 0;
};

void RunAblate(const AblateArgs& a) {
  const auto db = knntts::LoadDatabase(a.db);
  std::vector<knntts::FeatureSequence> sources;
  for (const auto& s : a.sources) sources.push_back(knntts::LoadFeatures(s));
  knntts::ExternalScores scores;
  if (!a.scores.empty()) scores = knntts::LoadScoresCsv(a.scores);
  knntts::AblationConfig config{a.durations, a.seeds, a.k, a.lambda};
  const auto rows = knntts::AblationRun(sources, db, config, a.scores.empty() ? nullptr : &scores,
                                        a.threads);
  EnsureParentDir(a.out);
  knntts::detail::WriteFileBytes(a.out, knntts::AblationCsv(rows));
  auto inputs = DatabaseInputs(a.db);
  for (const auto& s : a.sources) inputs.emplace_back(s);
  if (!a.scores.empty()) inputs.emplace_back(a.scores);
  WriteRunManifest(RunManifestFor(a.out), "ablate",
                   {{"sources", a.sources},
                    {"db", a.db},
                    {"durations", a.durations},
                    {"seeds", a.seeds},
                    {"k", a.k},
                    {"lambda", a.lambda},
                    {"scores", a.scores},
                    {"out", a.out}},
                   a.seeds, inputs);
}

struct SubsetDbArgs {
  std::string db;
  double duration = 0.0;
  std::uint64_t seed = 0;
  std::string out;
};

void RunSubsetDb(const SubsetDbArgs& a) {
  const auto db = knntts::LoadDatabase(a.db);
  const auto subset = knntts::SubsetDatabase(db, {a.duration, a.seed});
  EnsureParentDir(a.out);
  knntts::SaveDatabase(subset, a.out);
  WriteRunManifest(RunManifestFor(a.out), "subset-db",
                   {{"db", a.db}, {"duration", a.duration}, {"seed", a.seed}, {"out", a.out}},
                   {a.seed}, DatabaseInputs(a.db));
  std::cout << "N=" << subset.size() << " D=" << subset.dim()
            << " duration_s=" << knntts::FormatDouble(knntts::DatabaseDuration(subset)) << "\n";
}

struct GenSynthArgs {
  knntts::synth::SynthConfig config;
  std::string out_dir;
};

void RunGenSynth(const GenSynthArgs& a) {
  const auto corpus = knntts::synth::Generate(a.config);
  const fs::path dir = a.out_dir;
  EnsureDir(dir);
  for (std::size_t s = 0; s < corpus.utterances.size(); ++s) {
    const std::string speaker = "spk" + std::to_string(s);
    EnsureDir(dir / speaker);
    std::vector<std::string> files;
    for (const auto& utt : corpus.utterances[s]) {
      const std::string rel = speaker + "/" + utt.source_id + ".knnf";
      knntts::SaveFeatures(utt, dir / rel);
      files.push_back(rel);
    }
    knntts::WriteJsonFile(dir / (speaker + ".json"), {{"speaker_id", speaker}, {"files", files}});
  }
  knntts::WriteJsonFile(dir / "truth.json", knntts::synth::TruthToJson(corpus.truth, a.config));
  const auto& c = a.config;
  WriteRunManifest(dir / "run.json", "gen-synth",
                   {{"out_dir", a.out_dir},
                    {"n_phones", c.n_phones},
                    {"dim", c.dim},
                    {"n_speakers", c.n_speakers},
                    {"frames_per_utterance", c.frames_per_utterance},
                    {"utterances_per_speaker", c.utterances_per_speaker},
                    {"content_scale", c.content_scale},
                    {"speaker_scale", c.speaker_scale},
                    {"noise_scale", c.noise_scale},
                    {"session_scale", c.session_scale}},
                   {c.seed}, {});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kNN unit selection and voice morphing over SSL feature files", "knntts"};
  app.set_version_flag("--version", knntts::kVersion);
  app.require_subcommand(1);

  BuildDbArgs build_db;
  auto* cmd_build_db = app.add_subcommand("build-db", "Build a unit database from a manifest");
  cmd_build_db->add_option("--manifest", build_db.manifest, "Manifest JSON {speaker_id, files}")
      ->required();
  cmd_build_db->add_option("--out", build_db.out, "Output database JSON")->required();

  ConvertArgs convert;
  auto* cmd_convert = app.add_subcommand("convert", "kNN-convert a source feature file");
  cmd_convert->add_option("--source", convert.source, "Source KNNF file")->required();
  cmd_convert->add_option("--db", convert.db, "Database JSON or manifest")->required();
  cmd_convert->add_option("--out", convert.out, "Output KNNF file")->required();
  cmd_convert->add_option("--k", convert.k, "Neighbors averaged per frame")->capture_default_str();
  cmd_convert->add_option("--lambda", convert.lambda, "Target weight in [0, 1]")
      ->capture_default_str();
  cmd_convert->add_option("--emit-neighbors", convert.emit_neighbors,
                          "CSV of t,rank,db_row,distance");
  cmd_convert->add_option("--threads", convert.threads, "Worker cap (0 = all cores)")
      ->capture_default_str();
  cmd_convert->add_option("--block-size", convert.block_size, "Index rows per scan block")
      ->capture_default_str();

  SweepArgs sweep;
  auto* cmd_sweep = app.add_subcommand("sweep", "Convert over a list of lambda values");
  cmd_sweep->add_option("--source", sweep.sources, "Source KNNF file(s)")->required();
  cmd_sweep->add_option("--db", sweep.db, "Database JSON or manifest")->required();
  cmd_sweep->add_option("--out-dir", sweep.out_dir, "Output directory")->required();
  cmd_sweep->add_option("--k", sweep.k, "Neighbors averaged per frame")->capture_default_str();
  cmd_sweep->add_option("--lambdas", sweep.lambdas, "Comma-separated lambdas")
      ->delimiter(',')
      ->capture_default_str();
  cmd_sweep->add_option("--threads", sweep.threads, "Worker cap (0 = all cores)");

  SecsMatrixArgs secs_matrix;
  auto* cmd_secs = app.add_subcommand("secs-matrix", "Mean pairwise SECS between embedding sets");
  cmd_secs->add_option("--group", secs_matrix.groups, "EmbeddingSet JSON (repeat, >= 2)")
      ->required();
  cmd_secs->add_option("--policy", secs_matrix.policy, "half_AB or full")->capture_default_str();
  cmd_secs->add_option("--out", secs_matrix.out, "Output report JSON")->required();

  AblateArgs ablate;
  auto* cmd_ablate = app.add_subcommand("ablate", "Reference-duration ablation");
  cmd_ablate->add_option("--source", ablate.sources, "Source KNNF file(s)")->required();
  cmd_ablate->add_option("--db", ablate.db, "Database JSON or manifest")->required();
  cmd_ablate->add_option("--durations", ablate.durations, "Comma-separated seconds")
      ->delimiter(',')
      ->required();
  cmd_ablate->add_option("--seeds", ablate.seeds, "Comma-separated subset seeds")
      ->delimiter(',')
      ->required();
  cmd_ablate->add_option("--k", ablate.k, "Neighbors averaged per frame")->capture_default_str();
  cmd_ablate->add_option("--lambda", ablate.lambda, "Target weight in [0, 1]")
      ->capture_default_str();
  cmd_ablate->add_option("--scores", ablate.scores, "External score CSV");
  cmd_ablate->add_option("--out", ablate.out, "Output CSV")->required();
  cmd_ablate->add_option("--threads", ablate.threads, "Worker cap (0 = all cores)");

  SubsetDbArgs subset;
  auto* cmd_subset = app.add_subcommand("subset-db", "Duration-limited database subset");
  cmd_subset->add_option("--db", subset.db, "Database JSON or manifest")->required();
  cmd_subset->add_option("--duration", subset.duration, "Seconds to keep")->required();
  cmd_subset->add_option("--seed", subset.seed, "Shuffle seed")->required();
  cmd_subset->add_option("--out", subset.out, "Output database JSON")->required();

  GenSynthArgs gen;
  auto* cmd_gen = app.add_subcommand("gen-synth", "Generate a synthetic multi-speaker corpus");
  auto& c = gen.config;
  cmd_gen->add_option("--out-dir", gen.out_dir, "Output directory")->required();
  cmd_gen->add_option("--seed", c.seed, "Generator seed")->required();
  cmd_gen->add_option("--phones", c.n_phones, "Content clusters")->capture_default_str();
  cmd_gen->add_option("--dim", c.dim, "Feature dimension")->capture_default_str();
  cmd_gen->add_option("--speakers", c.n_speakers, "Speakers")->capture_default_str();
  cmd_gen->add_option("--frames", c.frames_per_utterance, "Frames per utterance")
      ->capture_default_str();
  cmd_gen->add_option("--utterances", c.utterances_per_speaker, "Utterances per speaker")
      ->capture_default_str();
  cmd_gen->add_option("--content-scale", c.content_scale)->capture_default_str();
  cmd_gen->add_option("--speaker-scale", c.speaker_scale)->capture_default_str();
  cmd_gen->add_option("--noise-scale", c.noise_scale)->capture_default_str();
  cmd_gen->add_option("--session-scale", c.session_scale)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "knntts: error code=invalid_argument " << e.what() << "\n";
    return kExitValidation;
  }

  try {
    if (*cmd_build_db) RunBuildDb(build_db);
    if (*cmd_convert) RunConvert(convert);
    if (*cmd_sweep) RunSweep(sweep);
    if (*cmd_secs) RunSecsMatrix(secs_matrix);
    if (*cmd_ablate) RunAblate(ablate);
    if (*cmd_subset) RunSubsetDb(subset);
    if (*cmd_gen) RunGenSynth(gen);
  } catch (const knntts::Error& e) {
    std::cerr << "knntts: error code=" << knntts::ErrorCodeName(e.code()) << " " << e.what()
              << "\n";
    return e.is_io() ? kExitIo : kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "knntts: error code=io " << e.what() << "\n";
    return kExitIo;
  }
  return 0;
}
