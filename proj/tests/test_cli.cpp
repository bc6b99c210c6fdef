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

// End-to-end checks of the knntts binary: exit codes, artifacts, and
// agreement with the library.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <sstream>

#include "knntts/knntts.hpp"
#include "support/test_support.hpp"

namespace knntts {
namespace {

namespace fs = std::filesystem;
using testing::BitwiseEqual;
using testing::ReadBytes;
using testing::TempDir;

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

RunResult RunCli(const std::string& args, const TempDir& tmp) {
  const fs::path err_file = tmp / "stderr.txt";
  const std::string cmd =
      std::string("'") + KNNTTS_CLI_PATH + "' " + args + " 2>'" + err_file.string() + "'";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof(buf), pipe)) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = ReadBytes(err_file);
  return r;
}

std::string Q(const fs::path& p) { return "'" + p.string() + "'"; }

// Small two-speaker corpus written by the CLI itself, plus a stored database
// for speaker 1.
class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto gen = RunCli("gen-synth --out-dir " + Q(tmp_ / "corpus") +
                                " --seed 5 --frames 60 --utterances 4 --session-scale 0.2",
                            tmp_);
    ASSERT_EQ(gen.exit_code, 0) << gen.err;
    const auto build = RunCli(
        "build-db --manifest " + Q(tmp_ / "corpus/spk1.json") + " --out " + Q(db_path()), tmp_);
    ASSERT_EQ(build.exit_code, 0) << build.err;
    build_out_ = build.out;
  }

  fs::path db_path() const { return tmp_ / "db/spk1.json"; }
  fs::path source_path(int u = 0) const {
    return tmp_ / "corpus/spk0" / (synth::UtteranceId(0, u) + ".knnf");
  }

  TempDir tmp_;
  std::string build_out_;
};

TEST_F(Cli, GenSynthMatchesLibraryAndBuildDbReportsSize) {
  synth::SynthConfig c;
  c.seed = 5;
  c.frames_per_utterance = 60;
  c.utterances_per_speaker = 4;
  c.session_scale = 0.2;
  const auto corpus = synth::Generate(c);
  const auto loaded = LoadFeatures(source_path(2));
  EXPECT_EQ(loaded.frames, corpus.utterances[0][2].frames);

  EXPECT_EQ(build_out_, "N=240 D=64 duration_s=4.8\n");
  const auto db = LoadDatabase(db_path());
  EXPECT_EQ(db.size(), 240u);
  EXPECT_EQ(db.speaker_id(), "spk1");
  EXPECT_TRUE(fs::exists(tmp_ / "db/spk1.units.knnf"));

  const auto truth = ReadJsonFile(tmp_ / "corpus/truth.json");
  EXPECT_EQ(truth.at("config").at("seed"), 5);
  EXPECT_EQ(truth.at("labels").size(), 8u);
}

TEST_F(Cli, BuildDbErrors) {
  WriteJsonFile(tmp_ / "missing.json", {{"speaker_id", "x"}, {"files", {"nope.knnf"}}});
  auto r = RunCli(
      "build-db --manifest " + Q(tmp_ / "missing.json") + " --out " + Q(tmp_ / "o.json"), tmp_);
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("knntts: error code=io"), std::string::npos) << r.err;

  SaveFeatures({testing::RandomMatrix(3, 5, 1), 50.0f, "wide"}, tmp_ / "corpus/wide.knnf");
  WriteJsonFile(tmp_ / "corpus/mixed.json",
                {{"speaker_id", "x"}, {"files", {"spk1/spk1_utt000.knnf", "wide.knnf"}}});
  r = RunCli(
      "build-db --manifest " + Q(tmp_ / "corpus/mixed.json") + " --out " + Q(tmp_ / "o.json"),
      tmp_);
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("dimension mismatch"), std::string::npos) << r.err;

  r = RunCli("build-db --manifest", tmp_);
  EXPECT_EQ(r.exit_code, 2);
}

TEST_F(Cli, ConvertDefaultsMatchLibrary) {
  const fs::path out = tmp_ / "out/conv.knnf";
  const auto r = RunCli("convert --source " + Q(source_path()) + " --db " + Q(db_path()) +
                            " --out " + Q(out) + " --emit-neighbors " + Q(tmp_ / "out/nb.csv"),
                        tmp_);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const auto expected = Convert(LoadFeatures(source_path()), LoadDatabase(db_path()), {});
  EXPECT_TRUE(BitwiseEqual(LoadFeatures(out).frames.data(), expected.converted.frames.data()));

  std::istringstream csv(ReadBytes(tmp_ / "out/nb.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "t,rank,db_row,distance");
  std::size_t lines = 0;
  while (std::getline(csv, line)) ++lines;
  EXPECT_EQ(lines, 60u * 4u);

  const auto manifest = ReadJsonFile(fs::path(out).concat(".run.json"));
  EXPECT_EQ(manifest.at("command"), "convert");
  EXPECT_EQ(manifest.at("tool_version"), kVersion);
  EXPECT_EQ(manifest.at("args").at("k"), 4);
  EXPECT_EQ(manifest.at("args").at("lambda"), 1.0);
  const auto& hashes = manifest.at("input_hashes");
  EXPECT_EQ(hashes.size(), 3u);  // source, database JSON, units file
  for (const auto& [path, hex] : hashes.items()) EXPECT_EQ(hex.get<std::string>().size(), 64u);
}

TEST_F(Cli, ConvertLambdaZeroIsBitwiseIdentity) {
  const fs::path out = tmp_ / "id.knnf";
  const auto r = RunCli("convert --source " + Q(source_path()) + " --db " + Q(db_path()) +
                            " --out " + Q(out) + " --lambda 0",
                        tmp_);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_EQ(ReadBytes(out), ReadBytes(source_path()));
}

TEST_F(Cli, ConvertValidationErrors) {
  auto r = RunCli("convert --source " + Q(source_path()) + " --db " + Q(db_path()) + " --out " +
                      Q(tmp_ / "x.knnf") + " --k 241",
                  tmp_);
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("code=invalid_argument"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(tmp_ / "x.knnf"));

  r = RunCli("convert --source " + Q(source_path()) + " --db " + Q(db_path()) + " --out " +
                 Q(tmp_ / "x.knnf") + " --lambda 1.5",
             tmp_);
  EXPECT_EQ(r.exit_code, 2);

  r = RunCli("convert --source " + Q(tmp_ / "absent.knnf") + " --db " + Q(db_path()) + " --out " +
                 Q(tmp_ / "x.knnf"),
             tmp_);
  EXPECT_EQ(r.exit_code, 1);

  detail::WriteFileBytes(tmp_ / "bad.knnf", "KNNX");
  r = RunCli("convert --source " + Q(tmp_ / "bad.knnf") + " --db " + Q(db_path()) + " --out " +
                 Q(tmp_ / "x.knnf"),
             tmp_);
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("code=bad_magic"), std::string::npos) << r.err;
}

TEST_F(Cli, SweepWritesOneFilePerLambdaAndSummary) {
  const fs::path dir = tmp_ / "sweep";
  const auto r = RunCli("sweep --source " + Q(source_path(0)) + " --source " + Q(source_path(1)) +
                            " --db " + Q(db_path()) + " --out-dir " + Q(dir),
                        tmp_);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const auto db = LoadDatabase(db_path());
  const auto target = CentroidEmbedding(db);
  const std::vector<double> lambdas{0.0, 0.25, 0.5, 0.75, 1.0};
  const auto src = LoadFeatures(source_path(0));
  const auto points = LambdaSweep(src, db, kDefaultK, lambdas);
  std::string expected_summary = "lambda,utterance_id,proxy_secs\n";
  for (const auto& p : points) {
    const auto file = dir / (src.source_id + ".lambda_" + FormatDouble(p.lambda) + ".knnf");
    ASSERT_TRUE(fs::exists(file)) << file;
    EXPECT_TRUE(BitwiseEqual(LoadFeatures(file).frames.data(), p.result.converted.frames.data()));
    EXPECT_TRUE(fs::exists(dir / ("embeddings.lambda_" + FormatDouble(p.lambda) + ".json")));
    expected_summary += FormatDouble(p.lambda) + "," + src.source_id + "," +
                        FormatDouble(ProxySecs(p.result.converted, target)) + "\n";
  }
  const auto summary = ReadBytes(dir / "summary.csv");
  EXPECT_EQ(summary.substr(0, expected_summary.size()), expected_summary);
  EXPECT_EQ(std::count(summary.begin(), summary.end(), '\n'), 11);
  EXPECT_EQ(ReadJsonFile(dir / "run.json").at("command"), "sweep");

  const auto set = LoadEmbeddingSet(dir / "embeddings.lambda_0.5.json");
  EXPECT_EQ(set.label, "lambda=0.5");
  EXPECT_EQ(set.items.size(), 2u);
}

TEST_F(Cli, SecsMatrixFromSweepEmbeddings) {
  const fs::path dir = tmp_ / "sweep";
  ASSERT_EQ(RunCli("sweep --source " + Q(source_path(0)) + " --source " + Q(source_path(1)) +
                       " --db " + Q(db_path()) + " --out-dir " + Q(dir) + " --lambdas 0,1",
                   tmp_)
                .exit_code,
            0);
  const fs::path out = tmp_ / "matrix.json";
  auto r = RunCli("secs-matrix --group " + Q(dir / "embeddings.lambda_0.json") + " --group " +
                      Q(dir / "embeddings.lambda_1.json") + " --policy full --out " + Q(out),
                  tmp_);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const auto report = ReadJsonFile(out);
  const auto expected = SimilarityMatrix({LoadEmbeddingSet(dir / "embeddings.lambda_0.json"),
                                          LoadEmbeddingSet(dir / "embeddings.lambda_1.json")},
                                         SplitPolicy::kFull);
  EXPECT_EQ(report.at("split_policy"), "full");
  EXPECT_EQ(report.at("matrix"), nlohmann::json(expected.matrix));
  EXPECT_TRUE(fs::exists(fs::path(out).concat(".run.json")));

  r = RunCli("secs-matrix --group " + Q(dir / "embeddings.lambda_0.json") + " --out " + Q(out),
             tmp_);
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("code=group_too_small"), std::string::npos) << r.err;
}

TEST_F(Cli, AblateIsDeterministicAcrossRunsAndThreads) {
  const std::string base = "ablate --source " + Q(source_path(0)) + " --source " +
                           Q(source_path(1)) + " --db " + Q(db_path()) +
                           " --durations 0.5,1,4 --seeds 1,2,3";
  std::vector<std::string> outputs;
  for (const char* threads : {"1", "4", "1"}) {
    const fs::path out = tmp_ / (std::string("abl_") + std::to_string(outputs.size()) + ".csv");
    const auto r = RunCli(base + " --threads " + threads + " --out " + Q(out), tmp_);
    ASSERT_EQ(r.exit_code, 0) << r.err;
    outputs.push_back(ReadBytes(out));
  }
  EXPECT_EQ(outputs[0], outputs[1]);
  EXPECT_EQ(outputs[0], outputs[2]);
  EXPECT_EQ(std::count(outputs[0].begin(), outputs[0].end(), '\n'), 1 + 3 * 3 * 2);

  const std::vector<FeatureSequence> sources{LoadFeatures(source_path(0)),
                                             LoadFeatures(source_path(1))};
  const auto rows = AblationRun(sources, LoadDatabase(db_path()), {{0.5, 1.0, 4.0}, {1, 2, 3}});
  EXPECT_EQ(outputs[0], AblationCsv(rows));

  const auto manifest = ReadJsonFile(tmp_ / "abl_0.csv.run.json");
  EXPECT_EQ(manifest.at("seeds"), nlohmann::json({1, 2, 3}));
}

TEST_F(Cli, AblateErrors) {
  const std::string base = "ablate --source " + Q(source_path(0)) + " --db " + Q(db_path()) +
                           " --seeds 1 --out " + Q(tmp_ / "a.csv");
  auto r = RunCli(base + " --durations 100", tmp_);
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("code=duration_exceeded"), std::string::npos) << r.err;

  detail::WriteFileBytes(tmp_ / "scores.csv", "utterance_id,metric_name,value\nghost,wer,1\n");
  r = RunCli(base + " --durations 1 --scores " + Q(tmp_ / "scores.csv"), tmp_);
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("code=unknown_utterance"), std::string::npos) << r.err;

  detail::WriteFileBytes(tmp_ / "scores.csv",
                         "utterance_id,metric_name,value\nspk0_utt000,wer,0.5\n");
  r = RunCli(base + " --durations 1 --scores " + Q(tmp_ / "scores.csv"), tmp_);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_NE(ReadBytes(tmp_ / "a.csv").find("1,1,spk0_utt000,wer,0.5\n"), std::string::npos);
}

TEST_F(Cli, SubsetDbMatchesLibrary) {
  const fs::path out = tmp_ / "sub/spk1_2s.json";
  const auto r =
      RunCli("subset-db --db " + Q(db_path()) + " --duration 2 --seed 7 --out " + Q(out), tmp_);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_EQ(r.out, "N=100 D=64 duration_s=2\n");
  const auto expected = SubsetDatabase(LoadDatabase(db_path()), {2.0, 7});
  const auto loaded = LoadDatabase(out);
  EXPECT_EQ(loaded.units(), expected.units());
  ASSERT_EQ(loaded.utterances().size(), expected.utterances().size());
  for (std::size_t i = 0; i < loaded.utterances().size(); ++i) {
    EXPECT_EQ(loaded.utterances()[i].source_id, expected.utterances()[i].source_id);
  }
  EXPECT_EQ(ReadJsonFile(fs::path(out).concat(".run.json")).at("seeds"), nlohmann::json({7}));
}

}  // namespace
}  // namespace knntts
