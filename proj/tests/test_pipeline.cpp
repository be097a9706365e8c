// SPDX-License-Identifier: Apache-2.0
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "slu/error.hpp"
#include "slu/pipeline.hpp"

using namespace slu;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.seed = 5;
  cfg.train = 200;
  cfg.dev = 40;
  cfg.test = 60;
  cfg.nbest = 4;
  cfg.embedding_dim = 6;
  cfg.ae.epochs = 2;
  cfg.msmlp.epochs = 2;
  cfg.crf.epochs = 3;
  cfg.eda.epochs = 1;
  cfg.eda.dims.embed = cfg.eda.dims.hidden = cfg.eda.dims.decoder = cfg.eda.dims.attention = 8;
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("configuration keys") {
  ExperimentConfig cfg;
  cfg.set("crf.epochs", "3");
  cfg.set("eda.aligned_input", "false");
  cfg.set("tune_step", " 0.25 ");
  CHECK(cfg.crf.epochs == 3);
  CHECK_FALSE(cfg.eda.dims.aligned_input);
  CHECK(cfg.tune_step == 0.25);

  std::stringstream s;
  cfg.write(s);
  ExperimentConfig back;
  back.load(s);
  CHECK(back.values() == cfg.values());
  CHECK(cfg.values().count("jobs") == 0);

  std::istringstream commented("# header\nseed = 12  # trailing\n\ntrain=10\n");
  back.load(commented);
  CHECK(back.seed == 12);
  CHECK(back.train == 10);

  CHECK_THROWS_AS(cfg.set("no.such.key", "1"), ConfigError);
  CHECK_THROWS_AS(cfg.set("train", "ten"), ConfigError);
  CHECK_THROWS_AS(cfg.set("train", "-1"), ConfigError);
  CHECK_THROWS_AS(cfg.set("crf.lr", "nan"), ConfigError);
  CHECK_THROWS_AS(cfg.set("run_eda", "maybe"), ConfigError);
  std::istringstream no_eq("seed 3\n");
  CHECK_THROWS_AS(cfg.load(no_eq), ConfigError);
  CHECK_THROWS_AS(cfg.load(std::string("/nonexistent/config.txt")), ConfigError);
}

TEST_CASE("ASR splits") {
  const auto cfg = small_config();
  const auto grammar = experiment_grammar(cfg);
  const auto asr = make_asr_splits(cfg, grammar);
  CHECK(asr.ref_train.utterances.size() == 200);
  CHECK(asr.hyp_test.utterances.size() == 60);
  CHECK(asr.cn_test.size() == 60);
  CHECK(asr.test_wer > 5.0);
  CHECK(asr.test_wer < 60.0);
  std::size_t words = 0;
  for (const auto& u : asr.ref_test.utterances) words += u.tokens.size();
  CHECK(asr.test_words == words);
  for (const auto& u : asr.hyp_dev.utterances)
    for (const auto& t : u.tokens) {
      REQUIRE(t.pap.has_value());
      CHECK(*t.pap >= 0.0);
      CHECK(*t.pap <= 1.0);
    }
  auto bad = cfg;
  bad.dev = 0;
  CHECK_THROWS_AS(make_asr_splits(bad, grammar), ConfigError);
}

TEST_CASE("small experiment is reproducible") {
  const auto root = std::filesystem::temp_directory_path() / "slu-test-pipeline";
  std::filesystem::remove_all(root);
  auto cfg = small_config();
  const auto a = run_experiment(cfg, (root / "a").string());
  cfg.jobs = 3;
  const auto b = run_experiment(cfg, (root / "b").string());
  CHECK(slurp(root / "a" / "manifest.txt") == slurp(root / "b" / "manifest.txt"));
  CHECK(slurp(root / "a" / "report.txt") == slurp(root / "b" / "report.txt"));
  CHECK(a.systems.size() == 6);
  CHECK(a.combined.size() == 4);
  CHECK(a.weights.weights.size() == 4);
  CHECK_THROWS_AS(a.system("svm"), PreconditionError);

  const auto manifest = slurp(root / "a" / "manifest.txt");
  for (const auto* f : {"file.models/crf.model=", "file.outputs/eda-err.test.txt=", "file.report.kv=",
                        "config.crf.epochs=3"})
    CHECK(manifest.find(f) != std::string::npos);
  CHECK(file_digest((root / "a" / "report.kv").string()).size() == 16);

  // The saved configuration replays the run.
  ExperimentConfig replay;
  replay.load((root / "a" / "config.txt").string());
  CHECK(replay.values() == small_config().values());
  std::filesystem::remove_all(root);
}
