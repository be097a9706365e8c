// SPDX-License-Identifier: Apache-2.0
#pragma once

// End-to-end experiment: synthetic corpus, noisy ASR channel, confidence
// estimation, the tagger variants, combination and scoring.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "slu/autoencoder.hpp"
#include "slu/confidence.hpp"
#include "slu/confusion_network.hpp"
#include "slu/crf.hpp"
#include "slu/eda.hpp"
#include "slu/evaluation.hpp"
#include "slu/grammar.hpp"
#include "slu/noise.hpp"

namespace slu {

struct ExperimentConfig {
  std::uint64_t seed = 7;
  std::string grammar;  // shipped touristic grammar when empty
  std::size_t train = 15000;
  std::size_t dev = 1500;
  std::size_t test = 3000;
  std::size_t nbest = 10;
  std::size_t embedding_dim = 12;
  std::size_t conf_folds = 0;  // >= 2: cross-fitted MS-MLP scores on the training set
  std::size_t bins = 10;
  double tune_step = 0.1;
  bool run_eda = true;
  std::size_t jobs = 1;
  AutoencoderConfig ae;
  MsMlpConfig msmlp;
  CrfConfig crf;
  std::string crf_templates;  // default template set when empty
  EdaConfig eda;

  /// Sets one key (ConfigError for an unknown key or a malformed value).
  void set(const std::string& key, const std::string& value);
  /// key=value lines; '#' starts a comment.
  void load(std::istream& in);
  void load(const std::string& path);
  /// Every key with its value, sorted by key; load() reads this back.
  std::map<std::string, std::string> values() const;
  void write(std::ostream& out) const;
};

/// References, ASR hypotheses (projected labels, error flags, pap) and the
/// per-split word error rate.
struct AsrSplits {
  Dataset ref_train, ref_dev, ref_test;
  Dataset hyp_train, hyp_dev, hyp_test;
  std::vector<NbestList> nbest_test;
  std::vector<ConfusionNetwork> cn_test;
  double test_wer = 0.0;
  std::size_t test_words = 0;
};

DomainGrammar experiment_grammar(const ExperimentConfig& cfg);
AsrSplits make_asr_splits(const ExperimentConfig& cfg, const DomainGrammar& grammar);

struct ConfidenceStage {
  std::vector<EmbeddingTable> tables;
  AutoencoderModel autoencoder;
  double autoencoder_error = 0.0;
  ConfidenceModel model;
  std::vector<double> epoch_losses;
};

/// Synthetic embedding tables, autoencoder fusion and the MS-MLP; attaches
/// mlp_conf to every hypothesis split (cross-fitted on train).
ConfidenceStage run_confidence(const ExperimentConfig& cfg, const DomainGrammar& grammar, AsrSplits& asr);

struct SystemResult {
  std::string name;
  std::vector<TaggerOutput> dev;   // error labels stripped
  std::vector<TaggerOutput> test;  // error labels stripped
  ScoreReport score;               // test
};

/// CRF variants: "crf-nocm", "crf-pap", "crf", "crf-err".
SystemResult run_crf_system(const std::string& name, const ExperimentConfig& cfg, const AsrSplits& asr,
                            const Lexicon& lexicon, CrfModel* model = nullptr);
/// EDA variants: "eda", "eda-err".
SystemResult run_eda_system(const std::string& name, const ExperimentConfig& cfg, const AsrSplits& asr,
                            const Lexicon& lexicon, EdaModel* model = nullptr);

struct ExperimentResult {
  double test_wer = 0.0;
  std::size_t test_words = 0;
  double nce_pap = 0.0;
  double nce_conf = 0.0;
  CalibrationReport calib_pap, calib_conf;
  std::vector<SystemResult> systems;
  std::vector<std::string> combined;  // names of the combined systems
  TunedWeights weights;
  ScoreReport combination, consensus;

  const SystemResult& system(const std::string& name) const;
  void write_report(std::ostream& out) const;
};

/// Runs everything; when `out_dir` is non-empty, writes corpora, models,
/// outputs, report.txt, report.kv and manifest.txt there.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir = {});

/// FNV-1a 64 of a file's bytes, as 16 hex digits.
std::string file_digest(const std::string& path);

}  // namespace slu
