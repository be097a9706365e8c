// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "slu/corpus.hpp"
#include "slu/features.hpp"

namespace slu {

// ---------------------------------------------------------------------------
// Templates
//
// One template per line:
//   U:bias                 constant feature
//   U:w[0]                 unigram observation at an offset in [-2, 2]
//   U:w[-1]/w[0]           conjunction of several observations
//   B:y[-1]/y[0]           label-bigram transitions (plus start weights)
// Fields: w, lemma, pos, cat, morph, syn, pap, conf. `morph` expands to the
// nine prefix/suffix/capitalization slots and `syn` to governor and
// relation, so every field has a fixed number of values per token.
// Lines starting with '#' are comments.

struct TemplateItem {
  std::string field;
  int offset = 0;
  bool operator==(const TemplateItem&) const = default;
};

struct CrfTemplate {
  std::vector<TemplateItem> items;  // empty for the bias template
  /// "bias" or e.g. "w[-1]|w[0]".
  std::string name() const;
  bool operator==(const CrfTemplate&) const = default;
};

struct TemplateSet {
  static constexpr int kWindow = 2;

  std::vector<CrfTemplate> observations;
  bool transitions = false;

  /// Throws ConfigError on unknown fields or offsets outside the window.
  static TemplateSet parse(std::string_view text);
  static TemplateSet load(const std::string& path);
  static TemplateSet default_set();
  std::string to_string() const;
  bool operator==(const TemplateSet&) const = default;
};

inline constexpr std::string_view kBos = "<BOS>";
inline constexpr std::string_view kEos = "<EOS>";

/// Observation keys at each position, e.g. "w[-1]|w[0]=a|b". Fields whose
/// feature family is disabled in `spec` contribute no keys.
std::vector<std::vector<std::string>> expand_templates(const Utterance& utt, const TemplateSet& templates,
                                                       const FeatureVectorSpec& spec);

// ---------------------------------------------------------------------------
// Lattice scores and exact inference

/// Dense potentials of one utterance: score(y) = start[y0] +
/// sum_t emission[t][y_t] + sum_{t>0} transition[y_{t-1}][y_t].
struct CrfScores {
  std::size_t length = 0;
  std::size_t labels = 0;
  std::vector<double> emission;    // length x labels
  std::vector<double> transition;  // labels x labels, [prev * labels + cur]
  std::vector<double> start;       // labels

  CrfScores() = default;
  CrfScores(std::size_t length, std::size_t labels);
  double& emit(std::size_t t, std::size_t y) { return emission[t * labels + y]; }
  double emit(std::size_t t, std::size_t y) const { return emission[t * labels + y]; }
  double trans(std::size_t a, std::size_t b) const { return transition[a * labels + b]; }

  double sequence_score(const std::vector<std::size_t>& y) const;
};

/// Log-domain forward and backward passes.
struct ForwardBackward {
  std::vector<double> alpha;  // length x labels
  std::vector<double> beta;   // length x labels
  double log_z_forward = 0.0;
  double log_z_backward = 0.0;
};

ForwardBackward forward_backward(const CrfScores& s);
double log_partition(const CrfScores& s);
/// Exact argmax; ties go to the smallest label id.
std::vector<std::size_t> viterbi_path(const CrfScores& s);
/// Posterior of each label at each position (length x labels).
std::vector<double> node_marginals(const CrfScores& s, const ForwardBackward& fb);
/// Posterior of each label pair at positions (t-1, t), t >= 1, summed over t.
std::vector<double> pair_marginal_sums(const CrfScores& s, const ForwardBackward& fb);

// ---------------------------------------------------------------------------
// Model

class CrfModel {
 public:
  CrfModel() = default;
  CrfModel(std::vector<std::string> labels, TemplateSet templates, FeatureVectorSpec spec, double l2);

  const std::vector<std::string>& labels() const { return labels_; }
  const TemplateSet& templates() const { return templates_; }
  const FeatureVectorSpec& spec() const { return spec_; }
  double l2() const { return l2_; }
  std::size_t feature_count() const { return keys_.size(); }
  const std::vector<std::string>& feature_keys() const { return keys_; }

  /// Weight layout: feature-major emission block (feature x label), then
  /// start weights, then transitions (prev x cur).
  std::vector<double>& weights() { return weights_; }
  const std::vector<double>& weights() const { return weights_; }
  std::size_t start_offset() const { return keys_.size() * labels_.size(); }
  std::size_t transition_offset() const { return start_offset() + labels_.size(); }

  /// Label id, or npos.
  std::size_t label_id(std::string_view label) const;
  /// Adds every observation key of `data` to the index (weights zero).
  void index_features(const Dataset& data);
  /// Feature ids per position; unknown keys are dropped.
  std::vector<std::vector<std::uint32_t>> feature_ids(const Utterance& utt) const;
  CrfScores scores(const std::vector<std::vector<std::uint32_t>>& ids) const;
  CrfScores scores(const Utterance& utt) const { return scores(feature_ids(utt)); }

  void write(std::ostream& out) const;
  static CrfModel read(std::istream& in);
  bool operator==(const CrfModel&) const = default;

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, std::size_t> label_index_;
  TemplateSet templates_;
  FeatureVectorSpec spec_;
  double l2_ = 0.0;
  std::vector<std::string> keys_;
  std::unordered_map<std::string, std::uint32_t> key_index_;
  std::vector<double> weights_;
};

/// sum_n log p(y_n | x_n) - (l2 / 2) ||w||^2 over `batch`; the gradient of
/// that objective is written to *grad (resized) when non-null. Throws
/// DataError for a gold label outside the inventory.
double log_likelihood_and_gradient(const CrfModel& model, const Dataset& batch, std::vector<double>* grad = nullptr);

struct CrfConfig {
  double l2 = 1.0;
  std::size_t epochs = 12;
  double lr = 0.1;
  /// Step size at example t is lr / (1 + lr_decay * t / N).
  double lr_decay = 1.0;
  /// The returned weights are the mean of the weights at the end of the last
  /// `average_epochs` epochs (no averaging below 2).
  std::size_t average_epochs = 4;
  std::uint64_t seed = 1;
  /// Label inventory; derived from the training data when empty.
  std::vector<std::string> labels;
  std::size_t jobs = 1;
};

/// Labels of the scheme found in `data` (null, then B-/I- per concept), with
/// ERROR-C and ERROR-N appended when present.
std::vector<std::string> crf_label_inventory(const Dataset& data);

/// SGD with per-epoch shuffling. `dev_log_likelihood` receives the dev
/// objective after every epoch when `dev` is given.
CrfModel train_crf(const Dataset& train, const TemplateSet& templates, const FeatureVectorSpec& spec,
                   const CrfConfig& cfg, const Dataset* dev = nullptr,
                   std::vector<double>* dev_log_likelihood = nullptr);

/// Further SGD epochs on an existing model and feature index.
void continue_training(CrfModel& model, const Dataset& train, const CrfConfig& cfg, const Dataset* dev = nullptr,
                       std::vector<double>* dev_log_likelihood = nullptr);

TaggerOutput viterbi(const CrfModel& model, const Utterance& utt);
/// Per-position label posteriors (length x labels, row-major).
std::vector<std::vector<double>> marginals(const CrfModel& model, const Utterance& utt);
std::vector<TaggerOutput> predict_crf(const CrfModel& model, const Dataset& data, std::size_t jobs = 1);

void save_crf(const std::string& path, const CrfModel& model);
CrfModel load_crf(const std::string& path);

}  // namespace slu
