// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "slu/corpus.hpp"
#include "slu/embeddings.hpp"
#include "slu/nn.hpp"

namespace slu {

/// Confidences never reach 0 or 1 exactly.
inline constexpr double kConfidenceFloor = 1e-12;

/// Softmax probability of the first (Correct) of two scores, kept strictly
/// inside (0, 1).
double correct_probability(double correct_score, double error_score);

// ---------------------------------------------------------------------------
// Language-model backoff surrogate

enum class Backoff { full = 0, backoff = 1, unknown = 2 };
inline constexpr std::size_t kBackoffValues = 3;

/// Whether a word was reached through a seen bigram, only a seen unigram, or
/// neither, given the reference sentences the table was built from.
class BackoffTable {
 public:
  static constexpr const char* kStart = "<s>";

  void add_sentence(const std::vector<std::string>& words);
  static BackoffTable from_references(const Dataset& data);

  Backoff lookup(const std::string& previous, const std::string& word) const;
  std::size_t unigram_count() const { return unigrams_.size(); }

  void write(std::ostream& out) const;
  static BackoffTable read(std::istream& in);
  bool operator==(const BackoffTable&) const = default;

 private:
  std::set<std::string> unigrams_;
  std::set<std::pair<std::string, std::string>> bigrams_;
};

// ---------------------------------------------------------------------------
// Multi-stream MLP

/// One input vector per stream.
using StreamInput = std::vector<std::vector<double>>;

struct MsMlpConfig {
  std::size_t stream_width = 16;
  std::size_t merge_width = 64;
  std::size_t hidden_width = 32;
  double lr = 0.1;
  std::size_t epochs = 4;
  std::size_t batch = 32;
  std::uint64_t seed = 1;
  std::size_t jobs = 1;
};

/// Per-stream tanh projections, a tanh merge layer over their
/// concatenation, one tanh hidden layer and two linear outputs
/// (Correct, Error).
class MsMlpModel {
 public:
  static constexpr std::size_t kOutputs = 2;

  MsMlpModel() = default;
  MsMlpModel(std::vector<std::size_t> stream_dims, const MsMlpConfig& cfg);

  const std::vector<std::size_t>& stream_dims() const { return stream_dims_; }
  std::size_t stream_width() const { return stream_width_; }
  std::size_t merge_width() const { return merge_width_; }
  std::size_t hidden_width() const { return hidden_width_; }

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  std::array<double, kOutputs> scores(const StreamInput& x) const;
  double confidence(const StreamInput& x) const;

  /// Mean two-class cross-entropy over the examples (target 0 = Correct,
  /// 1 = Error); its gradient is added to *grad when non-null.
  double loss(const std::vector<StreamInput>& inputs, const std::vector<int>& targets,
              std::vector<double>* grad = nullptr) const;
  /// Same sum restricted to [begin, end), unnormalized.
  double loss_sum(const std::vector<StreamInput>& inputs, const std::vector<int>& targets,
                  std::size_t begin, std::size_t end, std::vector<double>* grad) const;

  void write(std::ostream& out) const;
  static MsMlpModel read(std::istream& in);
  bool operator==(const MsMlpModel&) const = default;

 private:
  struct Trace;
  void make_layout();
  void forward(const StreamInput& x, Trace& t) const;

  std::vector<std::size_t> stream_dims_;
  std::size_t stream_width_ = 0, merge_width_ = 0, hidden_width_ = 0;
  std::vector<nn::Block> stream_w_, stream_b_;
  nn::Block merge_w_, merge_b_, hidden_w_, hidden_b_, out_w_, out_b_;
  std::vector<double> params_;
};

/// Mini-batch gradient descent with a fixed learning rate. Batch gradients
/// are reduced over fixed shards in index order, so the result does not
/// depend on cfg.jobs. Throws TrainingError on an empty training set.
MsMlpModel train_msmlp_streams(const std::vector<StreamInput>& inputs, const std::vector<int>& targets,
                               std::vector<std::size_t> stream_dims, const MsMlpConfig& cfg,
                               std::vector<double>* epoch_losses = nullptr);

// ---------------------------------------------------------------------------
// Token contexts -> streams

/// Builds the six input streams of a hypothesized word: fused embeddings of
/// the word and its neighbours within +-2 (zero padding past the edges),
/// word length / 10, LM-backoff one-hot, POS one-hot, dependency-relation
/// one-hot and governor-POS one-hot.
class ConfidenceFeaturizer {
 public:
  static constexpr std::size_t kWindow = 2;
  static constexpr const char* kOther = "<other>";
  static constexpr const char* kRoot = "<root>";
  static const std::vector<std::string>& stream_names();

  ConfidenceFeaturizer() = default;
  ConfidenceFeaturizer(EmbeddingTable fused, BackoffTable backoff, const Dataset& train);

  std::vector<std::size_t> stream_dims() const;
  StreamInput streams(const Utterance& utt, std::size_t i) const;

  const EmbeddingTable& embeddings() const { return fused_; }
  const BackoffTable& backoff() const { return backoff_; }

  void write(std::ostream& out) const;
  static ConfidenceFeaturizer read(std::istream& in);

 private:
  std::size_t pos_index(const std::string& pos) const;
  std::size_t deprel_index(const std::string& rel) const;

  EmbeddingTable fused_;
  BackoffTable backoff_;
  std::vector<std::string> pos_;     // sorted, kOther last
  std::vector<std::string> deprel_;  // sorted, kOther last
};

struct ConfidenceModel {
  ConfidenceFeaturizer featurizer;
  MsMlpModel mlp;
};

/// Trains on every token of `train`, which must all carry error flags
/// (PreconditionError otherwise; TrainingError when there are no tokens).
ConfidenceModel train_msmlp(const Dataset& train, EmbeddingTable fused, BackoffTable backoff,
                            const MsMlpConfig& cfg, std::vector<double>* epoch_losses = nullptr);

/// Softmax value of the Correct output for token i of `utt`.
double confidence_of(const ConfidenceModel& model, const Utterance& utt, std::size_t i);

/// Sets mlp_conf on every token.
void attach_confidences(const ConfidenceModel& model, Dataset& data, std::size_t jobs = 1);

void write_confidence_model(std::ostream& out, const ConfidenceModel& model);
void save_confidence_model(const std::string& path, const ConfidenceModel& model);
ConfidenceModel load_confidence_model(const std::string& path);

}  // namespace slu
