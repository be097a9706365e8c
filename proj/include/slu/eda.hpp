// SPDX-License-Identifier: Apache-2.0
#pragma once

// Encoder/decoder tagger with attention. A bidirectional GRU reads the
// utterance; a GRU decoder emits one label per input word, attending over
// the encoder annotations at every step.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "slu/corpus.hpp"
#include "slu/features.hpp"
#include "slu/nn.hpp"

namespace slu {

struct EdaDims {
  std::size_t embed = 32;
  std::size_t hidden = 32;  // per encoder direction
  std::size_t decoder = 32;
  std::size_t attention = 32;
  std::size_t label_embed = 16;
  /// Feed the annotation of the word being labelled to the decoder next to
  /// the attention context.
  bool aligned_input = true;

  bool operator==(const EdaDims&) const = default;
};

struct EdaConfig {
  EdaDims dims;
  FeatureVectorSpec spec = FeatureVectorSpec::all();
  std::size_t epochs = 4;
  double lr = 0.003;  // Adam step size
  double clip = 5.0;  // global gradient-norm clip, 0 disables
  std::size_t batch = 16;
  /// Words and feature keys seen fewer times map to the unknown row.
  std::size_t min_count = 2;
  std::uint64_t seed = 1;
  std::vector<std::string> labels;  // derived from the data when empty
  std::size_t jobs = 1;
};

/// Per word: concatenated forward and backward encoder states.
struct EncoderAnnotations {
  std::size_t width = 0;
  std::vector<std::vector<double>> rows;

  std::size_t size() const { return rows.size(); }
};

struct AttentionStep {
  std::vector<double> weights;
  std::vector<double> context;
};

struct EdaInput {
  std::size_t word = 0;
  std::vector<std::size_t> features;
  std::vector<double> dense;
};

struct EdaDecoding {
  std::vector<std::size_t> labels;
  std::vector<std::vector<double>> distributions;
  std::vector<std::vector<double>> attention;
};

class EdaModel {
 public:
  static constexpr const char* kUnknown = "<unk>";

  EdaModel() = default;
  /// `vocabulary` excludes the unknown word, which takes embedding row 0.
  /// Feature keys outside `features` are dropped.
  EdaModel(std::vector<std::string> labels, std::vector<std::string> vocabulary, std::vector<std::string> features,
           const EdaDims& dims, const FeatureVectorSpec& spec, std::uint64_t seed);

  const std::vector<std::string>& labels() const { return labels_; }
  const std::vector<std::string>& vocabulary() const { return vocab_; }
  const std::vector<std::string>& feature_keys() const { return features_; }
  const EdaDims& dims() const { return dims_; }
  const FeatureVectorSpec& spec() const { return spec_; }
  std::size_t dense_dim() const { return dense_; }
  std::size_t label_id(const std::string& label) const;

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  /// Named views into params(), in layout order.
  std::vector<std::pair<std::string, nn::Block>> blocks() const;

  std::vector<EdaInput> inputs(const Utterance& utt) const;
  EncoderAnnotations encode(const Utterance& utt) const;
  EncoderAnnotations encode(const std::vector<EdaInput>& x) const;
  AttentionStep attend(const std::vector<double>& state, const EncoderAnnotations& h) const;
  /// Initial decoder state.
  std::vector<double> initial_state(const EncoderAnnotations& h) const;
  /// Greedy decoding, or teacher forcing when `forced` (label ids, one per
  /// word) is given; either way one step per annotation.
  EdaDecoding decode(const EncoderAnnotations& h, const std::vector<std::size_t>* forced = nullptr) const;

  /// Summed cross-entropy of the gold labels under teacher forcing; the
  /// gradient is added to *grad when non-null. DataError for a gold label
  /// outside the inventory.
  double loss_sum(const Utterance& utt, std::vector<double>* grad) const;
  /// Mean per-word cross-entropy over `batch`, gradient written to *grad.
  double loss(const Dataset& batch, std::vector<double>* grad = nullptr) const;

  void write(std::ostream& out) const;
  static EdaModel read(std::istream& in);
  bool operator==(const EdaModel& o) const {
    return labels_ == o.labels_ && vocab_ == o.vocab_ && features_ == o.features_ && dims_ == o.dims_ &&
           spec_ == o.spec_ && params_ == o.params_;
  }

 private:
  struct Gru {
    nn::Block wx, uh, b;
    std::size_t in = 0, out = 0;
  };
  struct GruTrace;
  struct Trace;

  void make_layout();
  void index();
  EncoderAnnotations run_encoder(const std::vector<EdaInput>& x, Trace* tr) const;
  EdaDecoding run_decoder(const EncoderAnnotations& h, const std::vector<std::size_t>* forced, Trace* tr) const;
  void gru_step(const Gru& g, const double* x, const double* h, double* h_next, GruTrace* tr) const;
  void gru_backward(const Gru& g, const GruTrace& tr, const double* dh_next, double* dx, double* dh,
                    std::vector<double>& grad) const;
  void input_vector(const EdaInput& in, double* x) const;

  std::vector<std::string> labels_, vocab_, features_;
  std::unordered_map<std::string, std::size_t> label_index_, word_index_, feature_index_;
  EdaDims dims_;
  FeatureVectorSpec spec_;
  std::size_t dense_ = 0;

  nn::Block word_emb_, feat_emb_, label_emb_;
  Gru fwd_, bwd_, dec_;
  nn::Block init_w_, init_b_, att_w_, att_u_, att_v_, out_w_, out_b_;
  std::vector<double> params_;
};

/// Adam with global-norm clipping over mini-batches of utterances. Batch
/// gradients are reduced over fixed shards, so results do not depend on
/// cfg.jobs. TrainingError on an empty set or divergence.
EdaModel train_eda(const Dataset& train, const EdaConfig& cfg, std::vector<double>* epoch_losses = nullptr);
/// Further epochs on an existing model.
void continue_training(EdaModel& model, const Dataset& train, const EdaConfig& cfg,
                       std::vector<double>* epoch_losses = nullptr);

TaggerOutput tag(const EdaModel& model, const Utterance& utt);
std::vector<TaggerOutput> predict_eda(const EdaModel& model, const Dataset& data, std::size_t jobs = 1);

void save_eda(const std::string& path, const EdaModel& model);
EdaModel load_eda(const std::string& path);

}  // namespace slu
