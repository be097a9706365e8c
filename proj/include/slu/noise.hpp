// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "slu/alignment.hpp"
#include "slu/corpus.hpp"
#include "slu/grammar.hpp"

namespace slu {

/// Stochastic ASR error channel. Each reference word is deleted with
/// probability `deletion`, substituted with probability `substitution`
/// (by a confusable word when the confusion lexicon has one, else by a
/// random vocabulary word) and followed by an inserted filler with
/// probability `insertion`, so the expected WER is the sum of the rates.
struct NoiseConfig {
  double substitution = 0.0;
  double deletion = 0.0;
  double insertion = 0.0;
  std::map<std::string, std::vector<std::string>> confusions;
  std::vector<std::string> vocabulary;  // fallback substitutions
  std::vector<std::string> fillers;     // inserted words
  std::uint64_t seed = 0;

  /// Probability that an n-best competitor repeats the 1-best decision at a
  /// position instead of drawing afresh; models correlated ASR errors.
  double nbest_consistency = 0.6;
  /// Competitor weight is exp(-decay * edit distance to the 1-best).
  double nbest_decay = 0.7;

  /// Throws ConfigError unless every rate is in [0,1] and their sum is < 1.
  void check() const;
  double expected_wer() const { return 100.0 * (substitution + deletion + insertion); }

  /// Default channel tuned to a 23.5% WER, with the grammar's confusions.
  static NoiseConfig defaults(const DomainGrammar& grammar, std::uint64_t seed);
};

/// One ASR hypothesis drawn for `ref`: tokens annotated like the reference
/// corpus, error flags from the word alignment to the reference, labels left
/// unset ("_") and reference_tokens attached. Deterministic in (ref.id, seed).
Utterance corrupt(const Utterance& ref, const NoiseConfig& cfg, const DomainGrammar& grammar);

struct WeightedHypothesis {
  double weight = 1.0;
  std::vector<std::string> words;
};

/// n channel draws. Entry 0 is the 1-best returned by corrupt() and carries
/// the largest weight; the others are correlated competitors.
std::vector<WeightedHypothesis> sample_nbest(const Utterance& ref, const NoiseConfig& cfg,
                                             std::size_t n);

/// Copies aligned reference labels onto a hypothesis: match and substitution
/// copy, insertions get null, deleted reference words vanish, and orphan I-c
/// labels are promoted to B-c. Requires reference_tokens.
Utterance project_labels(const Utterance& hyp);

/// Alignment of a hypothesis to its reference words (case-insensitive).
Alignment align_to_reference(const Utterance& hyp);

// N-best file: "# id=<text>" then "weight<TAB>w1 w2 ..." per hypothesis.
struct NbestList {
  std::string id;
  std::vector<WeightedHypothesis> hypotheses;
};
void write_nbest(std::ostream& out, const std::vector<NbestList>& lists);
std::vector<NbestList> read_nbest(std::istream& in);

}  // namespace slu
