// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "slu/corpus.hpp"
#include "slu/lexicon.hpp"

namespace slu {

/// Part-of-speech and lemma of a vocabulary word.
struct WordInfo {
  std::string pos;
  std::string lemma;
};

/// Template-based domain grammar standing in for a real dialogue corpus.
///
/// Text format, one section header per block:
///
///     [words]              word POS [lemma]
///     [category NAME]      phrase [= value]     (semantic-category lexicon)
///     [macro NAME]         realization           (unlabeled expansion)
///     [slot CONCEPT]       realization           (labeled with CONCEPT)
///     [pattern]            weight word {SLOT} $MACRO ...
///     [confusions]         word: candidate candidate ...
///     [fillers]            word word ...          (insertion vocabulary)
///
/// Realizations may reference macros with `$NAME`; patterns reference slots
/// with `{CONCEPT}`. Lines starting with '#' are comments.
struct DomainGrammar {
  struct Pattern {
    double weight = 1.0;
    std::vector<std::string> items;  // literal word, "{SLOT}" or "$MACRO"
  };

  std::map<std::string, WordInfo> words;
  Lexicon lexicon;
  std::map<std::string, std::vector<std::vector<std::string>>> macros;
  std::map<std::string, std::vector<std::vector<std::string>>> slots;
  std::vector<Pattern> patterns;
  std::map<std::string, std::vector<std::string>> confusions;
  std::vector<std::string> fillers;

  static DomainGrammar parse(std::string_view content);
  static DomainGrammar load(const std::string& path);
  /// The shipped touristic-domain grammar.
  static DomainGrammar touristic();

  LabelScheme scheme() const;
  /// Every word the grammar, its confusions or fillers can produce, sorted.
  std::vector<std::string> vocabulary() const;
  /// Part of speech for a word; capitalized unknown words are PROPN, other
  /// unknown words NOUN.
  WordInfo info(std::string_view word) const;
  /// Throws ConfigError when the grammar cannot generate anything, a
  /// reference is dangling or a slot realization has no lexicon reading.
  void check() const;
};

/// Fills lemma, POS, semantic categories and a rule-based dependency
/// structure for a token sequence whose surfaces are set.
void annotate_tokens(std::vector<Token>& tokens, const DomainGrammar& grammar);

/// Deterministic corpus generation: utterance i uses a stream derived from
/// (seed, i), so any prefix of a larger corpus is reproduced exactly.
Dataset generate_corpus(const DomainGrammar& grammar, std::size_t n, std::uint64_t seed,
                        std::string_view id_prefix = "utt");

}  // namespace slu
