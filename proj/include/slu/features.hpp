// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "slu/corpus.hpp"
#include "slu/lexicon.hpp"

namespace slu {

enum class FeatureFamily : unsigned {
  surface = 1u << 0,
  sem_categories = 1u << 1,
  syntactic = 1u << 2,
  morphological = 1u << 3,
  pap = 1u << 4,
  mlp_conf = 1u << 5,
};

/// A discrete feature; its key is "family:value" so keys from different
/// families never collide.
struct DiscreteFeature {
  std::string family;
  std::string value;

  std::string key() const { return family + ":" + value; }
  bool operator==(const DiscreteFeature&) const = default;
  auto operator<=>(const DiscreteFeature&) const = default;
};

struct FeatureVectorSpec {
  unsigned families = 0;
  std::size_t bins = 10;

  bool operator==(const FeatureVectorSpec&) const = default;
  bool has(FeatureFamily f) const { return (families & static_cast<unsigned>(f)) != 0; }
  FeatureVectorSpec with(FeatureFamily f) const { return {families | static_cast<unsigned>(f), bins}; }
  FeatureVectorSpec without(FeatureFamily f) const { return {families & ~static_cast<unsigned>(f), bins}; }

  /// Throws ConfigError when no family is enabled, an unknown bit is set or
  /// bins < 2.
  void check() const;

  static FeatureVectorSpec all(std::size_t bins = 10);
  /// Lexical, syntactic and morphological families, no confidence measures.
  static FeatureVectorSpec without_confidence(std::size_t bins = 10);
  /// Parses "surface,sem,syn,morph,pap,conf" (or "all").
  static FeatureVectorSpec parse(std::string_view list, std::size_t bins = 10);
  std::string to_string() const;
};

/// Prefixes and suffixes of length 1..min(4,|w|) over lowercased code
/// points, plus the first-letter capitalization flag.
std::vector<DiscreteFeature> morphological_features(const Token& token);

/// One feature per lexicon category of the token's surface.
std::vector<DiscreteFeature> semantic_category_features(const Token& token, const Lexicon& lexicon);

/// Equal-width bin i of [i/k,(i+1)/k), with c = 1 in the top bin. Throws
/// RangeError when c is outside [0,1] and ConfigError when k < 2.
DiscreteFeature discretize_confidence(std::string_view measure, double c, std::size_t k);
std::size_t confidence_bin(double c, std::size_t k);

/// Union of the enabled families. Semantic categories come from the token's
/// annotated SEMCATS column; an absent confidence yields "<measure>:absent".
std::vector<DiscreteFeature> token_features(const Token& token, const Utterance& utt,
                                            const FeatureVectorSpec& spec);

}  // namespace slu
