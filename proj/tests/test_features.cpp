// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <map>
#include <set>

#include "doctest.h"
#include "slu/error.hpp"
#include "slu/features.hpp"
#include "slu/grammar.hpp"
#include "slu/rng.hpp"

using namespace slu;

namespace {

Token tok(const std::string& surface) {
  Token t;
  t.surface = surface;
  return t;
}

std::set<std::string> keys(const std::vector<DiscreteFeature>& fs) {
  std::set<std::string> out;
  for (const auto& f : fs) out.insert(f.key());
  return out;
}

}  // namespace

TEST_CASE("morphological_features") {
  CHECK(keys(morphological_features(tok("paris"))) ==
        std::set<std::string>{"pre1:p", "pre2:pa", "pre3:par", "pre4:pari", "suf1:s", "suf2:is", "suf3:ris",
                              "suf4:aris", "cap:0"});
  CHECK(keys(morphological_features(tok("Paris"))).count("cap:1"));
  CHECK(keys(morphological_features(tok("Paris"))).count("pre1:p"));
  CHECK(keys(morphological_features(tok("ab"))) ==
        std::set<std::string>{"pre1:a", "pre2:ab", "suf1:b", "suf2:ab", "cap:0"});
  // Code points, not bytes.
  CHECK(keys(morphological_features(tok("Évry"))).count("pre1:é"));
  CHECK(keys(morphological_features(tok("Évry"))).count("cap:1"));
}

TEST_CASE("semantic_category_features") {
  const auto grammar = DomainGrammar::touristic();
  CHECK(keys(semantic_category_features(tok("paris"), grammar.lexicon)) == std::set<std::string>{"cat:TOWN"});
  CHECK(keys(semantic_category_features(tok("thirty-three"), grammar.lexicon)) ==
        std::set<std::string>{"cat:FIGURE"});
  CHECK(semantic_category_features(tok("zebra"), grammar.lexicon).empty());
}

TEST_CASE("discretize_confidence") {
  CHECK(discretize_confidence("pap", 0.0, 10).value == "0");
  CHECK(discretize_confidence("pap", 1.0, 10).value == "9");
  CHECK(discretize_confidence("pap", 0.55, 10).value == "5");
  CHECK(discretize_confidence("conf", 0.55, 10).key() == "conf:5");
  CHECK_THROWS_AS(discretize_confidence("pap", 1.01, 10), RangeError);
  CHECK_THROWS_AS(discretize_confidence("pap", -0.01, 10), RangeError);
  CHECK_THROWS_AS(discretize_confidence("pap", 0.5, 1), ConfigError);

  Rng rng(4);
  for (int i = 0; i < 2000; ++i) {
    double a = rng.uniform(), b = rng.uniform();
    if (a > b) std::swap(a, b);
    const std::size_t k = 2 + rng.index(20);
    CHECK(confidence_bin(a, k) <= confidence_bin(b, k));
  }
}

TEST_CASE("token_features") {
  Utterance utt;
  utt.id = "u";
  Token to = tok("to");
  Token paris = tok("Paris");
  paris.lemma = "paris";
  paris.pos = "PROPN";
  paris.governor = 0;
  paris.deprel = "obl";
  paris.sem_categories = {"TOWN"};
  paris.pap = 0.92;
  utt.tokens = {to, paris};

  SUBCASE("surface only") {
    const auto fs = token_features(paris, utt, FeatureVectorSpec{static_cast<unsigned>(FeatureFamily::surface), 10});
    REQUIRE(fs.size() == 1);
    CHECK(fs[0].key() == "w:paris");
  }
  SUBCASE("all families: union of the per-family features") {
    const auto spec = FeatureVectorSpec::all(10);
    const auto got = keys(token_features(paris, utt, spec));
    std::set<std::string> expected{"w:paris", "cat:TOWN", "lemma:paris", "pos:PROPN", "gov:to", "dep:obl",
                                   "pap:9", "conf:absent"};
    for (const auto& k : keys(morphological_features(paris))) expected.insert(k);
    CHECK(got == expected);
  }
  SUBCASE("empty spec is rejected") {
    CHECK_THROWS_AS(token_features(paris, utt, FeatureVectorSpec{0, 10}), ConfigError);
    CHECK_THROWS_AS(FeatureVectorSpec::parse("surface,bogus"), ConfigError);
  }
  SUBCASE("spec names round-trip") {
    const auto spec = FeatureVectorSpec::parse("surface,morph,conf");
    CHECK(FeatureVectorSpec::parse(spec.to_string()).families == spec.families);
    CHECK(FeatureVectorSpec::parse("all").families == FeatureVectorSpec::all().families);
  }
}

TEST_CASE("feature keys are pure and namespaced by family") {
  const auto grammar = DomainGrammar::touristic();
  const auto data = generate_corpus(grammar, 300, 12);
  const auto spec = FeatureVectorSpec::all(10);
  std::map<std::string, std::string> owner;  // key -> family
  for (const auto& u : data.utterances)
    for (const auto& t : u.tokens) {
      const auto fs = token_features(t, u, spec);
      CHECK(fs == token_features(t, u, spec));
      for (const auto& f : fs) {
        const auto [it, inserted] = owner.emplace(f.key(), f.family);
        CHECK(it->second == f.family);
        CHECK(f.family.find(':') == std::string::npos);
      }
    }
}
