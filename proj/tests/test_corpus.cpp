// SPDX-License-Identifier: Apache-2.0
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "slu/corpus.hpp"
#include "slu/error.hpp"
#include "slu/grammar.hpp"
#include "slu/rng.hpp"

using namespace slu;

namespace {

Dataset parse(const std::string& s) {
  std::istringstream in(s);
  return read_dataset(in);
}

std::string row(int idx, const std::string& word, const std::string& gov, const std::string& label) {
  return std::to_string(idx) + "\t" + word + "\t" + word + "\tNOUN\t" + gov + "\tdep\t_\t_\t_\t_\t" + label + "\n";
}

}  // namespace

TEST_CASE("read_dataset: empty file gives an empty dataset") {
  CHECK(parse("").utterances.empty());
}

TEST_CASE("read_dataset: one utterance with a two-word segment") {
  const auto data = parse("# id=u1\n" + row(1, "to", "_", "null") + row(2, "saint", "3", "B-TOWN") +
                          row(3, "malo", "1", "I-TOWN"));
  REQUIRE(data.utterances.size() == 1);
  const auto& u = data.utterances[0];
  CHECK(u.id == "u1");
  CHECK(u.tokens.size() == 3);
  CHECK_FALSE(u.tokens[0].governor.has_value());
  CHECK(u.tokens[1].governor == 2u);
  CHECK_FALSE(u.tokens[0].pap.has_value());
  CHECK_FALSE(u.tokens[0].error_flag.has_value());
  Lexicon lex;
  const auto segs = segments_of(u, lex);
  REQUIRE(segs.size() == 1);
  CHECK(segs[0] == ConceptSegment{"TOWN", "saint malo", 1, 3});
}

TEST_CASE("read_dataset: governor outside the utterance is rejected") {
  CHECK_THROWS_AS(parse("# id=u1\n" + row(1, "a", "99", "null") + row(2, "b", "_", "null") +
                        row(3, "c", "_", "null")),
                  SchemaError);
}

TEST_CASE("read_dataset: self-governed token is rejected") {
  CHECK_THROWS_AS(parse("# id=u1\n" + row(1, "a", "1", "null")), SchemaError);
}

TEST_CASE("read_dataset: I- after null is a schema error") {
  CHECK_THROWS_AS(parse("# id=u1\n" + row(1, "a", "_", "null") + row(2, "b", "_", "I-TOWN")), SchemaError);
}

TEST_CASE("read_dataset: malformed rows report their line number") {
  try {
    parse("# id=u1\n" + row(1, "a", "_", "null") + "2\tb\tb\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  CHECK_THROWS_AS(parse("# id=u1\n1\ta\ta\tNOUN\t_\tdep\t_\t1.5\t_\t_\tnull\n"), ParseError);
  CHECK_THROWS_AS(parse("# id=u1\n1\ta\ta\tNOUN\t_\tdep\t_\t_\t_\tX\tnull\n"), ParseError);
  CHECK_THROWS_AS(parse("1\ta\ta\tNOUN\t_\tdep\t_\t_\t_\t_\tnull\n"), ParseError);
  CHECK_THROWS_AS(parse("# id=u1\n" + row(2, "a", "_", "null")), ParseError);
}

TEST_CASE("read_dataset: duplicate ids are rejected") {
  CHECK_THROWS_AS(parse("# id=u1\n" + row(1, "a", "_", "null") + "\n# id=u1\n" + row(1, "b", "_", "null")),
                  SchemaError);
}

TEST_CASE("TSV round trip is byte-identical on canonical files") {
  const auto grammar = DomainGrammar::touristic();
  auto data = generate_corpus(grammar, 50, 3);
  Rng rng(5);
  for (auto& u : data.utterances)
    for (auto& t : u.tokens) {
      if (rng.bernoulli(0.5)) t.pap = rng.uniform();
      if (rng.bernoulli(0.5)) t.error_flag = rng.bernoulli(0.5) ? ErrorFlag::correct : ErrorFlag::error;
    }
  std::ostringstream first;
  write_dataset(first, data);
  std::istringstream in(first.str());
  std::ostringstream second;
  write_dataset(second, read_dataset(in));
  CHECK(first.str() == second.str());
}

TEST_CASE("segments_of") {
  Lexicon lex;
  // Normalization table built by hand: number words to digits.
  lex.add("thirty three", "FIGURE", "33");
  lex.add("thirty-three", "FIGURE", "33");
  lex.add("paris", "TOWN");

  SUBCASE("all-null labels give no segment") {
    CHECK(segments_of({"a", "b"}, {"null", "null"}, lex).empty());
  }
  SUBCASE("single-token segment") {
    const auto s = segments_of({"to", "Paris"}, {"null", "B-TOWN"}, lex);
    REQUIRE(s.size() == 1);
    CHECK(s[0] == ConceptSegment{"TOWN", "paris", 1, 2});
  }
  SUBCASE("lexicon value normalization over the span") {
    const auto s = segments_of({"the", "thirty", "three"}, {"null", "B-DATE", "I-DATE"}, lex);
    REQUIRE(s.size() == 1);
    CHECK(s[0] == ConceptSegment{"DATE", "33", 1, 3});
  }
  SUBCASE("adjacent B labels split segments") {
    const auto s = segments_of({"a", "b"}, {"B-X", "B-X"}, lex);
    CHECK(s.size() == 2);
  }
  SUBCASE("orphan I opens a segment and error labels count as null") {
    const auto s = segments_of({"a", "b", "c"}, {"ERROR-C", "I-X", "*"}, lex);
    REQUIRE(s.size() == 1);
    CHECK(s[0].start == 1);
  }
}

TEST_CASE("labels_of inverts segments_of on random segment sets") {
  Lexicon lex;
  Rng rng(17);
  const std::vector<std::string> concepts{"A", "B", "C"};
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.index(12);
    std::vector<std::string> words;
    for (std::size_t i = 0; i < n; ++i) words.push_back("w" + std::to_string(rng.index(5)));
    std::vector<ConceptSegment> segs;
    std::size_t pos = 0;
    while (pos < n) {
      pos += rng.index(3);
      if (pos >= n) break;
      const std::size_t len = 1 + rng.index(std::min<std::size_t>(3, n - pos));
      std::vector<std::string> span(words.begin() + pos, words.begin() + pos + len);
      segs.push_back({concepts[rng.index(3)], lex.normalize(span), pos, pos + len});
      pos += len;
    }
    CHECK(segments_of(words, labels_of(segs, n), lex) == segs);
  }
}

TEST_CASE("strip_error_labels") {
  CHECK(strip_error_labels({"u", {"B-TOWN", "ERROR-N", "null"}}).labels ==
        std::vector<std::string>{"B-TOWN", "null", "null"});
  const TaggerOutput clean{"u", {"B-TOWN", "I-TOWN", "null"}};
  CHECK(strip_error_labels(clean) == clean);
  CHECK(strip_error_labels({"u", {"ERROR-C", "ERROR-C"}}).labels == std::vector<std::string>{"null", "null"});
  const TaggerOutput mixed{"u", {"ERROR-C", "B-A", "ERROR-N", "I-A"}};
  CHECK(strip_error_labels(strip_error_labels(mixed)) == strip_error_labels(mixed));
}

TEST_CASE("augment_error_labels") {
  Utterance u;
  u.id = "u";
  for (const auto& [w, l] : std::vector<std::pair<std::string, std::string>>{
           {"to", "null"}, {"parish", "B-TOWN"}, {"uh", "null"}, {"please", "null"}}) {
    Token t;
    t.surface = w;
    t.label = l;
    t.error_flag = ErrorFlag::correct;
    u.tokens.push_back(t);
  }
  SUBCASE("all tokens correct leaves labels unchanged") {
    CHECK(augment_error_labels(u).labels() == u.labels());
  }
  SUBCASE("erroneous concept word becomes ERROR-C, erroneous null word ERROR-N") {
    u.tokens[1].error_flag = ErrorFlag::error;
    u.tokens[2].error_flag = ErrorFlag::error;  // an insertion projects to null
    const auto out = augment_error_labels(u);
    CHECK(out.labels() == std::vector<std::string>{"null", "ERROR-C", "ERROR-N", "null"});
  }
  SUBCASE("missing flag is a precondition error") {
    u.tokens[3].error_flag.reset();
    CHECK_THROWS_AS(augment_error_labels(u), PreconditionError);
  }
}

TEST_CASE("generate_corpus") {
  const auto grammar = DomainGrammar::touristic();

  SUBCASE("fixed seed reproduces the corpus") {
    CHECK(generate_corpus(grammar, 1, 42).utterances == generate_corpus(grammar, 1, 42).utterances);
    std::ostringstream a, b;
    write_dataset(a, generate_corpus(grammar, 200, 9));
    write_dataset(b, generate_corpus(grammar, 200, 9));
    CHECK(a.str() == b.str());
  }
  SUBCASE("different seeds differ") {
    CHECK(generate_corpus(grammar, 20, 42).utterances != generate_corpus(grammar, 20, 43).utterances);
  }
  SUBCASE("generated corpora satisfy every invariant") {
    CHECK_NOTHROW(validate(generate_corpus(grammar, 500, 1)));
  }
  SUBCASE("every concept appears in 10000 utterances and frequencies follow pattern weights") {
    const auto data = generate_corpus(grammar, 10000, 2);
    std::map<std::string, double> observed;
    for (const auto& u : data.utterances)
      for (const auto& s : segments_of(u, grammar.lexicon)) observed[s.label] += 1.0;
    // Expected mentions per utterance from the pattern weights.
    std::map<std::string, double> expected;
    double total_w = 0.0;
    for (const auto& p : grammar.patterns) total_w += p.weight;
    for (const auto& p : grammar.patterns)
      for (const auto& it : p.items)
        if (it.front() == '{') expected[it.substr(1, it.size() - 2)] += p.weight / total_w;
    for (const auto& c : grammar.scheme().concepts) {
      CAPTURE(c);
      CHECK(observed[c] >= 1.0);
      const double mean = expected[c] * 10000.0;
      // Adjacent identical-concept mentions merge into one segment, so the
      // observed count may fall slightly below the expectation.
      CHECK(observed[c] <= mean + 5.0 * std::sqrt(mean));
      CHECK(observed[c] >= 0.85 * mean - 5.0 * std::sqrt(mean));
    }
  }
  SUBCASE("confusable short mentions are present") {
    const auto data = generate_corpus(grammar, 2000, 4);
    std::set<std::string> ref_words, null_words;
    for (const auto& u : data.utterances)
      for (const auto& t : u.tokens) {
        if (t.label == "B-REFERENCE" || t.label == "B-CONNECTOR") ref_words.insert(t.surface);
        if (t.label == "null") null_words.insert(t.surface);
      }
    CHECK(ref_words.count("that"));
    CHECK(null_words.count("that"));
    CHECK(ref_words.count("and"));
    CHECK(null_words.count("and"));
  }
  SUBCASE("empty grammar is a configuration error") {
    CHECK_THROWS_AS(generate_corpus(DomainGrammar{}, 5, 1), ConfigError);
  }
}

TEST_CASE("grammar parsing") {
  const auto g = DomainGrammar::parse(
      "[words]\ngo VERB\n[category CITY]\nrome\n[slot CITY]\nRome\n[pattern]\n1 go to {CITY}\n");
  CHECK(g.scheme().concepts == std::vector<std::string>{"CITY"});
  CHECK(g.lexicon.categories_of("Rome") == std::vector<std::string>{"CITY"});
  const auto d = generate_corpus(g, 1, 0);
  CHECK(d.utterances[0].labels() == std::vector<std::string>{"null", "null", "B-CITY"});
  CHECK_THROWS_AS(DomainGrammar::parse("[pattern]\n1 go {NOPE}\n").check(), ConfigError);
  CHECK_THROWS_AS(DomainGrammar::parse("stray line\n"), ParseError);
}
