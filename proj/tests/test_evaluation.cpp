// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "slu/error.hpp"
#include "slu/evaluation.hpp"
#include "slu/rng.hpp"

using namespace slu;

namespace {

std::vector<ConfidenceRecord> records(const std::vector<int>& flags, const std::vector<double>& conf) {
  std::vector<ConfidenceRecord> out;
  for (std::size_t i = 0; i < flags.size(); ++i) out.push_back({"u", i, flags[i] == 1, conf[i]});
  return out;
}

// One token per segment: concept c with value word w becomes word w, label B-c.
Utterance seg_utt(const std::string& id, const std::vector<std::pair<std::string, std::string>>& segs) {
  Utterance u;
  u.id = id;
  for (const auto& [concept_name, word] : segs) {
    Token t;
    t.surface = word;
    t.label = concept_name.empty() ? "null" : "B-" + concept_name;
    u.tokens.push_back(t);
  }
  return u;
}

TaggerOutput out(const std::string& id, std::vector<std::string> labels) { return {id, std::move(labels)}; }

// Exhaustive edit distance between two short sequences.
std::size_t brute_distance(const std::vector<std::string>& a, const std::vector<std::string>& b, std::size_t i = 0,
                           std::size_t j = 0) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  return std::min({brute_distance(a, b, i + 1, j + 1) + (a[i] == b[j] ? 0 : 1), brute_distance(a, b, i + 1, j) + 1,
                   brute_distance(a, b, i, j + 1) + 1});
}

}  // namespace

TEST_CASE("nce") {
  SUBCASE("hand-computed four records") {
    // pc = 3/4; value evaluated separately from the formula.
    CHECK(std::abs(nce(records({1, 1, 1, 0}, {0.9, 0.8, 0.9, 0.2})) - 0.7079107805055294) < 1e-9);
  }
  SUBCASE("constant confidence equal to the correct rate is worth nothing") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<int> flags(50 + rng.index(500));
      for (auto& f : flags) f = rng.bernoulli(0.7);
      flags[0] = 1;
      flags[1] = 0;
      double pc = 0;
      for (int f : flags) pc += f;
      pc /= static_cast<double>(flags.size());
      CHECK(std::abs(nce(records(flags, std::vector<double>(flags.size(), pc)))) < 1e-9);
    }
  }
  SUBCASE("oracle confidences approach 1") {
    std::vector<int> flags{1, 0, 1, 1, 0, 1};
    std::vector<double> conf;
    for (int f : flags) conf.push_back(f ? 1.0 : 0.0);
    CHECK(nce(records(flags, conf)) >= 0.99);
  }
  SUBCASE("calibrated confidences beat the constant predictor") {
    Rng rng(8);
    std::vector<int> flags;
    std::vector<double> conf;
    for (int i = 0; i < 20000; ++i) {
      const double p = rng.uniform();
      conf.push_back(p);
      flags.push_back(rng.bernoulli(p));
    }
    double pc = 0;
    for (int f : flags) pc += f;
    pc /= static_cast<double>(flags.size());
    CHECK(nce(records(flags, conf)) >= nce(records(flags, std::vector<double>(flags.size(), pc))));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(nce(records({1, 1}, {0.5, 0.6})), DataError);
    CHECK_THROWS_AS(nce(records({1, 0}, {0.5, 1.2})), RangeError);
  }
}

TEST_CASE("calibration_bins") {
  SUBCASE("one occupied bin") {
    const auto rep = calibration_bins(records({1, 1, 1}, {0.95, 0.95, 0.95}), 10);
    std::size_t occupied = 0;
    for (const auto& b : rep.bins) occupied += b.count > 0;
    CHECK(occupied == 1);
    CHECK(rep.bins[9].count == 3);
    CHECK(rep.bins[9].fraction_correct == 1.0);
    CHECK(std::isnan(rep.nce));
  }
  SUBCASE("random records against a recount") {
    Rng rng(15);
    std::vector<int> flags;
    std::vector<double> conf;
    for (int i = 0; i < 1000; ++i) {
      conf.push_back(i % 100 == 0 ? 1.0 : rng.uniform());
      flags.push_back(rng.bernoulli(0.6));
    }
    const std::size_t k = 7;
    const auto rep = calibration_bins(records(flags, conf), k);
    std::size_t total = 0;
    for (std::size_t b = 0; b < k; ++b) {
      const double lo = static_cast<double>(b) / k, hi = static_cast<double>(b + 1) / k;
      std::size_t count = 0, right = 0;
      for (std::size_t i = 0; i < conf.size(); ++i) {
        const bool in = conf[i] >= lo && (conf[i] < hi || (b == k - 1 && conf[i] <= 1.0));
        count += in;
        right += in && flags[i];
      }
      CHECK(rep.bins[b].count == count);
      if (count) CHECK(rep.bins[b].fraction_correct == doctest::Approx(double(right) / count));
      total += rep.bins[b].count;
    }
    CHECK(total == 1000);
    std::ostringstream csv;
    rep.write_csv(csv);
    const std::string text = csv.str();
    CHECK(std::count(text.begin(), text.end(), '\n') == 8);
  }
  CHECK_THROWS_AS(calibration_bins({}, 1), ConfigError);
}

TEST_CASE("score") {
  const Lexicon lex;
  SUBCASE("identical outputs") {
    Dataset ref;
    ref.utterances.push_back(seg_utt("a", {{"TOWN", "paris"}, {"", "in"}, {"NIGHTS", "two"}}));
    const auto rep = score(ref, gold_outputs(ref), lex);
    CHECK(rep.cer() == 0.0);
    CHECK(rep.cver() == 0.0);
    CHECK(rep.precision() == 1.0);
    CHECK(rep.recall() == 1.0);
  }
  SUBCASE("one deleted concept") {
    Dataset ref;
    ref.utterances.push_back(seg_utt("a", {{"A", "x"}, {"B", "y"}, {"C", "z"}}));
    const auto rep = score(ref, {out("a", {"B-A", "null", "B-C"})}, lex);
    CHECK(rep.cer() == doctest::Approx(100.0 / 3.0));
    CHECK(rep.concepts.deletions == 1);
    CHECK(rep.precision() == 1.0);
    CHECK(rep.recall() == doctest::Approx(2.0 / 3.0));
  }
  SUBCASE("a value differs but the concept does not") {
    Dataset ref, hyp;
    ref.utterances.push_back(seg_utt("a", {{"TOWN", "paris"}}));
    hyp.utterances.push_back(seg_utt("a", {{"TOWN", "parish"}}));
    const auto rep = score(ref, hyp, {out("a", {"B-TOWN"})}, lex);
    CHECK(rep.cer() == 0.0);
    CHECK(rep.cver() > 0.0);
  }
  SUBCASE("error labels and abstentions count as null") {
    Dataset ref;
    ref.utterances.push_back(seg_utt("a", {{"A", "x"}, {"B", "y"}}));
    const auto rep = score(ref, {out("a", {"ERROR-C", "*"})}, lex);
    CHECK(rep.hypothesis_segments == 0);
    CHECK(rep.precision() == 0.0);
    CHECK(rep.concepts.deletions == 2);
  }
  SUBCASE("S/I/D totals match exhaustive alignment") {
    Rng rng(31);
    const std::vector<std::string> concepts{"", "A", "B", "C"};
    for (int trial = 0; trial < 200; ++trial) {
      Dataset ref;
      std::vector<std::pair<std::string, std::string>> r;
      for (std::size_t i = 0, n = rng.index(7); i < n; ++i) r.push_back({concepts[1 + rng.index(3)], "w"});
      ref.utterances.push_back(seg_utt("u", r));
      std::vector<std::string> hyp_labels;
      for (std::size_t i = 0; i < r.size(); ++i) {
        const auto& c = concepts[rng.index(4)];
        hyp_labels.push_back(c.empty() ? "null" : "B-" + c);
      }
      // Same words, so lengths match; segments differ.
      const auto rep = score(ref, {out("u", hyp_labels)}, lex);
      std::vector<std::string> rl, hl;
      for (const auto& [c, w] : r) rl.push_back("B-" + c);
      for (const auto& l : hyp_labels)
        if (l != "null") hl.push_back(l);
      // Adjacent equal B- labels are separate segments, so the label lists
      // are the segment sequences.
      for (auto& s : rl) s = s.substr(2);
      for (auto& s : hl) s = s.substr(2);
      CHECK(rep.concepts.substitutions + rep.concepts.insertions + rep.concepts.deletions ==
            brute_distance(rl, hl));
      CHECK(rep.reference_segments == rl.size());
    }
  }
  SUBCASE("pairing and alignment errors") {
    Dataset ref;
    ref.utterances.push_back(seg_utt("a", {{"A", "x"}}));
    CHECK_THROWS_AS(score(ref, {out("b", {"null"})}, lex), PairingError);
    CHECK_THROWS_AS(score(ref, {}, lex), PairingError);
    CHECK_THROWS_AS(score(ref, {out("a", {"null", "null"})}, lex), AlignmentError);
  }
}

TEST_CASE("combine_weighted") {
  CHECK(combine_weighted({out("u", {"A"}), out("u", {"A"}), out("u", {"A"})}, {1, 1, 1}).labels[0] == "A");
  CHECK(combine_weighted({out("u", {"A"}), out("u", {"A"}), out("u", {"B"})}, {1, 1, 1}).labels[0] == "A");
  // 0.2 + 0.2 = 0.4 < 0.7.
  CHECK(combine_weighted({out("u", {"A"}), out("u", {"A"}), out("u", {"B"})}, {0.2, 0.2, 0.7}).labels[0] == "B");
  SUBCASE("ties follow the priority order") {
    const std::vector<TaggerOutput> o{out("u", {"A"}), out("u", {"B"})};
    CHECK(combine_weighted(o, {0.5, 0.5}).labels[0] == "A");
    CHECK(combine_weighted(o, {0.5, 0.5}, {1, 0}).labels[0] == "B");
    CHECK(combine_weighted({out("u", {"A"}), out("u", {"A"}), out("u", {"B"})}, {0.1, 0.2, 0.3}, {2, 0, 1})
              .labels[0] == "B");
  }
  SUBCASE("all weight on one system returns it; scaling changes nothing") {
    Rng rng(2);
    const std::vector<std::string> labels{"null", "B-A", "I-A", "B-B"};
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<TaggerOutput> o(4);
      const std::size_t n = 1 + rng.index(8);
      for (auto& s : o) {
        s.id = "u";
        for (std::size_t t = 0; t < n; ++t) s.labels.push_back(labels[rng.index(4)]);
      }
      const std::size_t k = rng.index(4);
      std::vector<double> w(4, 0.0);
      w[k] = 1.0;
      CHECK(combine_weighted(o, w) == o[k]);
      std::vector<double> r(4);
      for (auto& x : r) x = std::round(rng.uniform() * 10) / 10;
      r[rng.index(4)] = 0.5;
      auto scaled = r;
      const double c = rng.uniform(0.1, 10.0);
      for (auto& x : scaled) x *= c;
      CHECK(combine_weighted(o, r) == combine_weighted(o, scaled));
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(combine_weighted({out("u", {"A"}), out("u", {"A", "B"})}, {1, 1}), AlignmentError);
    CHECK_THROWS_AS(combine_weighted({out("u", {"A"}), out("u", {"A"})}, {0, 0}), ConfigError);
    CHECK_THROWS_AS(combine_weighted({out("u", {"A"}), out("u", {"A"})}, {1, -1}), ConfigError);
  }
}

TEST_CASE("consensus") {
  const auto agree = consensus({out("u", {"A", "B"}), out("u", {"A", "B"}), out("u", {"A", "B"})});
  CHECK(agree.labels == std::vector<std::string>{"A", "B"});
  const auto split = consensus({out("u", {"A", "B"}), out("u", {"A", "C"}), out("u", {"A", "B"})});
  CHECK(split.labels == std::vector<std::string>{"A", "*"});
  CHECK_THROWS_AS(consensus({out("u", {"A"}), out("u", {})}), AlignmentError);
}

TEST_CASE("tune_weights") {
  const Lexicon lex;
  Dataset dev;
  dev.utterances.push_back(seg_utt("a", {{"A", "x"}, {"B", "y"}, {"", "z"}}));
  dev.utterances.push_back(seg_utt("b", {{"C", "x"}, {"", "y"}}));
  const auto gold = gold_outputs(dev);
  std::vector<std::vector<TaggerOutput>> systems{
      {out("a", {"B-A", "null", "null"}), out("b", {"null", "null"})},
      gold,
      {out("a", {"null", "null", "B-C"}), out("b", {"B-A", "null"})},
      {out("a", {"B-B", "B-A", "null"}), out("b", {"B-C", "B-C"})},
  };

  SUBCASE("grid shape") {
    CHECK(simplex_grid(4, 0.1).size() == 286);
    CHECK(simplex_grid(4, 1.0).size() == 4);
    CHECK(simplex_grid(3, 0.5).size() == 6);
    for (const auto& w : simplex_grid(4, 0.1)) {
      double s = 0;
      for (double x : w) s += x;
      CHECK(s == doctest::Approx(1.0));
    }
    CHECK_THROWS_AS(simplex_grid(4, 0.3), ConfigError);
  }
  SUBCASE("a dominating system") {
    const auto tuned = tune_weights(systems, dev, dev, lex, 1.0);
    CHECK(tuned.weights == std::vector<double>{0, 1, 0, 0});
    CHECK(tuned.dev_cer == 0.0);
  }
  SUBCASE("never worse than any corner") {
    std::swap(systems[1], systems[3]);
    systems[3] = {out("a", {"B-A", "null", "B-B"}), out("b", {"B-C", "null"})};
    const auto tuned = tune_weights(systems, dev, dev, lex, 0.1);
    for (const auto& w : simplex_grid(4, 1.0))
      CHECK(tuned.dev_cer <= score(dev, combine_weighted(systems, w), lex).cer());
    CHECK(tuned.dev_cer == doctest::Approx(score(dev, combine_weighted(systems, tuned.weights), lex).cer()));
  }
}
