// SPDX-License-Identifier: Apache-2.0
#include <chrono>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "slu/eda.hpp"
#include "slu/error.hpp"
#include "slu/grammar.hpp"
#include "slu/nn.hpp"
#include "slu/rng.hpp"

using namespace slu;

namespace {

const std::vector<std::string> kLabels{"null", "B-A", "I-A", "B-B"};

Utterance make_utt(const std::string& id, const std::vector<std::string>& words,
                   const std::vector<std::string>& labels, Rng& rng) {
  Utterance u;
  u.id = id;
  for (std::size_t i = 0; i < words.size(); ++i) {
    Token t;
    t.surface = words[i];
    t.lemma = words[i];
    t.pos = i % 2 ? "NOUN" : "DET";
    t.deprel = "dep";
    if (i) t.governor = i - 1;
    if (words[i] == "paris") t.sem_categories = {"TOWN"};
    t.label = labels[i];
    t.pap = rng.uniform();
    if (i != 1) t.mlp_conf = rng.uniform();
    u.tokens.push_back(t);
  }
  return u;
}

Dataset tiny_data(Rng& rng) {
  Dataset d;
  d.utterances.push_back(make_utt("a", {"to", "paris"}, {"null", "B-A"}, rng));
  d.utterances.push_back(make_utt("b", {"two", "nights", "paris", "hotel"}, {"B-B", "null", "B-A", "I-A"}, rng));
  d.utterances.push_back(make_utt("c", {"zzz"}, {"I-A"}, rng));
  return d;
}

EdaModel tiny_model(bool aligned, std::uint64_t seed = 3) {
  EdaDims dims;
  dims.embed = 3;
  dims.hidden = 3;
  dims.decoder = 3;
  dims.attention = 3;
  dims.label_embed = 2;
  dims.aligned_input = aligned;
  return EdaModel(kLabels, {"nights", "paris", "to", "two"}, {"cat:TOWN", "pos:DET", "pos:NOUN", "morph:cap:0"},
                  dims, FeatureVectorSpec::all(), seed);
}

std::vector<std::size_t> ids(const EdaModel& m, const Utterance& u) {
  std::vector<std::size_t> out;
  for (const auto& t : u.tokens) out.push_back(m.label_id(t.label));
  return out;
}

}  // namespace

TEST_CASE("EDA gradient matches finite differences") {
  for (bool aligned : {true, false}) {
    CAPTURE(aligned);
    const auto start = std::chrono::steady_clock::now();
    Rng rng(11);
    const auto data = tiny_data(rng);
    auto model = tiny_model(aligned);
    for (auto& p : model.params()) p = rng.uniform(-0.8, 0.8);
    std::vector<double> grad;
    model.loss(data, &grad);
    const auto numeric = nn::numeric_gradient(model.params(), [&](const std::vector<double>& p) {
      EdaModel m = model;
      m.params() = p;
      return m.loss(data);
    });
    for (const auto& [name, block] : model.blocks()) {
      CAPTURE(name);
      double worst = 0.0, magnitude = 0.0;
      for (std::size_t i = block.offset; i < block.offset + block.size(); ++i) {
        worst = std::max(worst, nn::relative_error(grad[i], numeric[i]));
        magnitude = std::max(magnitude, std::abs(numeric[i]));
      }
      CHECK(worst < 1e-3);
      CHECK(magnitude > 0.0);
    }
    CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(5));
  }
}

TEST_CASE("encoder") {
  Rng rng(5);
  const auto data = tiny_data(rng);
  SUBCASE("one word: both halves come from a single step of the same input") {
    auto model = tiny_model(true);
    for (const auto& [name, b] : model.blocks())
      if (name.rfind("bwd.", 0) == 0) {
        const auto fwd = model.blocks();
        const auto it = std::find_if(fwd.begin(), fwd.end(), [&](const auto& e) { return e.first == "fwd." + name.substr(4); });
        std::copy_n(model.params().begin() + static_cast<std::ptrdiff_t>(it->second.offset), b.size(),
                    model.params().begin() + static_cast<std::ptrdiff_t>(b.offset));
      }
    const auto h = model.encode(data.utterances[2]);
    REQUIRE(h.size() == 1);
    CHECK(h.width == 6);
    for (std::size_t k = 0; k < 3; ++k) CHECK(h.rows[0][k] == h.rows[0][3 + k]);

    SUBCASE("reversal swaps the halves when both directions share weights") {
      auto u = data.utterances[1];
      auto r = u;
      std::reverse(r.tokens.begin(), r.tokens.end());
      for (auto& t : r.tokens) t.governor.reset();
      for (auto& t : u.tokens) t.governor.reset();
      // Syntactic features depend on position parity here; drop them.
      for (auto* x : {&u, &r})
        for (auto& t : x->tokens) t.pos = "X";
      const auto hu = model.encode(u), hr = model.encode(r);
      const std::size_t I = hu.size();
      for (std::size_t i = 0; i < I; ++i)
        for (std::size_t k = 0; k < 3; ++k) {
          CHECK(hu.rows[i][k] == doctest::Approx(hr.rows[I - 1 - i][3 + k]).epsilon(1e-12));
          CHECK(hu.rows[i][3 + k] == doctest::Approx(hr.rows[I - 1 - i][k]).epsilon(1e-12));
        }
    }
  }
  SUBCASE("zero parameters give zero annotations") {
    auto model = tiny_model(true);
    std::fill(model.params().begin(), model.params().end(), 0.0);
    for (const auto& u : data.utterances)
      for (const auto& row : model.encode(u).rows)
        for (double x : row) CHECK(x == 0.0);
  }
  SUBCASE("annotation count equals input length") {
    const auto model = tiny_model(false);
    for (const auto& u : data.utterances) CHECK(model.encode(u).size() == u.tokens.size());
  }
}

TEST_CASE("attention") {
  const auto model = tiny_model(true);
  Rng rng(9);
  SUBCASE("identical annotations attract uniform weights") {
    EncoderAnnotations h{6, std::vector<std::vector<double>>(5, {0.3, -0.2, 0.5, 0.1, 0.0, -0.7})};
    const auto a = model.attend({0.2, -0.4, 0.9}, h);
    for (double w : a.weights) CHECK(w == doctest::Approx(0.2).epsilon(1e-12));
    for (std::size_t k = 0; k < 6; ++k) CHECK(a.context[k] == doctest::Approx(h.rows[0][k]));
  }
  SUBCASE("a single annotation takes all the weight") {
    EncoderAnnotations h{6, {{1, 2, 3, 4, 5, 6}}};
    CHECK(model.attend({0, 0, 0}, h).weights == std::vector<double>{1.0});
  }
  SUBCASE("weights stay on the simplex") {
    for (int trial = 0; trial < 200; ++trial) {
      EncoderAnnotations h{6, {}};
      for (std::size_t j = 0, I = 1 + rng.index(12); j < I; ++j) {
        h.rows.emplace_back(6);
        for (auto& x : h.rows.back()) x = rng.uniform(-3, 3);
      }
      const auto a = model.attend({rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)}, h);
      double s = 0.0;
      for (double w : a.weights) {
        CHECK(w >= 0.0);
        s += w;
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
  CHECK_THROWS_AS(model.attend({0, 0, 0}, EncoderAnnotations{6, {}}), PreconditionError);
}

TEST_CASE("decoding") {
  Rng rng(21);
  const auto data = tiny_data(rng);
  const auto model = tiny_model(true, 8);
  for (const auto& u : data.utterances) {
    const auto h = model.encode(u);
    const auto greedy = model.decode(h);
    CHECK(greedy.labels.size() == u.tokens.size());
    CHECK(greedy.attention.size() == u.tokens.size());
    const auto forced = model.decode(h, &greedy.labels);
    CHECK(forced.labels == greedy.labels);
    CHECK(forced.distributions == greedy.distributions);
    // Teacher forcing only changes what later steps see.
    const auto gold = ids(model, u);
    const auto tf = model.decode(h, &gold);
    CHECK(tf.distributions[0] == greedy.distributions[0]);
    for (const auto& p : tf.distributions) {
      double s = 0.0;
      for (double x : p) s += x;
      CHECK(s == doctest::Approx(1.0));
    }
  }
  Utterance empty;
  CHECK(tag(model, empty).labels.empty());
}

TEST_CASE("EDA training") {
  Rng rng(4);
  const auto data = tiny_data(rng);
  EdaConfig cfg;
  cfg.dims = tiny_model(true).dims();
  cfg.min_count = 1;
  cfg.labels = kLabels;

  SUBCASE("zero learning rate leaves parameters unchanged") {
    cfg.lr = 0.0;
    cfg.epochs = 0;
    auto init = train_eda(data, cfg);
    auto model = init;
    cfg.epochs = 1;
    continue_training(model, data, cfg);
    CHECK(model == init);
  }
  SUBCASE("small steps on one example never increase the loss") {
    Dataset one;
    one.utterances.push_back(data.utterances[1]);
    cfg.epochs = 0;
    auto model = train_eda(one, cfg);
    cfg.epochs = 1;
    cfg.lr = 1e-3;
    double last = model.loss(one);
    for (int step = 0; step < 20; ++step) {
      continue_training(model, one, cfg);
      const double now = model.loss(one);
      CHECK(now <= last + 1e-12);
      last = now;
    }
  }
  SUBCASE("memorizes a single example") {
    Dataset one;
    one.utterances.push_back(data.utterances[1]);
    cfg.epochs = 300;
    cfg.lr = 0.05;
    const auto model = train_eda(one, cfg);
    CHECK(tag(model, one.utterances[0]) == gold_outputs(one)[0]);
  }
  SUBCASE("determinism and job independence") {
    cfg.epochs = 3;
    cfg.batch = 2;
    const auto a = train_eda(data, cfg);
    const auto b = train_eda(data, cfg);
    cfg.jobs = 4;
    const auto c = train_eda(data, cfg);
    CHECK(a == b);
    CHECK(a == c);
    cfg.seed = 2;
    CHECK_FALSE(train_eda(data, cfg) == a);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(train_eda(Dataset{}, cfg), TrainingError);
    auto bad = data;
    bad.utterances[0].tokens[0].label = "B-Z";
    CHECK_THROWS_AS(train_eda(bad, cfg), DataError);
    cfg.dims.hidden = 0;
    CHECK_THROWS_AS(train_eda(data, cfg), ConfigError);
  }
  SUBCASE("round trip") {
    cfg.epochs = 2;
    const auto model = train_eda(data, cfg);
    std::stringstream s;
    model.write(s);
    const auto back = EdaModel::read(s);
    CHECK(back == model);
    CHECK(predict_eda(back, data) == predict_eda(model, data));
    std::stringstream broken(s.str().substr(0, s.str().size() / 2));
    CHECK_THROWS_AS(EdaModel::read(broken), FormatError);
  }
}

TEST_CASE("EDA learns the generated domain") {
  const auto grammar = DomainGrammar::touristic();
  const auto train = generate_corpus(grammar, 600, 5, "train");
  const auto test = generate_corpus(grammar, 200, 6, "test");
  EdaConfig cfg;
  cfg.epochs = 4;
  std::vector<double> losses;
  const auto model = train_eda(train, cfg, &losses);
  CHECK(losses.back() < losses.front());
  const auto out = predict_eda(model, test);
  std::size_t right = 0, total = 0;
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t t = 0; t < out[i].labels.size(); ++t) {
      right += out[i].labels[t] == test.utterances[i].tokens[t].label;
      ++total;
    }
  MESSAGE("token accuracy " << static_cast<double>(right) / static_cast<double>(total));
  CHECK(static_cast<double>(right) / static_cast<double>(total) >= 0.9);
}
