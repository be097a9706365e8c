// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstdio>
#include <sstream>

#include "doctest.h"
#include "slu/autoencoder.hpp"
#include "slu/confidence.hpp"
#include "slu/error.hpp"
#include "slu/grammar.hpp"
#include "slu/noise.hpp"
#include "slu/rng.hpp"

using namespace slu;

namespace {

EmbeddingTable table_from(const std::string& text, OovPolicy policy = OovPolicy::zero_vector,
                          std::vector<std::string>* warnings = nullptr) {
  std::istringstream in(text);
  return EmbeddingTable::read(in, policy, warnings);
}

std::vector<std::vector<double>> random_vectors(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> out(n, std::vector<double>(dim));
  for (auto& v : out)
    for (auto& x : v) x = rng.uniform(-0.8, 0.8);
  return out;
}

double max_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i)
    worst = std::max(worst, nn::relative_error(analytic[i], numeric[i]));
  return worst;
}

std::vector<StreamInput> random_streams(std::size_t n, const std::vector<std::size_t>& dims, Rng& rng) {
  std::vector<StreamInput> out(n);
  for (auto& x : out)
    for (std::size_t d : dims) {
      std::vector<double> v(d);
      for (auto& e : v) e = rng.uniform(-1.0, 1.0);
      x.push_back(v);
    }
  return out;
}

Dataset corrupted_corpus(std::size_t n, std::uint64_t seed) {
  const auto grammar = DomainGrammar::touristic();
  const auto clean = generate_corpus(grammar, n, seed);
  const auto noise = NoiseConfig::defaults(grammar, seed);
  Dataset out;
  for (const auto& u : clean.utterances) out.utterances.push_back(corrupt(u, noise, grammar));
  return out;
}

}  // namespace

TEST_CASE("load_embeddings") {
  SUBCASE("dimension from the first row") {
    const auto t = table_from("paris 1 2 3\nnice 0.5 -1 2e-1\n");
    CHECK(t.size() == 2);
    CHECK(t.dim() == 3);
    const auto v = t.lookup("nice");
    CHECK(std::vector<double>(v.begin(), v.end()) == std::vector<double>{0.5, -1.0, 0.2});
  }
  SUBCASE("OOV under the zero policy") {
    const auto t = table_from("paris 1 2 3\n");
    const auto v = t.lookup("lyon");
    CHECK(std::vector<double>(v.begin(), v.end()) == std::vector<double>(3, 0.0));
  }
  SUBCASE("OOV under the unknown-row policy") {
    const auto t = table_from("paris 1 2\n<unk> 7 8\n", OovPolicy::unknown_row);
    const auto v = t.lookup("lyon");
    CHECK(std::vector<double>(v.begin(), v.end()) == std::vector<double>{7.0, 8.0});
    CHECK_THROWS_AS(table_from("paris 1 2\n", OovPolicy::unknown_row), FormatError);
  }
  SUBCASE("duplicates: last row wins, with a warning") {
    std::vector<std::string> warnings;
    const auto t = table_from("a 1 1\nb 2 2\na 3 3\n", OovPolicy::zero_vector, &warnings);
    CHECK(t.size() == 2);
    CHECK(t.lookup("a")[0] == 3.0);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("'a'") != std::string::npos);
  }
  SUBCASE("malformed rows") {
    CHECK_THROWS_AS(table_from("a 1 2 3\nb 1 2\n"), FormatError);
    CHECK_THROWS_AS(table_from("a 1 x\n"), FormatError);
    CHECK_THROWS_AS(table_from("a\n"), FormatError);
    CHECK_THROWS_AS(table_from(""), FormatError);
    CHECK_THROWS_AS(load_embeddings("/nonexistent/emb.txt"), FormatError);
  }
  SUBCASE("write/read round trip") {
    const auto t = table_from("a 0.1 0.30000000000000004\nb -2 1e-300\n");
    std::ostringstream out;
    t.write(out);
    const auto back = table_from(out.str());
    CHECK(back.words() == t.words());
    CHECK(back.lookup("a")[1] == t.lookup("a")[1]);
    CHECK(back.lookup("b")[1] == t.lookup("b")[1]);
  }
}

TEST_CASE("synthesize_embeddings") {
  const std::vector<std::vector<std::string>> sents{{"I", "want", "a", "room"}, {"a", "room", "in", "Paris"}};
  const std::vector<std::string> vocab{"i", "want", "a", "room", "in", "paris", "parish"};
  for (auto kind : {EmbeddingKind::context, EmbeddingKind::cooccurrence, EmbeddingKind::char_ngram}) {
    const auto t = synthesize_embeddings(sents, vocab, kind, 8, 3);
    CHECK(t.size() == vocab.size());
    CHECK(t.dim() == 8);
    for (const auto& w : vocab) {
      double norm = 0.0;
      for (double x : t.lookup(w)) norm += x * x;
      CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-12));
    }
    const auto again = synthesize_embeddings(sents, vocab, kind, 8, 3);
    for (const auto& w : vocab) CHECK(std::equal(t.lookup(w).begin(), t.lookup(w).end(), again.lookup(w).begin()));
  }
  CHECK_THROWS_AS(synthesize_embeddings(sents, vocab, EmbeddingKind::context, 0, 3), ConfigError);
}

TEST_CASE("autoencoder gradient matches central differences") {
  const std::vector<AutoencoderModel::Source> sources{{"a", 3}, {"b", 2}};
  AutoencoderModel model(sources, 3, 11);
  Rng rng(5);
  for (auto& p : model.params()) p = rng.uniform(-0.5, 0.5);
  const auto inputs = random_vectors(10, 5, 9);
  std::vector<double> grad(model.params().size(), 0.0);
  model.loss(inputs, &grad);
  const auto numeric = nn::numeric_gradient(model.params(), [&](const std::vector<double>& p) {
    AutoencoderModel m = model;
    m.params() = p;
    return m.loss(inputs);
  });
  CHECK(max_relative_error(grad, numeric) < 1e-4);
}

TEST_CASE("autoencoder training") {
  const std::vector<AutoencoderModel::Source> sources{{"a", 4}, {"b", 4}};
  const auto inputs = random_vectors(50, 8, 21);

  SUBCASE("identity-capable bottleneck reconstructs its training vectors") {
    AutoencoderConfig cfg;
    cfg.bottleneck = 8;
    cfg.epochs = 3000;
    cfg.lr = 0.5;
    cfg.batch = 10;
    double err = 1.0;
    const auto model = train_autoencoder_on(inputs, sources, cfg, &err);
    CHECK(err < 1e-3);
    CHECK(err == doctest::Approx(model.loss(inputs)).epsilon(1e-12));
  }
  SUBCASE("zero epochs returns the initialization") {
    AutoencoderConfig cfg;
    cfg.bottleneck = 3;
    cfg.epochs = 0;
    cfg.seed = 4;
    CHECK(train_autoencoder_on(inputs, sources, cfg) == AutoencoderModel(sources, 3, 4));
  }
  SUBCASE("fixed seed gives identical parameters") {
    AutoencoderConfig cfg;
    cfg.bottleneck = 3;
    cfg.epochs = 5;
    CHECK(train_autoencoder_on(inputs, sources, cfg).params() == train_autoencoder_on(inputs, sources, cfg).params());
  }
  SUBCASE("configuration errors") {
    AutoencoderConfig cfg;
    cfg.bottleneck = 0;
    CHECK_THROWS_AS(train_autoencoder_on(inputs, sources, cfg), ConfigError);
    const auto t = table_from("a 1 2\n");
    CHECK_THROWS_AS(train_autoencoder({t}, AutoencoderConfig{}), ConfigError);
    const auto u = table_from("b 1 2\n");
    CHECK_THROWS_AS(train_autoencoder({t, u}, AutoencoderConfig{}), DataError);
  }
}

TEST_CASE("fuse") {
  auto a = table_from("paris 0.1 0.2\nnice 0.3 -0.1\nlyon 0 1\n");
  auto b = table_from("paris 1 0 0\nnice 0 1 0\n");
  a.set_name("a");
  b.set_name("b");
  AutoencoderConfig cfg;
  cfg.bottleneck = 2;
  cfg.epochs = 20;
  const std::vector<EmbeddingTable> tables{a, b};
  double err = 0.0;
  const auto model = train_autoencoder(tables, cfg, &err);
  CHECK(std::isfinite(err));
  CHECK(model.sources()[0].name == "a");
  CHECK(model.sources()[1].name == "b");

  const auto z = fuse(model, tables, "paris");
  CHECK(z.size() == 2);
  CHECK(z == fuse(model, tables, "Paris"));

  // A word missing from every table has all-zero input: output is tanh(bias).
  const auto zero = fuse(model, tables, "zebra");
  const auto& p = model.params();
  const std::size_t bias = 2 * model.input_dim();
  for (std::size_t i = 0; i < 2; ++i) CHECK(zero[i] == std::tanh(p[bias + i]));

  SUBCASE("model file round-trips, source order included") {
    std::stringstream io;
    model.write(io);
    const auto back = AutoencoderModel::read(io);
    CHECK(back == model);
    CHECK(fuse(back, tables, "nice") == fuse(model, tables, "nice"));
    CHECK_THROWS_AS(fuse(back, {b, a}, "nice"), PreconditionError);
  }
  SUBCASE("fused table covers the union vocabulary") {
    const auto fused = fused_table(model, tables);
    CHECK(fused.size() == 3);
    CHECK(fused.dim() == 2);
    CHECK(fused.lookup("lyon")[0] == fuse(model, tables, "lyon")[0]);
  }
}

TEST_CASE("correct_probability") {
  CHECK(correct_probability(2.0, 0.0) == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-15));
  CHECK(correct_probability(2.0, 0.0) == doctest::Approx(0.8808).epsilon(1e-4));
  CHECK(correct_probability(0.3, 0.3) == 0.5);
  CHECK(correct_probability(-50.0, 50.0) < 1e-6);
  CHECK(correct_probability(-50.0, 50.0) > 0.0);
  CHECK(correct_probability(50.0, -50.0) < 1.0);
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(-30, 30), b = rng.uniform(-30, 30);
    CHECK(std::abs(correct_probability(a, b) + correct_probability(b, a) - 1.0) <= 1e-12);
  }
}

TEST_CASE("MS-MLP gradient matches central differences") {
  const std::vector<std::size_t> dims{10, 1, 3, 5, 4, 6};
  MsMlpConfig cfg;
  cfg.seed = 17;
  MsMlpModel model(dims, cfg);
  Rng rng(8);
  for (auto& p : model.params()) p += rng.uniform(-0.05, 0.05);
  const auto inputs = random_streams(10, dims, rng);
  std::vector<int> targets;
  for (int i = 0; i < 10; ++i) targets.push_back(i % 3 == 0);
  std::vector<double> grad(model.params().size(), 0.0);
  model.loss(inputs, targets, &grad);
  const auto numeric = nn::numeric_gradient(model.params(), [&](const std::vector<double>& p) {
    MsMlpModel m = model;
    m.params() = p;
    return m.loss(inputs, targets);
  });
  CHECK(max_relative_error(grad, numeric) < 1e-4);
}

TEST_CASE("MS-MLP training") {
  const std::vector<std::size_t> dims{6, 2, 3};
  Rng rng(12);

  SUBCASE("linearly separable streams") {
    // Label by the side of a fixed hyperplane, keeping a margin.
    std::vector<double> w{1.0, -2.0, 0.5, 1.5, -1.0, 0.7, 0.3, -0.4, 1.1, 0.0, 0.2};
    std::vector<StreamInput> inputs;
    std::vector<int> targets;
    while (inputs.size() < 400) {
      auto x = random_streams(1, dims, rng)[0];
      double s = 0.0;
      std::size_t k = 0;
      for (const auto& v : x)
        for (double e : v) s += w[k++] * e;
      if (std::abs(s) < 0.3) continue;
      inputs.push_back(x);
      targets.push_back(s > 0.0 ? 1 : 0);
    }
    MsMlpConfig cfg;
    cfg.epochs = 60;
    cfg.lr = 0.2;
    cfg.batch = 16;
    const auto model = train_msmlp_streams(inputs, targets, dims, cfg);
    std::size_t right = 0;
    for (std::size_t n = 0; n < inputs.size(); ++n)
      right += (model.confidence(inputs[n]) > 0.5) == (targets[n] == 0);
    CHECK(static_cast<double>(right) / static_cast<double>(inputs.size()) >= 0.98);
  }
  SUBCASE("single-class data saturates toward that class") {
    const auto inputs = random_streams(100, dims, rng);
    MsMlpConfig cfg;
    cfg.epochs = 40;
    cfg.lr = 0.3;
    const auto model = train_msmlp_streams(inputs, std::vector<int>(100, 0), dims, cfg);
    for (const auto& x : inputs) CHECK(model.confidence(x) > 0.99);
    const auto flipped = train_msmlp_streams(inputs, std::vector<int>(100, 1), dims, cfg);
    for (const auto& x : inputs) CHECK(flipped.confidence(x) < 0.01);
  }
  SUBCASE("loss never rises over 20 small full-batch steps") {
    const auto inputs = random_streams(12, dims, rng);
    std::vector<int> targets{0, 1, 1, 0, 0, 0, 1, 0, 1, 1, 0, 0};
    MsMlpModel model(dims, MsMlpConfig{});
    double last = model.loss(inputs, targets);
    for (int step = 0; step < 20; ++step) {
      std::vector<double> grad(model.params().size(), 0.0);
      model.loss(inputs, targets, &grad);
      nn::add_scaled(model.params(), grad, -0.01);
      const double now = model.loss(inputs, targets);
      CHECK(now <= last);
      last = now;
    }
  }
  SUBCASE("result is independent of the thread count and reproducible") {
    const auto inputs = random_streams(150, dims, rng);
    std::vector<int> targets;
    for (std::size_t i = 0; i < inputs.size(); ++i) targets.push_back(inputs[i][0][0] > 0.2);
    MsMlpConfig cfg;
    cfg.epochs = 3;
    cfg.batch = 20;
    const auto a = train_msmlp_streams(inputs, targets, dims, cfg);
    cfg.jobs = 4;
    const auto b = train_msmlp_streams(inputs, targets, dims, cfg);
    CHECK(a.params() == b.params());
    CHECK(train_msmlp_streams(inputs, targets, dims, cfg).params() == b.params());
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(train_msmlp_streams({}, {}, dims, MsMlpConfig{}), TrainingError);
  }
  SUBCASE("model file round trip keeps the header widths") {
    MsMlpConfig cfg;
    cfg.stream_width = 5;
    cfg.merge_width = 7;
    cfg.hidden_width = 3;
    const MsMlpModel model(dims, cfg);
    std::stringstream io;
    model.write(io);
    CHECK(io.str().find("outputs 2") != std::string::npos);
    CHECK(MsMlpModel::read(io) == model);
  }
}

TEST_CASE("BackoffTable") {
  BackoffTable t;
  t.add_sentence({"I", "want", "a", "room"});
  CHECK(t.lookup(BackoffTable::kStart, "i") == Backoff::full);
  CHECK(t.lookup("want", "A") == Backoff::full);
  CHECK(t.lookup("a", "want") == Backoff::backoff);
  CHECK(t.lookup("a", "parish") == Backoff::unknown);
  std::stringstream io;
  t.write(io);
  CHECK(BackoffTable::read(io) == t);
}

TEST_CASE("confidence model on a corrupted corpus") {
  const auto train = corrupted_corpus(200, 31);
  const auto test = corrupted_corpus(40, 32);
  auto a = synthesize_embeddings({}, DomainGrammar::touristic().vocabulary(), EmbeddingKind::char_ngram, 6, 1);
  auto fused = a;  // any table works as the fused input here

  SUBCASE("streams") {
    const ConfidenceFeaturizer f(fused, BackoffTable::from_references(train), train);
    const auto dims = f.stream_dims();
    REQUIRE(dims.size() == 6);
    CHECK(dims[0] == 5 * 6);
    CHECK(dims[2] == 3);
    for (const auto& u : test.utterances)
      for (std::size_t i = 0; i < u.tokens.size(); ++i) {
        const auto x = f.streams(u, i);
        for (std::size_t s = 2; s < 6; ++s) {
          double sum = 0.0;
          for (double v : x[s]) sum += v;
          CHECK(sum == 1.0);
        }
        if (i == 0)
          for (std::size_t k = 0; k < 12; ++k) CHECK(x[0][k] == 0.0);
      }
  }
  SUBCASE("training, attachment and the model file") {
    MsMlpConfig cfg;
    cfg.epochs = 2;
    std::vector<double> losses;
    const auto model = train_msmlp(train, fused, BackoffTable::from_references(train), cfg, &losses);
    CHECK(losses.size() == 2);
    auto scored = test;
    attach_confidences(model, scored, 3);
    for (const auto& u : scored.utterances)
      for (const auto& t : u.tokens) {
        REQUIRE(t.mlp_conf.has_value());
        CHECK(*t.mlp_conf > 0.0);
        CHECK(*t.mlp_conf < 1.0);
      }
    const std::string path = "test_confidence_model.txt";
    save_confidence_model(path, model);
    const auto back = load_confidence_model(path);
    std::remove(path.c_str());
    const auto& u = test.utterances[0];
    for (std::size_t i = 0; i < u.tokens.size(); ++i) CHECK(confidence_of(back, u, i) == confidence_of(model, u, i));
  }
  SUBCASE("tokens without error flags are rejected") {
    auto bad = train;
    bad.utterances[3].tokens[0].error_flag.reset();
    CHECK_THROWS_AS(train_msmlp(bad, fused, BackoffTable{}, MsMlpConfig{}), PreconditionError);
    CHECK_THROWS_AS(train_msmlp(Dataset{}, fused, BackoffTable{}, MsMlpConfig{}), TrainingError);
  }
}
