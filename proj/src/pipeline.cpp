// SPDX-License-Identifier: Apache-2.0
#include "slu/pipeline.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>

#include "slu/error.hpp"
#include "slu/parallel.hpp"
#include "slu/rng.hpp"
#include "slu/text.hpp"

namespace slu {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  auto [p, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("bad value for " + key + ": '" + value + "'");
  if constexpr (std::is_floating_point_v<T>)
    if (!std::isfinite(out)) throw ConfigError("bad value for " + key + ": '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "yes") return true;
  if (value == "0" || value == "false" || value == "no") return false;
  throw ConfigError("bad value for " + key + ": '" + value + "'");
}

std::string show(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

struct Field {
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

template <typename T>
Field field(const std::string& key, T& ref) {
  if constexpr (std::is_same_v<T, bool>)
    return {[&ref, key](const std::string& v) { ref = parse_bool(key, v); },
            [&ref] { return std::string(ref ? "true" : "false"); }};
  else if constexpr (std::is_same_v<T, std::string>)
    return {[&ref](const std::string& v) { ref = v; }, [&ref] { return ref; }};
  else if constexpr (std::is_floating_point_v<T>)
    return {[&ref, key](const std::string& v) { ref = parse_number<T>(key, v); }, [&ref] { return show(ref); }};
  else
    return {[&ref, key](const std::string& v) { ref = parse_number<T>(key, v); },
            [&ref] { return std::to_string(ref); }};
}

std::map<std::string, Field> fields(ExperimentConfig& c) {
  std::map<std::string, Field> f;
  auto add = [&](const std::string& key, auto& ref) { f.emplace(key, field(key, ref)); };
  add("seed", c.seed);
  add("grammar", c.grammar);
  add("train", c.train);
  add("dev", c.dev);
  add("test", c.test);
  add("nbest", c.nbest);
  add("embedding_dim", c.embedding_dim);
  add("conf_folds", c.conf_folds);
  add("bins", c.bins);
  add("tune_step", c.tune_step);
  add("run_eda", c.run_eda);
  add("ae.bottleneck", c.ae.bottleneck);
  add("ae.epochs", c.ae.epochs);
  add("ae.lr", c.ae.lr);
  add("ae.batch", c.ae.batch);
  add("msmlp.stream_width", c.msmlp.stream_width);
  add("msmlp.merge_width", c.msmlp.merge_width);
  add("msmlp.hidden_width", c.msmlp.hidden_width);
  add("msmlp.lr", c.msmlp.lr);
  add("msmlp.epochs", c.msmlp.epochs);
  add("msmlp.batch", c.msmlp.batch);
  add("crf.l2", c.crf.l2);
  add("crf.epochs", c.crf.epochs);
  add("crf.lr", c.crf.lr);
  add("crf.lr_decay", c.crf.lr_decay);
  add("crf.average_epochs", c.crf.average_epochs);
  add("crf.templates", c.crf_templates);
  add("eda.embed", c.eda.dims.embed);
  add("eda.hidden", c.eda.dims.hidden);
  add("eda.decoder", c.eda.dims.decoder);
  add("eda.attention", c.eda.dims.attention);
  add("eda.label_embed", c.eda.dims.label_embed);
  add("eda.aligned_input", c.eda.dims.aligned_input);
  add("eda.epochs", c.eda.epochs);
  add("eda.lr", c.eda.lr);
  add("eda.clip", c.eda.clip);
  add("eda.batch", c.eda.batch);
  add("eda.min_count", c.eda.min_count);
  return f;
}

}  // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  auto f = fields(*this);
  auto it = f.find(key);
  if (it == f.end()) throw ConfigError("unknown configuration key '" + key + "'");
  it->second.set(std::string(text::trim(value)));
}

void ExperimentConfig::load(std::istream& in) {
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto t = text::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw ConfigError(text::format("config line %zu: expected key=value", n));
    set(std::string(text::trim(t.substr(0, eq))), std::string(t.substr(eq + 1)));
  }
}

void ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  load(in);
}

std::map<std::string, std::string> ExperimentConfig::values() const {
  std::map<std::string, std::string> out;
  for (auto& [k, f] : fields(const_cast<ExperimentConfig&>(*this))) out[k] = f.get();
  return out;
}

void ExperimentConfig::write(std::ostream& out) const {
  for (const auto& [k, v] : values()) out << k << '=' << v << '\n';
}

// ---------------------------------------------------------------------------
// Stages

DomainGrammar experiment_grammar(const ExperimentConfig& cfg) {
  auto g = cfg.grammar.empty() ? DomainGrammar::touristic() : DomainGrammar::load(cfg.grammar);
  g.check();
  return g;
}

AsrSplits make_asr_splits(const ExperimentConfig& cfg, const DomainGrammar& grammar) {
  if (cfg.train == 0 || cfg.dev == 0 || cfg.test == 0) throw ConfigError("every split needs at least one utterance");
  if (cfg.nbest < 1) throw ConfigError("nbest must be at least 1");
  AsrSplits s;
  s.ref_train = generate_corpus(grammar, cfg.train, derive_seed(cfg.seed, "train"), "train");
  s.ref_dev = generate_corpus(grammar, cfg.dev, derive_seed(cfg.seed, "dev"), "dev");
  s.ref_test = generate_corpus(grammar, cfg.test, derive_seed(cfg.seed, "test"), "test");
  const auto noise = NoiseConfig::defaults(grammar, derive_seed(cfg.seed, "noise"));

  auto transcribe = [&](const Dataset& ref, Dataset& hyp, std::vector<NbestList>* nbest,
                        std::vector<ConfusionNetwork>* cns) {
    const std::size_t n = ref.utterances.size();
    hyp.utterances.assign(n, {});
    if (nbest) nbest->assign(n, {});
    if (cns) cns->assign(n, {});
    parallel_for(n, cfg.jobs, [&](std::size_t i) {
      const auto& u = ref.utterances[i];
      auto h = project_labels(corrupt(u, noise, grammar));
      auto list = sample_nbest(u, noise, cfg.nbest);
      auto cn = build_cn(list, u.id);
      const auto pap = pap_of(cn, h.words());
      for (std::size_t t = 0; t < h.tokens.size(); ++t) h.tokens[t].pap = pap[t];
      hyp.utterances[i] = std::move(h);
      if (nbest) (*nbest)[i] = {u.id, std::move(list)};
      if (cns) (*cns)[i] = std::move(cn);
    });
  };
  transcribe(s.ref_train, s.hyp_train, nullptr, nullptr);
  transcribe(s.ref_dev, s.hyp_dev, nullptr, nullptr);
  transcribe(s.ref_test, s.hyp_test, &s.nbest_test, &s.cn_test);

  ErrorCounts wer;
  for (const auto& h : s.hyp_test.utterances) wer.add(align_to_reference(h), h.reference_tokens->size());
  s.test_wer = wer.rate();
  s.test_words = wer.reference;
  return s;
}

ConfidenceStage run_confidence(const ExperimentConfig& cfg, const DomainGrammar& grammar, AsrSplits& asr) {
  ConfidenceStage st;
  std::vector<std::vector<std::string>> sentences;
  for (const auto& u : asr.ref_train.utterances) sentences.push_back(u.words());
  const auto vocab = grammar.vocabulary();
  for (auto kind : {EmbeddingKind::context, EmbeddingKind::cooccurrence, EmbeddingKind::char_ngram}) {
    auto t = synthesize_embeddings(sentences, vocab, kind, cfg.embedding_dim,
                                   derive_seed(cfg.seed, std::string("embeddings-") + to_string(kind)));
    t.set_name(to_string(kind));
    st.tables.push_back(std::move(t));
  }
  auto ae_cfg = cfg.ae;
  ae_cfg.seed = derive_seed(cfg.seed, "autoencoder");
  st.autoencoder = train_autoencoder(st.tables, ae_cfg, &st.autoencoder_error);
  const auto fused = fused_table(st.autoencoder, st.tables);
  const auto backoff = BackoffTable::from_references(asr.hyp_train);

  auto mlp_cfg = cfg.msmlp;
  mlp_cfg.seed = derive_seed(cfg.seed, "msmlp");
  mlp_cfg.jobs = cfg.jobs;
  st.model = train_msmlp(asr.hyp_train, fused, backoff, mlp_cfg, &st.epoch_losses);
  attach_confidences(st.model, asr.hyp_dev, cfg.jobs);
  attach_confidences(st.model, asr.hyp_test, cfg.jobs);

  const std::size_t k = cfg.conf_folds;
  if (k < 2) {
    attach_confidences(st.model, asr.hyp_train, cfg.jobs);
    return st;
  }
  // Training-set scores come from models that did not see the utterance.
  for (std::size_t fold = 0; fold < k; ++fold) {
    Dataset rest, held;
    std::vector<std::size_t> held_index;
    for (std::size_t i = 0; i < asr.hyp_train.utterances.size(); ++i) {
      if (i % k == fold) {
        held.utterances.push_back(asr.hyp_train.utterances[i]);
        held_index.push_back(i);
      } else {
        rest.utterances.push_back(asr.hyp_train.utterances[i]);
      }
    }
    if (held.utterances.empty() || rest.utterances.empty()) throw ConfigError("too few training utterances for conf_folds");
    auto fold_cfg = mlp_cfg;
    fold_cfg.seed = derive_seed(mlp_cfg.seed, fold);
    const auto m = train_msmlp(rest, fused, backoff, fold_cfg);
    attach_confidences(m, held, cfg.jobs);
    for (std::size_t j = 0; j < held_index.size(); ++j)
      asr.hyp_train.utterances[held_index[j]] = std::move(held.utterances[j]);
  }
  return st;
}

namespace {

Dataset with_error_labels(const Dataset& d) {
  Dataset out;
  out.utterances.reserve(d.utterances.size());
  for (const auto& u : d.utterances) out.utterances.push_back(augment_error_labels(u));
  return out;
}

std::vector<TaggerOutput> stripped(std::vector<TaggerOutput> outs) {
  for (auto& o : outs) o = strip_error_labels(o);
  return outs;
}

FeatureVectorSpec system_spec(const std::string& name, std::size_t bins) {
  if (name == "crf-nocm") return FeatureVectorSpec::without_confidence(bins);
  if (name == "crf-pap") return FeatureVectorSpec::without_confidence(bins).with(FeatureFamily::pap);
  if (name == "crf" || name == "crf-err" || name == "eda" || name == "eda-err") return FeatureVectorSpec::all(bins);
  throw ConfigError("unknown system '" + name + "'");
}

bool uses_error_labels(const std::string& name) { return name.size() > 4 && name.substr(name.size() - 4) == "-err"; }

}  // namespace

SystemResult run_crf_system(const std::string& name, const ExperimentConfig& cfg, const AsrSplits& asr,
                            const Lexicon& lexicon, CrfModel* model_out) {
  if (name.rfind("crf", 0) != 0) throw ConfigError("not a CRF system: " + name);
  const auto spec = system_spec(name, cfg.bins);
  const auto templates = cfg.crf_templates.empty() ? TemplateSet::default_set() : TemplateSet::load(cfg.crf_templates);
  auto c = cfg.crf;
  c.seed = derive_seed(cfg.seed, name);
  c.jobs = cfg.jobs;
  const auto model = uses_error_labels(name) ? train_crf(with_error_labels(asr.hyp_train), templates, spec, c)
                                             : train_crf(asr.hyp_train, templates, spec, c);
  SystemResult r;
  r.name = name;
  r.dev = stripped(predict_crf(model, asr.hyp_dev, cfg.jobs));
  r.test = stripped(predict_crf(model, asr.hyp_test, cfg.jobs));
  r.score = score(asr.ref_test, asr.hyp_test, r.test, lexicon);
  if (model_out) *model_out = model;
  return r;
}

SystemResult run_eda_system(const std::string& name, const ExperimentConfig& cfg, const AsrSplits& asr,
                            const Lexicon& lexicon, EdaModel* model_out) {
  if (name.rfind("eda", 0) != 0) throw ConfigError("not an EDA system: " + name);
  auto c = cfg.eda;
  c.spec = system_spec(name, cfg.bins);
  c.seed = derive_seed(cfg.seed, name);
  c.jobs = cfg.jobs;
  const auto model = uses_error_labels(name) ? train_eda(with_error_labels(asr.hyp_train), c)
                                             : train_eda(asr.hyp_train, c);
  SystemResult r;
  r.name = name;
  r.dev = stripped(predict_eda(model, asr.hyp_dev, cfg.jobs));
  r.test = stripped(predict_eda(model, asr.hyp_test, cfg.jobs));
  r.score = score(asr.ref_test, asr.hyp_test, r.test, lexicon);
  if (model_out) *model_out = model;
  return r;
}

// ---------------------------------------------------------------------------
// Report

const SystemResult& ExperimentResult::system(const std::string& name) const {
  for (const auto& s : systems)
    if (s.name == name) return s;
  throw PreconditionError("no system named " + name);
}

namespace {

std::string score_row(const std::string& name, const ScoreReport& r) {
  return text::format("  %-16s %6.2f  %.3f  %.3f   %6.2f  %.3f  %.3f\n", name.c_str(), r.cer(), r.precision(),
                      r.recall(), r.cver(), r.value_precision(), r.value_recall());
}

const char* kScoreHeader = "                     C %Err    P      R      CV %Err   P      R\n";

}  // namespace

void ExperimentResult::write_report(std::ostream& out) const {
  out << "ASR channel on TEST\n";
  out << text::format("  WER %.2f%% over %zu reference words\n\n", test_wer, test_words);

  out << "Confidence measures on TEST (normalized cross entropy)\n";
  out << text::format("  pap      %.4f\n  MS-MLP   %.4f\n\n", nce_pap, nce_conf);

  out << "CRF with and without confidence features on TEST\n" << kScoreHeader;
  for (const auto* n : {"crf-nocm", "crf-pap", "crf"}) out << score_row(n, system(n).score);
  out << '\n';

  out << "Taggers on TEST\n" << kScoreHeader;
  for (const auto& s : systems)
    if (s.name != "crf-nocm" && s.name != "crf-pap") out << score_row(s.name, s.score);
  out << '\n';

  out << "Combination of " << text::join(combined, ", ") << " on TEST\n";
  out << "  weights tuned on DEV:";
  for (std::size_t i = 0; i < combined.size(); ++i) out << ' ' << combined[i] << '=' << show(weights.weights[i]);
  out << text::format("  (DEV CER %.2f)\n", weights.dev_cer);
  out << kScoreHeader << score_row("weighted", combination) << score_row("consensus", consensus);
  out << '\n';

  out << "Calibration of pap on TEST\n";
  calib_pap.write_text(out);
  out << "\nCalibration of MS-MLP confidence on TEST\n";
  calib_conf.write_text(out);
}

namespace {

void write_kv(std::ostream& out, const ExperimentResult& r) {
  out << text::format("wer=%.4f\n", r.test_wer) << "wer_reference_words=" << r.test_words << '\n';
  out << text::format("nce.pap=%.6f\nnce.conf=%.6f\n", r.nce_pap, r.nce_conf);
  for (const auto& s : r.systems) s.score.write_kv(out, "system." + s.name);
  for (std::size_t i = 0; i < r.combined.size(); ++i)
    out << "weight." << r.combined[i] << '=' << show(r.weights.weights[i]) << '\n';
  out << text::format("weights.dev_cer=%.4f\n", r.weights.dev_cer);
  r.combination.write_kv(out, "combination");
  r.consensus.write_kv(out, "consensus");
}

template <typename Fn>
void write_file(const fs::path& path, std::vector<fs::path>& written, Fn&& fn) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  fn(out);
  out.close();
  if (!out) throw FormatError("failed writing " + path.string());
  written.push_back(path);
}

}  // namespace

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return text::format("%016llx", static_cast<unsigned long long>(fnv1a64(ss.str())));
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
  const auto grammar = experiment_grammar(cfg);
  auto asr = make_asr_splits(cfg, grammar);
  auto conf = run_confidence(cfg, grammar, asr);

  ExperimentResult r;
  r.test_wer = asr.test_wer;
  r.test_words = asr.test_words;
  const auto pap = confidence_records(asr.hyp_test, ConfidenceMeasure::pap);
  const auto mlp = confidence_records(asr.hyp_test, ConfidenceMeasure::mlp_conf);
  r.nce_pap = nce(pap);
  r.nce_conf = nce(mlp);
  r.calib_pap = calibration_bins(pap, cfg.bins);
  r.calib_conf = calibration_bins(mlp, cfg.bins);

  std::map<std::string, CrfModel> crf_models;
  std::map<std::string, EdaModel> eda_models;
  for (const auto* name : {"crf-nocm", "crf-pap", "crf", "crf-err"})
    r.systems.push_back(run_crf_system(name, cfg, asr, grammar.lexicon, &crf_models[name]));
  r.combined = {"crf", "crf-err"};
  if (cfg.run_eda) {
    for (const auto* name : {"eda", "eda-err"})
      r.systems.push_back(run_eda_system(name, cfg, asr, grammar.lexicon, &eda_models[name]));
    r.combined = {"crf", "eda", "crf-err", "eda-err"};
  }

  std::vector<std::vector<TaggerOutput>> dev_systems, test_systems;
  for (const auto& name : r.combined) {
    dev_systems.push_back(r.system(name).dev);
    test_systems.push_back(r.system(name).test);
  }
  r.weights = tune_weights(dev_systems, asr.ref_dev, asr.hyp_dev, grammar.lexicon, cfg.tune_step);
  const auto combined = combine_weighted(test_systems, r.weights.weights);
  const auto agreed = consensus(test_systems);
  r.combination = score(asr.ref_test, asr.hyp_test, combined, grammar.lexicon);
  r.consensus = score(asr.ref_test, asr.hyp_test, agreed, grammar.lexicon);

  if (out_dir.empty()) return r;
  const fs::path root(out_dir);
  std::vector<fs::path> files;
  write_file(root / "config.txt", files, [&](std::ostream& o) { cfg.write(o); });
  for (auto [name, d] : {std::pair{"train", &asr.ref_train}, {"dev", &asr.ref_dev}, {"test", &asr.ref_test}})
    write_file(root / "corpus" / (std::string(name) + ".ref.tsv"), files, [&](std::ostream& o) { write_dataset(o, *d); });
  for (auto [name, d] : {std::pair{"train", &asr.hyp_train}, {"dev", &asr.hyp_dev}, {"test", &asr.hyp_test}})
    write_file(root / "asr" / (std::string(name) + ".hyp.tsv"), files, [&](std::ostream& o) { write_dataset(o, *d); });
  write_file(root / "asr" / "test.nbest", files, [&](std::ostream& o) { write_nbest(o, asr.nbest_test); });
  write_file(root / "asr" / "test.cn", files, [&](std::ostream& o) { write_cns(o, asr.cn_test); });
  for (const auto& t : conf.tables)
    write_file(root / "models" / ("embeddings-" + t.name() + ".txt"), files, [&](std::ostream& o) { t.write(o); });
  write_file(root / "models" / "autoencoder.model", files, [&](std::ostream& o) { conf.autoencoder.write(o); });
  write_file(root / "models" / "confidence.model", files,
             [&](std::ostream& o) { write_confidence_model(o, conf.model); });
  for (const auto& [name, m] : crf_models)
    write_file(root / "models" / (name + ".model"), files, [&](std::ostream& o) { m.write(o); });
  for (const auto& [name, m] : eda_models)
    write_file(root / "models" / (name + ".model"), files, [&](std::ostream& o) { m.write(o); });
  for (const auto& s : r.systems) {
    write_file(root / "outputs" / (s.name + ".dev.txt"), files, [&](std::ostream& o) { write_tagger_outputs(o, s.dev); });
    write_file(root / "outputs" / (s.name + ".test.txt"), files,
               [&](std::ostream& o) { write_tagger_outputs(o, s.test); });
  }
  write_file(root / "outputs" / "combination.test.txt", files, [&](std::ostream& o) { write_tagger_outputs(o, combined); });
  write_file(root / "outputs" / "consensus.test.txt", files, [&](std::ostream& o) { write_tagger_outputs(o, agreed); });
  write_file(root / "calibration-pap.csv", files, [&](std::ostream& o) { r.calib_pap.write_csv(o); });
  write_file(root / "calibration-conf.csv", files, [&](std::ostream& o) { r.calib_conf.write_csv(o); });
  write_file(root / "report.txt", files, [&](std::ostream& o) { r.write_report(o); });
  write_file(root / "report.kv", files, [&](std::ostream& o) { write_kv(o, r); });

  write_file(root / "manifest.txt", files, [&](std::ostream& o) {
    o << "# replay: slu pipeline --config config.txt\n";
    o << "seed=" << cfg.seed << '\n';
    for (const auto* stage : {"train", "dev", "test", "noise", "autoencoder", "msmlp", "crf-nocm", "crf-pap", "crf",
                              "crf-err", "eda", "eda-err"})
      o << "seed." << stage << '=' << derive_seed(cfg.seed, stage) << '\n';
    for (const auto& [k, v] : cfg.values()) o << "config." << k << '=' << v << '\n';
    std::vector<std::string> rel;
    for (const auto& f : files) rel.push_back(fs::relative(f, root).generic_string());
    std::sort(rel.begin(), rel.end());
    for (const auto& f : rel) o << "file." << f << '=' << file_digest((root / f).string()) << '\n';
  });
  return r;
}

}  // namespace slu
