// SPDX-License-Identifier: Apache-2.0
// Command-line driver: one subcommand per pipeline stage plus `pipeline`.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "slu/error.hpp"
#include "slu/features.hpp"
#include "slu/pipeline.hpp"
#include "slu/text.hpp"

using namespace slu;

namespace {

std::ofstream open_out(const std::string& path) {
  if (auto parent = std::filesystem::path(path).parent_path(); !parent.empty())
    std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return in;
}

DomainGrammar grammar_from(const std::string& path) {
  auto g = path.empty() ? DomainGrammar::touristic() : DomainGrammar::load(path);
  g.check();
  return g;
}

std::vector<std::vector<TaggerOutput>> read_systems(const std::vector<std::string>& paths) {
  std::vector<std::vector<TaggerOutput>> out;
  for (const auto& p : paths) out.push_back(read_tagger_outputs(p));
  return out;
}

std::string first_token(const std::string& path) {
  auto in = open_in(path);
  std::string tok;
  in >> tok;
  return tok;
}

Dataset with_error_labels(const Dataset& d) {
  Dataset out;
  for (const auto& u : d.utterances) out.utterances.push_back(augment_error_labels(u));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spoken language understanding experiments on a synthetic dialogue corpus"};
  app.require_subcommand(1);
  app.fallthrough();
  std::size_t jobs = 1;
  app.add_option("--jobs", jobs, "Worker threads; results do not depend on it")->check(CLI::PositiveNumber);

  std::function<void()> run;

  // gen
  auto* gen = app.add_subcommand("gen", "Generate an annotated reference corpus");
  std::size_t gen_n = 0;
  std::uint64_t gen_seed = 1;
  std::string gen_grammar, gen_prefix = "utt", gen_out;
  gen->add_option("--n", gen_n, "Number of utterances")->required();
  gen->add_option("--seed", gen_seed, "Random seed");
  gen->add_option("--grammar", gen_grammar, "Grammar file (shipped touristic grammar by default)");
  gen->add_option("--prefix", gen_prefix, "Utterance id prefix");
  gen->add_option("--out", gen_out, "Output corpus")->required();
  gen->callback([&] {
    run = [&] {
      auto out = open_out(gen_out);
      write_dataset(out, generate_corpus(grammar_from(gen_grammar), gen_n, gen_seed, gen_prefix));
    };
  });

  // corrupt
  auto* cor = app.add_subcommand("corrupt", "Pass a reference corpus through the ASR error channel");
  std::string cor_in, cor_out, cor_grammar, cor_nbest_out;
  std::uint64_t cor_seed = 1;
  std::size_t cor_nbest = 10;
  cor->add_option("--in", cor_in, "Reference corpus")->required();
  cor->add_option("--out", cor_out, "Hypothesis corpus with projected labels and error flags")->required();
  cor->add_option("--seed", cor_seed, "Channel seed");
  cor->add_option("--grammar", cor_grammar, "Grammar file");
  cor->add_option("--nbest", cor_nbest, "N-best list size")->check(CLI::PositiveNumber);
  cor->add_option("--nbest-out", cor_nbest_out, "Write n-best lists here");
  cor->callback([&] {
    run = [&] {
      const auto grammar = grammar_from(cor_grammar);
      const auto noise = NoiseConfig::defaults(grammar, cor_seed);
      const auto ref = read_dataset(cor_in);
      Dataset hyp;
      std::vector<NbestList> lists;
      ErrorCounts wer;
      for (const auto& u : ref.utterances) {
        auto h = project_labels(corrupt(u, noise, grammar));
        wer.add(align_to_reference(h), u.tokens.size());
        hyp.utterances.push_back(std::move(h));
        if (!cor_nbest_out.empty()) lists.push_back({u.id, sample_nbest(u, noise, cor_nbest)});
      }
      auto out = open_out(cor_out);
      write_dataset(out, hyp);
      if (!cor_nbest_out.empty()) {
        auto nb = open_out(cor_nbest_out);
        write_nbest(nb, lists);
      }
      std::cout << text::format("WER %.2f%% over %zu reference words\n", wer.rate(), wer.reference);
    };
  });

  // cn
  auto* cn = app.add_subcommand("cn", "Build confusion networks and attach pap to the 1-best");
  std::string cn_nbest, cn_in, cn_out, cn_cn_out;
  cn->add_option("--nbest", cn_nbest, "N-best lists")->required();
  cn->add_option("--in", cn_in, "Hypothesis corpus (the 1-best of each list)")->required();
  cn->add_option("--out", cn_out, "Hypothesis corpus with pap")->required();
  cn->add_option("--cn-out", cn_cn_out, "Write the confusion networks here");
  cn->callback([&] {
    run = [&] {
      auto nb_in = open_in(cn_nbest);
      const auto lists = read_nbest(nb_in);
      auto data = read_dataset(cn_in);
      if (lists.size() != data.utterances.size())
        throw PairingError(text::format("%zu n-best lists for %zu utterances", lists.size(), data.utterances.size()));
      std::vector<ConfusionNetwork> cns;
      for (std::size_t i = 0; i < lists.size(); ++i) {
        auto& u = data.utterances[i];
        if (lists[i].id != u.id) throw PairingError("n-best list " + lists[i].id + " does not match utterance " + u.id);
        cns.push_back(build_cn(lists[i].hypotheses, u.id));
        const auto pap = pap_of(cns.back(), u.words());
        for (std::size_t t = 0; t < u.tokens.size(); ++t) u.tokens[t].pap = pap[t];
      }
      auto out = open_out(cn_out);
      write_dataset(out, data);
      if (!cn_cn_out.empty()) {
        auto o = open_out(cn_cn_out);
        write_cns(o, cns);
      }
    };
  });

  // feats
  auto* feats = app.add_subcommand("feats", "Print the discrete features of every token");
  std::string feats_in, feats_out, feats_spec = "all";
  std::size_t feats_bins = 10;
  feats->add_option("--in", feats_in, "Corpus")->required();
  feats->add_option("--out", feats_out, "Output: id, index, then feature keys, tab separated")->required();
  feats->add_option("--spec", feats_spec, "Families: surface,sem,syn,morph,pap,conf or all");
  feats->add_option("--bins", feats_bins, "Confidence bins");
  feats->callback([&] {
    run = [&] {
      const auto spec = FeatureVectorSpec::parse(feats_spec, feats_bins);
      const auto data = read_dataset(feats_in);
      auto out = open_out(feats_out);
      for (const auto& u : data.utterances)
        for (std::size_t i = 0; i < u.tokens.size(); ++i) {
          out << u.id << '\t' << i;
          for (const auto& f : token_features(u.tokens[i], u, spec)) out << '\t' << f.key();
          out << '\n';
        }
    };
  });

  // train-ae
  auto* tae = app.add_subcommand("train-ae", "Fuse embedding tables with an autoencoder");
  std::vector<std::string> tae_tables;
  std::string tae_synth, tae_grammar, tae_out, tae_fused, tae_tables_out;
  std::size_t tae_dim = 12;
  AutoencoderConfig tae_cfg;
  tae->add_option("--embeddings", tae_tables, "Embedding tables (word v1 v2 ...)")->delimiter(',');
  tae->add_option("--synthesize-from", tae_synth, "Synthesize three tables from this corpus instead");
  tae->add_option("--grammar", tae_grammar, "Grammar whose vocabulary the synthesized tables cover");
  tae->add_option("--dim", tae_dim, "Dimension of synthesized tables");
  tae->add_option("--tables-out", tae_tables_out, "Directory for the synthesized tables");
  tae->add_option("--bottleneck", tae_cfg.bottleneck, "Bottleneck width");
  tae->add_option("--epochs", tae_cfg.epochs, "Epochs");
  tae->add_option("--lr", tae_cfg.lr, "Learning rate");
  tae->add_option("--batch", tae_cfg.batch, "Batch size");
  tae->add_option("--seed", tae_cfg.seed, "Seed");
  tae->add_option("--out", tae_out, "Autoencoder model")->required();
  tae->add_option("--fused-out", tae_fused, "Write the fused embedding table here");
  tae->callback([&] {
    run = [&] {
      std::vector<EmbeddingTable> tables;
      if (!tae_synth.empty()) {
        if (!tae_tables_out.empty()) std::filesystem::create_directories(tae_tables_out);
        std::vector<std::vector<std::string>> sentences;
        for (const auto& u : read_dataset(tae_synth).utterances) sentences.push_back(u.words());
        const auto vocab = grammar_from(tae_grammar).vocabulary();
        for (auto kind : {EmbeddingKind::context, EmbeddingKind::cooccurrence, EmbeddingKind::char_ngram}) {
          auto t = synthesize_embeddings(sentences, vocab, kind, tae_dim,
                                         derive_seed(tae_cfg.seed, std::string("embeddings-") + to_string(kind)));
          t.set_name(to_string(kind));
          if (!tae_tables_out.empty())
            save_embeddings((std::filesystem::path(tae_tables_out) / ("embeddings-" + t.name() + ".txt")).string(), t);
          tables.push_back(std::move(t));
        }
      } else {
        for (const auto& p : tae_tables) {
          std::vector<std::string> warnings;
          tables.push_back(load_embeddings(p, OovPolicy::zero_vector, &warnings));
          for (const auto& w : warnings) std::cerr << p << ": " << w << '\n';
        }
      }
      double err = 0.0;
      const auto model = train_autoencoder(tables, tae_cfg, &err);
      save_autoencoder(tae_out, model);
      if (!tae_fused.empty()) save_embeddings(tae_fused, fused_table(model, tables));
      std::cout << text::format("reconstruction error %.6f\n", err);
    };
  });

  // train-conf
  auto* tconf = app.add_subcommand("train-conf", "Train the MS-MLP ASR error detector");
  std::string tconf_train, tconf_fused, tconf_out;
  MsMlpConfig tconf_cfg;
  tconf->add_option("--train", tconf_train, "Hypothesis corpus with error flags and references")->required();
  tconf->add_option("--fused", tconf_fused, "Fused embedding table")->required();
  tconf->add_option("--out", tconf_out, "Confidence model")->required();
  tconf->add_option("--stream-width", tconf_cfg.stream_width, "Per-stream projection width");
  tconf->add_option("--merge-width", tconf_cfg.merge_width, "Merge layer width");
  tconf->add_option("--hidden-width", tconf_cfg.hidden_width, "Hidden layer width");
  tconf->add_option("--lr", tconf_cfg.lr, "Learning rate");
  tconf->add_option("--epochs", tconf_cfg.epochs, "Epochs");
  tconf->add_option("--batch", tconf_cfg.batch, "Batch size");
  tconf->add_option("--seed", tconf_cfg.seed, "Seed");
  tconf->callback([&] {
    run = [&] {
      const auto train = read_dataset(tconf_train);
      tconf_cfg.jobs = jobs;
      std::vector<double> losses;
      const auto model =
          train_msmlp(train, load_embeddings(tconf_fused), BackoffTable::from_references(train), tconf_cfg, &losses);
      save_confidence_model(tconf_out, model);
      for (std::size_t e = 0; e < losses.size(); ++e) std::cout << text::format("epoch %zu loss %.6f\n", e + 1, losses[e]);
    };
  });

  // attach-conf
  auto* aconf = app.add_subcommand("attach-conf", "Attach MS-MLP confidences to a hypothesis corpus");
  std::string aconf_model, aconf_in, aconf_out;
  aconf->add_option("--model", aconf_model, "Confidence model")->required();
  aconf->add_option("--in", aconf_in, "Hypothesis corpus")->required();
  aconf->add_option("--out", aconf_out, "Output corpus")->required();
  aconf->callback([&] {
    run = [&] {
      auto data = read_dataset(aconf_in);
      attach_confidences(load_confidence_model(aconf_model), data, jobs);
      auto out = open_out(aconf_out);
      write_dataset(out, data);
    };
  });

  // train-crf
  auto* tcrf = app.add_subcommand("train-crf", "Train a linear-chain CRF tagger");
  std::string tcrf_train, tcrf_out, tcrf_spec = "all", tcrf_templates;
  std::size_t tcrf_bins = 10;
  bool tcrf_err = false;
  CrfConfig tcrf_cfg;
  tcrf->add_option("--train", tcrf_train, "Training corpus")->required();
  tcrf->add_option("--out", tcrf_out, "Model file")->required();
  tcrf->add_option("--spec", tcrf_spec, "Feature families");
  tcrf->add_option("--bins", tcrf_bins, "Confidence bins");
  tcrf->add_option("--templates", tcrf_templates, "Template file (default set otherwise)");
  tcrf->add_flag("--error-labels", tcrf_err, "Train with ERROR-C/ERROR-N on erroneous words");
  tcrf->add_option("--l2", tcrf_cfg.l2, "L2 strength");
  tcrf->add_option("--epochs", tcrf_cfg.epochs, "Epochs");
  tcrf->add_option("--lr", tcrf_cfg.lr, "Initial learning rate");
  tcrf->add_option("--lr-decay", tcrf_cfg.lr_decay, "Learning-rate decay");
  tcrf->add_option("--average", tcrf_cfg.average_epochs, "Average the weights of the last N epochs");
  tcrf->add_option("--seed", tcrf_cfg.seed, "Seed");
  tcrf->callback([&] {
    run = [&] {
      auto train = read_dataset(tcrf_train);
      if (tcrf_err) train = with_error_labels(train);
      tcrf_cfg.jobs = jobs;
      const auto templates = tcrf_templates.empty() ? TemplateSet::default_set() : TemplateSet::load(tcrf_templates);
      save_crf(tcrf_out, train_crf(train, templates, FeatureVectorSpec::parse(tcrf_spec, tcrf_bins), tcrf_cfg));
    };
  });

  // train-eda
  auto* teda = app.add_subcommand("train-eda", "Train the attention encoder/decoder tagger");
  std::string teda_train, teda_out, teda_spec = "all";
  std::size_t teda_bins = 10;
  bool teda_err = false, teda_unaligned = false;
  EdaConfig teda_cfg;
  teda->add_option("--train", teda_train, "Training corpus")->required();
  teda->add_option("--out", teda_out, "Model file")->required();
  teda->add_option("--spec", teda_spec, "Feature families");
  teda->add_option("--bins", teda_bins, "Confidence bins");
  teda->add_flag("--error-labels", teda_err, "Train with ERROR-C/ERROR-N on erroneous words");
  teda->add_option("--embed", teda_cfg.dims.embed, "Input embedding width");
  teda->add_option("--hidden", teda_cfg.dims.hidden, "Encoder state width per direction");
  teda->add_option("--decoder", teda_cfg.dims.decoder, "Decoder state width");
  teda->add_option("--attention", teda_cfg.dims.attention, "Attention width");
  teda->add_option("--label-embed", teda_cfg.dims.label_embed, "Label embedding width");
  teda->add_flag("--no-aligned-input", teda_unaligned, "Decoder reads only the attention context");
  teda->add_option("--epochs", teda_cfg.epochs, "Epochs");
  teda->add_option("--lr", teda_cfg.lr, "Adam step size");
  teda->add_option("--clip", teda_cfg.clip, "Gradient norm clip");
  teda->add_option("--batch", teda_cfg.batch, "Batch size");
  teda->add_option("--min-count", teda_cfg.min_count, "Minimum count for words and feature keys");
  teda->add_option("--seed", teda_cfg.seed, "Seed");
  teda->callback([&] {
    run = [&] {
      auto train = read_dataset(teda_train);
      if (teda_err) train = with_error_labels(train);
      teda_cfg.spec = FeatureVectorSpec::parse(teda_spec, teda_bins);
      teda_cfg.dims.aligned_input = !teda_unaligned;
      teda_cfg.jobs = jobs;
      std::vector<double> losses;
      save_eda(teda_out, train_eda(train, teda_cfg, &losses));
      for (std::size_t e = 0; e < losses.size(); ++e) std::cout << text::format("epoch %zu loss %.6f\n", e + 1, losses[e]);
    };
  });

  // predict
  auto* pred = app.add_subcommand("predict", "Tag a corpus with a CRF or EDA model");
  std::string pred_model, pred_in, pred_out;
  bool pred_keep = false;
  pred->add_option("--model", pred_model, "Model file")->required();
  pred->add_option("--in", pred_in, "Corpus")->required();
  pred->add_option("--out", pred_out, "Tagger outputs")->required();
  pred->add_flag("--keep-error-labels", pred_keep, "Do not map ERROR-C/ERROR-N to null");
  pred->callback([&] {
    run = [&] {
      const auto data = read_dataset(pred_in);
      const auto kind = first_token(pred_model);
      std::vector<TaggerOutput> outs;
      if (kind == "slu-crf")
        outs = predict_crf(load_crf(pred_model), data, jobs);
      else if (kind == "slu-eda")
        outs = predict_eda(load_eda(pred_model), data, jobs);
      else
        throw FormatError(pred_model + " is neither a CRF nor an EDA model");
      if (!pred_keep)
        for (auto& o : outs) o = strip_error_labels(o);
      auto out = open_out(pred_out);
      write_tagger_outputs(out, outs);
    };
  });

  // strip
  auto* strip = app.add_subcommand("strip", "Map ERROR-C/ERROR-N labels to null");
  std::string strip_in, strip_out;
  strip->add_option("--in", strip_in, "Tagger outputs")->required();
  strip->add_option("--out", strip_out, "Output")->required();
  strip->callback([&] {
    run = [&] {
      auto outs = read_tagger_outputs(strip_in);
      for (auto& o : outs) o = strip_error_labels(o);
      auto out = open_out(strip_out);
      write_tagger_outputs(out, outs);
    };
  });

  // combine
  auto* comb = app.add_subcommand("combine", "Weighted per-word vote over aligned tagger outputs");
  std::vector<std::string> comb_inputs, comb_dev_inputs;
  std::vector<double> comb_weights;
  std::vector<std::size_t> comb_priority;
  std::string comb_out, comb_dev_ref, comb_dev_hyp, comb_grammar;
  double comb_step = 0.1;
  comb->add_option("--inputs", comb_inputs, "Tagger outputs, one file per system")->required()->delimiter(',');
  comb->add_option("--weights", comb_weights, "One weight per system")->delimiter(',');
  comb->add_option("--priority", comb_priority, "Tie-break order (system indices)")->delimiter(',');
  comb->add_option("--dev-inputs", comb_dev_inputs, "Dev outputs of the same systems, to tune the weights")
      ->delimiter(',');
  comb->add_option("--dev-ref", comb_dev_ref, "Dev reference corpus");
  comb->add_option("--dev-hyp", comb_dev_hyp, "Dev hypothesis corpus (defaults to the reference)");
  comb->add_option("--step", comb_step, "Weight grid step");
  comb->add_option("--grammar", comb_grammar, "Grammar providing the value lexicon");
  comb->add_option("--out", comb_out, "Combined outputs")->required();
  comb->callback([&] {
    run = [&] {
      const auto systems = read_systems(comb_inputs);
      std::vector<double> weights = comb_weights;
      if (!comb_dev_inputs.empty()) {
        if (comb_dev_ref.empty()) throw ConfigError("--dev-inputs needs --dev-ref");
        const auto ref = read_dataset(comb_dev_ref);
        const auto hyp = comb_dev_hyp.empty() ? ref : read_dataset(comb_dev_hyp);
        const auto tuned = tune_weights(read_systems(comb_dev_inputs), ref, hyp, grammar_from(comb_grammar).lexicon,
                                        comb_step, comb_priority);
        weights = tuned.weights;
        std::cout << "weights";
        for (double w : weights) std::cout << ' ' << w;
        std::cout << text::format("\ndev CER %.2f\n", tuned.dev_cer);
      }
      if (weights.empty()) weights.assign(systems.size(), 1.0);
      auto out = open_out(comb_out);
      write_tagger_outputs(out, combine_weighted(systems, weights, comb_priority));
    };
  });

  // consensus
  auto* cons = app.add_subcommand("consensus", "Keep words on which every system agrees, '*' elsewhere");
  std::vector<std::string> cons_inputs;
  std::string cons_out;
  cons->add_option("--inputs", cons_inputs, "Tagger outputs")->required()->delimiter(',');
  cons->add_option("--out", cons_out, "Output")->required();
  cons->callback([&] {
    run = [&] {
      auto out = open_out(cons_out);
      write_tagger_outputs(out, consensus(read_systems(cons_inputs)));
    };
  });

  // score
  auto* sc = app.add_subcommand("score", "Concept and concept-value error rates");
  std::string sc_ref, sc_hyp, sc_outputs, sc_grammar, sc_kv;
  sc->add_option("--ref", sc_ref, "Reference corpus")->required();
  sc->add_option("--hyp", sc_hyp, "Corpus whose words the outputs label (defaults to the reference)");
  sc->add_option("--outputs", sc_outputs, "Tagger outputs")->required();
  sc->add_option("--grammar", sc_grammar, "Grammar providing the value lexicon");
  sc->add_option("--kv", sc_kv, "Also write key=value results here");
  sc->callback([&] {
    run = [&] {
      const auto ref = read_dataset(sc_ref);
      const auto hyp = sc_hyp.empty() ? ref : read_dataset(sc_hyp);
      const auto rep = score(ref, hyp, read_tagger_outputs(sc_outputs), grammar_from(sc_grammar).lexicon);
      rep.write_text(std::cout, sc_outputs);
      if (!sc_kv.empty()) {
        auto out = open_out(sc_kv);
        rep.write_kv(out);
      }
    };
  });

  // calib
  auto* cal = app.add_subcommand("calib", "NCE and calibration bins of a confidence measure");
  std::string cal_in, cal_measure = "conf", cal_csv;
  std::size_t cal_bins = 10;
  cal->add_option("--in", cal_in, "Hypothesis corpus with error flags")->required();
  cal->add_option("--measure", cal_measure, "pap or conf")->check(CLI::IsMember({"pap", "conf"}));
  cal->add_option("--bins", cal_bins, "Number of bins");
  cal->add_option("--csv", cal_csv, "Also write the bins as CSV here");
  cal->callback([&] {
    run = [&] {
      const auto records = confidence_records(read_dataset(cal_in),
                                              cal_measure == "pap" ? ConfidenceMeasure::pap : ConfidenceMeasure::mlp_conf);
      const auto rep = calibration_bins(records, cal_bins);
      rep.write_text(std::cout);
      if (!cal_csv.empty()) {
        auto out = open_out(cal_csv);
        rep.write_csv(out);
      }
    };
  });

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "Run the whole experiment and write a report");
  std::string pipe_config, pipe_out;
  std::vector<std::string> pipe_set;
  std::optional<std::uint64_t> pipe_seed;
  pipe->add_option("--config", pipe_config, "key=value configuration file");
  pipe->add_option("--set", pipe_set, "Override one key, key=value (repeatable)");
  pipe->add_option("--seed", pipe_seed, "Experiment seed");
  pipe->add_option("--out", pipe_out, "Output directory")->required();
  pipe->callback([&] {
    run = [&] {
      ExperimentConfig cfg;
      if (!pipe_config.empty()) cfg.load(pipe_config);
      for (const auto& kv : pipe_set) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
      }
      if (pipe_seed) cfg.seed = *pipe_seed;
      cfg.jobs = jobs;
      const auto result = run_experiment(cfg, pipe_out);
      result.write_report(std::cout);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  try {
    run();
  } catch (const slu::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
