// SPDX-License-Identifier: Apache-2.0
#include "slu/noise.hpp"

#include <cmath>
#include <istream>
#include <optional>
#include <ostream>

#include "slu/error.hpp"
#include "slu/rng.hpp"
#include "slu/text.hpp"

namespace slu {

void NoiseConfig::check() const {
  for (double r : {substitution, deletion, insertion})
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("noise rates must lie in [0,1]");
  if (!(substitution + deletion + insertion < 1.0))
    throw ConfigError("noise rates must sum to less than 1");
  if (!(nbest_consistency >= 0.0 && nbest_consistency <= 1.0))
    throw ConfigError("n-best consistency must lie in [0,1]");
  if (!(nbest_decay >= 0.0)) throw ConfigError("n-best decay must be nonnegative");
  if (substitution > 0.0 && vocabulary.empty() && confusions.empty())
    throw ConfigError("substitutions need a vocabulary or a confusion lexicon");
  if (insertion > 0.0 && fillers.empty() && vocabulary.empty())
    throw ConfigError("insertions need fillers or a vocabulary");
}

NoiseConfig NoiseConfig::defaults(const DomainGrammar& grammar, std::uint64_t seed) {
  NoiseConfig cfg;
  cfg.substitution = 0.158;
  cfg.deletion = 0.052;
  cfg.insertion = 0.031;
  cfg.confusions = grammar.confusions;
  cfg.vocabulary = grammar.vocabulary();
  cfg.fillers = grammar.fillers;
  cfg.seed = seed;
  return cfg;
}

namespace {

enum class Decision { keep, substitute, remove };

struct Step {
  Decision decision = Decision::keep;
  std::string replacement;
  std::optional<std::string> inserted;  // emitted after this position
};

Step draw_step(const std::string& word, const NoiseConfig& cfg, Rng& rng) {
  Step s;
  const double u = rng.uniform();
  if (u < cfg.deletion) {
    s.decision = Decision::remove;
  } else if (u < cfg.deletion + cfg.substitution) {
    s.decision = Decision::substitute;
    const auto lw = text::lowercase(word);
    auto it = cfg.confusions.find(lw);
    if (it != cfg.confusions.end() && !it->second.empty()) {
      s.replacement = it->second[rng.index(it->second.size())];
    } else if (!cfg.vocabulary.empty()) {
      do {
        s.replacement = cfg.vocabulary[rng.index(cfg.vocabulary.size())];
      } while (s.replacement == lw && cfg.vocabulary.size() > 1);
    } else {
      s.decision = Decision::keep;
    }
  }
  if (rng.uniform() < cfg.insertion) {
    const auto& pool = cfg.fillers.empty() ? cfg.vocabulary : cfg.fillers;
    s.inserted = pool[rng.index(pool.size())];
  }
  return s;
}

std::vector<std::string> render(const std::vector<std::string>& ref, std::vector<Step>& steps) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const auto& s = steps[i];
    if (s.decision == Decision::keep) out.push_back(ref[i]);
    else if (s.decision == Decision::substitute) out.push_back(s.replacement);
    if (s.inserted) out.push_back(*s.inserted);
  }
  if (out.empty() && !ref.empty()) {
    // Hypotheses are never empty: the first word survives a full wipe-out.
    steps[0].decision = Decision::keep;
    return render(ref, steps);
  }
  return out;
}

std::vector<Step> one_best_steps(const Utterance& ref, const NoiseConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, ref.id));
  std::vector<Step> steps;
  steps.reserve(ref.tokens.size());
  for (const auto& t : ref.tokens) steps.push_back(draw_step(t.surface, cfg, rng));
  return steps;
}

bool same_word(const std::string& a, const std::string& b) {
  return a == b || text::lowercase(a) == text::lowercase(b);
}

}  // namespace

Alignment align_to_reference(const Utterance& hyp) {
  if (!hyp.reference_tokens) throw PreconditionError("hypothesis '" + hyp.id + "' has no reference");
  std::vector<std::string> ref;
  for (const auto& t : *hyp.reference_tokens) ref.push_back(t.surface);
  return align(ref, hyp.words(), EditCosts{}, same_word);
}

Utterance corrupt(const Utterance& ref, const NoiseConfig& cfg, const DomainGrammar& grammar) {
  cfg.check();
  auto steps = one_best_steps(ref, cfg);
  const auto words = render(ref.words(), steps);

  Utterance hyp;
  hyp.id = ref.id;
  hyp.reference_tokens = ref.tokens;
  for (const auto& w : words) {
    Token t;
    t.surface = w;
    hyp.tokens.push_back(std::move(t));
  }
  annotate_tokens(hyp.tokens, grammar);
  const auto a = align_to_reference(hyp);
  for (auto& t : hyp.tokens) t.error_flag = ErrorFlag::error;
  for (const auto& p : a.pairs)
    if (p.op == EditOp::match) hyp.tokens[*p.hyp].error_flag = ErrorFlag::correct;
  return hyp;
}

std::vector<WeightedHypothesis> sample_nbest(const Utterance& ref, const NoiseConfig& cfg,
                                             std::size_t n) {
  cfg.check();
  if (n < 1) throw ConfigError("n-best size must be at least 1");
  const auto ref_words = ref.words();
  auto best_steps = one_best_steps(ref, cfg);
  std::vector<WeightedHypothesis> out;
  out.push_back({1.0, render(ref_words, best_steps)});
  const std::uint64_t base = derive_seed(cfg.seed, ref.id);
  for (std::size_t k = 1; k < n; ++k) {
    Rng rng(derive_seed(base, static_cast<std::uint64_t>(k)));
    std::vector<Step> steps;
    steps.reserve(ref_words.size());
    for (std::size_t i = 0; i < ref_words.size(); ++i) {
      const bool repeat = rng.uniform() < cfg.nbest_consistency;
      Step fresh = draw_step(ref_words[i], cfg, rng);
      steps.push_back(repeat ? best_steps[i] : std::move(fresh));
    }
    auto words = render(ref_words, steps);
    const double dist = align(out.front().words, words).cost;
    out.push_back({std::exp(-cfg.nbest_decay * dist), std::move(words)});
  }
  return out;
}

Utterance project_labels(const Utterance& hyp) {
  const auto a = align_to_reference(hyp);
  Utterance out = hyp;
  const auto& ref = *hyp.reference_tokens;
  std::vector<std::string> tags(out.tokens.size(), std::string(labels::kNull));
  for (const auto& p : a.pairs)
    if (p.hyp && p.ref) tags[*p.hyp] = ref[*p.ref].label;
  repair_bio(tags);
  for (std::size_t i = 0; i < tags.size(); ++i) out.tokens[i].label = tags[i];
  return out;
}

void write_nbest(std::ostream& out, const std::vector<NbestList>& lists) {
  for (const auto& l : lists) {
    out << "# id=" << l.id << '\n';
    for (const auto& h : l.hypotheses) out << text::exact(h.weight) << '\t' << text::join(h.words, " ") << '\n';
  }
}

std::vector<NbestList> read_nbest(std::istream& in) {
  std::vector<NbestList> lists;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (text::starts_with(line, "# id=")) {
      lists.push_back(NbestList{line.substr(5), {}});
      continue;
    }
    if (lists.empty()) throw ParseError(line_no, "hypothesis before '# id=' header");
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(line_no, "expected weight<TAB>words");
    WeightedHypothesis h;
    try {
      h.weight = std::stod(line.substr(0, tab));
    } catch (const std::exception&) {
      throw ParseError(line_no, "bad weight");
    }
    if (!(h.weight >= 0.0)) throw ParseError(line_no, "negative weight");
    h.words = text::split_ws(line.substr(tab + 1));
    lists.back().hypotheses.push_back(std::move(h));
  }
  return lists;
}

}  // namespace slu
