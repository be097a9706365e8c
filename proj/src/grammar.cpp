// SPDX-License-Identifier: Apache-2.0
#include "slu/grammar.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "slu/error.hpp"
#include "slu/rng.hpp"
#include "slu/text.hpp"

namespace slu {

extern const char* const kTouristicGrammar;  // generated from data/touristic.grammar

namespace {

enum class Section { none, words, category, macro, slot, pattern, confusions, fillers };

}  // namespace

DomainGrammar DomainGrammar::parse(std::string_view content) {
  DomainGrammar g;
  Section section = Section::none;
  std::string name;
  std::size_t line_no = 0;
  for (const auto& raw : text::split(content, '\n')) {
    ++line_no;
    const auto line = text::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError(line_no, "unterminated section header");
      const auto head = text::split_ws(line.substr(1, line.size() - 2));
      if (head.empty()) throw ParseError(line_no, "empty section header");
      const auto& kind = head[0];
      const bool named = kind == "category" || kind == "macro" || kind == "slot";
      if (named != (head.size() == 2)) throw ParseError(line_no, "bad section header");
      name = named ? head[1] : std::string();
      if (kind == "words") section = Section::words;
      else if (kind == "category") section = Section::category;
      else if (kind == "macro") section = Section::macro;
      else if (kind == "slot") section = Section::slot;
      else if (kind == "pattern") section = Section::pattern;
      else if (kind == "confusions") section = Section::confusions;
      else if (kind == "fillers") section = Section::fillers;
      else throw ParseError(line_no, "unknown section '" + kind + "'");
      if (section == Section::slot) g.slots[name];
      if (section == Section::macro) g.macros[name];
      continue;
    }
    const auto fields = text::split_ws(line);
    switch (section) {
      case Section::none:
        throw ParseError(line_no, "content outside of a section");
      case Section::words: {
        if (fields.size() < 2 || fields.size() > 3) throw ParseError(line_no, "expected: word POS [lemma]");
        g.words[text::lowercase(fields[0])] =
            WordInfo{fields[1], fields.size() == 3 ? fields[2] : text::lowercase(fields[0])};
        break;
      }
      case Section::category: {
        const auto eq = line.find(" = ");
        if (eq == std::string_view::npos) {
          g.lexicon.add(line, name);
        } else {
          g.lexicon.add(text::trim(line.substr(0, eq)), name, text::trim(line.substr(eq + 3)));
        }
        break;
      }
      case Section::macro:
        g.macros[name].push_back(fields);
        break;
      case Section::slot:
        g.slots[name].push_back(fields);
        break;
      case Section::pattern: {
        Pattern p;
        try {
          p.weight = std::stod(fields[0]);
        } catch (const std::exception&) {
          throw ParseError(line_no, "pattern must start with a weight");
        }
        if (!(p.weight > 0.0) || fields.size() < 2) throw ParseError(line_no, "bad pattern");
        p.items.assign(fields.begin() + 1, fields.end());
        g.patterns.push_back(std::move(p));
        break;
      }
      case Section::confusions: {
        const auto colon = line.find(':');
        if (colon == std::string_view::npos) throw ParseError(line_no, "expected 'word: candidates'");
        const auto key = text::lowercase(text::trim(line.substr(0, colon)));
        auto cands = text::split_ws(line.substr(colon + 1));
        if (cands.empty()) throw ParseError(line_no, "no confusion candidates");
        auto& dst = g.confusions[key];
        for (auto& c : cands) {
          c = text::lowercase(c);
          if (c != key && std::find(dst.begin(), dst.end(), c) == dst.end()) dst.push_back(c);
        }
        break;
      }
      case Section::fillers:
        for (const auto& f : fields) g.fillers.push_back(text::lowercase(f));
        break;
    }
  }
  return g;
}

DomainGrammar DomainGrammar::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open grammar '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

DomainGrammar DomainGrammar::touristic() { return parse(kTouristicGrammar); }

LabelScheme DomainGrammar::scheme() const {
  LabelScheme s;
  for (const auto& [name, _] : slots) s.concepts.push_back(name);
  return s;
}

namespace {

void collect_words(const std::vector<std::string>& items, std::set<std::string>& out) {
  for (const auto& it : items)
    if (!it.empty() && it.front() != '$' && it.front() != '{') out.insert(text::lowercase(it));
}

}  // namespace

std::vector<std::string> DomainGrammar::vocabulary() const {
  std::set<std::string> v;
  for (const auto& p : patterns) collect_words(p.items, v);
  for (const auto& [_, rs] : slots)
    for (const auto& r : rs) collect_words(r, v);
  for (const auto& [_, rs] : macros)
    for (const auto& r : rs) collect_words(r, v);
  for (const auto& [w, cs] : confusions) {
    v.insert(w);
    v.insert(cs.begin(), cs.end());
  }
  v.insert(fillers.begin(), fillers.end());
  return {v.begin(), v.end()};
}

WordInfo DomainGrammar::info(std::string_view word) const {
  const auto lw = text::lowercase(word);
  auto it = words.find(lw);
  if (it != words.end()) return it->second;
  const auto cps = text::decode_utf8(word);
  if (!cps.empty() && text::is_upper(cps.front())) return WordInfo{"PROPN", lw};
  return WordInfo{"NOUN", lw};
}

void DomainGrammar::check() const {
  if (patterns.empty() || slots.empty()) throw ConfigError("grammar has no patterns or no slots");
  auto check_items = [&](const std::vector<std::string>& items, bool allow_slots, const std::string& where) {
    for (const auto& it : items) {
      if (it.front() == '$' && !macros.count(it.substr(1)))
        throw ConfigError(where + ": unknown macro '" + it + "'");
      if (it.front() == '{') {
        if (!allow_slots) throw ConfigError(where + ": slot reference inside a realization");
        if (it.back() != '}' || !slots.count(it.substr(1, it.size() - 2)))
          throw ConfigError(where + ": unknown slot '" + it + "'");
      }
    }
  };
  for (const auto& p : patterns) check_items(p.items, true, "pattern");
  for (const auto& [name, rs] : macros) {
    if (rs.empty()) throw ConfigError("macro '" + name + "' has no realizations");
    for (const auto& r : rs) check_items(r, false, "macro " + name);
  }
  for (const auto& [name, rs] : slots) {
    if (rs.empty()) throw ConfigError("slot '" + name + "' has no realizations");
    for (const auto& r : rs) {
      check_items(r, false, "slot " + name);
      if (lexicon.normalize(r).empty()) throw ConfigError("slot '" + name + "' realization has no value");
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

bool is_nominal(const std::string& pos) { return pos == "NOUN" || pos == "PROPN" || pos == "PRON"; }

std::optional<std::size_t> next_where(const std::vector<Token>& toks, std::size_t i,
                                      bool (*pred)(const std::string&)) {
  for (std::size_t j = i + 1; j < toks.size(); ++j)
    if (pred(toks[j].pos)) return j;
  return std::nullopt;
}

}  // namespace

void annotate_tokens(std::vector<Token>& tokens, const DomainGrammar& grammar) {
  std::vector<std::string> words;
  words.reserve(tokens.size());
  for (auto& t : tokens) {
    const auto info = grammar.info(t.surface);
    t.lemma = info.lemma;
    t.pos = info.pos;
    words.push_back(t.surface);
  }
  const auto cats = grammar.lexicon.annotate(words);
  for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i].sem_categories = cats[i];

  // Rule-based dependency structure: the first verb (else auxiliary, else
  // nominal, else the first token) is the root; modifiers attach rightwards
  // to the next nominal, everything else to the root.
  std::size_t root = 0;
  auto find_first = [&](auto pred) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < tokens.size(); ++i)
      if (pred(tokens[i].pos)) return i;
    return std::nullopt;
  };
  if (auto v = find_first([](const std::string& p) { return p == "VERB"; })) root = *v;
  else if (auto a = find_first([](const std::string& p) { return p == "AUX"; })) root = *a;
  else if (auto n = find_first(is_nominal)) root = *n;

  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto& t = tokens[i];
    if (i == root) {
      t.governor.reset();
      t.deprel = "root";
      continue;
    }
    std::optional<std::size_t> head;
    std::string rel = "dep";
    const auto& p = t.pos;
    if (p == "DET" || p == "ADJ" || p == "NUM" || p == "ADP") {
      head = next_where(tokens, i, [](const std::string& q) { return is_nominal(q); });
      rel = p == "DET" ? "det" : p == "ADJ" ? "amod" : p == "NUM" ? "nummod" : "case";
    } else if (p == "CCONJ") {
      head = next_where(tokens, i, [](const std::string& q) {
        return is_nominal(q) || q == "NUM" || q == "VERB";
      });
      rel = "cc";
    } else if (p == "PART") {
      head = next_where(tokens, i, [](const std::string& q) { return q == "VERB"; });
      rel = "mark";
    } else if (is_nominal(p)) {
      bool oblique = false;
      for (std::size_t k = i; k-- > 0;) {
        const auto& q = tokens[k].pos;
        if (q == "DET" || q == "ADJ" || q == "NUM") continue;
        oblique = q == "ADP";
        break;
      }
      rel = oblique ? "obl" : i < root ? "nsubj" : "obj";
    } else if (p == "AUX") {
      rel = "aux";
    } else if (p == "ADV") {
      rel = "advmod";
    } else if (p == "INTJ") {
      rel = "discourse";
    } else if (p == "VERB") {
      rel = "xcomp";
    }
    if (!head || *head == i) head = root;
    t.governor = *head;
    t.deprel = rel;
  }
}

namespace {

void expand(const std::vector<std::string>& items, const DomainGrammar& g, Rng& rng,
            std::vector<std::string>& out, int depth) {
  if (depth > 16) throw ConfigError("macro expansion too deep");
  for (const auto& it : items) {
    if (it.front() == '$') {
      const auto& rs = g.macros.at(it.substr(1));
      expand(rs[rng.index(rs.size())], g, rng, out, depth + 1);
    } else {
      out.push_back(it);
    }
  }
}

}  // namespace

Dataset generate_corpus(const DomainGrammar& grammar, std::size_t n, std::uint64_t seed,
                        std::string_view id_prefix) {
  grammar.check();
  if (n < 1) throw ConfigError("corpus size must be at least 1");
  std::vector<double> weights;
  for (const auto& p : grammar.patterns) weights.push_back(p.weight);

  Dataset data;
  data.utterances.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const auto& pattern = grammar.patterns[rng.categorical(weights)];
    Utterance utt;
    utt.id = text::format("%.*s-%06zu", static_cast<int>(id_prefix.size()), id_prefix.data(), i + 1);
    for (const auto& item : pattern.items) {
      std::vector<std::string> words;
      std::string concept_name;
      if (item.front() == '{') {
        concept_name = item.substr(1, item.size() - 2);
        const auto& rs = grammar.slots.at(concept_name);
        expand(rs[rng.index(rs.size())], grammar, rng, words, 0);
      } else {
        expand({item}, grammar, rng, words, 0);
      }
      for (std::size_t k = 0; k < words.size(); ++k) {
        Token t;
        t.surface = words[k];
        t.label = concept_name.empty() ? std::string(labels::kNull)
                  : k == 0             ? labels::begin(concept_name)
                                       : labels::inside(concept_name);
        utt.tokens.push_back(std::move(t));
      }
    }
    annotate_tokens(utt.tokens, grammar);
    data.utterances.push_back(std::move(utt));
  }
  return data;
}

}  // namespace slu
