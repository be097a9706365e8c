// SPDX-License-Identifier: Apache-2.0
#include "slu/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <unordered_set>

#include "slu/error.hpp"
#include "slu/text.hpp"

namespace slu {

std::vector<std::string> Utterance::words() const {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(t.surface);
  return out;
}

std::vector<std::string> Utterance::labels() const {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(t.label);
  return out;
}

std::size_t Dataset::token_count() const {
  std::size_t n = 0;
  for (const auto& u : utterances) n += u.tokens.size();
  return n;
}

const Utterance* Dataset::find(std::string_view id) const {
  for (const auto& u : utterances)
    if (u.id == id) return &u;
  return nullptr;
}

// ---------------------------------------------------------------------------

namespace labels {

bool is_error(std::string_view label) { return label == kErrorC || label == kErrorN; }
bool is_begin(std::string_view label) { return label.size() > 2 && label.substr(0, 2) == "B-"; }
bool is_inside(std::string_view label) { return label.size() > 2 && label.substr(0, 2) == "I-"; }

std::string concept_of(std::string_view label) {
  if (is_begin(label) || is_inside(label)) return std::string(label.substr(2));
  return {};
}

std::string begin(std::string_view c) { return "B-" + std::string(c); }
std::string inside(std::string_view c) { return "I-" + std::string(c); }

bool is_well_formed(std::string_view label) {
  return label == kNull || label == kMissing || label == kAbstain || is_error(label) ||
         is_begin(label) || is_inside(label);
}

}  // namespace labels

std::vector<std::string> LabelScheme::tag_labels() const {
  std::vector<std::string> out{std::string(labels::kNull)};
  for (const auto& c : concepts) {
    out.push_back(labels::begin(c));
    out.push_back(labels::inside(c));
  }
  return out;
}

std::vector<std::string> LabelScheme::all_labels() const {
  auto out = tag_labels();
  out.emplace_back(labels::kErrorC);
  out.emplace_back(labels::kErrorN);
  return out;
}

bool LabelScheme::contains(std::string_view label) const {
  if (label == labels::kNull || labels::is_error(label)) return true;
  const auto c = labels::concept_of(label);
  return !c.empty() && std::binary_search(concepts.begin(), concepts.end(), c);
}

LabelScheme LabelScheme::from_dataset(const Dataset& data) {
  std::set<std::string> cs;
  for (const auto& u : data.utterances)
    for (const auto& t : u.tokens) {
      auto c = labels::concept_of(t.label);
      if (!c.empty()) cs.insert(std::move(c));
    }
  return LabelScheme{{cs.begin(), cs.end()}};
}

void validate_labels(const Utterance& utt) {
  std::string prev(labels::kNull);
  for (std::size_t i = 0; i < utt.tokens.size(); ++i) {
    const auto& label = utt.tokens[i].label;
    if (!labels::is_well_formed(label))
      throw SchemaError("utterance '" + utt.id + "' token " + std::to_string(i + 1) +
                        ": malformed label '" + label + "'");
    if (labels::is_inside(label)) {
      const auto c = labels::concept_of(label);
      const bool continues = labels::concept_of(prev) == c || labels::is_error(prev);
      if (!continues)
        throw SchemaError("utterance '" + utt.id + "' token " + std::to_string(i + 1) + ": " +
                          label + " after " + prev);
    }
    prev = label;
  }
}

void validate(const Dataset& data) {
  std::unordered_set<std::string> ids;
  for (const auto& u : data.utterances) {
    if (u.tokens.empty()) throw SchemaError("utterance '" + u.id + "' has no tokens");
    if (!ids.insert(u.id).second) throw SchemaError("duplicate utterance id '" + u.id + "'");
    for (std::size_t i = 0; i < u.tokens.size(); ++i) {
      const auto& t = u.tokens[i];
      if (t.governor && (*t.governor >= u.tokens.size() || *t.governor == i))
        throw SchemaError("utterance '" + u.id + "' token " + std::to_string(i + 1) +
                          ": invalid governor");
      for (const auto& c : {t.pap, t.mlp_conf})
        if (c && !(*c >= 0.0 && *c <= 1.0))
          throw SchemaError("utterance '" + u.id + "' token " + std::to_string(i + 1) +
                            ": confidence outside [0,1]");
    }
    validate_labels(u);
  }
}

// ---------------------------------------------------------------------------

std::vector<ConceptSegment> segments_of(const std::vector<std::string>& words,
                                        const std::vector<std::string>& tags,
                                        const Lexicon& lexicon) {
  std::vector<ConceptSegment> out;
  std::size_t i = 0;
  const std::size_t n = std::min(words.size(), tags.size());
  while (i < n) {
    const auto c = labels::concept_of(tags[i]);
    if (c.empty()) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < n && labels::is_inside(tags[j]) && labels::concept_of(tags[j]) == c) ++j;
    std::vector<std::string> span(words.begin() + static_cast<std::ptrdiff_t>(i),
                                  words.begin() + static_cast<std::ptrdiff_t>(j));
    out.push_back(ConceptSegment{c, lexicon.normalize(span), i, j});
    i = j;
  }
  return out;
}

std::vector<ConceptSegment> segments_of(const Utterance& utt, const Lexicon& lexicon) {
  return segments_of(utt.words(), utt.labels(), lexicon);
}

std::vector<std::string> labels_of(const std::vector<ConceptSegment>& segments, std::size_t length) {
  std::vector<std::string> out(length, std::string(labels::kNull));
  for (const auto& s : segments)
    for (std::size_t k = s.start; k < s.end && k < length; ++k)
      out[k] = k == s.start ? labels::begin(s.label) : labels::inside(s.label);
  return out;
}

void repair_bio(std::vector<std::string>& tags) {
  std::string prev(labels::kNull);
  for (auto& t : tags) {
    if (labels::is_inside(t) && labels::concept_of(prev) != labels::concept_of(t))
      t = labels::begin(labels::concept_of(t));
    prev = t;
  }
}

Utterance augment_error_labels(const Utterance& hyp) {
  Utterance out = hyp;
  for (std::size_t i = 0; i < out.tokens.size(); ++i) {
    auto& t = out.tokens[i];
    if (!t.error_flag)
      throw PreconditionError("utterance '" + hyp.id + "' token " + std::to_string(i + 1) +
                              " has no error flag");
    if (*t.error_flag == ErrorFlag::error)
      t.label = labels::concept_of(t.label).empty() ? std::string(labels::kErrorN)
                                                    : std::string(labels::kErrorC);
  }
  return out;
}

TaggerOutput strip_error_labels(const TaggerOutput& output) {
  TaggerOutput out = output;
  for (auto& l : out.labels)
    if (labels::is_error(l)) l = std::string(labels::kNull);
  return out;
}

// ---------------------------------------------------------------------------
// TSV

namespace {

std::optional<double> parse_unit(const std::string& field, std::size_t line, const char* what) {
  if (field == kMissing) return std::nullopt;
  double v = 0.0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ParseError(line, std::string("bad ") + what + " '" + field + "'");
  return v;
}

std::size_t parse_index(const std::string& field, std::size_t line, const char* what) {
  std::size_t v = 0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ParseError(line, std::string("bad ") + what + " '" + field + "'");
  return v;
}

std::string format_unit(const std::optional<double>& v) {
  return v ? text::format("%.6f", *v) : std::string(kMissing);
}

struct PendingUtterance {
  Utterance utt;
  std::vector<std::size_t> lines;
};

void finish(PendingUtterance& p, Dataset& data, std::unordered_set<std::string>& ids) {
  auto& u = p.utt;
  if (u.tokens.empty()) return;
  if (!ids.insert(u.id).second) throw SchemaError("duplicate utterance id '" + u.id + "'");
  for (std::size_t i = 0; i < u.tokens.size(); ++i) {
    const auto& g = u.tokens[i].governor;
    if (g && (*g >= u.tokens.size() || *g == i))
      throw SchemaError("line " + std::to_string(p.lines[i]) + ": governor " +
                        std::to_string(*g + 1) + " invalid in utterance of " +
                        std::to_string(u.tokens.size()) + " tokens");
  }
  validate_labels(u);
  data.utterances.push_back(std::move(u));
  p = PendingUtterance{};
}

}  // namespace

Dataset read_dataset(std::istream& in) {
  Dataset data;
  std::unordered_set<std::string> ids;
  PendingUtterance pending;
  bool have_id = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      finish(pending, data, ids);
      have_id = false;
      continue;
    }
    if (line.front() == '#') {
      if (text::starts_with(line, "# id=")) {
        if (!pending.utt.tokens.empty()) finish(pending, data, ids);
        pending.utt.id = line.substr(5);
        have_id = true;
      }
      continue;
    }
    if (!have_id) throw ParseError(line_no, "token row before '# id=' header");
    const auto cols = text::split(line, '\t');
    if (cols.size() != 11) throw ParseError(line_no, "expected 11 columns, got " + std::to_string(cols.size()));
    const std::size_t index = parse_index(cols[0], line_no, "INDEX");
    if (index != pending.utt.tokens.size() + 1)
      throw ParseError(line_no, "INDEX " + cols[0] + " out of sequence");
    Token t;
    t.surface = cols[1];
    if (t.surface.empty() || t.surface == kMissing) throw ParseError(line_no, "empty SURFACE");
    t.lemma = cols[2];
    t.pos = cols[3];
    if (cols[4] != kMissing) {
      const std::size_t g = parse_index(cols[4], line_no, "GOV");
      if (g > 0) t.governor = g - 1;
    }
    t.deprel = cols[5];
    if (cols[6] != kMissing) {
      auto cats = text::split(cols[6], '|');
      std::sort(cats.begin(), cats.end());
      cats.erase(std::unique(cats.begin(), cats.end()), cats.end());
      t.sem_categories = std::move(cats);
    }
    t.pap = parse_unit(cols[7], line_no, "PAP");
    t.mlp_conf = parse_unit(cols[8], line_no, "CONF");
    for (const auto& c : {t.pap, t.mlp_conf})
      if (c && !(*c >= 0.0 && *c <= 1.0)) throw ParseError(line_no, "confidence outside [0,1]");
    if (cols[9] == "C") {
      t.error_flag = ErrorFlag::correct;
    } else if (cols[9] == "E") {
      t.error_flag = ErrorFlag::error;
    } else if (cols[9] != kMissing) {
      throw ParseError(line_no, "bad ERRFLAG '" + cols[9] + "'");
    }
    t.label = cols[10];
    if (!labels::is_well_formed(t.label)) throw ParseError(line_no, "malformed LABEL '" + t.label + "'");
    pending.utt.tokens.push_back(std::move(t));
    pending.lines.push_back(line_no);
  }
  finish(pending, data, ids);
  return data;
}

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open corpus '" + path + "'");
  return read_dataset(in);
}

void write_dataset(std::ostream& out, const Dataset& data) {
  bool first = true;
  for (const auto& u : data.utterances) {
    if (!first) out << '\n';
    first = false;
    out << "# id=" << u.id << '\n';
    for (std::size_t i = 0; i < u.tokens.size(); ++i) {
      const auto& t = u.tokens[i];
      out << (i + 1) << '\t' << t.surface << '\t' << t.lemma << '\t' << t.pos << '\t'
          << (t.governor ? std::to_string(*t.governor + 1) : std::string(kMissing)) << '\t'
          << t.deprel << '\t'
          << (t.sem_categories.empty() ? std::string(kMissing) : text::join(t.sem_categories, "|"))
          << '\t' << format_unit(t.pap) << '\t' << format_unit(t.mlp_conf) << '\t'
          << (t.error_flag ? (*t.error_flag == ErrorFlag::correct ? "C" : "E") : kMissing)
          << '\t' << t.label << '\n';
    }
  }
}

void write_dataset(const std::string& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write corpus '" + path + "'");
  write_dataset(out, data);
}

std::vector<TaggerOutput> read_tagger_outputs(std::istream& in) {
  std::vector<TaggerOutput> outs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (text::starts_with(line, "# id=")) {
      outs.push_back(TaggerOutput{line.substr(5), {}});
      continue;
    }
    if (line.front() == '#') continue;
    if (outs.empty()) throw ParseError(line_no, "label before '# id=' header");
    if (!labels::is_well_formed(line)) throw ParseError(line_no, "malformed label '" + line + "'");
    outs.back().labels.push_back(line);
  }
  return outs;
}

std::vector<TaggerOutput> read_tagger_outputs(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open tagger output '" + path + "'");
  return read_tagger_outputs(in);
}

void write_tagger_outputs(std::ostream& out, const std::vector<TaggerOutput>& outputs) {
  for (const auto& o : outputs) {
    out << "# id=" << o.id << '\n';
    for (const auto& l : o.labels) out << l << '\n';
  }
}

void write_tagger_outputs(const std::string& path, const std::vector<TaggerOutput>& outputs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write tagger output '" + path + "'");
  write_tagger_outputs(out, outputs);
}

std::vector<TaggerOutput> gold_outputs(const Dataset& data) {
  std::vector<TaggerOutput> out;
  out.reserve(data.utterances.size());
  for (const auto& u : data.utterances) out.push_back(TaggerOutput{u.id, u.labels()});
  return out;
}

}  // namespace slu
