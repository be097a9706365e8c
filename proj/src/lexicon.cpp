// SPDX-License-Identifier: Apache-2.0
#include "slu/lexicon.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "slu/error.hpp"
#include "slu/text.hpp"

namespace slu {

void Lexicon::add(std::string_view phrase, std::string_view category, std::string_view value) {
  const auto words = text::split_ws(text::lowercase(phrase));
  if (words.empty() || category.empty()) throw FormatError("empty lexicon phrase or category");
  auto& senses = entries_[text::join(words, " ")];
  Sense sense{std::string(category), std::string(value)};
  if (std::find(senses.begin(), senses.end(), sense) == senses.end()) senses.push_back(sense);
  max_len_ = std::max(max_len_, words.size());
}

Lexicon Lexicon::parse(std::string_view content) {
  Lexicon lex;
  std::size_t line_no = 0;
  for (const auto& raw : text::split(content, '\n')) {
    ++line_no;
    const auto line = text::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto cols = text::split(line, '\t');
    if (cols.size() < 2 || cols.size() > 3) throw ParseError(line_no, "expected phrase<TAB>CATEGORY[<TAB>value]");
    lex.add(cols[0], text::trim(cols[1]), cols.size() == 3 ? text::trim(cols[2]) : std::string_view{});
  }
  return lex;
}

Lexicon Lexicon::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open lexicon '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void Lexicon::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write lexicon '" + path + "'");
  for (const auto& [phrase, senses] : entries_) {
    for (const auto& s : senses) {
      out << phrase << '\t' << s.category;
      if (!s.value.empty()) out << '\t' << s.value;
      out << '\n';
    }
  }
}

std::vector<std::string> Lexicon::categories_of(std::string_view word) const {
  std::set<std::string> cats;
  auto it = entries_.find(text::lowercase(word));
  if (it != entries_.end())
    for (const auto& s : it->second) cats.insert(s.category);
  return {cats.begin(), cats.end()};
}

std::size_t Lexicon::match_at(const std::vector<std::string>& lowered, std::size_t start,
                              const std::vector<Sense>** senses) const {
  const std::size_t limit = std::min(max_len_, lowered.size() - start);
  for (std::size_t len = limit; len >= 1; --len) {
    std::string key = lowered[start];
    for (std::size_t k = 1; k < len; ++k) key += ' ' + lowered[start + k];
    auto it = entries_.find(key);
    if (it != entries_.end()) {
      *senses = &it->second;
      return len;
    }
  }
  return 0;
}

std::vector<std::vector<std::string>> Lexicon::annotate(const std::vector<std::string>& words) const {
  std::vector<std::string> lowered;
  lowered.reserve(words.size());
  for (const auto& w : words) lowered.push_back(text::lowercase(w));
  std::vector<std::set<std::string>> acc(words.size());
  std::size_t i = 0;
  while (i < lowered.size()) {
    const std::vector<Sense>* senses = nullptr;
    const std::size_t len = match_at(lowered, i, &senses);
    if (len == 0) {
      ++i;
      continue;
    }
    for (std::size_t k = i; k < i + len; ++k)
      for (const auto& s : *senses) acc[k].insert(s.category);
    i += len;
  }
  std::vector<std::vector<std::string>> out;
  out.reserve(acc.size());
  for (auto& s : acc) out.emplace_back(s.begin(), s.end());
  return out;
}

std::string Lexicon::normalize(const std::vector<std::string>& words) const {
  std::vector<std::string> lowered;
  lowered.reserve(words.size());
  for (const auto& w : words) lowered.push_back(text::lowercase(w));
  std::vector<std::string> pieces;
  std::size_t i = 0;
  while (i < lowered.size()) {
    const std::vector<Sense>* senses = nullptr;
    const std::size_t len = match_at(lowered, i, &senses);
    const Sense* valued = nullptr;
    if (len > 0)
      for (const auto& s : *senses)
        if (!s.value.empty()) {
          valued = &s;
          break;
        }
    if (valued) {
      pieces.push_back(valued->value);
      i += len;
    } else {
      pieces.push_back(lowered[i]);
      ++i;
    }
  }
  return text::join(pieces, " ");
}

std::vector<std::string> Lexicon::categories() const {
  std::set<std::string> cats;
  for (const auto& [_, senses] : entries_)
    for (const auto& s : senses) cats.insert(s.category);
  return {cats.begin(), cats.end()};
}

}  // namespace slu
