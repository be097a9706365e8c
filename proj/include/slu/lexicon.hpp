// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace slu {

/// Semantic-category lexicon. Phrases are one or more lowercased words; an
/// entry may carry a normalized value (e.g. "thirty three" -> "33") used for
/// concept-value normalization.
///
/// File format: one entry per line, "phrase<TAB>CATEGORY" with an optional
/// third "<TAB>value" column. Blank lines and lines starting with '#' are
/// skipped.
class Lexicon {
 public:
  struct Sense {
    std::string category;
    std::string value;
    bool operator==(const Sense&) const = default;
  };

  void add(std::string_view phrase, std::string_view category,
           std::string_view value = {});

  static Lexicon load(const std::string& path);
  void save(const std::string& path) const;
  static Lexicon parse(std::string_view content);

  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  std::size_t max_phrase_length() const { return max_len_; }

  /// Categories of a single word looked up as a one-word phrase, sorted.
  std::vector<std::string> categories_of(std::string_view word) const;

  /// Left-to-right longest-match annotation: every token covered by a
  /// matching phrase receives that phrase's categories (sorted, unique).
  std::vector<std::vector<std::string>> annotate(
      const std::vector<std::string>& words) const;

  /// Concept-value normalization: matched phrases with a value are replaced
  /// by it, other words are lowercased; the pieces are joined by spaces.
  std::string normalize(const std::vector<std::string>& words) const;

  /// Every category name present, sorted.
  std::vector<std::string> categories() const;

  const std::map<std::string, std::vector<Sense>>& entries() const { return entries_; }

 private:
  // Longest phrase starting at `start`; returns its length (0 if none).
  std::size_t match_at(const std::vector<std::string>& lowered, std::size_t start,
                       const std::vector<Sense>** senses) const;

  std::map<std::string, std::vector<Sense>> entries_;  // key: space-joined phrase
  std::size_t max_len_ = 0;
};

}  // namespace slu
