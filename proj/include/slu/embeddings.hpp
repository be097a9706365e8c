// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace slu {

enum class OovPolicy { zero_vector, unknown_row };

/// Word -> fixed-dimension vector. Text format: "word v1 ... vd" per line.
class EmbeddingTable {
 public:
  /// Row used for out-of-vocabulary words under OovPolicy::unknown_row.
  static constexpr const char* kUnknownWord = "<unk>";

  EmbeddingTable() = default;
  EmbeddingTable(std::size_t dim, OovPolicy policy = OovPolicy::zero_vector);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return words_.size(); }
  OovPolicy policy() const { return policy_; }
  const std::string& name() const { return name_; }
  void set_name(std::string name) { name_ = std::move(name); }

  /// Inserts or overwrites a row. Returns false when the word was present.
  bool set(const std::string& word, std::span<const double> vec);
  bool contains(const std::string& word) const { return index_.count(word) > 0; }
  /// Total lookup: OOV words get the zero vector or the unknown row.
  std::span<const double> lookup(const std::string& word) const;
  /// Words in insertion order.
  const std::vector<std::string>& words() const { return words_; }

  /// `warnings` receives one message per duplicate word (the last row wins).
  static EmbeddingTable read(std::istream& in, OovPolicy policy = OovPolicy::zero_vector,
                             std::vector<std::string>* warnings = nullptr);
  void write(std::ostream& out) const;

 private:
  std::size_t dim_ = 0;
  OovPolicy policy_ = OovPolicy::zero_vector;
  std::string name_;
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<double> data_;
  std::vector<double> zero_;
};

/// Throws FormatError on dimension mismatch, unparsable numbers, or a
/// missing unknown row under OovPolicy::unknown_row.
EmbeddingTable load_embeddings(const std::string& path, OovPolicy policy = OovPolicy::zero_vector,
                               std::vector<std::string>* warnings = nullptr);
void save_embeddings(const std::string& path, const EmbeddingTable& table);

/// Stand-ins for pre-trained embeddings, derived from a tokenized corpus.
enum class EmbeddingKind {
  context,       // separate left/right neighbour counts, random projection
  cooccurrence,  // symmetric window of 2, random projection
  char_ngram,    // hashed character trigrams
};

const char* to_string(EmbeddingKind kind);

/// Rows for every word of `vocabulary` (lowercased), L2-normalized.
EmbeddingTable synthesize_embeddings(const std::vector<std::vector<std::string>>& sentences,
                                     const std::vector<std::string>& vocabulary, EmbeddingKind kind,
                                     std::size_t dim, std::uint64_t seed);

}  // namespace slu
