// SPDX-License-Identifier: Apache-2.0
#include "slu/embeddings.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "slu/error.hpp"
#include "slu/rng.hpp"
#include "slu/text.hpp"

namespace slu {

EmbeddingTable::EmbeddingTable(std::size_t dim, OovPolicy policy) : dim_(dim), policy_(policy), zero_(dim, 0.0) {}

bool EmbeddingTable::set(const std::string& word, std::span<const double> vec) {
  if (vec.size() != dim_)
    throw FormatError(text::format("embedding for '%s' has dimension %zu, table has %zu", word.c_str(),
                                   vec.size(), dim_));
  auto it = index_.find(word);
  if (it != index_.end()) {
    std::copy(vec.begin(), vec.end(), data_.begin() + static_cast<std::ptrdiff_t>(it->second * dim_));
    return false;
  }
  index_.emplace(word, words_.size());
  words_.push_back(word);
  data_.insert(data_.end(), vec.begin(), vec.end());
  return true;
}

std::span<const double> EmbeddingTable::lookup(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end() && policy_ == OovPolicy::unknown_row) it = index_.find(kUnknownWord);
  if (it == index_.end()) return {zero_.data(), dim_};
  return {data_.data() + it->second * dim_, dim_};
}

EmbeddingTable EmbeddingTable::read(std::istream& in, OovPolicy policy, std::vector<std::string>* warnings) {
  EmbeddingTable table;
  table.policy_ = policy;
  std::string line;
  std::size_t lineno = 0;
  bool have_dim = false;
  std::vector<double> vec;
  while (std::getline(in, line)) {
    ++lineno;
    const auto fields = text::split_ws(line);
    if (fields.empty()) continue;
    if (fields.size() < 2) throw FormatError(text::format("line %zu: embedding row without values", lineno));
    vec.clear();
    for (std::size_t i = 1; i < fields.size(); ++i) {
      double v = 0.0;
      const auto& f = fields[i];
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(v))
        throw FormatError(text::format("line %zu: bad embedding value '%s'", lineno, f.c_str()));
      vec.push_back(v);
    }
    if (!have_dim) {
      table.dim_ = vec.size();
      table.zero_.assign(table.dim_, 0.0);
      have_dim = true;
    } else if (vec.size() != table.dim_) {
      throw FormatError(text::format("line %zu: dimension %zu, expected %zu", lineno, vec.size(), table.dim_));
    }
    if (!table.set(fields[0], vec) && warnings)
      warnings->push_back(text::format("line %zu: duplicate word '%s', last row wins", lineno, fields[0].c_str()));
  }
  if (!have_dim) throw FormatError("empty embedding file");
  if (policy == OovPolicy::unknown_row && !table.contains(kUnknownWord))
    throw FormatError(std::string("unknown-row policy requires a '") + kUnknownWord + "' row");
  return table;
}

void EmbeddingTable::write(std::ostream& out) const {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    out << words_[i];
    for (std::size_t j = 0; j < dim_; ++j) out << ' ' << text::exact(data_[i * dim_ + j]);
    out << '\n';
  }
}

EmbeddingTable load_embeddings(const std::string& path, OovPolicy policy, std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open embeddings: " + path);
  auto table = EmbeddingTable::read(in, policy, warnings);
  table.set_name(path);
  return table;
}

void save_embeddings(const std::string& path, const EmbeddingTable& table) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write embeddings: " + path);
  table.write(out);
}

const char* to_string(EmbeddingKind kind) {
  switch (kind) {
    case EmbeddingKind::context: return "context";
    case EmbeddingKind::cooccurrence: return "cooccurrence";
    case EmbeddingKind::char_ngram: return "char_ngram";
  }
  return "?";
}

namespace {

// Deterministic Gaussian direction per feature string.
std::vector<double> direction(const std::string& feature, std::size_t dim, std::uint64_t seed) {
  Rng rng(derive_seed(seed, feature));
  std::vector<double> v(dim);
  for (auto& x : v) x = rng.normal();
  return v;
}

}  // namespace

EmbeddingTable synthesize_embeddings(const std::vector<std::vector<std::string>>& sentences,
                                     const std::vector<std::string>& vocabulary, EmbeddingKind kind,
                                     std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw ConfigError("embedding dimension must be positive");
  const std::uint64_t base = derive_seed(seed, to_string(kind));

  std::set<std::string> vocab;
  for (const auto& w : vocabulary) vocab.insert(text::lowercase(w));

  // word -> (feature -> count), ordered so the summation order is fixed.
  std::map<std::string, std::map<std::string, double>> counts;
  if (kind == EmbeddingKind::char_ngram) {
    for (const auto& w : vocab) {
      const auto cps = text::decode_utf8("<" + w + ">");
      auto& row = counts[w];
      for (std::size_t i = 0; i + 3 <= cps.size(); ++i) row[text::encode_utf8(&cps[i], &cps[i] + 3)] += 1.0;
    }
  } else {
    const std::ptrdiff_t window = kind == EmbeddingKind::context ? 1 : 2;
    for (const auto& s : sentences) {
      std::vector<std::string> lower;
      lower.reserve(s.size());
      for (const auto& w : s) lower.push_back(text::lowercase(w));
      const auto n = static_cast<std::ptrdiff_t>(lower.size());
      for (std::ptrdiff_t i = 0; i < n; ++i) {
        if (!vocab.count(lower[static_cast<std::size_t>(i)])) continue;
        auto& row = counts[lower[static_cast<std::size_t>(i)]];
        for (std::ptrdiff_t d = -window; d <= window; ++d) {
          if (d == 0) continue;
          const std::ptrdiff_t j = i + d;
          const std::string ctx = (j < 0) ? "<s>" : (j >= n) ? "</s>" : lower[static_cast<std::size_t>(j)];
          const std::string key = kind == EmbeddingKind::context ? (d < 0 ? "L:" : "R:") + ctx : ctx;
          row[key] += 1.0;
        }
      }
    }
  }

  std::map<std::string, std::vector<double>> directions;
  EmbeddingTable table(dim);
  table.set_name(to_string(kind));
  std::vector<double> v(dim);
  for (const auto& w : vocab) {
    std::fill(v.begin(), v.end(), 0.0);
    auto it = counts.find(w);
    if (it == counts.end() || it->second.empty()) {
      // Words without context counts get a word-specific random direction.
      v = direction("word:" + w, dim, base);
    } else {
      for (const auto& [feature, count] : it->second) {
        auto d = directions.find(feature);
        if (d == directions.end()) d = directions.emplace(feature, direction(feature, dim, base)).first;
        const double weight = std::log1p(count);
        for (std::size_t k = 0; k < dim; ++k) v[k] += weight * d->second[k];
      }
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.0)
      for (auto& x : v) x /= norm;
    table.set(w, v);
  }
  return table;
}

}  // namespace slu
