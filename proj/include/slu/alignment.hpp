// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slu/error.hpp"

namespace slu {

enum class EditOp { match, substitution, insertion, deletion };

struct AlignedPair {
  EditOp op;
  std::optional<std::size_t> ref;
  std::optional<std::size_t> hyp;
  bool operator==(const AlignedPair&) const = default;
};

struct EditCosts {
  double sub = 1.0;
  double ins = 1.0;
  double del = 1.0;
};

struct Alignment {
  std::vector<AlignedPair> pairs;
  double cost = 0.0;

  std::size_t count(EditOp op) const;
  std::size_t errors() const {
    return count(EditOp::substitution) + count(EditOp::insertion) + count(EditOp::deletion);
  }
  /// For each hyp position, the aligned ref index (none for insertions).
  std::vector<std::optional<std::size_t>> hyp_to_ref(std::size_t hyp_len) const;
};

/// Minimum-cost Levenshtein alignment. Among equal-cost scripts the
/// backtrace prefers match > substitution > deletion > insertion at every
/// step, starting from the end of both sequences.
template <typename T, typename Eq = std::equal_to<>>
Alignment align(std::span<const T> ref, std::span<const T> hyp, EditCosts costs = {}, Eq eq = {}) {
  const std::size_t n = ref.size();
  const std::size_t m = hyp.size();
  const std::size_t w = m + 1;
  std::vector<double> d((n + 1) * w, 0.0);
  for (std::size_t i = 1; i <= n; ++i) d[i * w] = d[(i - 1) * w] + costs.del;
  for (std::size_t j = 1; j <= m; ++j) d[j] = d[j - 1] + costs.ins;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const double diag = d[(i - 1) * w + (j - 1)] + (eq(ref[i - 1], hyp[j - 1]) ? 0.0 : costs.sub);
      const double up = d[(i - 1) * w + j] + costs.del;
      const double left = d[i * w + (j - 1)] + costs.ins;
      d[i * w + j] = std::min(diag, std::min(up, left));
    }
  }
  Alignment out;
  out.cost = d[n * w + m];
  std::size_t i = n, j = m;
  const double tol = 1e-9;
  while (i > 0 || j > 0) {
    const double here = d[i * w + j];
    if (i > 0 && j > 0) {
      const bool same = eq(ref[i - 1], hyp[j - 1]);
      const double diag = d[(i - 1) * w + (j - 1)] + (same ? 0.0 : costs.sub);
      if (same && std::abs(diag - here) < tol) {
        out.pairs.push_back({EditOp::match, i - 1, j - 1});
        --i, --j;
        continue;
      }
      if (!same && std::abs(diag - here) < tol) {
        out.pairs.push_back({EditOp::substitution, i - 1, j - 1});
        --i, --j;
        continue;
      }
    }
    if (i > 0 && std::abs(d[(i - 1) * w + j] + costs.del - here) < tol) {
      out.pairs.push_back({EditOp::deletion, i - 1, std::nullopt});
      --i;
      continue;
    }
    out.pairs.push_back({EditOp::insertion, std::nullopt, j - 1});
    --j;
  }
  std::reverse(out.pairs.begin(), out.pairs.end());
  return out;
}

template <typename T, typename Eq = std::equal_to<>>
Alignment align(const std::vector<T>& ref, const std::vector<T>& hyp, EditCosts costs = {}, Eq eq = {}) {
  return align(std::span<const T>(ref), std::span<const T>(hyp), costs, eq);
}

/// Word error rate in percent, 100*(S+D+I)/|ref|. Throws RangeError on an
/// empty reference.
double wer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);

/// Corpus-level error counts accumulated utterance by utterance.
struct ErrorCounts {
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;
  std::size_t reference = 0;

  void add(const Alignment& a, std::size_t ref_len);
  /// Percent; throws RangeError when no reference items were counted.
  double rate() const;
};

}  // namespace slu
