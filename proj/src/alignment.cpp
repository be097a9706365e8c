// SPDX-License-Identifier: Apache-2.0
#include "slu/alignment.hpp"

namespace slu {

std::size_t Alignment::count(EditOp op) const {
  std::size_t n = 0;
  for (const auto& p : pairs)
    if (p.op == op) ++n;
  return n;
}

std::vector<std::optional<std::size_t>> Alignment::hyp_to_ref(std::size_t hyp_len) const {
  std::vector<std::optional<std::size_t>> out(hyp_len);
  for (const auto& p : pairs)
    if (p.hyp && p.ref) out[*p.hyp] = p.ref;
  return out;
}

double wer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  if (ref.empty()) throw RangeError("word error rate undefined for an empty reference");
  const auto a = align(ref, hyp);
  return 100.0 * static_cast<double>(a.errors()) / static_cast<double>(ref.size());
}

void ErrorCounts::add(const Alignment& a, std::size_t ref_len) {
  substitutions += a.count(EditOp::substitution);
  insertions += a.count(EditOp::insertion);
  deletions += a.count(EditOp::deletion);
  reference += ref_len;
}

double ErrorCounts::rate() const {
  if (reference == 0) throw RangeError("error rate undefined for an empty reference");
  return 100.0 * static_cast<double>(substitutions + insertions + deletions) /
         static_cast<double>(reference);
}

}  // namespace slu
