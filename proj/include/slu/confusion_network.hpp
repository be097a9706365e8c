// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "slu/noise.hpp"

namespace slu {

inline constexpr std::string_view kEpsilon = "<eps>";

/// Linear sequence of bins, one per word of the pivot hypothesis; each bin
/// holds competing words (or epsilon) with posteriors summing to one.
struct ConfusionNetwork {
  struct Entry {
    std::string word;
    double posterior = 0.0;
  };
  using Bin = std::vector<Entry>;  // sorted by decreasing posterior, then word

  std::string id;
  std::vector<Bin> bins;

  double posterior(std::size_t bin, std::string_view word) const;
};

/// Pivot alignment: every hypothesis is aligned to the first (top) one; a
/// matched or substituted word votes with the hypothesis weight in the
/// pivot word's bin, a skipped pivot word votes for epsilon. Words a
/// competitor inserts between pivot words get no bin of their own.
ConfusionNetwork build_cn(const std::vector<WeightedHypothesis>& nbest, std::string id = {});

/// Posterior of each pivot word in its own bin. Throws AlignmentError when
/// `hyp` is not the network's pivot.
std::vector<double> pap_of(const ConfusionNetwork& cn, const std::vector<std::string>& hyp);

/// CN file: "# id=<text>" then one bin per line, "word:posterior" entries
/// separated by spaces, "<eps>" for epsilon.
void write_cns(std::ostream& out, const std::vector<ConfusionNetwork>& cns);
std::vector<ConfusionNetwork> read_cns(std::istream& in);

}  // namespace slu
