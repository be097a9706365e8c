// SPDX-License-Identifier: Apache-2.0
#include "slu/confusion_network.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>

#include "slu/error.hpp"
#include "slu/text.hpp"

namespace slu {

double ConfusionNetwork::posterior(std::size_t bin, std::string_view word) const {
  for (const auto& e : bins.at(bin))
    if (e.word == word) return e.posterior;
  return 0.0;
}

ConfusionNetwork build_cn(const std::vector<WeightedHypothesis>& nbest, std::string id) {
  if (nbest.empty()) throw PreconditionError("confusion network needs at least one hypothesis");
  const auto& pivot = nbest.front().words;
  std::vector<std::map<std::string, double>> votes(pivot.size());
  double total = 0.0;
  for (const auto& h : nbest) {
    if (!(h.weight >= 0.0)) throw PreconditionError("negative hypothesis weight");
    total += h.weight;
    const auto a = align(pivot, h.words);
    for (const auto& p : a.pairs) {
      if (!p.ref) continue;
      votes[*p.ref][p.hyp ? h.words[*p.hyp] : std::string(kEpsilon)] += h.weight;
    }
  }
  if (!(total > 0.0)) throw PreconditionError("hypothesis weights sum to zero");

  ConfusionNetwork cn;
  cn.id = std::move(id);
  cn.bins.reserve(votes.size());
  for (const auto& bin_votes : votes) {
    ConfusionNetwork::Bin bin;
    for (const auto& [w, v] : bin_votes) bin.push_back({w, v / total});
    std::stable_sort(bin.begin(), bin.end(), [](const auto& a, const auto& b) {
      return a.posterior > b.posterior;
    });
    cn.bins.push_back(std::move(bin));
  }
  return cn;
}

std::vector<double> pap_of(const ConfusionNetwork& cn, const std::vector<std::string>& hyp) {
  if (cn.bins.size() != hyp.size())
    throw AlignmentError("hypothesis of " + std::to_string(hyp.size()) + " words is not the pivot of a " +
                         std::to_string(cn.bins.size()) + "-bin network");
  std::vector<double> out(hyp.size());
  for (std::size_t i = 0; i < hyp.size(); ++i) {
    const double p = cn.posterior(i, hyp[i]);
    if (!(p > 0.0)) throw AlignmentError("word '" + hyp[i] + "' missing from bin " + std::to_string(i));
    out[i] = std::min(1.0, p);
  }
  return out;
}

void write_cns(std::ostream& out, const std::vector<ConfusionNetwork>& cns) {
  for (const auto& cn : cns) {
    out << "# id=" << cn.id << '\n';
    for (const auto& bin : cn.bins) {
      for (std::size_t k = 0; k < bin.size(); ++k) {
        if (k) out << ' ';
        out << bin[k].word << ':' << text::exact(bin[k].posterior);
      }
      out << '\n';
    }
  }
}

std::vector<ConfusionNetwork> read_cns(std::istream& in) {
  std::vector<ConfusionNetwork> cns;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (text::starts_with(line, "# id=")) {
      cns.push_back(ConfusionNetwork{line.substr(5), {}});
      continue;
    }
    if (cns.empty()) throw ParseError(line_no, "bin before '# id=' header");
    ConfusionNetwork::Bin bin;
    for (const auto& item : text::split_ws(line)) {
      const auto colon = item.rfind(':');
      if (colon == std::string::npos || colon == 0) throw ParseError(line_no, "expected word:posterior");
      ConfusionNetwork::Entry e{item.substr(0, colon), 0.0};
      try {
        e.posterior = std::stod(item.substr(colon + 1));
      } catch (const std::exception&) {
        throw ParseError(line_no, "bad posterior in '" + item + "'");
      }
      bin.push_back(std::move(e));
    }
    cns.back().bins.push_back(std::move(bin));
  }
  return cns;
}

}  // namespace slu
