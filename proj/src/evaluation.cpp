// SPDX-License-Identifier: Apache-2.0
#include "slu/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>

#include "slu/error.hpp"
#include "slu/text.hpp"

namespace slu {

// ---------------------------------------------------------------------------
// Confidence measures

std::vector<ConfidenceRecord> confidence_records(const Dataset& data, ConfidenceMeasure measure) {
  std::vector<ConfidenceRecord> out;
  for (const auto& u : data.utterances)
    for (std::size_t i = 0; i < u.tokens.size(); ++i) {
      const auto& t = u.tokens[i];
      const auto& c = measure == ConfidenceMeasure::pap ? t.pap : t.mlp_conf;
      if (!t.error_flag || !c)
        throw PreconditionError(text::format("utterance %s token %zu lacks an error flag or a %s value",
                                             u.id.c_str(), i + 1,
                                             measure == ConfidenceMeasure::pap ? "pap" : "conf"));
      out.push_back({u.id, i, *t.error_flag == ErrorFlag::correct, *c});
    }
  return out;
}

double nce(const std::vector<ConfidenceRecord>& records) {
  std::size_t correct = 0;
  double h_cond = 0.0;
  for (const auto& r : records) {
    if (!(r.confidence >= 0.0 && r.confidence <= 1.0))
      throw RangeError("confidence " + text::exact(r.confidence) + " outside [0,1]");
    const double c = std::clamp(r.confidence, kNceEpsilon, 1.0 - kNceEpsilon);
    h_cond -= r.correct ? std::log2(c) : std::log2(1.0 - c);
    correct += r.correct;
  }
  if (correct == 0 || correct == records.size())
    throw DataError("NCE needs both correct and incorrect records");
  const double n = static_cast<double>(records.size());
  const double pc = static_cast<double>(correct) / n;
  const double h_base = -(pc * std::log2(pc) + (1.0 - pc) * std::log2(1.0 - pc));
  return (h_base - h_cond / n) / h_base;
}

CalibrationReport calibration_bins(const std::vector<ConfidenceRecord>& records, std::size_t k) {
  if (k < 2) throw ConfigError("calibration needs at least 2 bins");
  CalibrationReport rep;
  rep.records = records.size();
  rep.bins.resize(k);
  std::vector<double> conf_sum(k, 0.0);
  std::vector<std::size_t> correct(k, 0);
  for (std::size_t i = 0; i < k; ++i) {
    rep.bins[i].lower = static_cast<double>(i) / static_cast<double>(k);
    rep.bins[i].upper = static_cast<double>(i + 1) / static_cast<double>(k);
  }
  for (const auto& r : records) {
    if (!(r.confidence >= 0.0 && r.confidence <= 1.0))
      throw RangeError("confidence " + text::exact(r.confidence) + " outside [0,1]");
    const auto b = std::min(k - 1, static_cast<std::size_t>(r.confidence * static_cast<double>(k)));
    ++rep.bins[b].count;
    conf_sum[b] += r.confidence;
    correct[b] += r.correct;
  }
  for (std::size_t i = 0; i < k; ++i)
    if (rep.bins[i].count) {
      rep.bins[i].mean_confidence = conf_sum[i] / static_cast<double>(rep.bins[i].count);
      rep.bins[i].fraction_correct = static_cast<double>(correct[i]) / static_cast<double>(rep.bins[i].count);
    }
  try {
    rep.nce = nce(records);
  } catch (const DataError&) {
    rep.nce = std::numeric_limits<double>::quiet_NaN();
  }
  return rep;
}

void CalibrationReport::write_text(std::ostream& out) const {
  out << text::format("records %zu  NCE %.4f\n", records, nce);
  out << "interval        count  mean_conf  correct\n";
  for (const auto& b : bins)
    out << text::format("[%.2f, %.2f%c  %7zu  %9.4f  %7.4f\n", b.lower, b.upper,
                        &b == &bins.back() ? ']' : ')', b.count, b.mean_confidence, b.fraction_correct);
}

void CalibrationReport::write_csv(std::ostream& out) const {
  out << "lower,upper,count,mean_confidence,fraction_correct\n";
  for (const auto& b : bins)
    out << text::format("%.6f,%.6f,%zu,%.6f,%.6f\n", b.lower, b.upper, b.count, b.mean_confidence,
                        b.fraction_correct);
}

// ---------------------------------------------------------------------------
// Concept scoring

namespace {
double ratio(std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); }
}  // namespace

double ScoreReport::precision() const { return ratio(correct_concepts, hypothesis_segments); }
double ScoreReport::recall() const { return ratio(correct_concepts, reference_segments); }
double ScoreReport::value_precision() const { return ratio(correct_values, hypothesis_segments); }
double ScoreReport::value_recall() const { return ratio(correct_values, reference_segments); }

void ScoreReport::write_text(std::ostream& out, std::string_view title) const {
  if (!title.empty()) out << title << '\n';
  out << text::format("  utterances %zu, reference concepts %zu, hypothesis concepts %zu\n", utterances,
                      reference_segments, hypothesis_segments);
  out << text::format("  CER  %6.2f%%  (S %zu, I %zu, D %zu)  P %.4f  R %.4f\n", cer(), concepts.substitutions,
                      concepts.insertions, concepts.deletions, precision(), recall());
  out << text::format("  CVER %6.2f%%  (S %zu, I %zu, D %zu)  P %.4f  R %.4f\n", cver(), values.substitutions,
                      values.insertions, values.deletions, value_precision(), value_recall());
}

void ScoreReport::write_kv(std::ostream& out, std::string_view prefix) const {
  const std::string p = prefix.empty() ? std::string() : std::string(prefix) + ".";
  out << p << "utterances=" << utterances << '\n';
  out << p << "reference_concepts=" << reference_segments << '\n';
  out << p << "hypothesis_concepts=" << hypothesis_segments << '\n';
  out << p << text::format("cer=%.4f\n", cer());
  out << p << "cer_substitutions=" << concepts.substitutions << '\n';
  out << p << "cer_insertions=" << concepts.insertions << '\n';
  out << p << "cer_deletions=" << concepts.deletions << '\n';
  out << p << text::format("cver=%.4f\n", cver());
  out << p << "cver_substitutions=" << values.substitutions << '\n';
  out << p << "cver_insertions=" << values.insertions << '\n';
  out << p << "cver_deletions=" << values.deletions << '\n';
  out << p << text::format("precision=%.6f\n", precision());
  out << p << text::format("recall=%.6f\n", recall());
  out << p << text::format("value_precision=%.6f\n", value_precision());
  out << p << text::format("value_recall=%.6f\n", value_recall());
}

ScoreReport score(const Dataset& ref, const Dataset& hyp_words, const std::vector<TaggerOutput>& outputs,
                  const Lexicon& lexicon) {
  if (ref.utterances.size() != outputs.size() || hyp_words.utterances.size() != outputs.size())
    throw PairingError(text::format("cannot pair %zu reference utterances, %zu hypotheses and %zu outputs",
                                    ref.utterances.size(), hyp_words.utterances.size(), outputs.size()));
  ScoreReport rep;
  for (std::size_t u = 0; u < outputs.size(); ++u) {
    const auto& r = ref.utterances[u];
    const auto& w = hyp_words.utterances[u];
    const auto& o = outputs[u];
    if (r.id != o.id || w.id != o.id)
      throw PairingError("utterance id mismatch: reference '" + r.id + "', hypothesis '" + w.id + "', output '" +
                         o.id + "'");
    if (o.labels.size() != w.tokens.size())
      throw AlignmentError(text::format("utterance %s: %zu labels for %zu words", o.id.c_str(), o.labels.size(),
                                        w.tokens.size()));
    const auto rs = segments_of(r, lexicon);
    const auto hs = segments_of(w.words(), o.labels, lexicon);
    std::vector<std::string> rl, hl, rv, hv;
    for (const auto& s : rs) {
      rl.push_back(s.label);
      rv.push_back(s.label + "=" + s.value);
    }
    for (const auto& s : hs) {
      hl.push_back(s.label);
      hv.push_back(s.label + "=" + s.value);
    }
    const auto ca = align(rl, hl);
    const auto va = align(rv, hv);
    rep.concepts.add(ca, rl.size());
    rep.values.add(va, rv.size());
    rep.correct_concepts += ca.count(EditOp::match);
    rep.correct_values += va.count(EditOp::match);
    rep.reference_segments += rs.size();
    rep.hypothesis_segments += hs.size();
    ++rep.utterances;
  }
  return rep;
}

ScoreReport score(const Dataset& ref, const std::vector<TaggerOutput>& outputs, const Lexicon& lexicon) {
  return score(ref, ref, outputs, lexicon);
}

// ---------------------------------------------------------------------------
// System combination

namespace {

std::vector<std::size_t> priority_order(std::size_t n, const std::vector<std::size_t>& priority) {
  if (priority.empty()) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    return p;
  }
  auto sorted = priority;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i)
    if (sorted[i] != i || sorted.size() != n) throw ConfigError("priority must be a permutation of the systems");
  return priority;
}

void check_aligned(const std::vector<TaggerOutput>& outputs) {
  if (outputs.empty()) throw ConfigError("combination needs at least one system");
  for (const auto& o : outputs)
    if (o.labels.size() != outputs[0].labels.size())
      throw AlignmentError("utterance " + outputs[0].id + ": systems produced different lengths");
}

}  // namespace

TaggerOutput combine_weighted(const std::vector<TaggerOutput>& outputs, const std::vector<double>& weights,
                              const std::vector<std::size_t>& priority) {
  check_aligned(outputs);
  if (weights.size() != outputs.size()) throw ConfigError("one weight per system is required");
  bool positive = false;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ConfigError("combination weights must be non-negative");
    positive |= w > 0.0;
  }
  if (!positive) throw ConfigError("combination needs at least one positive weight");
  const auto order = priority_order(outputs.size(), priority);

  TaggerOutput out;
  out.id = outputs[0].id;
  std::map<std::string, double> votes;
  for (std::size_t t = 0; t < outputs[0].labels.size(); ++t) {
    votes.clear();
    for (std::size_t s = 0; s < outputs.size(); ++s) votes[outputs[s].labels[t]] += weights[s];
    double best = -1.0;
    for (const auto& [label, v] : votes) best = std::max(best, v);
    for (std::size_t s : order) {
      const auto& label = outputs[s].labels[t];
      // Relative tolerance so sums that are equal in exact arithmetic tie.
      if (votes[label] >= best * (1.0 - 1e-9)) {
        out.labels.push_back(label);
        break;
      }
    }
  }
  return out;
}

TaggerOutput consensus(const std::vector<TaggerOutput>& outputs) {
  check_aligned(outputs);
  TaggerOutput out;
  out.id = outputs[0].id;
  for (std::size_t t = 0; t < outputs[0].labels.size(); ++t) {
    const auto& first = outputs[0].labels[t];
    const bool agree = std::all_of(outputs.begin(), outputs.end(),
                                   [&](const TaggerOutput& o) { return o.labels[t] == first; });
    out.labels.push_back(agree ? first : std::string(labels::kAbstain));
  }
  return out;
}

namespace {

std::vector<TaggerOutput> column(const std::vector<std::vector<TaggerOutput>>& systems, std::size_t u) {
  std::vector<TaggerOutput> col;
  col.reserve(systems.size());
  for (const auto& s : systems) {
    if (s[u].id != systems[0][u].id) throw PairingError("systems disagree on utterance " + systems[0][u].id);
    col.push_back(s[u]);
  }
  return col;
}

void check_systems(const std::vector<std::vector<TaggerOutput>>& systems) {
  if (systems.empty()) throw ConfigError("combination needs at least one system");
  for (const auto& s : systems)
    if (s.size() != systems[0].size()) throw PairingError("systems cover different numbers of utterances");
}

}  // namespace

std::vector<TaggerOutput> combine_weighted(const std::vector<std::vector<TaggerOutput>>& systems,
                                           const std::vector<double>& weights,
                                           const std::vector<std::size_t>& priority) {
  check_systems(systems);
  std::vector<TaggerOutput> out;
  out.reserve(systems[0].size());
  for (std::size_t u = 0; u < systems[0].size(); ++u) out.push_back(combine_weighted(column(systems, u), weights, priority));
  return out;
}

std::vector<TaggerOutput> consensus(const std::vector<std::vector<TaggerOutput>>& systems) {
  check_systems(systems);
  std::vector<TaggerOutput> out;
  out.reserve(systems[0].size());
  for (std::size_t u = 0; u < systems[0].size(); ++u) out.push_back(consensus(column(systems, u)));
  return out;
}

std::vector<std::vector<double>> simplex_grid(std::size_t systems, double step) {
  if (systems == 0) throw ConfigError("weight grid needs at least one system");
  if (!(step > 0.0)) throw ConfigError("grid step must be positive");
  const double inv = 1.0 / step;
  const auto m = static_cast<std::size_t>(std::llround(inv));
  if (m == 0 || std::abs(inv - static_cast<double>(m)) > 1e-9) throw ConfigError("1/step must be a positive integer");
  std::vector<std::vector<double>> out;
  std::vector<std::size_t> parts(systems, 0);
  // Compositions of m into `systems` parts, earlier parts largest first.
  auto rec = [&](auto&& self, std::size_t i, std::size_t left) -> void {
    if (i + 1 == systems) {
      parts[i] = left;
      std::vector<double> w(systems);
      for (std::size_t k = 0; k < systems; ++k) w[k] = static_cast<double>(parts[k]) / static_cast<double>(m);
      out.push_back(std::move(w));
      return;
    }
    for (std::size_t v = left + 1; v-- > 0;) {
      parts[i] = v;
      self(self, i + 1, left - v);
    }
  };
  rec(rec, 0, m);
  return out;
}

TunedWeights tune_weights(const std::vector<std::vector<TaggerOutput>>& dev_systems, const Dataset& dev_ref,
                          const Dataset& dev_words, const Lexicon& lexicon, double step,
                          const std::vector<std::size_t>& priority) {
  check_systems(dev_systems);
  const std::size_t n = dev_systems.size();
  const double uniform = 1.0 / static_cast<double>(n);
  TunedWeights best;
  double best_dist = 0.0;
  bool have = false;
  for (const auto& w : simplex_grid(n, step)) {
    const double cer = score(dev_ref, dev_words, combine_weighted(dev_systems, w, priority), lexicon).cer();
    double dist = 0.0;
    for (double x : w) dist += (x - uniform) * (x - uniform);
    const bool better = !have || cer < best.dev_cer - 1e-12 ||
                        (std::abs(cer - best.dev_cer) <= 1e-12 && dist < best_dist - 1e-12);
    if (better) {
      best.weights = w;
      best.dev_cer = cer;
      best_dist = dist;
      have = true;
    }
  }
  return best;
}

}  // namespace slu
