// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "slu/alignment.hpp"
#include "slu/corpus.hpp"
#include "slu/lexicon.hpp"

namespace slu {

// ---------------------------------------------------------------------------
// Confidence measures

struct ConfidenceRecord {
  std::string id;
  std::size_t index = 0;
  bool correct = false;
  double confidence = 0.0;
};

enum class ConfidenceMeasure { pap, mlp_conf };

/// One record per token; tokens must carry an error flag and the measure
/// (PreconditionError otherwise).
std::vector<ConfidenceRecord> confidence_records(const Dataset& data, ConfidenceMeasure measure);

inline constexpr double kNceEpsilon = 1e-6;

/// Normalized cross entropy with base-2 logs and confidences clipped to
/// [eps, 1 - eps]. Throws DataError when only one class is present and
/// RangeError for a confidence outside [0,1].
double nce(const std::vector<ConfidenceRecord>& records);

struct CalibrationBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double mean_confidence = 0.0;  // 0 for an empty bin
  double fraction_correct = 0.0;
};

struct CalibrationReport {
  std::vector<CalibrationBin> bins;
  std::size_t records = 0;
  /// NaN when the records hold a single class.
  double nce = 0.0;

  void write_text(std::ostream& out) const;
  /// "lower,upper,count,mean_confidence,fraction_correct" rows.
  void write_csv(std::ostream& out) const;
};

/// Equal-width bins [i/k, (i+1)/k), the top bin closed. ConfigError for k < 2.
CalibrationReport calibration_bins(const std::vector<ConfidenceRecord>& records, std::size_t k);

// ---------------------------------------------------------------------------
// Concept scoring

struct ScoreReport {
  ErrorCounts concepts;  // label-only alignment
  ErrorCounts values;    // label + value alignment
  std::size_t utterances = 0;
  std::size_t reference_segments = 0;
  std::size_t hypothesis_segments = 0;
  std::size_t correct_concepts = 0;
  std::size_t correct_values = 0;

  double cer() const { return concepts.rate(); }
  double cver() const { return values.rate(); }
  double precision() const;
  double recall() const;
  double value_precision() const;
  double value_recall() const;

  void write_text(std::ostream& out, std::string_view title = {}) const;
  /// key=value lines, prefixed with `prefix` when non-empty.
  void write_kv(std::ostream& out, std::string_view prefix = {}) const;
};

/// Scores tagger outputs against reference annotations. `hyp_words` holds
/// the words the outputs label (ASR hypotheses or the reference words);
/// segments are extracted on both sides and aligned per utterance, counts
/// summed over the corpus. Error labels count as null, as do abstentions.
/// Throws PairingError when ids or utterance counts differ and
/// AlignmentError when an output and its words differ in length.
ScoreReport score(const Dataset& ref, const Dataset& hyp_words, const std::vector<TaggerOutput>& outputs,
                  const Lexicon& lexicon);
/// Outputs over the reference words themselves.
ScoreReport score(const Dataset& ref, const std::vector<TaggerOutput>& outputs, const Lexicon& lexicon);

// ---------------------------------------------------------------------------
// System combination

/// Per position, the label with the largest summed weight wins. Ties go to
/// the label of the tied system listed first in `priority` (indices into
/// `outputs`; identity order when empty). ConfigError when weights are
/// negative or all zero, AlignmentError on length mismatch.
TaggerOutput combine_weighted(const std::vector<TaggerOutput>& outputs, const std::vector<double>& weights,
                              const std::vector<std::size_t>& priority = {});

/// Keeps a position only when every system agrees; otherwise "*".
TaggerOutput consensus(const std::vector<TaggerOutput>& outputs);

/// Corpus-level versions: systems[s][u] is system s on utterance u.
std::vector<TaggerOutput> combine_weighted(const std::vector<std::vector<TaggerOutput>>& systems,
                                           const std::vector<double>& weights,
                                           const std::vector<std::size_t>& priority = {});
std::vector<TaggerOutput> consensus(const std::vector<std::vector<TaggerOutput>>& systems);

struct TunedWeights {
  std::vector<double> weights;
  double dev_cer = 0.0;
};

/// Exhaustive search over the weight simplex on a grid of the given step,
/// minimizing dev CER; ties go to the weighting closest to uniform, then to
/// the first in enumeration order. ConfigError unless 1/step is a positive
/// integer.
TunedWeights tune_weights(const std::vector<std::vector<TaggerOutput>>& dev_systems, const Dataset& dev_ref,
                          const Dataset& dev_words, const Lexicon& lexicon, double step = 0.1,
                          const std::vector<std::size_t>& priority = {});

/// Every grid point of the simplex with the given step, in enumeration order.
std::vector<std::vector<double>> simplex_grid(std::size_t systems, double step);

}  // namespace slu
