// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "slu/lexicon.hpp"

namespace slu {

/// Sentinel for an absent text column in the TSV format.
inline constexpr std::string_view kMissing = "_";

enum class ErrorFlag { correct, error };

struct Token {
  std::string surface;
  std::string lemma{kMissing};
  std::string pos{kMissing};
  std::optional<std::size_t> governor;  // 0-based index into the utterance
  std::string deprel{kMissing};
  std::vector<std::string> sem_categories;  // sorted, unique
  std::optional<double> pap;
  std::optional<double> mlp_conf;
  std::optional<ErrorFlag> error_flag;
  std::string label{kMissing};

  bool operator==(const Token&) const = default;
};

struct Utterance {
  std::string id;
  std::vector<Token> tokens;
  /// Clean reference transcription, present on ASR hypotheses built in memory.
  std::optional<std::vector<Token>> reference_tokens;

  std::vector<std::string> words() const;
  std::vector<std::string> labels() const;
  bool operator==(const Utterance&) const = default;
};

struct Dataset {
  std::vector<Utterance> utterances;

  std::size_t token_count() const;
  const Utterance* find(std::string_view id) const;
};

// ---------------------------------------------------------------------------
// Label scheme

namespace labels {
inline constexpr std::string_view kNull = "null";
inline constexpr std::string_view kErrorC = "ERROR-C";
inline constexpr std::string_view kErrorN = "ERROR-N";
/// Consensus abstention marker; scored as null.
inline constexpr std::string_view kAbstain = "*";

bool is_error(std::string_view label);
bool is_begin(std::string_view label);
bool is_inside(std::string_view label);
/// Concept name of a B-/I- label, empty otherwise.
std::string concept_of(std::string_view label);
std::string begin(std::string_view concept_name);
std::string inside(std::string_view concept_name);
/// Syntactic check: null, B-c, I-c, ERROR-C, ERROR-N, abstention or "_".
bool is_well_formed(std::string_view label);
}  // namespace labels

struct LabelScheme {
  std::vector<std::string> concepts;  // sorted, unique

  /// null, then B-c / I-c per concept in order.
  std::vector<std::string> tag_labels() const;
  /// tag_labels() plus ERROR-C and ERROR-N.
  std::vector<std::string> all_labels() const;
  bool contains(std::string_view label) const;

  /// Concepts appearing in a dataset's gold labels.
  static LabelScheme from_dataset(const Dataset& data);
};

/// Throws SchemaError when an I-c label follows anything other than B-c,
/// I-c or an error label, or when a label is malformed.
void validate_labels(const Utterance& utt);

/// Throws SchemaError on governor/confidence/id invariant violations.
void validate(const Dataset& data);

// ---------------------------------------------------------------------------
// Segments

struct ConceptSegment {
  std::string label;
  std::string value;
  std::size_t start = 0;  // [start, end)
  std::size_t end = 0;
  bool operator==(const ConceptSegment&) const = default;
};

/// Maximal B/I runs of one concept. An I-c that does not continue a c run
/// opens a new segment; error labels and abstentions count as null.
std::vector<ConceptSegment> segments_of(const std::vector<std::string>& words,
                                        const std::vector<std::string>& labels,
                                        const Lexicon& lexicon);
std::vector<ConceptSegment> segments_of(const Utterance& utt, const Lexicon& lexicon);

/// Inverse of segments_of for ordered, non-overlapping segments.
std::vector<std::string> labels_of(const std::vector<ConceptSegment>& segments,
                                   std::size_t length);

/// Orphan I-c labels are promoted to B-c.
void repair_bio(std::vector<std::string>& labels);

// ---------------------------------------------------------------------------
// Error-specific labels

/// Replaces the gold label of every erroneous token: ERROR-C when the
/// projected label is a concept label, ERROR-N otherwise. Requires every
/// token to carry an error flag.
Utterance augment_error_labels(const Utterance& hyp);

struct TaggerOutput {
  std::string id;
  std::vector<std::string> labels;
  bool operator==(const TaggerOutput&) const = default;
};

TaggerOutput strip_error_labels(const TaggerOutput& output);

// ---------------------------------------------------------------------------
// File formats

/// Reads the TSV corpus format (INDEX SURFACE LEMMA POS GOV DEPREL SEMCATS
/// PAP CONF ERRFLAG LABEL). Throws ParseError / SchemaError.
Dataset read_dataset(std::istream& in);
Dataset read_dataset(const std::string& path);
void write_dataset(std::ostream& out, const Dataset& data);
void write_dataset(const std::string& path, const Dataset& data);

std::vector<TaggerOutput> read_tagger_outputs(std::istream& in);
std::vector<TaggerOutput> read_tagger_outputs(const std::string& path);
void write_tagger_outputs(std::ostream& out, const std::vector<TaggerOutput>& outputs);
void write_tagger_outputs(const std::string& path, const std::vector<TaggerOutput>& outputs);

/// Gold labels of a dataset as tagger outputs.
std::vector<TaggerOutput> gold_outputs(const Dataset& data);

}  // namespace slu
