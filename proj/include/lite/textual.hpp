#pragma once
// Records as text: key-value linearization, deterministic sentence templates,
// a closed word/digit-level vocabulary with [MASK] bookkeeping, and the domain
// instruction prompt fed to the fusion decoder.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lite/dataset.hpp"

namespace lite {

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kMaskId = 1;
inline constexpr std::int32_t kSepId = 2;
inline constexpr std::int32_t kClsId = 3;
inline constexpr const char* kMaskToken = "[MASK]";

struct Linearization {
  std::vector<std::pair<std::string, std::string>> pairs;  // (feature description, value or [MASK])
};

/// Renders `value` with 5 significant digits in fixed notation, trailing zeros removed.
std::string render_value(double value);

Linearization linearize(const Record& record, const FeatureSchema& schema);

/// "On day {day} in region {region}, the {key} was {value}. the {key} was {value}. ..."
/// An empty linearization yields "On day {day} in region {region}."
std::string render_semantic(const Linearization& lin, const std::string& region, std::int64_t day);

/// Splits text into word, single-digit, sign, punctuation and special tokens.
std::vector<std::string> split_tokens(const std::string& text);

class Vocabulary {
 public:
  Vocabulary();

  /// Adds every token of `text` that is not yet known.
  void learn(const std::string& text);
  void add(const std::string& token);

  std::int32_t id(const std::string& token) const;  // throws DataError if unknown
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  const std::string& token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }

  /// One "token<TAB>id" line per entry, in id order.
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);
  std::string serialize() const;

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::int32_t> ids_;
};

struct TokenSeq {
  std::vector<std::int32_t> ids;
  std::vector<std::size_t> mask_positions;

  std::size_t mask_count() const { return mask_positions.size(); }
};

/// Tokenizes template-produced text. Sequences longer than max_len are cut,
/// unless the cut would drop a [MASK] (DataError).
TokenSeq tokenize(const std::string& text, const Vocabulary& vocab, std::size_t max_len);

/// Inverse of tokenize for template-produced text.
std::string detokenize(const TokenSeq& seq, const Vocabulary& vocab);

/// Token sequence of a record's semantic text plus bookkeeping for imputation.
struct SemanticTokens {
  TokenSeq seq;
  std::vector<std::size_t> mask_features;  // feature index of each mask position
  // Per feature: [first, first + count) tokens of its rendered value (count 0 when masked).
  std::vector<std::pair<std::size_t, std::size_t>> value_spans;
};

SemanticTokens tokenize_record(const Record& record, const FeatureSchema& schema,
                               const Vocabulary& vocab, std::size_t max_len);

struct TargetObservation {
  std::int64_t day = 0;
  double value = 0.0;
};

struct DomainDescription {
  std::string dataset;
  std::string task;

  static DomainDescription preset(const std::string& name);  // CRW-Temp, CRW-Flow, AGR, SYN-Temp
};

/// Least-squares trend label of a target window: increasing / decreasing / stable.
std::string trend_label(std::span<const TargetObservation> window);

std::string build_domain_instruction(const DomainDescription& domain,
                                     std::span<const TargetObservation> target_window);

/// Vocabulary covering templates, schema words, region ids and the domain texts.
Vocabulary build_vocabulary(const FeatureSchema& schema, const std::vector<std::string>& regions,
                            const DomainDescription& domain);

}  // namespace lite
