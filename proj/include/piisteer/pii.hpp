#ifndef PIISTEER_PII_HPP_
#define PIISTEER_PII_HPP_

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "piisteer/common.hpp"
#include "piisteer/io.hpp"
#include "piisteer/tokenizer.hpp"

namespace piisteer {

enum class PiiClass { kEmail, kPhone, kName };

inline constexpr std::array<PiiClass, 3> kAllPiiClasses{PiiClass::kEmail, PiiClass::kPhone, PiiClass::kName};

std::string_view to_string(PiiClass c);
/// Throws ConfigError for unknown names.
PiiClass pii_class_from_string(std::string_view name);

struct CanonicalizationError : AnnotationError {
  using AnnotationError::AnnotationError;
};

struct PiiSpan {
  int start = 0;  // char offsets, half-open
  int end = 0;
  PiiClass cls = PiiClass::kEmail;
  std::string surface;
  std::string canonical;

  bool operator==(const PiiSpan&) const = default;
};

/// Closed list of first and last names used for name tagging.
class Gazetteer {
 public:
  /// The list shipped with the library.
  static const Gazetteer& builtin();
  Gazetteer(std::vector<std::string> first, std::vector<std::string> last);

  bool is_first(std::string_view w) const { return first_set_.count(std::string(w)) > 0; }
  bool is_last(std::string_view w) const { return last_set_.count(std::string(w)) > 0; }
  const std::vector<std::string>& first_names() const { return first_; }
  const std::vector<std::string>& last_names() const { return last_; }

 private:
  std::vector<std::string> first_, last_;
  std::unordered_set<std::string> first_set_, last_set_;
};

/// Emails lowercased, phones reduced to their ten digits, names lowercased
/// with single spaces. Idempotent. Throws CanonicalizationError when the
/// surface does not look like the class.
std::string canonicalize(std::string_view surface, PiiClass cls);

/// All spans of all classes, sorted by (start, class). Spans of one class
/// never overlap; spans of different classes are found independently.
std::vector<PiiSpan> annotate(std::string_view text, const Gazetteer& gazetteer = Gazetteer::builtin());
std::vector<PiiSpan> annotate(std::string_view text, PiiClass cls, const Gazetteer& gazetteer = Gazetteer::builtin());

/// Token sequence with per-token membership in spans of one class.
struct LabelSequence {
  std::vector<TokenId> tokens;
  std::vector<std::uint8_t> labels;

  int positives() const;
};

struct ClassDataset {
  PiiClass cls = PiiClass::kEmail;
  std::vector<LabelSequence> examples;
  Json provenance = Json::object();

  std::size_t size() const { return examples.size(); }
};

/// Labels a token sequence whose text starts at token `text_offset` (1 when
/// a BOS precedes the text). Returns nullopt when no token is positive.
std::optional<LabelSequence> label_sequence(std::span<const TokenId> tokens, int text_offset, PiiClass cls,
                                            const Tokenizer& tokenizer = Tokenizer(),
                                            const Gazetteer& gazetteer = Gazetteer::builtin());

/// Builds the class dataset from raw generations. Each text is encoded
/// behind a BOS token; texts without a span of `cls` are dropped.
ClassDataset build_class_dataset(std::span<const std::string> generations, PiiClass cls,
                                 const Tokenizer& tokenizer = Tokenizer(),
                                 const Gazetteer& gazetteer = Gazetteer::builtin());

void save_class_dataset(const ClassDataset& ds, const std::filesystem::path& path);
ClassDataset load_class_dataset(const std::filesystem::path& path);

}  // namespace piisteer

#endif  // PIISTEER_PII_HPP_
