#ifndef PIISTEER_CORPUS_HPP_
#define PIISTEER_CORPUS_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "piisteer/io.hpp"
#include "piisteer/pii.hpp"

namespace piisteer {

/// Truncated geometric law for how often one planted value occurs:
/// P(r) proportional to continue_prob^(r - 1) for r in [1, max_occurrences].
struct RepetitionConfig {
  double continue_prob = 0.5;
  int max_occurrences = 6;
};

struct VocabularyProfile {
  int min_sentences = 1;
  int max_sentences = 3;
  int min_words = 4;
  int max_words = 9;
};

struct CorpusConfig {
  std::uint64_t seed = 7;
  int num_documents = 2000;
  std::map<PiiClass, int> pii_counts{{PiiClass::kEmail, 500}, {PiiClass::kPhone, 200}, {PiiClass::kName, 400}};
  RepetitionConfig repetition;
  std::string template_set_id = "mail-v1";
  VocabularyProfile vocabulary;
  std::array<double, 3> split_ratios{0.45, 0.5, 0.05};
  int max_document_chars = 254;

  /// Throws ConfigError.
  void validate() const;
};

Json corpus_config_to_json(const CorpusConfig& c);
CorpusConfig corpus_config_from_json(const Json& j);

enum class Split { kTrain, kValidation, kTest };
std::string_view to_string(Split s);
Split split_from_string(std::string_view s);

/// One planted PII occurrence: documents[doc].substr(start, end - start)
/// is the surface form, `value` its canonical string.
struct Plant {
  int doc = 0;
  int start = 0;
  int end = 0;
  PiiClass cls = PiiClass::kEmail;
  std::string value;
};

struct Corpus {
  CorpusConfig config;
  std::vector<std::string> documents;
  std::vector<Plant> registry;
  std::vector<Split> splits;

  std::vector<int> documents_in(Split s) const;
  /// Canonical planted values of `cls`, optionally restricted to documents of one split.
  std::set<std::string> planted_values(PiiClass cls, std::optional<Split> split = std::nullopt) const;
};

/// Pure function of the config. Every planted value occurs at least once in
/// the train split. Throws ConfigError on invalid or unsatisfiable configs.
Corpus generate_corpus(const CorpusConfig& config);

/// Exact-count partition: round(r0 * n) train, round(r1 * n) validation,
/// the rest test, over a seeded shuffle of document indices.
std::vector<Split> assign_splits(int num_documents, const std::array<double, 3>& ratios, std::uint64_t seed);

/// Returns the corpus with split_assignment recomputed for `ratios`.
Corpus split_corpus(Corpus corpus, const std::array<double, 3>& ratios);

/// corpus.jsonl (header + one document per line) and registry.jsonl
/// (header + one plant per line) inside `dir`.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

}  // namespace piisteer

#endif  // PIISTEER_CORPUS_HPP_
