#ifndef PIISTEER_SELFGEN_HPP_
#define PIISTEER_SELFGEN_HPP_

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "piisteer/io.hpp"
#include "piisteer/pii.hpp"
#include "piisteer/sampling.hpp"

namespace piisteer {

enum class StrategyKind { kBos, kEmpty, kSingleTokenSet };

std::string_view to_string(StrategyKind k);
StrategyKind strategy_kind_from_string(std::string_view s);

/// Prompt selection plus decoding. BOS prompts with the BOS token alone;
/// EMPTY does the same but masks BOS at the first sampled step;
/// SINGLE_TOKEN_SET cycles through `prompt_tokens` round-robin.
struct ExtractionStrategy {
  StrategyKind kind = StrategyKind::kBos;
  std::vector<TokenId> prompt_tokens;
  DecodingConfig decoding;

  void validate(int vocab_size) const;
  std::string id() const;
  std::vector<TokenId> prompt_for(std::size_t index) const;
};

Json strategy_to_json(const ExtractionStrategy& s);
ExtractionStrategy strategy_from_json(const Json& j);

struct Generation {
  std::vector<TokenId> prompt;
  std::vector<TokenId> tokens;  // prompt followed by the continuation
};

struct GenerationBatch {
  std::string strategy_id;
  std::uint64_t seed = 0;
  int length = 0;
  std::vector<Generation> sequences;

  /// Decoded text of each sequence; BOS and EOS are dropped.
  std::vector<std::string> texts() const;
};

/// n sequences of at most `length` new tokens each. Sequence i uses the
/// RNG stream (decoding.seed, i), so results do not depend on chunking.
GenerationBatch run_strategy(const Transformer<float>& model, const ExtractionStrategy& strategy, int n, int length,
                             const InterventionSpec* intervention = nullptr);

void save_generation_batch(const GenerationBatch& batch, const std::filesystem::path& path);
GenerationBatch load_generation_batch(const std::filesystem::path& path);

/// Labels every sequence of the batch for class `cls`; the text starts
/// after a leading BOS if present. Only sequences with a positive label are kept.
ClassDataset build_class_dataset(const GenerationBatch& batch, PiiClass cls,
                                 const Gazetteer& gazetteer = Gazetteer::builtin());

/// Seeded subsample keeping round(fraction * size) examples. The chosen
/// indices are written to `indices` in dataset order when given.
ClassDataset subsample_dataset(const ClassDataset& ds, double fraction, std::uint64_t seed,
                               std::vector<std::size_t>* indices = nullptr);

/// True if any class-c span of the example is a known training value.
bool is_ground_truth_example(const LabelSequence& ex, PiiClass cls, const std::set<std::string>& train_values,
                             const Gazetteer& gazetteer = Gazetteer::builtin());

/// Fixed-size dataset in which round(fraction * size) examples carry
/// ground-truth PII and the rest do not. Throws ConfigError if either pool
/// is too small.
ClassDataset mix_ground_truth(const ClassDataset& ds, const std::set<std::string>& train_values, double fraction,
                              std::size_t size, std::uint64_t seed, std::vector<std::size_t>* indices = nullptr);

/// Largest size for which mix_ground_truth succeeds at every fraction.
std::size_t max_mixable_size(const ClassDataset& ds, const std::set<std::string>& train_values,
                             std::span<const double> fractions);

struct PromptScore {
  TokenId token = 0;
  int yield = 0;  // class-c spans over all samples of this candidate
};

struct PromptSearchConfig {
  int candidate_budget = 96;
  int samples_per_candidate = 32;
  int keep = 20;
  int generation_length = 64;
  int top_k = 40;
  std::uint64_t seed = 0;
};

/// Empirical yield ranking over the first `candidate_budget` printable
/// tokens. Ties go to the lower token id. All scores are written to
/// `scores` when given, in candidate order.
std::vector<TokenId> derive_single_token_prompts(const Transformer<float>& model, PiiClass cls,
                                                 const PromptSearchConfig& config,
                                                 std::vector<PromptScore>* scores = nullptr,
                                                 const Gazetteer& gazetteer = Gazetteer::builtin());

}  // namespace piisteer

#endif  // PIISTEER_SELFGEN_HPP_
