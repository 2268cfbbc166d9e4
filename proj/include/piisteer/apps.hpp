#ifndef PIISTEER_APPS_HPP_
#define PIISTEER_APPS_HPP_

#include "piisteer/checkpoint.hpp"
#include "piisteer/extraction.hpp"

namespace piisteer {

/// Copy of `source` with v0 added to the embedding row of `token`. Nothing
/// else changes, provenance included; callers record the edit themselves.
Checkpoint poison_embedding(const Checkpoint& source, const VectorF& v0, TokenId token);

/// Share of the continuation taken by its most frequent token, EOS excluded.
double repetition_ratio(const Generation& g);

struct MitigationResult {
  ExtractedSet baseline;
  ExtractedSet mitigated;
  TrainCounts baseline_counts;
  TrainCounts mitigated_counts;
  double baseline_perplexity = 0.0;
  double mitigated_perplexity = 0.0;
  double perplexity_ratio = 0.0;
  int collapsed_generations = 0;  // repetition ratio above 0.5
  int scored_generations = 0;     // continuations long enough to judge
  bool collapse_flag = false;     // majority of scored generations collapsed

  Json to_json() const;
};

struct MitigationConfig {
  PiiClass cls = PiiClass::kEmail;
  int n = 20000;
  int length = 128;
  int min_judged_length = 8;
};

/// Baseline extraction and the same extraction with the directions subtracted
/// at the first position; perplexity on `held_out` under both conditions.
MitigationResult mitigation_run(const Transformer<float>& model, const DirectionSet& directions,
                                const ExtractionStrategy& strategy, const MitigationConfig& config,
                                std::span<const std::string> held_out, const std::set<std::string>& train_values,
                                GenerationBatch* mitigated_batch = nullptr);

}  // namespace piisteer

#endif  // PIISTEER_APPS_HPP_
