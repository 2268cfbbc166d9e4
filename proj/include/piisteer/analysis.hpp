#ifndef PIISTEER_ANALYSIS_HPP_
#define PIISTEER_ANALYSIS_HPP_

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "piisteer/corpus.hpp"
#include "piisteer/extraction.hpp"

namespace piisteer {

/// A prefix whose next token begins a PII span, with that token.
struct TargetedPrefix {
  std::vector<TokenId> prefix;
  TokenId target = 0;
};

/// Up to `max_prefixes` prefixes ending just before the first token of a
/// class-c span, in batch order.
std::vector<TargetedPrefix> select_pii_prefixes(const GenerationBatch& batch, PiiClass cls, int max_prefixes,
                                                const Gazetteer& gazetteer = Gazetteer::builtin());

/// Mean target probability read through the final norm and unembedding at
/// every layer 0..L, plus the model's own output probability.
struct LensProfile {
  std::vector<double> probability;
  double output_probability = 0.0;
  double max_final_deviation = 0.0;  // max over prefixes of |lens(L) - output|
  int prefixes = 0;
};

LensProfile logit_lens(const Transformer<float>& model, std::span<const TargetedPrefix> prefixes,
                       const InterventionSpec* intervention = nullptr);

std::string lens_csv(const LensProfile& base, const LensProfile& steered);

/// Direct logit attribution at the last prefix position with the final-norm
/// divisor frozen from the full residual. `components` holds the attention
/// and MLP outputs of the last `window` layers; everything else (embedding,
/// earlier layers, intervention deltas, the final-norm bias) is reported
/// separately so that the parts add up to the target logit.
struct AttributionReport {
  struct Component {
    std::string kind;  // "attention" or "mlp"
    int layer = 0;
    double mean_contribution = 0.0;
  };
  std::vector<Component> components;
  double embedding = 0.0;
  double earlier_layers = 0.0;
  double intervention = 0.0;
  double bias = 0.0;
  double mean_logit = 0.0;
  double max_relative_error = 0.0;  // worst per-prefix reconstruction error
  int window = 0;
  int prefixes = 0;
};

AttributionReport direct_logit_attribution(const Transformer<float>& model, std::span<const TargetedPrefix> prefixes,
                                           const InterventionSpec* intervention = nullptr, int window = 10);

std::string attribution_csv(const AttributionReport& base, const AttributionReport& steered);

double cosine_similarity(const VectorF& a, const VectorF& b);

struct SimilarityStats {
  std::vector<double> values;  // one per (generated, training) prefix pair
  double mean = 0.0;
  double median = 0.0;
  int items = 0;
  int skipped = 0;  // items without a training occurrence
};

/// Cosine similarity between the last-layer residual at the final position of
/// each generated prefix and each training prefix of the same item.
SimilarityStats contextual_similarity(const Transformer<float>& model,
                                      const std::map<std::string, std::vector<std::vector<TokenId>>>& generated,
                                      const std::map<std::string, std::vector<std::vector<TokenId>>>& training);

/// BOS-prefixed document text preceding each train-split occurrence of a class-c value.
std::map<std::string, std::vector<std::vector<TokenId>>> training_prefixes(const Corpus& corpus, PiiClass cls,
                                                                           int context_length);

}  // namespace piisteer

#endif  // PIISTEER_ANALYSIS_HPP_
