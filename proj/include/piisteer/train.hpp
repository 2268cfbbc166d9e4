#ifndef PIISTEER_TRAIN_HPP_
#define PIISTEER_TRAIN_HPP_

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "piisteer/checkpoint.hpp"
#include "piisteer/corpus.hpp"

namespace piisteer {

/// From-scratch language-model training. AdamW with linear warmup and a
/// cosine decay to 10% of the peak rate, global-norm gradient clipping.
struct TrainingConfig {
  int steps = 1500;
  int batch_size = 16;
  int seq_len = 0;  // 0: the model's context length
  double learning_rate = 2e-3;
  int warmup_steps = 100;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double grad_clip = 1.0;
  /// Fraction of windows that start on a document's BOS token; the rest
  /// start at a uniformly random offset.
  double aligned_fraction = 0.75;
  std::uint64_t seed = 0;
};

Json training_config_to_json(const TrainingConfig& c);
TrainingConfig training_config_from_json(const Json& j);

struct TrainingError : Error {
  TrainingError(const std::string& what, Json diag) : Error(what), diagnostics(std::move(diag)) {}
  Json diagnostics;
};

struct TrainingResult {
  Checkpoint checkpoint;
  std::vector<double> losses;  // mean per-token loss of each step
};

/// Concatenation of BOS + text + EOS over the documents of one split.
std::vector<TokenId> document_stream(const Corpus& corpus, Split split, std::vector<std::size_t>* doc_starts = nullptr);

/// Throws DataError on an empty train split, TrainingError on divergence.
TrainingResult train(const Corpus& corpus, const ModelConfig& config, const TrainingConfig& hyper,
                     const std::function<void(int, double)>& on_step = {});

/// Mean per-token negative log-likelihood of BOS + text + EOS over `texts`.
double mean_token_nll(const Transformer<float>& model, std::span<const std::string> texts,
                      const InterventionSpec* intervention = nullptr);
inline double perplexity(const Transformer<float>& model, std::span<const std::string> texts,
                         const InterventionSpec* intervention = nullptr) {
  return std::exp(mean_token_nll(model, texts, intervention));
}

}  // namespace piisteer

#endif  // PIISTEER_TRAIN_HPP_
