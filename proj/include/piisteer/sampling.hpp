#ifndef PIISTEER_SAMPLING_HPP_
#define PIISTEER_SAMPLING_HPP_

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "piisteer/model.hpp"
#include "piisteer/rng.hpp"

namespace piisteer {

/// Top-k decoding at temperature 1.
struct DecodingConfig {
  int top_k = 40;
  int max_new_tokens = 128;
  std::uint64_t seed = 0;
  bool stop_at_eos = true;
};

/// KV-cached single-token stepping over a fixed batch. Position indices are
/// absolute, so an intervention at position p is applied exactly once, when
/// the token at p is fed, and its effect persists through the cache.
class IncrementalDecoder {
 public:
  IncrementalDecoder(const Transformer<float>& model, int batch, const InterventionSpec* intervention);

  /// Feeds one token per sequence at the next position; returns batch x vocab logits.
  const MatrixF& step(std::span<const TokenId> tokens);
  int position() const { return position_; }
  int batch() const { return batch_; }

 private:
  const Transformer<float>& model_;
  const InterventionSpec* intervention_;
  int batch_;
  int position_ = 0;
  std::vector<MatrixF> keys_, values_;
  MatrixF logits_;
};

/// Index of a draw from the renormalized top-k distribution of `logits`.
/// Ties in the cut are broken toward the lower token id.
TokenId sample_top_k(std::span<const float> logits, int k, Rng& rng);

/// The renormalized top-k distribution itself (zeros outside the top k).
std::vector<double> top_k_distribution(std::span<const float> logits, int k);

/// RNG for the `index`-th sequence of a seeded request; independent of how
/// requests are chunked into batches.
Rng sequence_rng(std::uint64_t seed, std::uint64_t index);

struct BatchRequest {
  std::vector<std::vector<TokenId>> prompts;  // all the same length
  std::uint64_t first_index = 0;              // global index of prompts[0]
  std::optional<TokenId> banned_first_token;  // masked at the first sampled step
};

/// Returns prompt + continuation per request entry. A continuation ends at
/// max_new_tokens or just after EOS.
std::vector<std::vector<TokenId>> sample_batch(const Transformer<float>& model, const BatchRequest& request,
                                               const DecodingConfig& decoding,
                                               const InterventionSpec* intervention = nullptr);

std::vector<TokenId> sample(const Transformer<float>& model, std::span<const TokenId> prompt,
                            const DecodingConfig& decoding, const InterventionSpec* intervention = nullptr);

}  // namespace piisteer

#endif  // PIISTEER_SAMPLING_HPP_
