#ifndef PIISTEER_MODEL_HPP_
#define PIISTEER_MODEL_HPP_

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "piisteer/common.hpp"

namespace piisteer {

/// Shape of the decoder-only transformer. Layer indices used by interventions
/// run from 0 (embedding output) to num_layers (input of the final norm).
struct ModelConfig {
  int num_layers = 4;
  int model_dim = 128;
  int num_heads = 4;
  int vocab_size = 98;
  int context_length = 256;
  std::uint64_t seed = 0;

  int head_dim() const { return model_dim / num_heads; }
  int mlp_dim() const { return 4 * model_dim; }
  int max_layer() const { return num_layers; }

  /// Throws ConfigError.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

template <typename Scalar>
struct BlockParameters {
  Matrix<Scalar> ln1_gain, ln1_bias;
  Matrix<Scalar> qkv_weight, qkv_bias;
  Matrix<Scalar> attn_out_weight, attn_out_bias;
  Matrix<Scalar> ln2_gain, ln2_bias;
  Matrix<Scalar> mlp_in_weight, mlp_in_bias;
  Matrix<Scalar> mlp_out_weight, mlp_out_bias;
};

/// All trainable tensors. Gains and biases are 1 x n matrices so that every
/// tensor can be visited through one type.
template <typename Scalar>
struct Parameters {
  Matrix<Scalar> token_embedding;     // vocab x dim
  Matrix<Scalar> position_embedding;  // context x dim
  std::vector<BlockParameters<Scalar>> blocks;
  Matrix<Scalar> final_gain, final_bias;
  Matrix<Scalar> unembedding;  // dim x vocab

  static Parameters zeros(const ModelConfig& config);
  static Parameters initialize(const ModelConfig& config);

  /// Visits (name, tensor) in the fixed serialization order.
  template <typename Fn>
  void for_each(Fn&& fn) {
    visit(*this, fn);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    visit(*this, fn);
  }

  template <typename To>
  Parameters<To> cast() const;

  std::size_t count() const;

 private:
  template <typename Self, typename Fn>
  static void visit(Self& self, Fn& fn) {
    fn("token_embedding", self.token_embedding);
    fn("position_embedding", self.position_embedding);
    for (std::size_t i = 0; i < self.blocks.size(); ++i) {
      auto& b = self.blocks[i];
      const std::string p = "blocks." + std::to_string(i) + ".";
      fn(p + "ln1_gain", b.ln1_gain);
      fn(p + "ln1_bias", b.ln1_bias);
      fn(p + "qkv_weight", b.qkv_weight);
      fn(p + "qkv_bias", b.qkv_bias);
      fn(p + "attn_out_weight", b.attn_out_weight);
      fn(p + "attn_out_bias", b.attn_out_bias);
      fn(p + "ln2_gain", b.ln2_gain);
      fn(p + "ln2_bias", b.ln2_bias);
      fn(p + "mlp_in_weight", b.mlp_in_weight);
      fn(p + "mlp_in_bias", b.mlp_in_bias);
      fn(p + "mlp_out_weight", b.mlp_out_weight);
      fn(p + "mlp_out_bias", b.mlp_out_bias);
    }
    fn("final_gain", self.final_gain);
    fn("final_bias", self.final_bias);
    fn("unembedding", self.unembedding);
  }
};

/// Additive residual-stream edit: for each (layer, position) pair the vector
/// sign * scale * directions[layer] is added to the stream before the
/// consumer at that layer reads it. Positions are 0-based token indices.
template <typename Scalar>
struct Intervention {
  std::map<int, Vector<Scalar>> directions;
  std::vector<int> positions{0};
  int sign = 1;
  double scale = 1.0;

  Scalar factor() const { return static_cast<Scalar>(sign * scale); }
  bool touches(int layer) const { return directions.count(layer) > 0; }

  /// Throws InterventionError on bad layers, positions, widths or sign.
  void validate(const ModelConfig& config) const;

  template <typename To>
  Intervention<To> cast() const {
    Intervention<To> out;
    for (const auto& [layer, v] : directions) out.directions[layer] = v.template cast<To>();
    out.positions = positions;
    out.sign = sign;
    out.scale = scale;
    return out;
  }
};

using InterventionSpec = Intervention<float>;

/// Residual-stream bookkeeping of one forward pass over a single sequence.
/// residuals[l] is the stream entering layer l before any intervention;
/// added[l] holds the intervention delta (empty when nothing was added), so
/// residuals[l + 1] = residuals[l] + added[l] + attention[l] + mlp[l].
template <typename Scalar>
struct ActivationTrace {
  std::vector<Matrix<Scalar>> residuals;
  std::vector<Matrix<Scalar>> added;
  std::vector<Matrix<Scalar>> attention_outputs;
  std::vector<Matrix<Scalar>> mlp_outputs;
  Matrix<Scalar> final_logits;

  /// The stream actually consumed at `layer` (residual plus delta).
  Matrix<Scalar> stream(int layer) const;
  int num_positions() const { return static_cast<int>(final_logits.rows()); }
};

/// Saved activations of a batched forward pass, consumed by backward().
template <typename Scalar>
struct ForwardCache {
  struct Layer {
    Matrix<Scalar> ln1_hat, ln1_out, qkv, context, ln2_hat, ln2_out, mlp_pre, mlp_act;
    Vector<Scalar> ln1_rstd, ln2_rstd;
    std::vector<Matrix<Scalar>> probs;  // batch * heads, each seq x seq
  };
  int batch = 0;
  int seq_len = 0;
  std::vector<TokenId> tokens;
  std::vector<Layer> layers;
  Matrix<Scalar> final_hat, final_out;
  Vector<Scalar> final_rstd;
};

/// Decoder-only pre-norm transformer. All methods are const: a model may be
/// shared by concurrent readers.
template <typename Scalar>
class Transformer {
 public:
  Transformer(ModelConfig config, Parameters<Scalar> params);

  const ModelConfig& config() const { return config_; }
  const Parameters<Scalar>& parameters() const { return params_; }

  /// Logits (seq x vocab) for one sequence. Optionally fills a trace.
  Matrix<Scalar> forward(std::span<const TokenId> tokens, const Intervention<Scalar>* intervention = nullptr,
                         ActivationTrace<Scalar>* trace = nullptr) const;

  /// Batched forward over `batch` sequences of equal length laid out
  /// contiguously in `tokens`. Logits are (batch * seq) x vocab. The same
  /// intervention applies to every sequence.
  Matrix<Scalar> forward_batch(std::span<const TokenId> tokens, int batch,
                               const Intervention<Scalar>* intervention, ForwardCache<Scalar>* cache,
                               ActivationTrace<Scalar>* trace = nullptr) const;

  /// Backpropagates d(loss)/d(logits). Parameter gradients are accumulated
  /// into `grads` when non-null; residual_grads[l] receives d(loss)/d(stream
  /// at layer l) for l in [0, num_layers] when non-null.
  void backward(const ForwardCache<Scalar>& cache, const Matrix<Scalar>& dlogits, Parameters<Scalar>* grads,
                std::vector<Matrix<Scalar>>* residual_grads) const;

  /// Final norm followed by the unembedding, applied row-wise.
  Matrix<Scalar> unembed(const Matrix<Scalar>& stream) const;

 private:
  ModelConfig config_;
  Parameters<Scalar> params_;
};

/// Row-wise log-softmax.
template <typename Scalar>
Matrix<Scalar> log_softmax(const Matrix<Scalar>& logits);

/// Layer norm statistics helper shared by analysis code: returns the
/// normalized rows (x - mean) / sqrt(var + eps) and the reciprocal std.
template <typename Scalar>
Matrix<Scalar> normalize_rows(const Matrix<Scalar>& x, Vector<Scalar>* rstd);

inline constexpr double kLayerNormEps = 1e-5;

extern template struct Parameters<float>;
extern template struct Parameters<double>;
extern template class Transformer<float>;
extern template class Transformer<double>;

}  // namespace piisteer

#endif  // PIISTEER_MODEL_HPP_
