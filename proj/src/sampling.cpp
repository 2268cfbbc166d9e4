#include "piisteer/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

#include "piisteer/tokenizer.hpp"

namespace piisteer {

namespace {

constexpr int kDecodeBatch = 256;

MatrixF layer_norm(const MatrixF& x, const MatrixF& gain, const MatrixF& bias) {
  MatrixF out = normalize_rows<float>(x, nullptr).array().rowwise() * gain.row(0).array();
  out.rowwise() += bias.row(0);
  return out;
}

void gelu_inplace(MatrixF& x) {
  constexpr float c = 0.7978845608028654f;
  constexpr float a = 0.044715f;
  x = (0.5f * x.array() * (1.0f + (c * (x.array() + a * x.array().cube())).tanh())).matrix();
}

void validate_decoding(const DecodingConfig& d, int vocab) {
  if (d.top_k < 1 || d.top_k > vocab) {
    throw ConfigError("top_k must be in [1, vocab_size], got " + std::to_string(d.top_k));
  }
  if (d.max_new_tokens < 0) throw ConfigError("max_new_tokens must be >= 0");
}

std::vector<int> top_k_indices(std::span<const float> logits, int k) {
  std::vector<int> idx(logits.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
    return logits[static_cast<std::size_t>(a)] > logits[static_cast<std::size_t>(b)] ||
           (logits[static_cast<std::size_t>(a)] == logits[static_cast<std::size_t>(b)] && a < b);
  });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

}  // namespace

IncrementalDecoder::IncrementalDecoder(const Transformer<float>& model, int batch,
                                       const InterventionSpec* intervention)
    : model_(model), intervention_(intervention), batch_(batch) {
  const auto& c = model.config();
  if (batch < 1) throw InputError("decoder batch must be >= 1");
  if (intervention != nullptr) intervention->validate(c);
  keys_.assign(static_cast<std::size_t>(c.num_layers), MatrixF(batch * c.context_length, c.model_dim));
  values_.assign(static_cast<std::size_t>(c.num_layers), MatrixF(batch * c.context_length, c.model_dim));
}

const MatrixF& IncrementalDecoder::step(std::span<const TokenId> tokens) {
  const auto& c = model_.config();
  const auto& p = model_.parameters();
  if (static_cast<int>(tokens.size()) != batch_) throw InputError("decoder step needs one token per sequence");
  if (position_ >= c.context_length) throw InputError("decoder exceeded context length");
  const int t = position_;
  const int d = c.model_dim;
  const int dh = c.head_dim();
  const int ctx = c.context_length;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

  const bool intervene_here =
      intervention_ != nullptr &&
      std::find(intervention_->positions.begin(), intervention_->positions.end(), t) != intervention_->positions.end();
  auto maybe_add = [&](MatrixF& x, int layer) {
    if (!intervene_here || !intervention_->touches(layer)) return;
    x.rowwise() += (intervention_->factor() * intervention_->directions.at(layer)).transpose();
  };

  // Layer-0 deltas join the token row before the position row, matching the
  // full forward pass.
  const bool fold0 = intervene_here && intervention_->touches(0);
  MatrixF x(batch_, d);
  for (int b = 0; b < batch_; ++b) {
    const TokenId tok = tokens[static_cast<std::size_t>(b)];
    if (tok < 0 || tok >= c.vocab_size) throw InputError("token id out of range: " + std::to_string(tok));
    if (fold0) {
      x.row(b) = (p.token_embedding.row(tok) + intervention_->factor() * intervention_->directions.at(0).transpose()) +
                 p.position_embedding.row(t);
    } else {
      x.row(b) = p.token_embedding.row(tok) + p.position_embedding.row(t);
    }
  }

  Eigen::VectorXf scores(t + 1);
  for (int l = 0; l < c.num_layers; ++l) {
    const auto& w = p.blocks[static_cast<std::size_t>(l)];
    auto& kc = keys_[static_cast<std::size_t>(l)];
    auto& vc = values_[static_cast<std::size_t>(l)];
    if (l > 0 || !fold0) maybe_add(x, l);
    MatrixF qkv = layer_norm(x, w.ln1_gain, w.ln1_bias) * w.qkv_weight;
    qkv.rowwise() += w.qkv_bias.row(0);
    MatrixF context(batch_, d);
    for (int b = 0; b < batch_; ++b) {
      kc.row(b * ctx + t) = qkv.row(b).segment(d, d);
      vc.row(b * ctx + t) = qkv.row(b).segment(2 * d, d);
      for (int h = 0; h < c.num_heads; ++h) {
        auto keys = kc.block(b * ctx, h * dh, t + 1, dh);
        auto vals = vc.block(b * ctx, h * dh, t + 1, dh);
        scores.noalias() = keys * qkv.row(b).segment(h * dh, dh).transpose();
        scores *= scale;
        scores = (scores.array() - scores.maxCoeff()).exp();
        scores /= scores.sum();
        context.row(b).segment(h * dh, dh).noalias() = scores.transpose() * vals;
      }
    }
    MatrixF attn = context * w.attn_out_weight;
    attn.rowwise() += w.attn_out_bias.row(0);
    x += attn;
    MatrixF hidden = layer_norm(x, w.ln2_gain, w.ln2_bias) * w.mlp_in_weight;
    hidden.rowwise() += w.mlp_in_bias.row(0);
    gelu_inplace(hidden);
    MatrixF mlp = hidden * w.mlp_out_weight;
    mlp.rowwise() += w.mlp_out_bias.row(0);
    x += mlp;
  }
  maybe_add(x, c.num_layers);
  logits_ = layer_norm(x, p.final_gain, p.final_bias) * p.unembedding;
  ++position_;
  return logits_;
}

std::vector<double> top_k_distribution(std::span<const float> logits, int k) {
  if (k < 1 || k > static_cast<int>(logits.size())) throw ConfigError("top_k out of range");
  const auto idx = top_k_indices(logits, k);
  const double max = logits[static_cast<std::size_t>(idx.front())];
  std::vector<double> probs(logits.size(), 0.0);
  double total = 0.0;
  for (int i : idx) {
    const double e = std::exp(static_cast<double>(logits[static_cast<std::size_t>(i)]) - max);
    probs[static_cast<std::size_t>(i)] = e;
    total += e;
  }
  for (double& pr : probs) pr /= total;
  return probs;
}

TokenId sample_top_k(std::span<const float> logits, int k, Rng& rng) {
  if (k < 1 || k > static_cast<int>(logits.size())) throw ConfigError("top_k out of range");
  const auto idx = top_k_indices(logits, k);
  const double max = logits[static_cast<std::size_t>(idx.front())];
  std::vector<double> weights(idx.size());
  double total = 0.0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    weights[i] = std::exp(static_cast<double>(logits[static_cast<std::size_t>(idx[i])]) - max);
    total += weights[i];
  }
  double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng) * total;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    u -= weights[i];
    if (u < 0.0) return idx[i];
  }
  return idx.back();
}

Rng sequence_rng(std::uint64_t seed, std::uint64_t index) { return Rng(splitmix64(seed ^ splitmix64(index + 1))); }

std::vector<std::vector<TokenId>> sample_batch(const Transformer<float>& model, const BatchRequest& request,
                                               const DecodingConfig& decoding,
                                               const InterventionSpec* intervention) {
  const auto& c = model.config();
  validate_decoding(decoding, c.vocab_size);
  std::vector<std::vector<TokenId>> out;
  if (request.prompts.empty()) return out;
  const std::size_t prompt_len = request.prompts.front().size();
  if (prompt_len == 0) throw InputError("prompt must be nonempty");
  for (const auto& pr : request.prompts) {
    if (pr.size() != prompt_len) throw InputError("batched prompts must share one length");
  }
  const int total_len = std::min<int>(c.context_length, static_cast<int>(prompt_len) + decoding.max_new_tokens);
  if (static_cast<int>(prompt_len) > c.context_length) throw InputError("prompt longer than context");
  out.reserve(request.prompts.size());

  std::vector<float> row(static_cast<std::size_t>(c.vocab_size));
  for (std::size_t start = 0; start < request.prompts.size(); start += kDecodeBatch) {
    const int n = static_cast<int>(std::min<std::size_t>(kDecodeBatch, request.prompts.size() - start));
    std::vector<std::vector<TokenId>> seqs(request.prompts.begin() + static_cast<std::ptrdiff_t>(start),
                                           request.prompts.begin() + static_cast<std::ptrdiff_t>(start) + n);
    std::vector<Rng> rngs;
    rngs.reserve(static_cast<std::size_t>(n));
    for (int b = 0; b < n; ++b) rngs.push_back(sequence_rng(decoding.seed, request.first_index + start + b));
    std::vector<bool> done(static_cast<std::size_t>(n), false);
    int live = n;

    IncrementalDecoder decoder(model, n, intervention);
    std::vector<TokenId> feed(static_cast<std::size_t>(n));
    for (int pos = 0; pos + 1 < total_len && live > 0; ++pos) {
      for (int b = 0; b < n; ++b) {
        const auto& s = seqs[static_cast<std::size_t>(b)];
        feed[static_cast<std::size_t>(b)] = static_cast<std::size_t>(pos) < s.size() ? s[static_cast<std::size_t>(pos)]
                                                                                     : Tokenizer::kEos;
      }
      const MatrixF& logits = decoder.step(feed);
      if (static_cast<std::size_t>(pos) + 1 < prompt_len) continue;
      const bool first_sampled = static_cast<std::size_t>(pos) + 1 == prompt_len;
      for (int b = 0; b < n; ++b) {
        if (done[static_cast<std::size_t>(b)]) continue;
        for (int v = 0; v < c.vocab_size; ++v) row[static_cast<std::size_t>(v)] = logits(b, v);
        if (first_sampled && request.banned_first_token) {
          row[static_cast<std::size_t>(*request.banned_first_token)] = -std::numeric_limits<float>::infinity();
        }
        const TokenId next = sample_top_k(row, decoding.top_k, rngs[static_cast<std::size_t>(b)]);
        seqs[static_cast<std::size_t>(b)].push_back(next);
        if (decoding.stop_at_eos && next == Tokenizer::kEos) {
          done[static_cast<std::size_t>(b)] = true;
          --live;
        }
      }
    }
    for (auto& s : seqs) out.push_back(std::move(s));
  }
  return out;
}

std::vector<TokenId> sample(const Transformer<float>& model, std::span<const TokenId> prompt,
                            const DecodingConfig& decoding, const InterventionSpec* intervention) {
  BatchRequest req;
  req.prompts.emplace_back(prompt.begin(), prompt.end());
  return sample_batch(model, req, decoding, intervention).front();
}

}  // namespace piisteer
