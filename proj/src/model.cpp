#include "piisteer/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Dense>

#include "piisteer/rng.hpp"

namespace piisteer {

void ModelConfig::validate() const {
  if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
  if (model_dim < 1 || num_heads < 1) throw ConfigError("model_dim and num_heads must be positive");
  if (model_dim % num_heads != 0) throw ConfigError("model_dim must be divisible by num_heads");
  if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
  if (context_length < 2) throw ConfigError("context_length must be >= 2");
}

template <typename Scalar>
void Intervention<Scalar>::validate(const ModelConfig& config) const {
  if (sign != 1 && sign != -1) throw InterventionError("sign must be +1 or -1");
  if (positions.empty()) throw InterventionError("intervention needs at least one position");
  for (int p : positions) {
    if (p < 0 || p >= config.context_length) {
      throw InterventionError("intervention position out of range: " + std::to_string(p));
    }
  }
  for (const auto& [layer, v] : directions) {
    if (layer < 0 || layer > config.max_layer()) {
      throw InterventionError("intervention layer out of range: " + std::to_string(layer));
    }
    if (v.size() != config.model_dim) {
      throw InterventionError("direction width " + std::to_string(v.size()) + " does not match model_dim " +
                              std::to_string(config.model_dim));
    }
  }
}

template <typename Scalar>
Matrix<Scalar> ActivationTrace<Scalar>::stream(int layer) const {
  const auto l = static_cast<std::size_t>(layer);
  if (added.size() > l && added[l].size() > 0) return residuals[l] + added[l];
  return residuals[l];
}

template <typename Scalar>
Parameters<Scalar> Parameters<Scalar>::zeros(const ModelConfig& c) {
  using M = Matrix<Scalar>;
  const int d = c.model_dim;
  const int f = c.mlp_dim();
  Parameters p;
  p.token_embedding = M::Zero(c.vocab_size, d);
  p.position_embedding = M::Zero(c.context_length, d);
  p.blocks.resize(static_cast<std::size_t>(c.num_layers));
  for (auto& b : p.blocks) {
    b.ln1_gain = M::Zero(1, d);
    b.ln1_bias = M::Zero(1, d);
    b.qkv_weight = M::Zero(d, 3 * d);
    b.qkv_bias = M::Zero(1, 3 * d);
    b.attn_out_weight = M::Zero(d, d);
    b.attn_out_bias = M::Zero(1, d);
    b.ln2_gain = M::Zero(1, d);
    b.ln2_bias = M::Zero(1, d);
    b.mlp_in_weight = M::Zero(d, f);
    b.mlp_in_bias = M::Zero(1, f);
    b.mlp_out_weight = M::Zero(f, d);
    b.mlp_out_bias = M::Zero(1, d);
  }
  p.final_gain = M::Zero(1, d);
  p.final_bias = M::Zero(1, d);
  p.unembedding = M::Zero(d, c.vocab_size);
  return p;
}

template <typename Scalar>
Parameters<Scalar> Parameters<Scalar>::initialize(const ModelConfig& c) {
  c.validate();
  Parameters p = zeros(c);
  Rng rng(derive_seed(c.seed, "model-init"));
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](Matrix<Scalar>& m, double stddev) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(stddev * normal(rng));
  };
  const double base = 0.02;
  const double residual_scale = base / std::sqrt(2.0 * c.num_layers);
  fill(p.token_embedding, base);
  fill(p.position_embedding, base);
  for (auto& b : p.blocks) {
    b.ln1_gain.setOnes();
    b.ln2_gain.setOnes();
    fill(b.qkv_weight, base);
    fill(b.attn_out_weight, residual_scale);
    fill(b.mlp_in_weight, base);
    fill(b.mlp_out_weight, residual_scale);
  }
  p.final_gain.setOnes();
  fill(p.unembedding, base);
  return p;
}

template <typename Scalar>
template <typename To>
Parameters<To> Parameters<Scalar>::cast() const {
  Parameters<To> out;
  out.token_embedding = token_embedding.template cast<To>();
  out.position_embedding = position_embedding.template cast<To>();
  out.blocks.resize(blocks.size());
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& s = blocks[i];
    auto& d = out.blocks[i];
    d.ln1_gain = s.ln1_gain.template cast<To>();
    d.ln1_bias = s.ln1_bias.template cast<To>();
    d.qkv_weight = s.qkv_weight.template cast<To>();
    d.qkv_bias = s.qkv_bias.template cast<To>();
    d.attn_out_weight = s.attn_out_weight.template cast<To>();
    d.attn_out_bias = s.attn_out_bias.template cast<To>();
    d.ln2_gain = s.ln2_gain.template cast<To>();
    d.ln2_bias = s.ln2_bias.template cast<To>();
    d.mlp_in_weight = s.mlp_in_weight.template cast<To>();
    d.mlp_in_bias = s.mlp_in_bias.template cast<To>();
    d.mlp_out_weight = s.mlp_out_weight.template cast<To>();
    d.mlp_out_bias = s.mlp_out_bias.template cast<To>();
  }
  out.final_gain = final_gain.template cast<To>();
  out.final_bias = final_bias.template cast<To>();
  out.unembedding = unembedding.template cast<To>();
  return out;
}

template <typename Scalar>
std::size_t Parameters<Scalar>::count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Matrix<Scalar>& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

template <typename Scalar>
Matrix<Scalar> normalize_rows(const Matrix<Scalar>& x, Vector<Scalar>* rstd) {
  const Scalar eps = static_cast<Scalar>(kLayerNormEps);
  Vector<Scalar> mean = x.rowwise().mean();
  Matrix<Scalar> centered = x.colwise() - mean;
  Vector<Scalar> var = centered.array().square().rowwise().mean();
  Vector<Scalar> r = (var.array() + eps).rsqrt();
  Matrix<Scalar> out = r.asDiagonal() * centered;
  if (rstd != nullptr) *rstd = std::move(r);
  return out;
}

template <typename Scalar>
Matrix<Scalar> log_softmax(const Matrix<Scalar>& logits) {
  Vector<Scalar> max = logits.rowwise().maxCoeff();
  Matrix<Scalar> shifted = logits.colwise() - max;
  Vector<Scalar> lse = shifted.array().exp().rowwise().sum().log();
  return shifted.colwise() - lse;
}

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

template <typename Scalar>
Matrix<Scalar> affine_rows(const Matrix<Scalar>& hat, const Matrix<Scalar>& gain, const Matrix<Scalar>& bias) {
  Matrix<Scalar> out = hat.array().rowwise() * gain.row(0).array();
  out.rowwise() += bias.row(0);
  return out;
}

template <typename Scalar>
Matrix<Scalar> gelu(const Matrix<Scalar>& x) {
  const Scalar c = static_cast<Scalar>(kGeluC);
  const Scalar a = static_cast<Scalar>(kGeluA);
  return (Scalar(0.5) * x.array() * (Scalar(1) + (c * (x.array() + a * x.array().cube())).tanh())).matrix();
}

template <typename Scalar>
Matrix<Scalar> gelu_grad(const Matrix<Scalar>& x) {
  const Scalar c = static_cast<Scalar>(kGeluC);
  const Scalar a = static_cast<Scalar>(kGeluA);
  auto u = c * (x.array() + a * x.array().cube());
  Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> t = u.tanh();
  return (Scalar(0.5) * (Scalar(1) + t) +
          Scalar(0.5) * x.array() * (Scalar(1) - t.square()) * c * (Scalar(1) + Scalar(3) * a * x.array().square()))
      .matrix();
}

// Causal softmax of one (seq x seq) score block in place.
template <typename Scalar>
void causal_softmax(Matrix<Scalar>& s) {
  const Eigen::Index n = s.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    auto row = s.row(i);
    Scalar m = row.head(i + 1).maxCoeff();
    row.head(i + 1) = (row.head(i + 1).array() - m).exp();
    row.head(i + 1) /= row.head(i + 1).sum();
    row.tail(n - i - 1).setZero();
  }
}

// d(loss)/dx through y = gain * xhat + bias with xhat = (x - mean) * rstd.
template <typename Scalar>
Matrix<Scalar> layer_norm_backward(const Matrix<Scalar>& dy, const Matrix<Scalar>& hat, const Vector<Scalar>& rstd,
                                   const Matrix<Scalar>& gain, Matrix<Scalar>* dgain, Matrix<Scalar>* dbias) {
  if (dgain != nullptr) {
    *dgain += (dy.array() * hat.array()).colwise().sum().matrix();
    *dbias += dy.colwise().sum();
  }
  Matrix<Scalar> dhat = dy.array().rowwise() * gain.row(0).array();
  Vector<Scalar> mean_dhat = dhat.rowwise().mean();
  Vector<Scalar> mean_dhat_hat = (dhat.array() * hat.array()).rowwise().mean();
  Matrix<Scalar> centered = dhat.colwise() - mean_dhat;
  centered -= (hat.array().colwise() * mean_dhat_hat.array()).matrix();
  return rstd.asDiagonal() * centered;
}

// Adds the layer's delta to x (unless `apply` is false, when the caller has
// already folded it in) and records it in `delta`.
template <typename Scalar>
void add_intervention(Matrix<Scalar>& x, int batch, int seq_len, int layer, const Intervention<Scalar>* iv,
                      Matrix<Scalar>* delta, bool apply = true) {
  if (iv == nullptr || !iv->touches(layer)) return;
  const auto scaled = (iv->factor() * iv->directions.at(layer)).transpose().eval();
  if (delta != nullptr) *delta = Matrix<Scalar>::Zero(x.rows(), x.cols());
  for (int t : iv->positions) {
    if (t >= seq_len) continue;
    for (int b = 0; b < batch; ++b) {
      if (apply) x.row(b * seq_len + t) += scaled;
      if (delta != nullptr) delta->row(b * seq_len + t) += scaled;
    }
  }
}

}  // namespace

template <typename Scalar>
Transformer<Scalar>::Transformer(ModelConfig config, Parameters<Scalar> params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  if (params_.blocks.size() != static_cast<std::size_t>(config_.num_layers) ||
      params_.token_embedding.rows() != config_.vocab_size || params_.token_embedding.cols() != config_.model_dim ||
      params_.position_embedding.rows() != config_.context_length) {
    throw CompatibilityError("parameters do not match model config");
  }
}

template <typename Scalar>
Matrix<Scalar> Transformer<Scalar>::forward(std::span<const TokenId> tokens, const Intervention<Scalar>* intervention,
                                            ActivationTrace<Scalar>* trace) const {
  return forward_batch(tokens, 1, intervention, nullptr, trace);
}

template <typename Scalar>
Matrix<Scalar> Transformer<Scalar>::unembed(const Matrix<Scalar>& stream) const {
  Matrix<Scalar> hat = normalize_rows<Scalar>(stream, nullptr);
  return affine_rows<Scalar>(hat, params_.final_gain, params_.final_bias) * params_.unembedding;
}

template <typename Scalar>
Matrix<Scalar> Transformer<Scalar>::forward_batch(std::span<const TokenId> tokens, int batch,
                                                  const Intervention<Scalar>* intervention,
                                                  ForwardCache<Scalar>* cache, ActivationTrace<Scalar>* trace) const {
  using M = Matrix<Scalar>;
  if (batch < 1 || tokens.empty() || tokens.size() % static_cast<std::size_t>(batch) != 0) {
    throw InputError("forward needs a nonempty batch of equal-length sequences");
  }
  const int seq_len = static_cast<int>(tokens.size()) / batch;
  if (seq_len > config_.context_length) {
    throw InputError("sequence length " + std::to_string(seq_len) + " exceeds context length " +
                     std::to_string(config_.context_length));
  }
  if (trace != nullptr && batch != 1) throw InputError("activation traces are recorded for single sequences");
  if (intervention != nullptr) intervention->validate(config_);

  const int d = config_.model_dim;
  const int heads = config_.num_heads;
  const int dh = config_.head_dim();
  const int n = batch * seq_len;
  const int num_layers = config_.num_layers;
  const Scalar att_scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dh)));

  // A layer-0 delta is added to the token row before the position row, the
  // same rounding order as an edited embedding matrix.
  const bool fold0 = intervention != nullptr && intervention->touches(0);
  std::vector<char> folded(static_cast<std::size_t>(seq_len), 0);
  if (fold0) {
    for (int t : intervention->positions) {
      if (t < seq_len) folded[static_cast<std::size_t>(t)] = 1;
    }
  }
  M x(n, d);
  M plain0;
  if (fold0 && trace != nullptr) plain0.resize(n, d);
  for (int b = 0; b < batch; ++b) {
    for (int t = 0; t < seq_len; ++t) {
      const TokenId tok = tokens[static_cast<std::size_t>(b * seq_len + t)];
      if (tok < 0 || tok >= config_.vocab_size) throw InputError("token id out of range: " + std::to_string(tok));
      const int r = b * seq_len + t;
      if (fold0 && folded[static_cast<std::size_t>(t)] != 0) {
        x.row(r) = (params_.token_embedding.row(tok) + intervention->factor() * intervention->directions.at(0).transpose()) +
                   params_.position_embedding.row(t);
      } else {
        x.row(r) = params_.token_embedding.row(tok) + params_.position_embedding.row(t);
      }
      if (plain0.size() > 0) plain0.row(r) = params_.token_embedding.row(tok) + params_.position_embedding.row(t);
    }
  }

  if (trace != nullptr) {
    trace->residuals.assign(static_cast<std::size_t>(num_layers + 1), M());
    trace->added.assign(static_cast<std::size_t>(num_layers + 1), M());
    trace->attention_outputs.assign(static_cast<std::size_t>(num_layers), M());
    trace->mlp_outputs.assign(static_cast<std::size_t>(num_layers), M());
  }
  if (cache != nullptr) {
    cache->batch = batch;
    cache->seq_len = seq_len;
    cache->tokens.assign(tokens.begin(), tokens.end());
    cache->layers.resize(static_cast<std::size_t>(num_layers));
  }

  for (int l = 0; l < num_layers; ++l) {
    const auto& p = params_.blocks[static_cast<std::size_t>(l)];
    const auto li = static_cast<std::size_t>(l);
    if (trace != nullptr) trace->residuals[li] = (l == 0 && fold0) ? plain0 : x;
    add_intervention<Scalar>(x, batch, seq_len, l, intervention, trace != nullptr ? &trace->added[li] : nullptr,
                             !(l == 0 && fold0));

    Vector<Scalar> rstd1;
    M hat1 = normalize_rows<Scalar>(x, &rstd1);
    M ln1 = affine_rows<Scalar>(hat1, p.ln1_gain, p.ln1_bias);
    M qkv = ln1 * p.qkv_weight;
    qkv.rowwise() += p.qkv_bias.row(0);

    M context(n, d);
    std::vector<M> probs;
    if (cache != nullptr) probs.reserve(static_cast<std::size_t>(batch * heads));
    for (int b = 0; b < batch; ++b) {
      const int r0 = b * seq_len;
      for (int h = 0; h < heads; ++h) {
        auto q = qkv.block(r0, h * dh, seq_len, dh);
        auto k = qkv.block(r0, d + h * dh, seq_len, dh);
        auto v = qkv.block(r0, 2 * d + h * dh, seq_len, dh);
        M s = (q * k.transpose()) * att_scale;
        causal_softmax<Scalar>(s);
        context.block(r0, h * dh, seq_len, dh).noalias() = s * v;
        if (cache != nullptr) probs.push_back(std::move(s));
      }
    }
    M attn = context * p.attn_out_weight;
    attn.rowwise() += p.attn_out_bias.row(0);
    M mid = x + attn;

    Vector<Scalar> rstd2;
    M hat2 = normalize_rows<Scalar>(mid, &rstd2);
    M ln2 = affine_rows<Scalar>(hat2, p.ln2_gain, p.ln2_bias);
    M pre = ln2 * p.mlp_in_weight;
    pre.rowwise() += p.mlp_in_bias.row(0);
    M act = gelu<Scalar>(pre);
    M mlp = act * p.mlp_out_weight;
    mlp.rowwise() += p.mlp_out_bias.row(0);
    x = mid + mlp;

    if (trace != nullptr) {
      trace->attention_outputs[li] = attn;
      trace->mlp_outputs[li] = mlp;
    }
    if (cache != nullptr) {
      auto& c = cache->layers[li];
      c.ln1_hat = std::move(hat1);
      c.ln1_rstd = std::move(rstd1);
      c.ln1_out = std::move(ln1);
      c.qkv = std::move(qkv);
      c.probs = std::move(probs);
      c.context = std::move(context);
      c.ln2_hat = std::move(hat2);
      c.ln2_rstd = std::move(rstd2);
      c.ln2_out = std::move(ln2);
      c.mlp_pre = std::move(pre);
      c.mlp_act = std::move(act);
    }
  }

  const auto last = static_cast<std::size_t>(num_layers);
  if (trace != nullptr) trace->residuals[last] = x;
  add_intervention<Scalar>(x, batch, seq_len, num_layers, intervention,
                           trace != nullptr ? &trace->added[last] : nullptr);
  Vector<Scalar> rstd_f;
  M hat_f = normalize_rows<Scalar>(x, &rstd_f);
  M out_f = affine_rows<Scalar>(hat_f, params_.final_gain, params_.final_bias);
  M logits = out_f * params_.unembedding;
  if (trace != nullptr) trace->final_logits = logits;
  if (cache != nullptr) {
    cache->final_hat = std::move(hat_f);
    cache->final_rstd = std::move(rstd_f);
    cache->final_out = std::move(out_f);
  }
  return logits;
}

template <typename Scalar>
void Transformer<Scalar>::backward(const ForwardCache<Scalar>& cache, const Matrix<Scalar>& dlogits,
                                   Parameters<Scalar>* grads, std::vector<Matrix<Scalar>>* residual_grads) const {
  using M = Matrix<Scalar>;
  const int batch = cache.batch;
  const int seq_len = cache.seq_len;
  const int n = batch * seq_len;
  const int d = config_.model_dim;
  const int heads = config_.num_heads;
  const int dh = config_.head_dim();
  const int num_layers = config_.num_layers;
  const Scalar att_scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dh)));
  if (dlogits.rows() != n || dlogits.cols() != config_.vocab_size) throw InputError("dlogits shape mismatch");
  if (residual_grads != nullptr) residual_grads->assign(static_cast<std::size_t>(num_layers + 1), M());

  if (grads != nullptr) grads->unembedding.noalias() += cache.final_out.transpose() * dlogits;
  M dout = dlogits * params_.unembedding.transpose();
  M dx = layer_norm_backward<Scalar>(dout, cache.final_hat, cache.final_rstd, params_.final_gain,
                                     grads != nullptr ? &grads->final_gain : nullptr,
                                     grads != nullptr ? &grads->final_bias : nullptr);
  if (residual_grads != nullptr) (*residual_grads)[static_cast<std::size_t>(num_layers)] = dx;

  for (int l = num_layers - 1; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    const auto& p = params_.blocks[li];
    const auto& c = cache.layers[li];
    BlockParameters<Scalar>* g = grads != nullptr ? &grads->blocks[li] : nullptr;

    // MLP branch: x_out = mid + W2 gelu(W1 ln2(mid)).
    if (g != nullptr) {
      g->mlp_out_weight.noalias() += c.mlp_act.transpose() * dx;
      g->mlp_out_bias += dx.colwise().sum();
    }
    M dact = dx * p.mlp_out_weight.transpose();
    M dpre = (dact.array() * gelu_grad<Scalar>(c.mlp_pre).array()).matrix();
    if (g != nullptr) {
      g->mlp_in_weight.noalias() += c.ln2_out.transpose() * dpre;
      g->mlp_in_bias += dpre.colwise().sum();
    }
    M dln2 = dpre * p.mlp_in_weight.transpose();
    M dmid = dx + layer_norm_backward<Scalar>(dln2, c.ln2_hat, c.ln2_rstd, p.ln2_gain,
                                              g != nullptr ? &g->ln2_gain : nullptr,
                                              g != nullptr ? &g->ln2_bias : nullptr);

    // Attention branch: mid = x + Wo context.
    if (g != nullptr) {
      g->attn_out_weight.noalias() += c.context.transpose() * dmid;
      g->attn_out_bias += dmid.colwise().sum();
    }
    M dcontext = dmid * p.attn_out_weight.transpose();
    M dqkv(n, 3 * d);
    for (int b = 0; b < batch; ++b) {
      const int r0 = b * seq_len;
      for (int h = 0; h < heads; ++h) {
        const M& prob = c.probs[static_cast<std::size_t>(b * heads + h)];
        auto q = c.qkv.block(r0, h * dh, seq_len, dh);
        auto k = c.qkv.block(r0, d + h * dh, seq_len, dh);
        auto v = c.qkv.block(r0, 2 * d + h * dh, seq_len, dh);
        auto dout_h = dcontext.block(r0, h * dh, seq_len, dh);
        M dprob = dout_h * v.transpose();
        dqkv.block(r0, 2 * d + h * dh, seq_len, dh).noalias() = prob.transpose() * dout_h;
        Vector<Scalar> rowdot = (prob.array() * dprob.array()).rowwise().sum();
        M ds = (prob.array() * (dprob.colwise() - rowdot).array()).matrix() * att_scale;
        dqkv.block(r0, h * dh, seq_len, dh).noalias() = ds * k;
        dqkv.block(r0, d + h * dh, seq_len, dh).noalias() = ds.transpose() * q;
      }
    }
    if (g != nullptr) {
      g->qkv_weight.noalias() += c.ln1_out.transpose() * dqkv;
      g->qkv_bias += dqkv.colwise().sum();
    }
    M dln1 = dqkv * p.qkv_weight.transpose();
    dx = dmid + layer_norm_backward<Scalar>(dln1, c.ln1_hat, c.ln1_rstd, p.ln1_gain,
                                            g != nullptr ? &g->ln1_gain : nullptr,
                                            g != nullptr ? &g->ln1_bias : nullptr);
    if (residual_grads != nullptr) (*residual_grads)[li] = dx;
  }

  if (grads != nullptr) {
    for (int b = 0; b < batch; ++b) {
      for (int t = 0; t < seq_len; ++t) {
        const int r = b * seq_len + t;
        grads->token_embedding.row(cache.tokens[static_cast<std::size_t>(r)]) += dx.row(r);
        grads->position_embedding.row(t) += dx.row(r);
      }
    }
  }
}

template struct Intervention<float>;
template struct Intervention<double>;
template struct ActivationTrace<float>;
template struct ActivationTrace<double>;
template struct Parameters<float>;
template struct Parameters<double>;
template Parameters<double> Parameters<float>::cast<double>() const;
template Parameters<float> Parameters<double>::cast<float>() const;
template Parameters<float> Parameters<float>::cast<float>() const;
template Parameters<double> Parameters<double>::cast<double>() const;
template class Transformer<float>;
template class Transformer<double>;
template Matrix<float> log_softmax<float>(const Matrix<float>&);
template Matrix<double> log_softmax<double>(const Matrix<double>&);
template Matrix<float> normalize_rows<float>(const Matrix<float>&, Vector<float>*);
template Matrix<double> normalize_rows<double>(const Matrix<double>&, Vector<double>*);

}  // namespace piisteer
