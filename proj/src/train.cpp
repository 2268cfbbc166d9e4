#include "piisteer/train.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "piisteer/rng.hpp"

namespace piisteer {

Json training_config_to_json(const TrainingConfig& c) {
  return Json{{"steps", c.steps},
              {"batch_size", c.batch_size},
              {"seq_len", c.seq_len},
              {"learning_rate", c.learning_rate},
              {"warmup_steps", c.warmup_steps},
              {"weight_decay", c.weight_decay},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"grad_clip", c.grad_clip},
              {"aligned_fraction", c.aligned_fraction},
              {"seed", c.seed}};
}

TrainingConfig training_config_from_json(const Json& j) {
  TrainingConfig c;
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seq_len = j.value("seq_len", c.seq_len);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.aligned_fraction = j.value("aligned_fraction", c.aligned_fraction);
  c.seed = j.value("seed", c.seed);
  return c;
}

std::vector<TokenId> document_stream(const Corpus& corpus, Split split, std::vector<std::size_t>* doc_starts) {
  const Tokenizer tok;
  std::vector<TokenId> stream;
  for (int d : corpus.documents_in(split)) {
    if (doc_starts != nullptr) doc_starts->push_back(stream.size());
    stream.push_back(Tokenizer::kBos);
    const auto body = tok.encode(corpus.documents[static_cast<std::size_t>(d)]);
    stream.insert(stream.end(), body.begin(), body.end());
    stream.push_back(Tokenizer::kEos);
  }
  return stream;
}

namespace {

// Mean next-token cross entropy over all positions of a batch and its
// gradient with respect to the logits.
double cross_entropy(const MatrixF& logits, std::span<const TokenId> targets, MatrixF* dlogits) {
  MatrixF lp = log_softmax<float>(logits);
  const auto n = static_cast<double>(targets.size());
  double loss = 0.0;
  if (dlogits != nullptr) *dlogits = lp.array().exp().matrix();
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    loss -= lp(r, targets[i]);
    if (dlogits != nullptr) (*dlogits)(r, targets[i]) -= 1.0f;
  }
  if (dlogits != nullptr) *dlogits /= static_cast<float>(n);
  return loss / n;
}

}  // namespace

TrainingResult train(const Corpus& corpus, const ModelConfig& config, const TrainingConfig& hyper,
                     const std::function<void(int, double)>& on_step) {
  config.validate();
  if (config.vocab_size != Tokenizer().vocab_size()) throw ConfigError("vocab_size must match the tokenizer");
  std::vector<std::size_t> doc_starts;
  const auto stream = document_stream(corpus, Split::kTrain, &doc_starts);
  if (doc_starts.empty()) throw DataError("corpus has an empty train split");
  const int seq_len = hyper.seq_len > 0 ? hyper.seq_len : config.context_length;
  if (seq_len > config.context_length) throw ConfigError("seq_len exceeds context length");
  if (stream.size() < static_cast<std::size_t>(seq_len) + 1) throw DataError("train split shorter than one window");
  if (hyper.batch_size < 1 || hyper.steps < 0) throw ConfigError("invalid batch size or step count");

  Parameters<float> params = Parameters<float>::initialize(config);
  Parameters<float> m = Parameters<float>::zeros(config);
  Parameters<float> v = Parameters<float>::zeros(config);
  Rng rng(derive_seed(hyper.seed, "train-windows"));
  const std::size_t max_start = stream.size() - static_cast<std::size_t>(seq_len) - 1;
  std::vector<std::size_t> aligned;
  for (auto s : doc_starts) {
    if (s <= max_start) aligned.push_back(s);
  }

  TrainingResult result;
  std::vector<TokenId> inputs(static_cast<std::size_t>(hyper.batch_size * seq_len));
  std::vector<TokenId> targets(inputs.size());
  for (int step = 0; step < hyper.steps; ++step) {
    for (int b = 0; b < hyper.batch_size; ++b) {
      std::size_t start;
      if (!aligned.empty() && std::uniform_real_distribution<double>(0, 1)(rng) < hyper.aligned_fraction) {
        start = aligned[std::uniform_int_distribution<std::size_t>(0, aligned.size() - 1)(rng)];
      } else {
        start = std::uniform_int_distribution<std::size_t>(0, max_start)(rng);
      }
      for (int t = 0; t < seq_len; ++t) {
        const auto i = static_cast<std::size_t>(b * seq_len + t);
        inputs[i] = stream[start + static_cast<std::size_t>(t)];
        targets[i] = stream[start + static_cast<std::size_t>(t) + 1];
      }
    }
    Transformer<float> model(config, params);
    ForwardCache<float> cache;
    MatrixF logits = model.forward_batch(inputs, hyper.batch_size, nullptr, &cache);
    MatrixF dlogits;
    const double loss = cross_entropy(logits, targets, &dlogits);
    if (!std::isfinite(loss)) {
      Json diag{{"step", step}, {"loss", loss}};
      diag["recent_losses"] = std::vector<double>(
          result.losses.end() - std::min<std::ptrdiff_t>(20, static_cast<std::ptrdiff_t>(result.losses.size())),
          result.losses.end());
      throw TrainingError("training diverged at step " + std::to_string(step), diag);
    }
    result.losses.push_back(loss);

    auto grads = Parameters<float>::zeros(config);
    model.backward(cache, dlogits, &grads, nullptr);
    double norm2 = 0.0;
    grads.for_each([&](const std::string&, const MatrixF& g) { norm2 += g.cast<double>().squaredNorm(); });
    const double norm = std::sqrt(norm2);
    const float clip = norm > hyper.grad_clip ? static_cast<float>(hyper.grad_clip / norm) : 1.0f;

    double lr = hyper.learning_rate;
    if (step < hyper.warmup_steps) {
      lr *= static_cast<double>(step + 1) / hyper.warmup_steps;
    } else {
      const double progress = static_cast<double>(step - hyper.warmup_steps) /
                              std::max(1, hyper.steps - hyper.warmup_steps);
      lr *= 0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    }
    const double bc1 = 1.0 - std::pow(hyper.beta1, step + 1);
    const double bc2 = 1.0 - std::pow(hyper.beta2, step + 1);
    const float b1 = static_cast<float>(hyper.beta1);
    const float b2 = static_cast<float>(hyper.beta2);
    const float step_size = static_cast<float>(lr / bc1);
    const float decay = static_cast<float>(1.0 - lr * hyper.weight_decay);
    const float inv_bc2 = static_cast<float>(1.0 / bc2);

    // Walk the four parameter sets in lockstep through the fixed tensor order.
    std::vector<MatrixF*> pp, mm, vv, gg;
    params.for_each([&](const std::string&, MatrixF& t) { pp.push_back(&t); });
    m.for_each([&](const std::string&, MatrixF& t) { mm.push_back(&t); });
    v.for_each([&](const std::string&, MatrixF& t) { vv.push_back(&t); });
    grads.for_each([&](const std::string&, MatrixF& t) { gg.push_back(&t); });
    for (std::size_t i = 0; i < pp.size(); ++i) {
      auto g = (gg[i]->array() * clip).eval();
      mm[i]->array() = b1 * mm[i]->array() + (1.0f - b1) * g;
      vv[i]->array() = b2 * vv[i]->array() + (1.0f - b2) * g.square();
      pp[i]->array() *= decay;
      pp[i]->array() -= step_size * mm[i]->array() / ((vv[i]->array() * inv_bc2).sqrt() + 1e-8f);
    }
    if (on_step) on_step(step, loss);
  }

  result.checkpoint.config = config;
  result.checkpoint.params = std::move(params);
  result.checkpoint.provenance = Json{{"corpus_seed", corpus.config.seed},
                                      {"corpus_documents", corpus.documents.size()},
                                      {"training", training_config_to_json(hyper)},
                                      {"steps", hyper.steps},
                                      {"final_loss", result.losses.empty() ? 0.0 : result.losses.back()}};
  return result;
}

double mean_token_nll(const Transformer<float>& model, std::span<const std::string> texts,
                      const InterventionSpec* intervention) {
  const Tokenizer tok;
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& text : texts) {
    std::vector<TokenId> seq{Tokenizer::kBos};
    const auto body = tok.encode(text);
    seq.insert(seq.end(), body.begin(), body.end());
    seq.push_back(Tokenizer::kEos);
    if (static_cast<int>(seq.size()) > model.config().context_length) {
      seq.resize(static_cast<std::size_t>(model.config().context_length));
    }
    const std::span<const TokenId> inputs(seq.data(), seq.size() - 1);
    MatrixF lp = log_softmax<float>(model.forward(inputs, intervention));
    for (std::size_t i = 1; i < seq.size(); ++i) total -= lp(static_cast<Eigen::Index>(i - 1), seq[i]);
    count += seq.size() - 1;
  }
  if (count == 0) throw DataError("no tokens to score");
  return total / static_cast<double>(count);
}

}  // namespace piisteer
