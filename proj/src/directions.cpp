#include "piisteer/directions.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "piisteer/rng.hpp"

namespace piisteer {

namespace {
constexpr std::string_view kMagic = "PIISTEER-DIRS\n";
constexpr std::uint32_t kVersion = 1;
}  // namespace

std::string_view to_string(LossVariant v) {
  switch (v) {
    case LossVariant::kPiiOnly:
      return "pii_only";
    case LossVariant::kAllTokens:
      return "all_tokens";
    case LossVariant::kAllTokensWeighted:
      return "all_tokens_weighted";
  }
  return "unknown";
}

LossVariant loss_variant_from_string(std::string_view s) {
  if (s == "pii_only") return LossVariant::kPiiOnly;
  if (s == "all_tokens") return LossVariant::kAllTokens;
  if (s == "all_tokens_weighted") return LossVariant::kAllTokensWeighted;
  throw ConfigError("unknown loss variant: " + std::string(s));
}

void OptimConfig::validate(const ModelConfig& model) const {
  if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
  if (epochs < 0) throw ConfigError("epoch count must be non-negative");
  if (!(init_scale >= 0)) throw ConfigError("init scale must be non-negative");
  if (positions.empty()) throw ConfigError("position set must be nonempty");
  if (batch_size < 1 || accumulation_steps < 1) throw ConfigError("batch size and accumulation must be positive");
  if (early_stopping.val_fraction < 0 || early_stopping.val_fraction >= 1) {
    throw ConfigError("validation fraction must lie in [0, 1)");
  }
  if (early_stopping.evals_per_epoch < 1 || early_stopping.patience < 1) {
    throw ConfigError("evals per epoch and patience must be positive");
  }
  for (int l : resolved_layers(model)) {
    if (l < 0 || l > model.num_layers) throw ConfigError("layer " + std::to_string(l) + " out of range");
  }
  for (int p : positions) {
    if (p < 0 || p >= model.context_length) throw ConfigError("position " + std::to_string(p) + " out of range");
  }
}

std::vector<int> OptimConfig::resolved_layers(const ModelConfig& model) const {
  if (!layers.empty()) return layers;
  std::vector<int> all(static_cast<std::size_t>(model.num_layers));
  std::iota(all.begin(), all.end(), 1);
  return all;
}

Json optim_config_to_json(const OptimConfig& c) {
  return Json{{"layers", c.layers},
              {"positions", c.positions},
              {"learning_rate", c.learning_rate},
              {"epochs", c.epochs},
              {"init_scale", c.init_scale},
              {"batch_size", c.batch_size},
              {"accumulation_steps", c.accumulation_steps},
              {"loss", to_string(c.loss)},
              {"pii_weight", c.pii_weight},
              {"reduction", c.reduction == Reduction::kSum ? "sum" : "mean"},
              {"early_stopping",
               {{"val_fraction", c.early_stopping.val_fraction},
                {"evals_per_epoch", c.early_stopping.evals_per_epoch},
                {"patience", c.early_stopping.patience}}},
              {"seed", c.seed}};
}

OptimConfig optim_config_from_json(const Json& j) {
  OptimConfig c;
  c.layers = j.value("layers", c.layers);
  c.positions = j.value("positions", c.positions);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.init_scale = j.value("init_scale", c.init_scale);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.accumulation_steps = j.value("accumulation_steps", c.accumulation_steps);
  c.loss = loss_variant_from_string(j.value("loss", std::string(to_string(c.loss))));
  c.pii_weight = j.value("pii_weight", c.pii_weight);
  const auto red = j.value("reduction", std::string("sum"));
  if (red != "sum" && red != "mean") throw ConfigError("reduction must be sum or mean");
  c.reduction = red == "sum" ? Reduction::kSum : Reduction::kMean;
  if (j.contains("early_stopping")) {
    const auto& e = j.at("early_stopping");
    c.early_stopping.val_fraction = e.value("val_fraction", c.early_stopping.val_fraction);
    c.early_stopping.evals_per_epoch = e.value("evals_per_epoch", c.early_stopping.evals_per_epoch);
    c.early_stopping.patience = e.value("patience", c.early_stopping.patience);
  }
  c.seed = j.value("seed", c.seed);
  return c;
}

InterventionSpec DirectionSet::intervention(int sign, double scale) const {
  InterventionSpec iv;
  iv.directions = vectors;
  iv.positions = config.positions;
  iv.sign = sign;
  iv.scale = scale;
  return iv;
}

int DirectionSet::model_dim() const {
  return vectors.empty() ? 0 : static_cast<int>(vectors.begin()->second.size());
}

std::string serialize_direction_set(const DirectionSet& d) {
  std::vector<int> layers;
  for (const auto& [l, v] : d.vectors) layers.push_back(l);
  const Json cfg = optim_config_to_json(d.config);
  Json header{{"class", to_string(d.cls)},
              {"layers", layers},
              {"model_dim", d.model_dim()},
              {"config", cfg},
              {"config_hash", sha256_hex(cfg.dump())},
              {"seed", d.config.seed},
              {"provenance", d.provenance},
              {"validation_loss", d.validation_loss},
              {"validation_curve", d.validation_curve},
              {"train_curve", d.train_curve},
              {"dtype", "float32-le"}};
  ByteWriter w;
  write_container_header(w, kMagic, kVersion, header);
  for (const auto& [l, v] : d.vectors) w.f32s(std::span<const float>(v.data(), static_cast<std::size_t>(v.size())));
  return w.str();
}

DirectionSet deserialize_direction_set(std::string_view bytes) {
  ByteReader r(bytes);
  const Json h = read_container_header(r, kMagic, kVersion);
  DirectionSet d;
  try {
    d.cls = pii_class_from_string(h.at("class").get<std::string>());
    d.config = optim_config_from_json(h.at("config"));
    d.provenance = h.at("provenance");
    d.validation_loss = h.at("validation_loss").get<double>();
    d.validation_curve = h.at("validation_curve").get<std::vector<double>>();
    d.train_curve = h.at("train_curve").get<std::vector<double>>();
    const int dim = h.at("model_dim").get<int>();
    for (int l : h.at("layers").get<std::vector<int>>()) {
      VectorF v(dim);
      r.f32s(std::span<float>(v.data(), static_cast<std::size_t>(dim)));
      d.vectors[l] = std::move(v);
    }
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed direction file header: ") + e.what());
  }
  if (!r.done()) throw FormatError("trailing bytes in direction file");
  return d;
}

void save_direction_set(const DirectionSet& d, const std::filesystem::path& path) {
  write_file(path, serialize_direction_set(d));
}

DirectionSet load_direction_set(const std::filesystem::path& path) { return deserialize_direction_set(read_file(path)); }

std::vector<double> loss_weights(const LabelSequence& example, LossVariant variant, double pii_weight) {
  std::vector<double> w(example.tokens.size(), 0.0);
  for (std::size_t i = 1; i < w.size(); ++i) {
    const bool pii = example.labels[i] != 0;
    switch (variant) {
      case LossVariant::kPiiOnly:
        w[i] = pii ? 1.0 : 0.0;
        break;
      case LossVariant::kAllTokens:
        w[i] = 1.0;
        break;
      case LossVariant::kAllTokensWeighted:
        w[i] = pii ? pii_weight : 1.0;
        break;
    }
  }
  return w;
}

namespace {

// Examples right-padded with EOS to a common length and run as one batch;
// padded targets carry zero weight and causality keeps them inert.
template <typename Scalar>
double batch_loss(const Transformer<Scalar>& model, std::span<const LabelSequence* const> examples,
                  const Intervention<Scalar>& iv, LossVariant variant, double pii_weight,
                  std::map<int, Vector<Scalar>>* grads, std::vector<double>* per_example = nullptr) {
  std::size_t seq = 0;
  for (const auto* ex : examples) {
    if (ex->tokens.empty()) throw InputError("cannot score an empty sequence");
    if (ex->labels.size() != ex->tokens.size()) throw InputError("labels and tokens differ in length");
    seq = std::max(seq, ex->tokens.size());
  }
  const auto batch = examples.size();
  std::vector<TokenId> tokens(batch * seq, Tokenizer::kEos);
  std::vector<double> weights(batch * seq, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto& ex = *examples[b];
    std::copy(ex.tokens.begin(), ex.tokens.end(), tokens.begin() + static_cast<std::ptrdiff_t>(b * seq));
    const auto w = loss_weights(ex, variant, pii_weight);
    std::copy(w.begin(), w.end(), weights.begin() + static_cast<std::ptrdiff_t>(b * seq));
  }
  ForwardCache<Scalar> cache;
  const Matrix<Scalar> logits =
      model.forward_batch(tokens, static_cast<int>(batch), &iv, grads != nullptr ? &cache : nullptr);
  const Matrix<Scalar> lp = log_softmax<Scalar>(logits);
  Matrix<Scalar> dlogits;
  if (grads != nullptr) dlogits = Matrix<Scalar>::Zero(logits.rows(), logits.cols());
  double total = 0.0;
  if (per_example != nullptr) per_example->assign(batch, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 1; i < seq; ++i) {
      const double w = weights[b * seq + i];
      if (w == 0.0) continue;
      const auto r = static_cast<Eigen::Index>(b * seq + i - 1);
      const TokenId target = tokens[b * seq + i];
      const double nll = -static_cast<double>(lp(r, target));
      total += w * nll;
      if (per_example != nullptr) (*per_example)[b] += w * nll;
      if (grads != nullptr) {
        dlogits.row(r) = static_cast<Scalar>(w) * lp.row(r).array().exp().matrix();
        dlogits(r, target) -= static_cast<Scalar>(w);
      }
    }
  }
  if (grads != nullptr) {
    std::vector<Matrix<Scalar>> rg;
    model.backward(cache, dlogits, nullptr, &rg);
    for (const auto& [layer, v] : iv.directions) {
      Vector<Scalar> g = Vector<Scalar>::Zero(v.size());
      for (std::size_t b = 0; b < batch; ++b) {
        for (int t : iv.positions) {
          if (t < 0 || static_cast<std::size_t>(t) >= seq) continue;
          g += rg[static_cast<std::size_t>(layer)].row(static_cast<Eigen::Index>(b * seq + static_cast<std::size_t>(t))).transpose();
        }
      }
      (*grads)[layer] = iv.factor() * g;
    }
  }
  return total;
}

bool all_finite(const std::map<int, VectorF>& vs) {
  for (const auto& [l, v] : vs) {
    if (!v.allFinite()) return false;
  }
  return true;
}

}  // namespace

template <typename Scalar>
double compute_pii_loss(const Transformer<Scalar>& model, const LabelSequence& example,
                        const Intervention<Scalar>& intervention, LossVariant variant,
                        std::map<int, Vector<Scalar>>* grads, double pii_weight) {
  if (example.tokens.empty()) throw InputError("cannot intervene on an empty sequence");
  const LabelSequence* one[] = {&example};
  return batch_loss<Scalar>(model, one, intervention, variant, pii_weight, grads);
}

template double compute_pii_loss<float>(const Transformer<float>&, const LabelSequence&, const Intervention<float>&,
                                        LossVariant, std::map<int, VectorF>*, double);
template double compute_pii_loss<double>(const Transformer<double>&, const LabelSequence&,
                                         const Intervention<double>&, LossVariant, std::map<int, VectorD>*, double);

double mean_pii_loss(const Transformer<float>& model, std::span<const LabelSequence> examples,
                     const InterventionSpec& intervention, LossVariant variant, double pii_weight) {
  if (examples.empty()) return 0.0;
  constexpr std::size_t kChunk = 16;
  double total = 0.0;
  std::vector<const LabelSequence*> ptrs;
  for (const auto& ex : examples) ptrs.push_back(&ex);
  for (std::size_t i = 0; i < ptrs.size(); i += kChunk) {
    const auto n = std::min(kChunk, ptrs.size() - i);
    total += batch_loss<float>(model, std::span(ptrs).subspan(i, n), intervention, variant, pii_weight, nullptr);
  }
  return total / static_cast<double>(examples.size());
}

DirectionSet optimize_directions(const Transformer<float>& model, const ClassDataset& dataset,
                                 const OptimConfig& config) {
  const auto& mc = model.config();
  config.validate(mc);
  if (dataset.examples.empty()) throw DataError("class dataset is empty");
  for (const auto& ex : dataset.examples) {
    if (static_cast<int>(ex.tokens.size()) > mc.context_length) throw InputError("example exceeds context length");
  }

  DirectionSet out;
  out.cls = dataset.cls;
  out.config = config;
  out.provenance = Json{{"dataset", dataset.provenance}, {"examples", dataset.examples.size()}};

  Rng init_rng(derive_seed(config.seed, "direction-init"));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int l : config.resolved_layers(mc)) {
    VectorF v(mc.model_dim);
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = static_cast<float>(config.init_scale * normal(init_rng));
    out.vectors[l] = v;
  }

  // 95/5 style split over a seeded shuffle.
  std::vector<std::size_t> order(dataset.examples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(derive_seed(config.seed, "direction-split"));
  std::shuffle(order.begin(), order.end(), split_rng);
  auto n_val = static_cast<std::size_t>(std::llround(config.early_stopping.val_fraction * static_cast<double>(order.size())));
  if (config.early_stopping.val_fraction > 0 && n_val == 0 && order.size() > 1) n_val = 1;
  std::vector<LabelSequence> val;
  std::vector<const LabelSequence*> train;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i < n_val) {
      val.push_back(dataset.examples[order[i]]);
    } else {
      train.push_back(&dataset.examples[order[i]]);
    }
  }
  if (val.empty()) {
    for (const auto* ex : train) val.push_back(*ex);
  }
  out.provenance["train_examples"] = train.size();
  out.provenance["validation_examples"] = n_val;

  InterventionSpec iv;
  iv.positions = config.positions;
  iv.directions = out.vectors;
  auto evaluate = [&]() { return mean_pii_loss(model, val, iv, config.loss, config.pii_weight); };

  double best = evaluate();
  out.validation_curve.push_back(best);
  std::map<int, VectorF> best_vectors = iv.directions;

  const std::size_t per_update = static_cast<std::size_t>(config.batch_size * config.accumulation_steps);
  const std::size_t updates_per_epoch = (train.size() + per_update - 1) / per_update;
  const std::size_t eval_every =
      std::max<std::size_t>(1, updates_per_epoch / static_cast<std::size_t>(config.early_stopping.evals_per_epoch));
  int stale = 0;
  std::size_t updates = 0;
  bool stop = false;
  Rng order_rng(derive_seed(config.seed, "direction-order"));
  for (int epoch = 0; epoch < config.epochs && !stop; ++epoch) {
    std::shuffle(train.begin(), train.end(), order_rng);
    for (std::size_t start = 0; start < train.size() && !stop; start += per_update) {
      const std::size_t end = std::min(train.size(), start + per_update);
      std::map<int, VectorF> grad;
      for (const auto& [l, v] : iv.directions) grad[l] = VectorF::Zero(v.size());
      double loss = 0.0;
      for (std::size_t b = start; b < end; b += static_cast<std::size_t>(config.batch_size)) {
        const std::size_t bend = std::min(end, b + static_cast<std::size_t>(config.batch_size));
        std::map<int, VectorF> g;
        loss += batch_loss<float>(model, std::span(train).subspan(b, bend - b), iv, config.loss, config.pii_weight, &g);
        for (auto& [l, v] : g) grad[l] += v;
      }
      const auto count = static_cast<float>(end - start);
      const float step = static_cast<float>(config.learning_rate) / (config.reduction == Reduction::kMean ? count : 1.0f);
      const auto last_good = iv.directions;
      for (auto& [l, v] : iv.directions) v -= step * grad[l];
      out.train_curve.push_back(loss / count);
      if (!std::isfinite(loss) || !all_finite(iv.directions)) {
        throw OptimizationError("non-finite loss at update " + std::to_string(updates), last_good);
      }
      ++updates;
      if (updates % eval_every == 0) {
        const double v = evaluate();
        out.validation_curve.push_back(v);
        if (!std::isfinite(v)) throw OptimizationError("non-finite validation loss", best_vectors);
        if (v < best) {
          best = v;
          best_vectors = iv.directions;
          stale = 0;
        } else if (++stale >= config.early_stopping.patience) {
          stop = true;
        }
      }
    }
  }
  out.vectors = best_vectors;
  out.validation_loss = best;
  out.provenance["updates"] = updates;
  out.provenance["early_stopped"] = stop;
  return out;
}

double gradient_check(const Transformer<double>& model, const LabelSequence& example,
                      const Intervention<double>& intervention, double epsilon, int coords_per_layer,
                      std::uint64_t seed, LossVariant variant) {
  std::map<int, VectorD> analytic;
  compute_pii_loss<double>(model, example, intervention, variant, &analytic);
  Rng rng(seed);
  double worst = 0.0;
  for (const auto& [layer, v] : intervention.directions) {
    const int dim = static_cast<int>(v.size());
    std::vector<int> coords(static_cast<std::size_t>(dim));
    std::iota(coords.begin(), coords.end(), 0);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(static_cast<std::size_t>(std::min(dim, coords_per_layer)));
    for (int c : coords) {
      auto probe = [&](double delta) {
        auto iv = intervention;
        iv.directions[layer](c) += delta;
        return compute_pii_loss<double>(model, example, iv, variant);
      };
      const double numeric = (probe(epsilon) - probe(-epsilon)) / (2 * epsilon);
      const double a = analytic.at(layer)(c);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

VectorF last_token_residual(const Transformer<float>& model, std::span<const TokenId> prefix, int layer) {
  if (prefix.empty()) throw InputError("empty prefix");
  if (layer < 0 || layer > model.config().num_layers) throw InputError("layer out of range");
  ActivationTrace<float> trace;
  model.forward(prefix, nullptr, &trace);
  return trace.residuals[static_cast<std::size_t>(layer)].row(trace.num_positions() - 1).transpose();
}

VectorF dim_direction(const Transformer<float>& model, std::span<const ContrastPair> pairs, int layer) {
  if (pairs.empty()) throw InputError("no contrast pairs");
  VectorD sum = VectorD::Zero(model.config().model_dim);
  for (const auto& p : pairs) {
    if (p.positive.empty() || p.negative.empty()) throw InputError("contrast prefixes must be nonempty");
    sum += (last_token_residual(model, p.positive, layer) - last_token_residual(model, p.negative, layer)).cast<double>();
  }
  return (sum / static_cast<double>(pairs.size())).cast<float>();
}

std::map<int, DirectionSet> layer_sweep(const Transformer<float>& model, const ClassDataset& dataset,
                                        const OptimConfig& base, std::vector<int> layers_to_probe) {
  const int lmax = model.config().num_layers;
  if (layers_to_probe.empty()) layers_to_probe = {0, lmax / 2, lmax};
  std::map<int, DirectionSet> out;
  for (int l : layers_to_probe) {
    if (out.count(l) > 0) continue;
    OptimConfig c = base;
    c.layers = {l};
    out[l] = optimize_directions(model, dataset, c);
  }
  return out;
}

}  // namespace piisteer
