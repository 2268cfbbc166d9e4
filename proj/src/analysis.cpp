#include "piisteer/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace piisteer {

std::vector<TargetedPrefix> select_pii_prefixes(const GenerationBatch& batch, PiiClass cls, int max_prefixes,
                                                const Gazetteer& gazetteer) {
  const Tokenizer tok;
  std::vector<TargetedPrefix> out;
  for (const auto& g : batch.sequences) {
    if (static_cast<int>(out.size()) >= max_prefixes) break;
    const std::size_t offset = !g.tokens.empty() && g.tokens.front() == Tokenizer::kBos ? 1 : 0;
    std::string text;
    for (std::size_t i = offset; i < g.tokens.size(); ++i) {
      if (g.tokens[i] == Tokenizer::kBos || g.tokens[i] == Tokenizer::kEos) break;
      text.push_back(tok.to_char(g.tokens[i]));
    }
    const auto spans = annotate(text, cls, gazetteer);
    if (spans.empty()) continue;
    const std::size_t at = offset + static_cast<std::size_t>(spans.front().start);
    if (at == 0) continue;  // nothing precedes the span
    out.push_back(TargetedPrefix{std::vector<TokenId>(g.tokens.begin(), g.tokens.begin() + static_cast<std::ptrdiff_t>(at)),
                                 g.tokens[at]});
  }
  return out;
}

namespace {

double softmax_at(const RowVector<double>& logits, TokenId target) {
  const double m = logits.maxCoeff();
  return std::exp(logits(target) - m) / (logits.array() - m).exp().sum();
}

void check_prefix(const TargetedPrefix& p) {
  if (p.prefix.empty()) throw InputError("empty prefix");
}

}  // namespace

LensProfile logit_lens(const Transformer<float>& model, std::span<const TargetedPrefix> prefixes,
                       const InterventionSpec* intervention) {
  const int layers = model.config().num_layers;
  LensProfile out;
  out.probability.assign(static_cast<std::size_t>(layers + 1), 0.0);
  for (const auto& p : prefixes) {
    check_prefix(p);
    ActivationTrace<float> trace;
    const MatrixF logits = model.forward(p.prefix, intervention, &trace);
    const auto last = static_cast<Eigen::Index>(p.prefix.size() - 1);
    const double output = softmax_at(logits.row(last).cast<double>(), p.target);
    out.output_probability += output;
    for (int l = 0; l <= layers; ++l) {
      const MatrixF row = trace.stream(l).row(last);
      const double prob = softmax_at(model.unembed(row).row(0).cast<double>(), p.target);
      out.probability[static_cast<std::size_t>(l)] += prob;
      if (l == layers) out.max_final_deviation = std::max(out.max_final_deviation, std::abs(prob - output));
    }
  }
  out.prefixes = static_cast<int>(prefixes.size());
  if (out.prefixes > 0) {
    for (double& v : out.probability) v /= out.prefixes;
    out.output_probability /= out.prefixes;
  }
  return out;
}

std::string lens_csv(const LensProfile& base, const LensProfile& steered) {
  std::ostringstream out;
  out.precision(9);
  out << "layer,base,steered\n";
  for (std::size_t l = 0; l < base.probability.size(); ++l) {
    out << l << ',' << base.probability[l] << ',' << (l < steered.probability.size() ? steered.probability[l] : 0.0)
        << '\n';
  }
  return out.str();
}

AttributionReport direct_logit_attribution(const Transformer<float>& model, std::span<const TargetedPrefix> prefixes,
                                           const InterventionSpec* intervention, int window) {
  const auto& c = model.config();
  const auto& params = model.parameters();
  AttributionReport r;
  r.window = std::min(window, c.num_layers);
  const int first = c.num_layers - r.window;
  for (int l = first; l < c.num_layers; ++l) {
    r.components.push_back({"attention", l, 0.0});
    r.components.push_back({"mlp", l, 0.0});
  }
  const VectorD gain = params.final_gain.row(0).transpose().cast<double>();
  const VectorD bias = params.final_bias.row(0).transpose().cast<double>();
  const Transformer<double> dm(c, params.cast<double>());
  const Intervention<double> div = intervention != nullptr ? intervention->cast<double>() : Intervention<double>{};
  for (const auto& p : prefixes) {
    check_prefix(p);
    ActivationTrace<double> trace;
    const MatrixD logits = dm.forward(p.prefix, intervention != nullptr ? &div : nullptr, &trace);
    const auto last = static_cast<Eigen::Index>(p.prefix.size() - 1);
    const VectorD u_t = params.unembedding.col(p.target).cast<double>();
    const VectorD w = gain.cwiseProduct(u_t);

    // Frozen divisor from the full final residual.
    const VectorD x = trace.stream(c.num_layers).row(last).transpose();
    const double mean = x.mean();
    const double sigma = std::sqrt((x.array() - mean).square().mean() + kLayerNormEps);
    auto contribution = [&](const VectorD& u) { return (u.array() - u.mean()).matrix().dot(w) / sigma; };

    double total = 0.0;
    const double emb = contribution(trace.residuals[0].row(last).transpose());
    r.embedding += emb;
    total += emb;
    for (int l = 0; l <= c.num_layers; ++l) {
      const auto& added = trace.added[static_cast<std::size_t>(l)];
      if (added.size() == 0) continue;
      const double v = contribution(added.row(last).transpose());
      r.intervention += v;
      total += v;
    }
    std::size_t k = 0;
    for (int l = 0; l < c.num_layers; ++l) {
      const double a = contribution(trace.attention_outputs[static_cast<std::size_t>(l)].row(last).transpose());
      const double m = contribution(trace.mlp_outputs[static_cast<std::size_t>(l)].row(last).transpose());
      total += a + m;
      if (l < first) {
        r.earlier_layers += a + m;
      } else {
        r.components[k++].mean_contribution += a;
        r.components[k++].mean_contribution += m;
      }
    }
    const double b = bias.dot(u_t);
    r.bias += b;
    total += b;
    const double logit = logits(last, p.target);
    r.mean_logit += logit;
    r.max_relative_error = std::max(r.max_relative_error, std::abs(total - logit) / std::max(std::abs(logit), 1e-12));
  }
  r.prefixes = static_cast<int>(prefixes.size());
  if (r.prefixes > 0) {
    const double n = r.prefixes;
    for (auto& comp : r.components) comp.mean_contribution /= n;
    r.embedding /= n;
    r.earlier_layers /= n;
    r.intervention /= n;
    r.bias /= n;
    r.mean_logit /= n;
  }
  return r;
}

std::string attribution_csv(const AttributionReport& base, const AttributionReport& steered) {
  std::ostringstream out;
  out.precision(9);
  out << "component,layer,base,steered\n";
  for (std::size_t i = 0; i < base.components.size(); ++i) {
    const auto& b = base.components[i];
    const double s = i < steered.components.size() ? steered.components[i].mean_contribution : 0.0;
    out << b.kind << ',' << b.layer << ',' << b.mean_contribution << ',' << s << '\n';
  }
  out << "embedding,," << base.embedding << ',' << steered.embedding << '\n';
  out << "earlier_layers,," << base.earlier_layers << ',' << steered.earlier_layers << '\n';
  out << "intervention,," << base.intervention << ',' << steered.intervention << '\n';
  out << "final_norm_bias,," << base.bias << ',' << steered.bias << '\n';
  return out.str();
}

double cosine_similarity(const VectorF& a, const VectorF& b) {
  const double na = a.cast<double>().norm();
  const double nb = b.cast<double>().norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(a.cast<double>().dot(b.cast<double>()) / (na * nb), -1.0, 1.0);
}

SimilarityStats contextual_similarity(const Transformer<float>& model,
                                      const std::map<std::string, std::vector<std::vector<TokenId>>>& generated,
                                      const std::map<std::string, std::vector<std::vector<TokenId>>>& training) {
  const int top = model.config().num_layers;
  auto last_state = [&](const std::vector<TokenId>& prefix) {
    if (prefix.empty()) throw InputError("empty prefix");
    ActivationTrace<float> trace;
    model.forward(prefix, nullptr, &trace);
    return VectorF(trace.residuals[static_cast<std::size_t>(top)].bottomRows(1).transpose());
  };
  SimilarityStats s;
  for (const auto& [item, gens] : generated) {
    const auto it = training.find(item);
    if (it == training.end() || it->second.empty() || gens.empty()) {
      ++s.skipped;
      continue;
    }
    ++s.items;
    std::vector<VectorF> train_states;
    for (const auto& p : it->second) train_states.push_back(last_state(p));
    for (const auto& g : gens) {
      const VectorF gs = last_state(g);
      for (const auto& ts : train_states) s.values.push_back(cosine_similarity(gs, ts));
    }
  }
  if (!s.values.empty()) {
    double sum = 0.0;
    for (double v : s.values) sum += v;
    s.mean = sum / static_cast<double>(s.values.size());
    auto sorted = s.values;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    s.median = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  }
  return s;
}

std::map<std::string, std::vector<std::vector<TokenId>>> training_prefixes(const Corpus& corpus, PiiClass cls,
                                                                           int context_length) {
  const Tokenizer tok;
  std::map<std::string, std::vector<std::vector<TokenId>>> out;
  for (const auto& plant : corpus.registry) {
    if (plant.cls != cls || corpus.splits[static_cast<std::size_t>(plant.doc)] != Split::kTrain) continue;
    std::vector<TokenId> prefix{Tokenizer::kBos};
    const auto body = tok.encode(corpus.documents[static_cast<std::size_t>(plant.doc)].substr(0, static_cast<std::size_t>(plant.start)));
    prefix.insert(prefix.end(), body.begin(), body.end());
    if (static_cast<int>(prefix.size()) > context_length) {
      prefix.erase(prefix.begin(), prefix.end() - context_length);
    }
    out[plant.value].push_back(std::move(prefix));
  }
  return out;
}

}  // namespace piisteer
