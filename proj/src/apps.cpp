#include "piisteer/apps.hpp"

#include <map>

#include "piisteer/train.hpp"

namespace piisteer {

Checkpoint poison_embedding(const Checkpoint& source, const VectorF& v0, TokenId token) {
  if (v0.size() != source.config.model_dim) {
    throw CompatibilityError("direction width " + std::to_string(v0.size()) + " does not match model width " +
                             std::to_string(source.config.model_dim));
  }
  if (token < 0 || token >= source.config.vocab_size) throw ConfigError("poisoned token id out of range");
  Checkpoint out = source;
  out.params.token_embedding.row(token) += v0.transpose();
  return out;
}

double repetition_ratio(const Generation& g) {
  std::map<TokenId, int> counts;
  int total = 0;
  for (std::size_t i = g.prompt.size(); i < g.tokens.size(); ++i) {
    if (g.tokens[i] == Tokenizer::kEos) break;
    ++counts[g.tokens[i]];
    ++total;
  }
  int top = 0;
  for (const auto& [t, c] : counts) top = std::max(top, c);
  return total == 0 ? 0.0 : static_cast<double>(top) / total;
}

Json MitigationResult::to_json() const {
  return Json{{"baseline", extraction_report(baseline, baseline_counts)},
              {"mitigated", extraction_report(mitigated, mitigated_counts)},
              {"baseline_perplexity", baseline_perplexity},
              {"mitigated_perplexity", mitigated_perplexity},
              {"perplexity_ratio", perplexity_ratio},
              {"collapsed_generations", collapsed_generations},
              {"scored_generations", scored_generations},
              {"collapse_flag", collapse_flag}};
}

MitigationResult mitigation_run(const Transformer<float>& model, const DirectionSet& directions,
                                const ExtractionStrategy& strategy, const MitigationConfig& config,
                                std::span<const std::string> held_out, const std::set<std::string>& train_values,
                                GenerationBatch* mitigated_batch) {
  check_compatible(directions, model.config());
  MitigationResult r;
  r.baseline = extract(model, strategy, config.cls, nullptr, 1, config.n, config.length, strategy.id());
  GenerationBatch batch;
  r.mitigated = extract(model, strategy, config.cls, &directions, -1, config.n, config.length,
                        strategy.id() + "-mitigated", &batch);
  r.baseline_counts = count_train_pii(r.baseline, train_values);
  r.mitigated_counts = count_train_pii(r.mitigated, train_values);
  const auto iv = first_token_intervention(directions, -1);
  r.baseline_perplexity = perplexity(model, held_out);
  r.mitigated_perplexity = perplexity(model, held_out, &iv);
  r.perplexity_ratio = r.mitigated_perplexity / r.baseline_perplexity;
  for (const auto& g : batch.sequences) {
    if (static_cast<int>(g.tokens.size() - g.prompt.size()) < config.min_judged_length) continue;
    ++r.scored_generations;
    if (repetition_ratio(g) > 0.5) ++r.collapsed_generations;
  }
  r.collapse_flag = r.scored_generations > 0 && 2 * r.collapsed_generations > r.scored_generations;
  if (mitigated_batch != nullptr) *mitigated_batch = std::move(batch);
  return r;
}

}  // namespace piisteer
