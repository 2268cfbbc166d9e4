#include "piisteer/selfgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "piisteer/rng.hpp"

namespace piisteer {

std::string_view to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::kBos:
      return "bos";
    case StrategyKind::kEmpty:
      return "empty";
    case StrategyKind::kSingleTokenSet:
      return "single_token_set";
  }
  return "unknown";
}

StrategyKind strategy_kind_from_string(std::string_view s) {
  if (s == "bos") return StrategyKind::kBos;
  if (s == "empty") return StrategyKind::kEmpty;
  if (s == "single_token_set") return StrategyKind::kSingleTokenSet;
  throw ConfigError("unknown extraction strategy: " + std::string(s));
}

void ExtractionStrategy::validate(int vocab_size) const {
  if (decoding.top_k < 1 || decoding.top_k > vocab_size) throw ConfigError("top_k must lie in [1, vocab_size]");
  if (kind == StrategyKind::kSingleTokenSet) {
    if (prompt_tokens.empty()) throw ConfigError("single-token strategy needs at least one prompt token");
    for (TokenId t : prompt_tokens) {
      if (t < 0 || t >= vocab_size) throw ConfigError("prompt token out of vocabulary");
    }
  }
}

std::string ExtractionStrategy::id() const { return std::string(to_string(kind)); }

std::vector<TokenId> ExtractionStrategy::prompt_for(std::size_t index) const {
  if (kind == StrategyKind::kSingleTokenSet) return {prompt_tokens[index % prompt_tokens.size()]};
  return {Tokenizer::kBos};
}

Json strategy_to_json(const ExtractionStrategy& s) {
  return Json{{"kind", to_string(s.kind)},
              {"prompt_tokens", s.prompt_tokens},
              {"top_k", s.decoding.top_k},
              {"max_new_tokens", s.decoding.max_new_tokens},
              {"seed", s.decoding.seed}};
}

ExtractionStrategy strategy_from_json(const Json& j) {
  ExtractionStrategy s;
  s.kind = strategy_kind_from_string(j.at("kind").get<std::string>());
  s.prompt_tokens = j.value("prompt_tokens", std::vector<TokenId>{});
  s.decoding.top_k = j.value("top_k", s.decoding.top_k);
  s.decoding.max_new_tokens = j.value("max_new_tokens", s.decoding.max_new_tokens);
  s.decoding.seed = j.value("seed", s.decoding.seed);
  return s;
}

std::vector<std::string> GenerationBatch::texts() const {
  const Tokenizer tok;
  std::vector<std::string> out;
  out.reserve(sequences.size());
  for (const auto& g : sequences) out.push_back(tok.decode(g.tokens));
  return out;
}

GenerationBatch run_strategy(const Transformer<float>& model, const ExtractionStrategy& strategy, int n, int length,
                             const InterventionSpec* intervention) {
  if (n < 0) throw ConfigError("generation count must be non-negative");
  strategy.validate(model.config().vocab_size);
  GenerationBatch batch;
  batch.strategy_id = strategy.id();
  batch.seed = strategy.decoding.seed;
  batch.length = length;
  if (n == 0) return batch;

  DecodingConfig decoding = strategy.decoding;
  decoding.max_new_tokens = length;
  BatchRequest request;
  for (int i = 0; i < n; ++i) request.prompts.push_back(strategy.prompt_for(static_cast<std::size_t>(i)));
  if (strategy.kind == StrategyKind::kEmpty) request.banned_first_token = Tokenizer::kBos;
  auto outputs = sample_batch(model, request, decoding, intervention);
  batch.sequences.reserve(outputs.size());
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    batch.sequences.push_back(Generation{request.prompts[i], std::move(outputs[i])});
  }
  return batch;
}

void save_generation_batch(const GenerationBatch& batch, const std::filesystem::path& path) {
  const Tokenizer tok;
  std::vector<Json> records;
  records.push_back(Json{{"type", "header"},
                         {"strategy", batch.strategy_id},
                         {"seed", batch.seed},
                         {"length", batch.length},
                         {"count", batch.sequences.size()}});
  for (const auto& g : batch.sequences) {
    records.push_back(Json{{"prompt", g.prompt}, {"tokens", g.tokens}, {"text", tok.decode(g.tokens)}});
  }
  write_jsonl(path, records);
}

GenerationBatch load_generation_batch(const std::filesystem::path& path) {
  const auto records = read_jsonl(path);
  if (records.empty() || records.front().value("type", "") != "header") {
    throw FormatError(path.string() + ": missing generation batch header");
  }
  GenerationBatch batch;
  const auto& h = records.front();
  batch.strategy_id = h.at("strategy").get<std::string>();
  batch.seed = h.at("seed").get<std::uint64_t>();
  batch.length = h.at("length").get<int>();
  for (std::size_t i = 1; i < records.size(); ++i) {
    batch.sequences.push_back(Generation{records[i].at("prompt").get<std::vector<TokenId>>(),
                                         records[i].at("tokens").get<std::vector<TokenId>>()});
  }
  if (batch.sequences.size() != h.at("count").get<std::size_t>()) throw FormatError(path.string() + ": truncated batch");
  return batch;
}

ClassDataset build_class_dataset(const GenerationBatch& batch, PiiClass cls, const Gazetteer& gazetteer) {
  const Tokenizer tok;
  ClassDataset ds;
  ds.cls = cls;
  ds.provenance = Json{{"strategy", batch.strategy_id}, {"seed", batch.seed}, {"generations", batch.sequences.size()}};
  for (const auto& g : batch.sequences) {
    const int offset = !g.tokens.empty() && g.tokens.front() == Tokenizer::kBos ? 1 : 0;
    if (auto seq = label_sequence(g.tokens, offset, cls, tok, gazetteer)) ds.examples.push_back(std::move(*seq));
  }
  return ds;
}

ClassDataset subsample_dataset(const ClassDataset& ds, double fraction, std::uint64_t seed,
                               std::vector<std::size_t>* indices) {
  if (fraction < 0 || fraction > 1) throw ConfigError("subsample fraction must lie in [0, 1]");
  std::vector<std::size_t> order(ds.examples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "subsample"));
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(static_cast<std::size_t>(std::llround(fraction * static_cast<double>(order.size()))));
  std::sort(order.begin(), order.end());
  ClassDataset out;
  out.cls = ds.cls;
  out.provenance = Json{{"source", ds.provenance}, {"fraction", fraction}, {"seed", seed}};
  for (auto i : order) out.examples.push_back(ds.examples[i]);
  if (indices != nullptr) *indices = order;
  return out;
}

bool is_ground_truth_example(const LabelSequence& ex, PiiClass cls, const std::set<std::string>& train_values,
                             const Gazetteer& gazetteer) {
  const Tokenizer tok;
  std::string text;
  for (TokenId t : ex.tokens) {
    if (t == Tokenizer::kEos) break;
    if (t != Tokenizer::kBos) text.push_back(tok.to_char(t));
  }
  for (const auto& span : annotate(text, cls, gazetteer)) {
    if (train_values.count(span.canonical) > 0) return true;
  }
  return false;
}

namespace {

void ground_truth_pools(const ClassDataset& ds, const std::set<std::string>& train_values,
                        std::vector<std::size_t>& gt, std::vector<std::size_t>& other) {
  for (std::size_t i = 0; i < ds.examples.size(); ++i) {
    (is_ground_truth_example(ds.examples[i], ds.cls, train_values) ? gt : other).push_back(i);
  }
}

}  // namespace

ClassDataset mix_ground_truth(const ClassDataset& ds, const std::set<std::string>& train_values, double fraction,
                              std::size_t size, std::uint64_t seed, std::vector<std::size_t>* indices) {
  if (fraction < 0 || fraction > 1) throw ConfigError("ground-truth fraction must lie in [0, 1]");
  std::vector<std::size_t> gt, other;
  ground_truth_pools(ds, train_values, gt, other);
  const auto n_gt = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(size)));
  const std::size_t n_other = size - n_gt;
  if (n_gt > gt.size() || n_other > other.size()) {
    throw ConfigError("not enough examples for a " + std::to_string(size) + "-example mix at fraction " +
                      std::to_string(fraction));
  }
  Rng rng(derive_seed(seed, "ground-truth-mix"));
  std::shuffle(gt.begin(), gt.end(), rng);
  std::shuffle(other.begin(), other.end(), rng);
  std::vector<std::size_t> chosen(gt.begin(), gt.begin() + static_cast<std::ptrdiff_t>(n_gt));
  chosen.insert(chosen.end(), other.begin(), other.begin() + static_cast<std::ptrdiff_t>(n_other));
  std::sort(chosen.begin(), chosen.end());
  ClassDataset out;
  out.cls = ds.cls;
  out.provenance = Json{{"source", ds.provenance}, {"ground_truth_fraction", fraction}, {"size", size}, {"seed", seed}};
  for (auto i : chosen) out.examples.push_back(ds.examples[i]);
  if (indices != nullptr) *indices = chosen;
  return out;
}

std::size_t max_mixable_size(const ClassDataset& ds, const std::set<std::string>& train_values,
                             std::span<const double> fractions) {
  std::vector<std::size_t> gt, other;
  ground_truth_pools(ds, train_values, gt, other);
  std::size_t best = gt.size() + other.size();
  for (; best > 0; --best) {
    bool ok = true;
    for (double f : fractions) {
      const auto n_gt = static_cast<std::size_t>(std::llround(f * static_cast<double>(best)));
      ok = ok && n_gt <= gt.size() && best - n_gt <= other.size();
    }
    if (ok) break;
  }
  return best;
}

std::vector<TokenId> derive_single_token_prompts(const Transformer<float>& model, PiiClass cls,
                                                 const PromptSearchConfig& config, std::vector<PromptScore>* scores,
                                                 const Gazetteer& gazetteer) {
  const int vocab = model.config().vocab_size;
  if (config.candidate_budget < 0 || config.candidate_budget > vocab) {
    throw ConfigError("candidate budget must lie in [0, vocab_size]");
  }
  if (config.keep < 0 || config.keep > config.candidate_budget) {
    throw ConfigError("keep must not exceed the candidate budget");
  }
  // Candidates are the printable tokens in id order; BOS and EOS are not prompts.
  std::vector<TokenId> candidates;
  for (TokenId t = 0; t < vocab && static_cast<int>(candidates.size()) < config.candidate_budget; ++t) {
    if (t != Tokenizer::kBos && t != Tokenizer::kEos) candidates.push_back(t);
  }
  std::vector<PromptScore> scored;
  if (!candidates.empty() && config.samples_per_candidate > 0) {
    ExtractionStrategy s;
    s.kind = StrategyKind::kSingleTokenSet;
    s.decoding.top_k = config.top_k;
    s.decoding.seed = config.seed;
    for (TokenId t : candidates) {
      for (int r = 0; r < config.samples_per_candidate; ++r) s.prompt_tokens.push_back(t);
    }
    // Each candidate repeated samples_per_candidate times; n equals the list
    // length, so sequence i is prompted by prompt_tokens[i].
    const auto batch = run_strategy(model, s, static_cast<int>(s.prompt_tokens.size()), config.generation_length);
    const auto texts = batch.texts();
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      PromptScore ps{candidates[c], 0};
      for (int r = 0; r < config.samples_per_candidate; ++r) {
        const auto& text = texts[c * static_cast<std::size_t>(config.samples_per_candidate) + static_cast<std::size_t>(r)];
        ps.yield += static_cast<int>(annotate(text, cls, gazetteer).size());
      }
      scored.push_back(ps);
    }
  } else {
    for (TokenId t : candidates) scored.push_back({t, 0});
  }
  if (scores != nullptr) *scores = scored;
  std::vector<PromptScore> ranked = scored;
  std::stable_sort(ranked.begin(), ranked.end(), [](const PromptScore& a, const PromptScore& b) {
    return a.yield > b.yield || (a.yield == b.yield && a.token < b.token);
  });
  std::vector<TokenId> out;
  for (int i = 0; i < config.keep && i < static_cast<int>(ranked.size()); ++i) out.push_back(ranked[static_cast<std::size_t>(i)].token);
  return out;
}

}  // namespace piisteer
