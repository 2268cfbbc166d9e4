#include "piisteer/extraction.hpp"

#include <bit>
#include <sstream>

namespace piisteer {

ExtractedSet extract_from_batch(const GenerationBatch& batch, PiiClass cls, std::string method,
                                const Gazetteer& gazetteer) {
  const Tokenizer tok;
  ExtractedSet out;
  out.method = std::move(method);
  out.cls = cls;
  out.generations = static_cast<int>(batch.sequences.size());
  for (const auto& g : batch.sequences) {
    const std::size_t offset = !g.tokens.empty() && g.tokens.front() == Tokenizer::kBos ? 1 : 0;
    std::string text;
    for (std::size_t i = offset; i < g.tokens.size(); ++i) {
      if (g.tokens[i] == Tokenizer::kBos || g.tokens[i] == Tokenizer::kEos) break;
      text.push_back(tok.to_char(g.tokens[i]));
    }
    for (const auto& span : annotate(text, cls, gazetteer)) {
      ++out.spans;
      if (out.items.insert(span.canonical).second) {
        const auto end = g.tokens.begin() + static_cast<std::ptrdiff_t>(offset + static_cast<std::size_t>(span.start));
        out.first_prefix[span.canonical] = std::vector<TokenId>(g.tokens.begin(), end);
      }
    }
  }
  return out;
}

InterventionSpec first_token_intervention(const DirectionSet& directions, int sign) {
  InterventionSpec iv = directions.intervention(sign);
  iv.positions = {0};
  return iv;
}

void check_compatible(const DirectionSet& directions, const ModelConfig& config) {
  for (const auto& [layer, v] : directions.vectors) {
    if (layer < 0 || layer > config.num_layers) {
      throw CompatibilityError("direction layer " + std::to_string(layer) + " does not exist in a " +
                               std::to_string(config.num_layers) + "-layer model");
    }
    if (v.size() != config.model_dim) {
      throw CompatibilityError("direction width " + std::to_string(v.size()) + " does not match model width " +
                               std::to_string(config.model_dim));
    }
  }
}

ExtractedSet extract(const Transformer<float>& model, const ExtractionStrategy& strategy, PiiClass cls,
                     const DirectionSet* directions, int sign, int n, int length, std::string method,
                     GenerationBatch* batch_out) {
  if (sign != 1 && sign != -1) throw ConfigError("sign must be +1 or -1");
  GenerationBatch batch;
  if (directions != nullptr) {
    check_compatible(*directions, model.config());
    const auto iv = first_token_intervention(*directions, sign);
    batch = run_strategy(model, strategy, n, length, &iv);
  } else {
    batch = run_strategy(model, strategy, n, length);
  }
  auto out = extract_from_batch(batch, cls, std::move(method));
  if (batch_out != nullptr) *batch_out = std::move(batch);
  return out;
}

TrainCounts count_train_pii(const ExtractedSet& extracted, const std::set<std::string>& train_values) {
  TrainCounts c;
  for (const auto& item : extracted.items) c.train_hits += train_values.count(item) > 0 ? 1 : 0;
  c.novel = static_cast<int>(extracted.items.size()) - c.train_hits;
  return c;
}

TrainCounts count_train_pii(const ExtractedSet& extracted, const Corpus& corpus) {
  return count_train_pii(extracted, corpus.planted_values(extracted.cls, Split::kTrain));
}

long OverlapReport::inclusion_exclusion_union() const {
  long total = 0;
  for (const auto& [mask, size] : intersection_sizes) {
    total += (std::popcount(mask) % 2 == 1 ? 1 : -1) * static_cast<long>(size);
  }
  return total;
}

Json OverlapReport::to_json() const {
  Json regions = Json::array();
  for (const auto& [mask, count] : region_counts) {
    std::vector<std::string> members;
    for (std::size_t i = 0; i < methods.size(); ++i) {
      if ((mask >> i) & 1U) members.push_back(methods[i]);
    }
    regions.push_back(Json{{"members", members}, {"count", count}});
  }
  return Json{{"class", to_string(cls)}, {"methods", methods},   {"sizes", sizes},
              {"exclusive", exclusive},  {"pairwise", pairwise}, {"union", union_size},
              {"regions", regions}};
}

std::string OverlapReport::venn_csv() const {
  std::ostringstream out;
  out << "region";
  for (const auto& m : methods) out << ',' << m;
  out << ",count\n";
  for (const auto& [mask, count] : region_counts) {
    out << mask;
    for (std::size_t i = 0; i < methods.size(); ++i) out << ',' << ((mask >> i) & 1U);
    out << ',' << count << '\n';
  }
  return out.str();
}

OverlapReport overlap(std::span<const ExtractedSet> sets) {
  if (sets.size() < 2) throw InputError("overlap needs at least two sets");
  if (sets.size() > 16) throw InputError("overlap supports at most 16 sets");
  OverlapReport r;
  r.cls = sets.front().cls;
  const std::size_t k = sets.size();
  for (const auto& s : sets) {
    if (s.cls != r.cls) throw InputError("overlap over mixed PII classes");
    r.methods.push_back(s.method);
    r.sizes.push_back(static_cast<int>(s.items.size()));
  }
  std::map<std::string, unsigned> membership;
  for (std::size_t i = 0; i < k; ++i) {
    for (const auto& item : sets[i].items) membership[item] |= 1U << i;
  }
  r.union_size = static_cast<int>(membership.size());
  for (const auto& [item, mask] : membership) ++r.region_counts[mask];
  r.exclusive.assign(k, 0);
  r.pairwise.assign(k, std::vector<int>(k, 0));
  for (unsigned m = 1; m < (1U << k); ++m) r.intersection_sizes[m] = 0;
  for (const auto& [mask, count] : r.region_counts) {
    if (std::popcount(mask) == 1) r.exclusive[static_cast<std::size_t>(std::countr_zero(mask))] += count;
    // A region contributes to every intersection whose selector it contains.
    for (unsigned sub = mask; sub != 0; sub = (sub - 1) & mask) r.intersection_sizes[sub] += count;
  }
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      r.pairwise[i][j] = i == j ? r.sizes[i] : r.intersection_sizes.at((1U << i) | (1U << j));
    }
  }
  return r;
}

std::string TransferMatrix::csv() const {
  std::ostringstream out;
  out << "attack";
  for (const auto& c : direction_sources) out << ',' << c;
  out << '\n';
  for (std::size_t i = 0; i < attacks.size(); ++i) {
    out << attacks[i];
    for (int v : train_hits[i]) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

Json TransferMatrix::to_json() const {
  return Json{{"rows", attacks}, {"columns", direction_sources}, {"train_hits", train_hits}};
}

TransferMatrix transfer_matrix(const Transformer<float>& model,
                               const std::vector<std::pair<std::string, ExtractionStrategy>>& attacks,
                               const std::map<std::string, DirectionSet>& directions, PiiClass cls, int n,
                               int length, const std::set<std::string>& train_values) {
  TransferMatrix m;
  for (const auto& [name, d] : directions) m.direction_sources.push_back(name);
  for (const auto& [attack_name, strategy] : attacks) {
    m.attacks.push_back(attack_name);
    std::vector<int> row;
    for (const auto& [source, d] : directions) {
      const auto set = extract(model, strategy, cls, &d, 1, n, length, attack_name + "+" + source);
      row.push_back(count_train_pii(set, train_values).train_hits);
    }
    m.train_hits.push_back(std::move(row));
  }
  return m;
}

Json extraction_report(const ExtractedSet& extracted, const TrainCounts& counts) {
  return Json{{"method", extracted.method},
              {"class", to_string(extracted.cls)},
              {"generations", extracted.generations},
              {"spans", extracted.spans},
              {"unique", extracted.items.size()},
              {"train_hits", counts.train_hits},
              {"novel", counts.novel},
              {"items", extracted.items}};
}

std::string qualitative_dump(const GenerationBatch& batch, PiiClass cls, int max_samples, const Gazetteer& gazetteer) {
  std::ostringstream out;
  int shown = 0;
  const auto texts = batch.texts();
  for (std::size_t i = 0; i < texts.size() && shown < max_samples; ++i) {
    const auto spans = annotate(texts[i], cls, gazetteer);
    if (spans.empty()) continue;
    std::string marked;
    std::size_t pos = 0;
    for (const auto& s : spans) {
      marked += texts[i].substr(pos, static_cast<std::size_t>(s.start) - pos);
      marked += "[[" + s.surface + "]]";
      pos = static_cast<std::size_t>(s.end);
    }
    marked += texts[i].substr(pos);
    out << "=== sample " << i << " (" << batch.strategy_id << ", " << spans.size() << " " << to_string(cls)
        << ") ===\n"
        << marked << "\n\n";
    ++shown;
  }
  return out.str();
}

}  // namespace piisteer
