#include <gtest/gtest.h>

#include <random>

#include "piisteer/apps.hpp"
#include "piisteer/extraction.hpp"
#include "piisteer/rng.hpp"

namespace piisteer {
namespace {

ExtractedSet make_set(std::string method, std::set<std::string> items, PiiClass cls = PiiClass::kEmail) {
  ExtractedSet s;
  s.method = std::move(method);
  s.cls = cls;
  s.items = std::move(items);
  return s;
}

GenerationBatch batch_of(const std::vector<std::string>& texts) {
  const Tokenizer tok;
  GenerationBatch b;
  b.strategy_id = "bos";
  for (const auto& t : texts) {
    std::vector<TokenId> tokens{Tokenizer::kBos};
    const auto body = tok.encode(t);
    tokens.insert(tokens.end(), body.begin(), body.end());
    b.sequences.push_back({{Tokenizer::kBos}, tokens});
  }
  return b;
}

TEST(Extract, DeduplicatesAndKeepsFirstPrefix) {
  const auto batch = batch_of({"hi ann@acme.com and ANN@acme.com", "nothing here", "to bo@x.org"});
  const auto set = extract_from_batch(batch, PiiClass::kEmail, "bos");
  EXPECT_EQ(set.items, (std::set<std::string>{"ann@acme.com", "bo@x.org"}));
  EXPECT_EQ(set.spans, 3);
  EXPECT_EQ(set.generations, 3);
  EXPECT_LE(static_cast<int>(set.items.size()), set.spans);
  const Tokenizer tok;
  EXPECT_EQ(tok.decode(set.first_prefix.at("ann@acme.com")), "hi ");
  EXPECT_EQ(set.first_prefix.at("bo@x.org").front(), Tokenizer::kBos);
}

TEST(Extract, RejectsMismatchedDirections) {
  ModelConfig c;
  c.num_layers = 1;
  c.model_dim = 8;
  c.num_heads = 2;
  c.context_length = 16;
  Transformer<float> model(c, Parameters<float>::initialize(c));
  DirectionSet d;
  d.vectors[0] = VectorF::Zero(9);
  EXPECT_THROW(extract(model, ExtractionStrategy{}, PiiClass::kEmail, &d, 1, 2, 4, "x"), CompatibilityError);
  d.vectors.clear();
  d.vectors[2] = VectorF::Zero(8);
  EXPECT_THROW(extract(model, ExtractionStrategy{}, PiiClass::kEmail, &d, 1, 2, 4, "x"), CompatibilityError);
  d.vectors.clear();
  d.vectors[1] = VectorF::Zero(8);
  // Zero directions in either sign reproduce the baseline exactly.
  GenerationBatch base, plus, minus;
  extract(model, ExtractionStrategy{}, PiiClass::kEmail, nullptr, 1, 6, 10, "b", &base);
  extract(model, ExtractionStrategy{}, PiiClass::kEmail, &d, 1, 6, 10, "p", &plus);
  extract(model, ExtractionStrategy{}, PiiClass::kEmail, &d, -1, 6, 10, "m", &minus);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(base.sequences[i].tokens, plus.sequences[i].tokens);
    EXPECT_EQ(base.sequences[i].tokens, minus.sequences[i].tokens);
  }
}

TEST(CountTrainPii, MatchesNaiveIntersection) {
  EXPECT_EQ(count_train_pii(make_set("a", {}), {"x"}).train_hits, 0);
  EXPECT_EQ(count_train_pii(make_set("a", {}), {"x"}).novel, 0);
  EXPECT_EQ(count_train_pii(make_set("a", {"x", "y"}), {"x", "y", "z"}).novel, 0);
  Rng rng(3);
  std::uniform_int_distribution<int> pick(0, 60);
  for (int trial = 0; trial < 50; ++trial) {
    std::set<std::string> items, reg;
    for (int i = 0; i < 30; ++i) items.insert("v" + std::to_string(pick(rng)));
    for (int i = 0; i < 30; ++i) reg.insert("v" + std::to_string(pick(rng)));
    int hits = 0;
    for (const auto& a : items) {
      for (const auto& b : reg) hits += a == b ? 1 : 0;
    }
    const auto c = count_train_pii(make_set("a", items), reg);
    EXPECT_EQ(c.train_hits, hits);
    EXPECT_EQ(c.novel, static_cast<int>(items.size()) - hits);
  }
}

TEST(Overlap, IdenticalAndDisjointSets) {
  const std::vector<ExtractedSet> same{make_set("a", {"1", "2", "3"}), make_set("b", {"1", "2", "3"})};
  const auto r = overlap(same);
  EXPECT_EQ(r.exclusive, (std::vector<int>{0, 0}));
  EXPECT_EQ(r.pairwise[0][1], 3);
  EXPECT_EQ(r.union_size, 3);
  const std::vector<ExtractedSet> apart{make_set("a", {"1", "2"}), make_set("b", {"3"})};
  const auto d = overlap(apart);
  EXPECT_EQ(d.pairwise[0][1], 0);
  EXPECT_EQ(d.union_size, 3);
  EXPECT_EQ(d.exclusive, (std::vector<int>{2, 1}));
}

// Oracle: enumerate every item's membership directly.
TEST(Overlap, FourSetsMatchBruteForceEnumeration) {
  Rng rng(17);
  std::bernoulli_distribution coin(0.35);
  std::vector<ExtractedSet> sets;
  for (int i = 0; i < 4; ++i) sets.push_back(make_set("m" + std::to_string(i), {}));
  for (int item = 0; item < 300; ++item) {
    for (auto& s : sets) {
      if (coin(rng)) s.items.insert("item" + std::to_string(item));
    }
  }
  const auto r = overlap(sets);
  std::set<std::string> all;
  for (const auto& s : sets) all.insert(s.items.begin(), s.items.end());
  EXPECT_EQ(r.union_size, static_cast<int>(all.size()));
  EXPECT_EQ(r.inclusion_exclusion_union(), static_cast<long>(all.size()));
  for (unsigned mask = 1; mask < 16; ++mask) {
    int inter = 0;
    int exact = 0;
    for (const auto& item : all) {
      unsigned m = 0;
      for (unsigned i = 0; i < 4; ++i) m |= sets[i].items.count(item) ? (1U << i) : 0U;
      inter += (m & mask) == mask ? 1 : 0;
      exact += m == mask ? 1 : 0;
    }
    EXPECT_EQ(r.intersection_sizes.at(mask), inter) << mask;
    const auto it = r.region_counts.find(mask);
    EXPECT_EQ(it == r.region_counts.end() ? 0 : it->second, exact) << mask;
  }
  for (std::size_t i = 0; i < 4; ++i) {
    int excl = 0;
    for (const auto& item : sets[i].items) {
      bool elsewhere = false;
      for (std::size_t j = 0; j < 4; ++j) elsewhere |= j != i && sets[j].items.count(item) > 0;
      excl += elsewhere ? 0 : 1;
    }
    EXPECT_EQ(r.exclusive[i], excl);
  }
  EXPECT_NE(r.venn_csv().find("region,m0,m1,m2,m3,count"), std::string::npos);
}

TEST(Overlap, RejectsMixedClassesAndSingletons) {
  const std::vector<ExtractedSet> mixed{make_set("a", {"1"}), make_set("b", {"1"}, PiiClass::kPhone)};
  EXPECT_THROW(overlap(mixed), InputError);
  const std::vector<ExtractedSet> one{make_set("a", {"1"})};
  EXPECT_THROW(overlap(one), InputError);
}

TEST(Qualitative, BracketsSpans) {
  const auto dump = qualitative_dump(batch_of({"mail ann@acme.com now", "plain"}), PiiClass::kEmail, 5);
  EXPECT_NE(dump.find("mail [[ann@acme.com]] now"), std::string::npos);
  EXPECT_EQ(dump.find("plain"), std::string::npos);
}

TEST(Apps, RepetitionRatio) {
  Generation g{{0}, {0, 5, 5, 5, 6, 1}};
  EXPECT_DOUBLE_EQ(repetition_ratio(g), 0.75);
  EXPECT_DOUBLE_EQ(repetition_ratio(Generation{{0}, {0}}), 0.0);
}

}  // namespace
}  // namespace piisteer
