#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "piisteer/selfgen.hpp"
#include "piisteer/train.hpp"

namespace piisteer {
namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.num_layers = 1;
  c.model_dim = 16;
  c.num_heads = 2;
  c.context_length = 32;
  c.seed = 2;
  return c;
}

Corpus small_corpus() {
  CorpusConfig cc;
  cc.num_documents = 40;
  cc.pii_counts = {{PiiClass::kEmail, 10}, {PiiClass::kPhone, 5}, {PiiClass::kName, 8}};
  return generate_corpus(cc);
}

TrainingConfig short_run(int steps) {
  TrainingConfig t;
  t.steps = steps;
  t.batch_size = 4;
  t.warmup_steps = 5;
  t.learning_rate = 3e-3;
  t.seed = 5;
  return t;
}

TEST(Train, UntrainedLossIsNearLogVocab) {
  const auto res = train(small_corpus(), tiny_config(), short_run(1));
  const double ln_v = std::log(98.0);
  EXPECT_NEAR(res.losses.front(), ln_v, 0.05 * ln_v);
}

TEST(Train, DeterministicUnderSeed) {
  const auto corpus = small_corpus();
  const auto a = train(corpus, tiny_config(), short_run(20));
  const auto b = train(corpus, tiny_config(), short_run(20));
  EXPECT_EQ(a.losses, b.losses);
  EXPECT_EQ(parameters_digest(a.checkpoint.params), parameters_digest(b.checkpoint.params));
}

TEST(Train, ReducesHeldOutPerplexity) {
  const auto corpus = small_corpus();
  const auto res = train(corpus, tiny_config(), short_run(150));
  std::vector<std::string> held;
  for (int d : corpus.documents_in(Split::kValidation)) held.push_back(corpus.documents[static_cast<std::size_t>(d)]);
  ASSERT_FALSE(held.empty());
  Transformer<float> untrained(tiny_config(), Parameters<float>::initialize(tiny_config()));
  EXPECT_LT(perplexity(res.checkpoint.model(), held), perplexity(untrained, held));
  EXPECT_LT(res.losses.back(), res.losses.front());
}

TEST(Train, RejectsEmptyTrainSplit) {
  auto corpus = small_corpus();
  corpus.splits.assign(corpus.documents.size(), Split::kTest);
  EXPECT_THROW(train(corpus, tiny_config(), short_run(1)), DataError);
}

TEST(Train, DivergenceRaisesTrainingError) {
  auto hyper = short_run(50);
  hyper.learning_rate = std::numeric_limits<double>::infinity();
  try {
    train(small_corpus(), tiny_config(), hyper);
    FAIL() << "expected divergence";
  } catch (const TrainingError& e) {
    EXPECT_TRUE(e.diagnostics.contains("step"));
  }
}

TEST(SelfGeneration, EmptyRequestGivesEmptyBatch) {
  const auto c = tiny_config();
  Transformer<float> model(c, Parameters<float>::initialize(c));
  EXPECT_TRUE(run_strategy(model, ExtractionStrategy{}, 0, 10).sequences.empty());
}

TEST(SelfGeneration, DeterministicAndRoundRobin) {
  const auto c = tiny_config();
  Transformer<float> model(c, Parameters<float>::initialize(c));
  ExtractionStrategy s;
  s.kind = StrategyKind::kSingleTokenSet;
  s.prompt_tokens = {7, 9, 11};
  s.decoding.seed = 3;
  const auto a = run_strategy(model, s, 7, 12);
  const auto b = run_strategy(model, s, 7, 12);
  ASSERT_EQ(a.sequences.size(), 7u);
  for (std::size_t i = 0; i < 7; ++i) {
    EXPECT_EQ(a.sequences[i].prompt, std::vector<TokenId>{s.prompt_tokens[i % 3]});
    EXPECT_EQ(a.sequences[i].tokens, b.sequences[i].tokens);
    EXPECT_LE(a.sequences[i].tokens.size(), 13u);
    EXPECT_EQ(a.sequences[i].tokens.front(), s.prompt_tokens[i % 3]);
  }
  s.prompt_tokens.clear();
  EXPECT_THROW(run_strategy(model, s, 1, 4), ConfigError);
}

TEST(SelfGeneration, EmptyStrategyNeverEmitsBosFirst) {
  const auto c = tiny_config();
  auto p = Parameters<float>::initialize(c);
  p.final_bias.setConstant(1.0f);
  p.unembedding.col(Tokenizer::kBos).array() += 20.0f;
  Transformer<float> model(c, p);
  ExtractionStrategy s;
  s.kind = StrategyKind::kEmpty;
  for (const auto& g : run_strategy(model, s, 20, 3).sequences) EXPECT_NE(g.tokens[1], Tokenizer::kBos);
}

TEST(SelfGeneration, BatchPersistenceRoundTrips) {
  const auto c = tiny_config();
  Transformer<float> model(c, Parameters<float>::initialize(c));
  ExtractionStrategy s;
  s.decoding.seed = 8;
  const auto batch = run_strategy(model, s, 5, 10);
  const auto path = std::filesystem::temp_directory_path() / "piisteer_batch_test.jsonl";
  save_generation_batch(batch, path);
  const auto back = load_generation_batch(path);
  std::filesystem::remove(path);
  ASSERT_EQ(back.sequences.size(), batch.sequences.size());
  for (std::size_t i = 0; i < batch.sequences.size(); ++i) EXPECT_EQ(back.sequences[i].tokens, batch.sequences[i].tokens);
  EXPECT_EQ(back.seed, batch.seed);
}

TEST(SelfGeneration, ClassDatasetKeepsTokensAndOffsets) {
  const Tokenizer tok;
  GenerationBatch batch;
  auto seq = tok.encode("x ann.lee@acme.com y");
  std::vector<TokenId> with_bos{Tokenizer::kBos};
  with_bos.insert(with_bos.end(), seq.begin(), seq.end());
  with_bos.push_back(Tokenizer::kEos);
  batch.sequences.push_back({{Tokenizer::kBos}, with_bos});
  batch.sequences.push_back({{seq.front()}, seq});
  batch.sequences.push_back({{Tokenizer::kBos}, {Tokenizer::kBos, tok.to_id('q')}});
  const auto ds = build_class_dataset(batch, PiiClass::kEmail);
  ASSERT_EQ(ds.examples.size(), 2u);
  EXPECT_EQ(ds.examples[0].positives(), 16);
  EXPECT_EQ(ds.examples[0].labels[3], 1);
  EXPECT_EQ(ds.examples[0].labels[2], 0);
  EXPECT_EQ(ds.examples[1].labels[2], 1);
  EXPECT_EQ(ds.examples[0].tokens, with_bos);
}

// Brute force: every kept prompt's yield is at least the median over all scored candidates.
TEST(SelfGeneration, DerivedPromptsBeatMedianYield) {
  const auto corpus = small_corpus();
  const auto res = train(corpus, tiny_config(), short_run(60));
  const auto model = res.checkpoint.model();
  PromptSearchConfig pc;
  pc.candidate_budget = 30;
  pc.samples_per_candidate = 4;
  pc.keep = 5;
  pc.generation_length = 24;
  pc.seed = 1;
  std::vector<PromptScore> scores;
  const auto kept = derive_single_token_prompts(model, PiiClass::kName, pc, &scores);
  ASSERT_EQ(kept.size(), 5u);
  ASSERT_EQ(scores.size(), 30u);
  std::vector<int> yields;
  for (const auto& s : scores) yields.push_back(s.yield);
  std::sort(yields.begin(), yields.end());
  const double median = (yields[14] + yields[15]) / 2.0;
  for (TokenId t : kept) {
    const auto it = std::find_if(scores.begin(), scores.end(), [&](const PromptScore& s) { return s.token == t; });
    ASSERT_NE(it, scores.end());
    EXPECT_GE(it->yield, median);
  }
  pc.keep = 0;
  EXPECT_TRUE(derive_single_token_prompts(model, PiiClass::kName, pc).empty());
  pc.keep = 31;
  EXPECT_THROW(derive_single_token_prompts(model, PiiClass::kName, pc), ConfigError);
}


ClassDataset email_dataset(const std::vector<std::string>& emails) {
  std::vector<std::string> texts;
  for (const auto& e : emails) texts.push_back("mail " + e + " ok");
  return build_class_dataset(texts, PiiClass::kEmail);
}

TEST(DatasetSelection, SubsampleKeepsRequestedShareInOrder) {
  std::vector<std::string> emails;
  for (int i = 0; i < 40; ++i) emails.push_back("u" + std::to_string(i) + "@x.com");
  const auto ds = email_dataset(emails);
  std::vector<std::size_t> idx;
  const auto half = subsample_dataset(ds, 0.5, 3, &idx);
  ASSERT_EQ(half.examples.size(), 20u);
  ASSERT_EQ(idx.size(), 20u);
  EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
  for (std::size_t i = 0; i < idx.size(); ++i) EXPECT_EQ(half.examples[i].tokens, ds.examples[idx[i]].tokens);
  EXPECT_EQ(subsample_dataset(ds, 1.0, 3).examples.size(), 40u);
  EXPECT_EQ(subsample_dataset(ds, 0.0, 3).examples.size(), 0u);
  std::vector<std::size_t> again;
  subsample_dataset(ds, 0.5, 3, &again);
  EXPECT_EQ(idx, again);
}

TEST(DatasetSelection, GroundTruthMixHasExactShareAndFixedSize) {
  std::vector<std::string> emails;
  std::set<std::string> known;
  for (int i = 0; i < 30; ++i) {
    emails.push_back("k" + std::to_string(i) + "@x.com");
    known.insert(emails.back());
  }
  for (int i = 0; i < 30; ++i) emails.push_back("n" + std::to_string(i) + "@x.com");
  const auto ds = email_dataset(emails);
  const std::vector<double> fractions{0.0, 0.25, 0.5, 1.0};
  const auto size = max_mixable_size(ds, known, fractions);
  EXPECT_EQ(size, 30u);
  for (double f : fractions) {
    const auto mix = mix_ground_truth(ds, known, f, size, 9);
    ASSERT_EQ(mix.examples.size(), size);
    std::size_t gt = 0;
    for (const auto& ex : mix.examples) gt += is_ground_truth_example(ex, PiiClass::kEmail, known) ? 1 : 0;
    EXPECT_EQ(gt, static_cast<std::size_t>(std::lround(f * static_cast<double>(size)))) << f;
  }
  EXPECT_THROW(mix_ground_truth(ds, known, 1.0, 31, 9), ConfigError);
}

}  // namespace
}  // namespace piisteer
