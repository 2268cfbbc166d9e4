#include <gtest/gtest.h>

#include <filesystem>

#include "piisteer/corpus.hpp"
#include "piisteer/io.hpp"

namespace piisteer {
namespace {

CorpusConfig small_config() {
  CorpusConfig cfg;
  cfg.num_documents = 400;
  cfg.pii_counts = {{PiiClass::kEmail, 100}, {PiiClass::kPhone, 40}, {PiiClass::kName, 80}};
  return cfg;
}

TEST(Corpus, ExactDistinctCounts) {
  CorpusConfig cfg;
  cfg.seed = 7;
  cfg.num_documents = 2000;
  const auto corpus = generate_corpus(cfg);
  EXPECT_EQ(corpus.planted_values(PiiClass::kEmail).size(), 500u);
  EXPECT_EQ(corpus.planted_values(PiiClass::kPhone).size(), 200u);
  EXPECT_EQ(corpus.planted_values(PiiClass::kName).size(), 400u);
  for (PiiClass c : kAllPiiClasses) {
    EXPECT_EQ(corpus.planted_values(c, Split::kTrain), corpus.planted_values(c)) << to_string(c);
  }
}

TEST(Corpus, DeterministicBytes) {
  const auto dir_a = std::filesystem::temp_directory_path() / "piisteer_corpus_a";
  const auto dir_b = std::filesystem::temp_directory_path() / "piisteer_corpus_b";
  save_corpus(generate_corpus(small_config()), dir_a);
  save_corpus(generate_corpus(small_config()), dir_b);
  EXPECT_EQ(read_file(dir_a / "corpus.jsonl"), read_file(dir_b / "corpus.jsonl"));
  EXPECT_EQ(read_file(dir_a / "registry.jsonl"), read_file(dir_b / "registry.jsonl"));
  auto other = small_config();
  other.seed = 8;
  EXPECT_NE(generate_corpus(other).documents, generate_corpus(small_config()).documents);
}

TEST(Corpus, SaveLoadPreservesEverything) {
  const auto corpus = generate_corpus(small_config());
  const auto dir = std::filesystem::temp_directory_path() / "piisteer_corpus_rt";
  save_corpus(corpus, dir);
  const auto back = load_corpus(dir);
  EXPECT_EQ(back.documents, corpus.documents);
  EXPECT_EQ(back.splits, corpus.splits);
  ASSERT_EQ(back.registry.size(), corpus.registry.size());
  EXPECT_EQ(corpus_config_to_json(back.config), corpus_config_to_json(corpus.config));
}

TEST(Corpus, RegistryRecallAndStructuredPrecision) {
  const auto corpus = generate_corpus(small_config());
  // Oracle: replay every plant against the annotator output of its document.
  std::vector<std::vector<PiiSpan>> found;
  for (const auto& d : corpus.documents) found.push_back(annotate(d));
  for (const auto& p : corpus.registry) {
    const auto& spans = found[static_cast<std::size_t>(p.doc)];
    const bool hit = std::any_of(spans.begin(), spans.end(), [&](const PiiSpan& s) {
      return s.start == p.start && s.end == p.end && s.cls == p.cls && s.canonical == p.value;
    });
    EXPECT_TRUE(hit) << corpus.documents[static_cast<std::size_t>(p.doc)];
  }
  std::size_t structured_found = 0;
  std::size_t structured_planted = 0;
  for (const auto& spans : found) {
    for (const auto& s : spans) structured_found += s.cls != PiiClass::kName;
  }
  for (const auto& p : corpus.registry) structured_planted += p.cls != PiiClass::kName;
  EXPECT_EQ(structured_found, structured_planted);
}

TEST(Corpus, DocumentsFitContext) {
  const auto corpus = generate_corpus(small_config());
  for (const auto& d : corpus.documents) EXPECT_LE(d.size(), 254u);
}

TEST(Corpus, RejectsInvalidConfig) {
  auto cfg = small_config();
  cfg.num_documents = 0;
  EXPECT_THROW(generate_corpus(cfg), ConfigError);
  cfg = small_config();
  cfg.pii_counts.clear();
  EXPECT_THROW(generate_corpus(cfg), ConfigError);
  cfg = small_config();
  cfg.pii_counts[PiiClass::kPhone] = 0;
  EXPECT_THROW(generate_corpus(cfg), ConfigError);
  cfg = small_config();
  cfg.pii_counts[PiiClass::kEmail] = 5000;
  EXPECT_THROW(generate_corpus(cfg), ConfigError);
}

TEST(SplitCorpus, PaperRatios) {
  auto corpus = split_corpus(generate_corpus(small_config()), {0.45, 0.5, 0.05});
  std::vector<Split> splits = assign_splits(2000, {0.45, 0.5, 0.05}, 7);
  EXPECT_EQ(std::count(splits.begin(), splits.end(), Split::kTrain), 900);
  EXPECT_EQ(std::count(splits.begin(), splits.end(), Split::kValidation), 1000);
  EXPECT_EQ(std::count(splits.begin(), splits.end(), Split::kTest), 100);
  EXPECT_EQ(corpus.documents_in(Split::kTrain).size() + corpus.documents_in(Split::kValidation).size() +
                corpus.documents_in(Split::kTest).size(),
            corpus.documents.size());
}

TEST(SplitCorpus, AllTrainAndErrors) {
  auto corpus = split_corpus(generate_corpus(small_config()), {1.0, 0.0, 0.0});
  EXPECT_EQ(corpus.documents_in(Split::kTrain).size(), corpus.documents.size());
  EXPECT_THROW(split_corpus(corpus, {0.5, 0.2, 0.2}), ConfigError);
}

}  // namespace
}  // namespace piisteer
