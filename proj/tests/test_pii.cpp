#include <gtest/gtest.h>

#include <random>

#include "piisteer/corpus.hpp"
#include "piisteer/pii.hpp"

namespace piisteer {
namespace {

TEST(Annotate, FindsEmail) {
  auto spans = annotate("contact kay.mann@enron.com now", PiiClass::kEmail);
  ASSERT_EQ(spans.size(), 1u);
  EXPECT_EQ(spans[0].start, 8);
  EXPECT_EQ(spans[0].end, 26);
  EXPECT_EQ(spans[0].canonical, "kay.mann@enron.com");
}

TEST(Annotate, EmailStopsBeforeSentencePeriod) {
  auto spans = annotate("write to kay.mann@enron.com.", PiiClass::kEmail);
  ASSERT_EQ(spans.size(), 1u);
  EXPECT_EQ(spans[0].surface, "kay.mann@enron.com");
}

TEST(Annotate, FindsPhoneFormats) {
  auto spans = annotate("call (503) 555-0142", PiiClass::kPhone);
  ASSERT_EQ(spans.size(), 1u);
  EXPECT_EQ(spans[0].canonical, "5035550142");
  EXPECT_EQ(spans[0].surface, "(503) 555-0142");
  EXPECT_EQ(annotate("a 503-555-0142 b 503.555.0142", PiiClass::kPhone).size(), 2u);
}

TEST(Annotate, PhoneRejectsLongerDigitRuns) {
  EXPECT_TRUE(annotate("id 1503-555-01429", PiiClass::kPhone).empty());
  EXPECT_TRUE(annotate("no numbers here", PiiClass::kPhone).empty());
}

TEST(Annotate, NamesNeedFirstAndLast) {
  const auto& gz = Gazetteer::builtin();
  ASSERT_TRUE(gz.is_first("Kay"));
  ASSERT_TRUE(gz.is_last("Mann"));
  auto spans = annotate("please call Kay Mann at noon", PiiClass::kName);
  ASSERT_EQ(spans.size(), 1u);
  EXPECT_EQ(spans[0].canonical, "kay mann");
  EXPECT_TRUE(annotate("Hi Kay, see you", PiiClass::kName).empty());
  EXPECT_TRUE(annotate("kay mann lowercase", PiiClass::kName).empty());
  EXPECT_TRUE(annotate("Kay  Mann double space", PiiClass::kName).empty());
}

TEST(Annotate, ClassesAreIndependent) {
  // A name-bearing email yields one email span and no name span; an explicit
  // name next to it is found separately.
  auto spans = annotate("Kay Mann <kay.mann@enron.com>");
  ASSERT_EQ(spans.size(), 2u);
  EXPECT_EQ(spans[0].cls, PiiClass::kName);
  EXPECT_EQ(spans[1].cls, PiiClass::kEmail);
}

TEST(Canonicalize, Examples) {
  EXPECT_EQ(canonicalize("Kay.Mann@Enron.COM", PiiClass::kEmail), "kay.mann@enron.com");
  EXPECT_EQ(canonicalize("(503) 555-0142", PiiClass::kPhone), "5035550142");
  EXPECT_EQ(canonicalize("Kay   Mann", PiiClass::kName), "kay mann");
  EXPECT_THROW(canonicalize("not an email", PiiClass::kEmail), CanonicalizationError);
  EXPECT_THROW(canonicalize("555-01", PiiClass::kPhone), CanonicalizationError);
  EXPECT_THROW(canonicalize("R2 D2", PiiClass::kName), CanonicalizationError);
}

TEST(Canonicalize, IdempotentOnRegistryValues) {
  CorpusConfig cfg;
  cfg.num_documents = 400;
  cfg.pii_counts = {{PiiClass::kEmail, 100}, {PiiClass::kPhone, 40}, {PiiClass::kName, 80}};
  const auto corpus = generate_corpus(cfg);
  std::mt19937 rng(1);
  int checked = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto& p = corpus.registry[std::uniform_int_distribution<std::size_t>(0, corpus.registry.size() - 1)(rng)];
    const auto surface = corpus.documents[static_cast<std::size_t>(p.doc)].substr(
        static_cast<std::size_t>(p.start), static_cast<std::size_t>(p.end - p.start));
    const auto once = canonicalize(surface, p.cls);
    EXPECT_EQ(canonicalize(once, p.cls), once);
    EXPECT_EQ(once, p.value);
    ++checked;
  }
  EXPECT_EQ(checked, 1000);
}

TEST(LabelSequence, EmailProjectsToConsecutiveTokens) {
  const std::string text = "mail me at abcde.fgh@acme.com soon";  // 18-char email
  auto ds = build_class_dataset(std::vector<std::string>{text}, PiiClass::kEmail);
  ASSERT_EQ(ds.size(), 1u);
  const auto& ex = ds.examples[0];
  ASSERT_EQ(ex.tokens.size(), text.size() + 1);
  EXPECT_EQ(ex.tokens[0], Tokenizer::kBos);
  EXPECT_EQ(ex.positives(), 18);
  int first = -1;
  for (std::size_t i = 0; i < ex.labels.size(); ++i) {
    if (ex.labels[i] != 0 && first < 0) first = static_cast<int>(i);
  }
  EXPECT_EQ(first, 12);
  for (int i = first; i < first + 18; ++i) EXPECT_EQ(ex.labels[static_cast<std::size_t>(i)], 1);
}

TEST(ClassDataset, DropsSequencesWithoutClass) {
  std::vector<std::string> gens{"no pii at all", "call (503) 555-0142", "x@y.com"};
  EXPECT_EQ(build_class_dataset(gens, PiiClass::kPhone).size(), 1u);
  EXPECT_EQ(build_class_dataset(gens, PiiClass::kEmail).size(), 1u);
  EXPECT_EQ(build_class_dataset(gens, PiiClass::kName).size(), 0u);
}

TEST(ClassDataset, LabelMassEqualsSpanLengths) {
  CorpusConfig cfg;
  cfg.num_documents = 300;
  cfg.pii_counts = {{PiiClass::kEmail, 60}, {PiiClass::kPhone, 30}, {PiiClass::kName, 60}};
  const auto corpus = generate_corpus(cfg);
  for (PiiClass cls : kAllPiiClasses) {
    // Oracle: total span length over texts that contain the class.
    long expected = 0;
    for (const auto& doc : corpus.documents) {
      for (const auto& s : annotate(doc, cls)) expected += s.end - s.start;
    }
    const auto ds = build_class_dataset(corpus.documents, cls);
    long mass = 0;
    for (const auto& ex : ds.examples) mass += ex.positives();
    EXPECT_EQ(mass, expected) << to_string(cls);
  }
}

}  // namespace
}  // namespace piisteer
