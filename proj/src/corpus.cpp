#include "piisteer/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

#include "piisteer/rng.hpp"

namespace piisteer {

namespace {

constexpr std::string_view kFillerWords =
    "the a we will to of and for on in at with this that our your please review draft agreement meeting "
    "friday monday tuesday wednesday thursday schedule call project update report budget contract deal "
    "gas power trading desk team office market price prices volume volumes week month quarter today "
    "tomorrow morning afternoon follow up attached file files note notes question questions answer "
    "approval approve signed sign send sent forward forwarded copy list items issue issues resolve "
    "discuss discussed plan plans planning proposal proposals pipeline capacity storage supply demand "
    "customer customers account accounts legal counsel credit risk position positions limit limits "
    "summary memo board group groups data numbers final version comments changes change revised "
    "confirm confirmed confirmation regarding re about next last new old current pending open closed "
    "deadline time room conference lunch travel trip hotel flight expense expenses invoice payment "
    "payments transfer transfers balance sheet model models analysis forecast forecasts estimate "
    "should could would can may might must need needs want wants think thought know let us me you "
    "i they them it is are was were be been have has had do does did not no yes all any some more "
    "most other such only also just still very well good great sure thanks again soon later early "
    "late before after during between into over under from by as if so but or because while";

constexpr std::array<std::string_view, 12> kDomains{"acme.com",     "globex.net",  "initech.org",  "hooli.com",
                                                    "vandelay.com", "umbrella.co", "soylent.net",  "cyberdyne.com",
                                                    "tyrell.org",   "wonka.com",   "gringotts.co", "oscorp.net"};
constexpr std::array<std::string_view, 3> kGreetings{"Hi", "Hello", "Dear"};
constexpr std::array<std::string_view, 4> kSignoffs{"Thanks", "Best", "Regards", "Cheers"};

struct Template {
  std::string_view text;
  double weight;
};

// Placeholders: {EMAIL} {PHONE} {NAME} plant PII; {FIRST} {GREET} {SIGNOFF}
// {SUBJECT} {BODY} are filler.
constexpr std::array<Template, 8> kMailV1{{
    {"From: {EMAIL}\nTo: {EMAIL}\nSubject: {SUBJECT}\n\n{BODY}", 1.5},
    {"Subject: {SUBJECT}\n\n{GREET} {FIRST},\n{BODY}\nyou can reach me at {EMAIL}.\n{SIGNOFF},\n{NAME}", 1.5},
    {"Subject: {SUBJECT}\n\n{BODY}\nplease call {NAME} at {PHONE} about this.", 1.0},
    {"{GREET} {FIRST},\n{BODY}\n{SIGNOFF},\n{NAME}\n{PHONE}", 1.0},
    {"Meeting notes: {SUBJECT}\n{BODY}\nattendees: {NAME}, {NAME}", 1.0},
    {"Contact: {NAME}\nPhone: {PHONE}\nEmail: {EMAIL}\n\n{BODY}", 1.0},
    {"{BODY}\n{BODY}", 1.0},
    {"Subject: {SUBJECT}\n\n{BODY}\nforwarded by {EMAIL} on behalf of {NAME}.", 1.5},
}};

std::vector<std::string> filler_words() {
  std::vector<std::string> out;
  std::istringstream in{std::string(kFillerWords)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}
template <typename T, std::size_t N>
const T& pick(const std::array<T, N>& v, Rng& rng) {
  return v[std::uniform_int_distribution<std::size_t>(0, N - 1)(rng)];
}

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::vector<std::string> make_emails(int count, const Gazetteer& gz, Rng& rng) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  int attempts = 0;
  while (static_cast<int>(out.size()) < count) {
    if (++attempts > 100 * count + 1000) throw ConfigError("cannot draw enough distinct email addresses");
    const std::string first = lower(pick(gz.first_names(), rng));
    const std::string last = lower(pick(gz.last_names(), rng));
    std::string local;
    switch (uniform_int(rng, 0, 3)) {
      case 0:
        local = first + "." + last;
        break;
      case 1:
        local = first + last;
        break;
      case 2:
        local = first.substr(0, 1) + "." + last;
        break;
      default:
        local = first + "_" + last;
        break;
    }
    std::string email = local + "@" + std::string(pick(kDomains, rng));
    if (seen.insert(email).second) out.push_back(std::move(email));
  }
  return out;
}

std::vector<std::string> make_phones(int count, Rng& rng) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  while (static_cast<int>(out.size()) < count) {
    std::string digits;
    digits.push_back(static_cast<char>('0' + uniform_int(rng, 2, 9)));
    for (int i = 0; i < 2; ++i) digits.push_back(static_cast<char>('0' + uniform_int(rng, 0, 9)));
    digits.push_back(static_cast<char>('0' + uniform_int(rng, 2, 9)));
    for (int i = 0; i < 6; ++i) digits.push_back(static_cast<char>('0' + uniform_int(rng, 0, 9)));
    if (seen.insert(digits).second) out.push_back(std::move(digits));
  }
  return out;
}

std::string phone_surface(const std::string& d, Rng& rng) {
  switch (uniform_int(rng, 0, 2)) {
    case 0:
      return "(" + d.substr(0, 3) + ") " + d.substr(3, 3) + "-" + d.substr(6);
    case 1:
      return d.substr(0, 3) + "-" + d.substr(3, 3) + "-" + d.substr(6);
    default:
      return d.substr(0, 3) + "." + d.substr(3, 3) + "." + d.substr(6);
  }
}

std::vector<std::string> make_names(int count, const Gazetteer& gz, Rng& rng) {
  if (static_cast<double>(count) > 0.5 * gz.first_names().size() * gz.last_names().size()) {
    throw ConfigError("too many distinct names requested for the gazetteer");
  }
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  while (static_cast<int>(out.size()) < count) {
    std::string name = pick(gz.first_names(), rng) + " " + pick(gz.last_names(), rng);
    if (seen.insert(name).second) out.push_back(std::move(name));
  }
  return out;
}

int draw_repetitions(const RepetitionConfig& rc, Rng& rng) {
  std::vector<double> w(static_cast<std::size_t>(rc.max_occurrences));
  for (int r = 0; r < rc.max_occurrences; ++r) w[static_cast<std::size_t>(r)] = std::pow(rc.continue_prob, r);
  return 1 + std::discrete_distribution<int>(w.begin(), w.end())(rng);
}

std::string sentence(const std::vector<std::string>& words, const VocabularyProfile& vp, Rng& rng) {
  const int n = uniform_int(rng, vp.min_words, vp.max_words);
  std::string s;
  for (int i = 0; i < n; ++i) {
    if (i > 0) s.push_back(' ');
    s += pick(words, rng);
  }
  s.push_back('.');
  return s;
}

std::string body(const std::vector<std::string>& words, const VocabularyProfile& vp, Rng& rng) {
  const int n = uniform_int(rng, vp.min_sentences, vp.max_sentences);
  std::string s;
  for (int i = 0; i < n; ++i) {
    if (i > 0) s.push_back(' ');
    s += sentence(words, vp, rng);
  }
  return s;
}

std::string subject(const std::vector<std::string>& words, Rng& rng) {
  const int n = uniform_int(rng, 2, 4);
  std::string s;
  for (int i = 0; i < n; ++i) {
    if (i > 0) s.push_back(' ');
    s += pick(words, rng);
  }
  return s;
}

struct Slot {
  int doc;
  int index;  // order of this class's placeholder within the document
};

int count_placeholders(std::string_view text, std::string_view key) {
  int n = 0;
  for (std::size_t pos = text.find(key); pos != std::string_view::npos; pos = text.find(key, pos + 1)) ++n;
  return n;
}

std::string_view placeholder(PiiClass c) {
  switch (c) {
    case PiiClass::kEmail:
      return "{EMAIL}";
    case PiiClass::kPhone:
      return "{PHONE}";
    case PiiClass::kName:
      return "{NAME}";
  }
  return "";
}

}  // namespace

void CorpusConfig::validate() const {
  if (num_documents < 1) throw ConfigError("num_documents must be >= 1");
  if (pii_counts.empty()) throw ConfigError("pii_counts must name at least one class");
  for (PiiClass c : kAllPiiClasses) {
    auto it = pii_counts.find(c);
    if (it == pii_counts.end() || it->second < 1) {
      throw ConfigError("pii_counts must be >= 1 for class " + std::string(to_string(c)));
    }
  }
  if (!(repetition.continue_prob >= 0.0 && repetition.continue_prob < 1.0) || repetition.max_occurrences < 1) {
    throw ConfigError("repetition needs continue_prob in [0, 1) and max_occurrences >= 1");
  }
  if (template_set_id != "mail-v1") throw ConfigError("unknown template set: " + template_set_id);
  const auto& v = vocabulary;
  if (v.min_sentences < 1 || v.max_sentences < v.min_sentences || v.min_words < 1 || v.max_words < v.min_words) {
    throw ConfigError("invalid vocabulary profile");
  }
  double total = 0.0;
  for (double r : split_ratios) {
    if (r < 0.0) throw ConfigError("split ratios must be non-negative");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  if (max_document_chars < 64) throw ConfigError("max_document_chars must be >= 64");
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain:
      return "train";
    case Split::kValidation:
      return "validation";
    case Split::kTest:
      return "test";
  }
  return "unknown";
}

Split split_from_string(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "validation") return Split::kValidation;
  if (s == "test") return Split::kTest;
  throw FormatError("unknown split tag: " + std::string(s));
}

Json corpus_config_to_json(const CorpusConfig& c) {
  Json counts = Json::object();
  for (const auto& [cls, n] : c.pii_counts) counts[std::string(to_string(cls))] = n;
  return Json{{"seed", c.seed},
              {"num_documents", c.num_documents},
              {"pii_counts", counts},
              {"repetition",
               {{"continue_prob", c.repetition.continue_prob}, {"max_occurrences", c.repetition.max_occurrences}}},
              {"template_set_id", c.template_set_id},
              {"vocabulary",
               {{"min_sentences", c.vocabulary.min_sentences},
                {"max_sentences", c.vocabulary.max_sentences},
                {"min_words", c.vocabulary.min_words},
                {"max_words", c.vocabulary.max_words}}},
              {"split_ratios", c.split_ratios},
              {"max_document_chars", c.max_document_chars}};
}

CorpusConfig corpus_config_from_json(const Json& j) {
  CorpusConfig c;
  c.seed = j.value("seed", c.seed);
  c.num_documents = j.value("num_documents", c.num_documents);
  if (j.contains("pii_counts")) {
    c.pii_counts.clear();
    for (const auto& [k, v] : j.at("pii_counts").items()) c.pii_counts[pii_class_from_string(k)] = v.get<int>();
  }
  if (j.contains("repetition")) {
    c.repetition.continue_prob = j["repetition"].value("continue_prob", c.repetition.continue_prob);
    c.repetition.max_occurrences = j["repetition"].value("max_occurrences", c.repetition.max_occurrences);
  }
  c.template_set_id = j.value("template_set_id", c.template_set_id);
  if (j.contains("vocabulary")) {
    const auto& v = j["vocabulary"];
    c.vocabulary.min_sentences = v.value("min_sentences", c.vocabulary.min_sentences);
    c.vocabulary.max_sentences = v.value("max_sentences", c.vocabulary.max_sentences);
    c.vocabulary.min_words = v.value("min_words", c.vocabulary.min_words);
    c.vocabulary.max_words = v.value("max_words", c.vocabulary.max_words);
  }
  if (j.contains("split_ratios")) c.split_ratios = j.at("split_ratios").get<std::array<double, 3>>();
  c.max_document_chars = j.value("max_document_chars", c.max_document_chars);
  return c;
}

std::vector<int> Corpus::documents_in(Split s) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (splits[i] == s) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::set<std::string> Corpus::planted_values(PiiClass cls, std::optional<Split> split) const {
  std::set<std::string> out;
  for (const auto& p : registry) {
    if (p.cls != cls) continue;
    if (split && splits[static_cast<std::size_t>(p.doc)] != *split) continue;
    out.insert(p.value);
  }
  return out;
}

std::vector<Split> assign_splits(int n, const std::array<double, 3>& ratios, std::uint64_t seed) {
  double total = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  if (ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0) throw ConfigError("split ratios must be non-negative");
  const int n_train = static_cast<int>(std::llround(ratios[0] * n));
  const int n_val = std::min(n - n_train, static_cast<int>(std::llround(ratios[1] * n)));
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "split"));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Split> out(static_cast<std::size_t>(n), Split::kTest);
  for (int i = 0; i < n; ++i) {
    const auto doc = static_cast<std::size_t>(order[static_cast<std::size_t>(i)]);
    out[doc] = i < n_train ? Split::kTrain : (i < n_train + n_val ? Split::kValidation : Split::kTest);
  }
  return out;
}

Corpus split_corpus(Corpus corpus, const std::array<double, 3>& ratios) {
  corpus.splits = assign_splits(static_cast<int>(corpus.documents.size()), ratios, corpus.config.seed);
  return corpus;
}

Corpus generate_corpus(const CorpusConfig& config) {
  config.validate();
  const auto& gz = Gazetteer::builtin();
  const auto words = filler_words();
  const int n = config.num_documents;

  Corpus corpus;
  corpus.config = config;
  corpus.splits = assign_splits(n, config.split_ratios, config.seed);

  // Templates per document.
  Rng template_rng(derive_seed(config.seed, "templates"));
  std::vector<double> weights;
  for (const auto& t : kMailV1) weights.push_back(t.weight);
  std::discrete_distribution<int> choose(weights.begin(), weights.end());
  std::vector<int> templates(static_cast<std::size_t>(n));
  for (auto& t : templates) t = choose(template_rng);

  // Values per class, then occurrences assigned to placeholder slots.
  std::map<PiiClass, std::vector<std::string>> values;
  {
    Rng value_rng(derive_seed(config.seed, "values"));
    values[PiiClass::kEmail] = make_emails(config.pii_counts.at(PiiClass::kEmail), gz, value_rng);
    values[PiiClass::kPhone] = make_phones(config.pii_counts.at(PiiClass::kPhone), value_rng);
    values[PiiClass::kName] = make_names(config.pii_counts.at(PiiClass::kName), gz, value_rng);
  }
  std::map<PiiClass, std::vector<std::vector<int>>> assignment;  // class -> doc -> value indices per slot
  Rng slot_rng(derive_seed(config.seed, "slots"));
  for (PiiClass cls : kAllPiiClasses) {
    auto& per_doc = assignment[cls];
    per_doc.assign(static_cast<std::size_t>(n), {});
    std::vector<Slot> train_slots, other_slots;
    for (int d = 0; d < n; ++d) {
      const int k = count_placeholders(kMailV1[static_cast<std::size_t>(templates[static_cast<std::size_t>(d)])].text,
                                       placeholder(cls));
      per_doc[static_cast<std::size_t>(d)].assign(static_cast<std::size_t>(k), -1);
      for (int i = 0; i < k; ++i) {
        (corpus.splits[static_cast<std::size_t>(d)] == Split::kTrain ? train_slots : other_slots).push_back({d, i});
      }
    }
    const auto& vals = values[cls];
    if (train_slots.size() < vals.size()) {
      throw ConfigError("corpus too small: " + std::to_string(train_slots.size()) + " train slots for " +
                        std::to_string(vals.size()) + " distinct " + std::string(to_string(cls)) + " values");
    }
    std::shuffle(train_slots.begin(), train_slots.end(), slot_rng);
    std::vector<int> reps(vals.size());
    for (auto& r : reps) r = draw_repetitions(config.repetition, slot_rng);
    for (std::size_t v = 0; v < vals.size(); ++v) {
      const auto& s = train_slots[v];
      per_doc[static_cast<std::size_t>(s.doc)][static_cast<std::size_t>(s.index)] = static_cast<int>(v);
    }
    std::vector<Slot> pool(train_slots.begin() + static_cast<std::ptrdiff_t>(vals.size()), train_slots.end());
    pool.insert(pool.end(), other_slots.begin(), other_slots.end());
    std::shuffle(pool.begin(), pool.end(), slot_rng);
    std::size_t next = 0;
    for (std::size_t v = 0; v < vals.size() && next < pool.size(); ++v) {
      for (int r = 1; r < reps[v] && next < pool.size(); ++r, ++next) {
        per_doc[static_cast<std::size_t>(pool[next].doc)][static_cast<std::size_t>(pool[next].index)] =
            static_cast<int>(v);
      }
    }
    // Leftover slots reuse values in proportion to their repetition draw.
    std::discrete_distribution<int> by_reps(reps.begin(), reps.end());
    for (; next < pool.size(); ++next) {
      per_doc[static_cast<std::size_t>(pool[next].doc)][static_cast<std::size_t>(pool[next].index)] =
          by_reps(slot_rng);
    }
  }

  // Render.
  corpus.documents.resize(static_cast<std::size_t>(n));
  for (int d = 0; d < n; ++d) {
    Rng rng(derive_seed(config.seed, "doc/" + std::to_string(d)));
    const std::string_view tpl = kMailV1[static_cast<std::size_t>(templates[static_cast<std::size_t>(d)])].text;
    for (int attempt = 0;; ++attempt) {
      std::string text;
      std::vector<Plant> plants;
      std::map<PiiClass, int> used;
      for (std::size_t i = 0; i < tpl.size();) {
        if (tpl[i] != '{') {
          text.push_back(tpl[i++]);
          continue;
        }
        const auto close = tpl.find('}', i);
        const std::string_view key = tpl.substr(i, close - i + 1);
        i = close + 1;
        std::optional<PiiClass> cls;
        if (key == "{EMAIL}") cls = PiiClass::kEmail;
        if (key == "{PHONE}") cls = PiiClass::kPhone;
        if (key == "{NAME}") cls = PiiClass::kName;
        if (cls) {
          const int slot = used[*cls]++;
          const int v = assignment[*cls][static_cast<std::size_t>(d)][static_cast<std::size_t>(slot)];
          const std::string& value = values[*cls][static_cast<std::size_t>(v)];
          const std::string surface = *cls == PiiClass::kPhone ? phone_surface(value, rng) : value;
          const int start = static_cast<int>(text.size());
          text += surface;
          plants.push_back(Plant{d, start, static_cast<int>(text.size()), *cls, canonicalize(surface, *cls)});
        } else if (key == "{FIRST}") {
          text += pick(gz.first_names(), rng);
        } else if (key == "{GREET}") {
          text += pick(kGreetings, rng);
        } else if (key == "{SIGNOFF}") {
          text += pick(kSignoffs, rng);
        } else if (key == "{SUBJECT}") {
          text += subject(words, rng);
        } else if (key == "{BODY}") {
          VocabularyProfile vp = config.vocabulary;
          // Shrink the filler on retries so long PII never blocks rendering.
          if (attempt > 4) vp.max_sentences = vp.min_sentences = 1;
          if (attempt > 8) vp.max_words = vp.min_words;
          text += body(words, vp, rng);
        }
      }
      if (static_cast<int>(text.size()) <= config.max_document_chars) {
        corpus.documents[static_cast<std::size_t>(d)] = std::move(text);
        corpus.registry.insert(corpus.registry.end(), plants.begin(), plants.end());
        break;
      }
      if (attempt > 20) throw ConfigError("cannot render document within max_document_chars");
    }
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  const Json header{{"type", "header"}, {"config", corpus_config_to_json(corpus.config)},
                    {"seed", corpus.config.seed}, {"documents", corpus.documents.size()}};
  std::vector<Json> docs{header};
  for (std::size_t i = 0; i < corpus.documents.size(); ++i) {
    docs.push_back(Json{{"index", i}, {"split", to_string(corpus.splits[i])}, {"text", corpus.documents[i]}});
  }
  write_jsonl(dir / "corpus.jsonl", docs);
  std::vector<Json> plants{Json{{"type", "header"}, {"config", corpus_config_to_json(corpus.config)},
                                {"seed", corpus.config.seed}, {"plants", corpus.registry.size()}}};
  for (const auto& p : corpus.registry) {
    plants.push_back(Json{{"doc", p.doc}, {"start", p.start}, {"end", p.end}, {"class", to_string(p.cls)},
                          {"value", p.value}});
  }
  write_jsonl(dir / "registry.jsonl", plants);
}

Corpus load_corpus(const std::filesystem::path& dir) {
  const auto docs = read_jsonl(dir / "corpus.jsonl");
  const auto plants = read_jsonl(dir / "registry.jsonl");
  if (docs.empty() || docs.front().value("type", "") != "header" || plants.empty() ||
      plants.front().value("type", "") != "header") {
    throw FormatError("corpus files in " + dir.string() + " lack header records");
  }
  Corpus corpus;
  corpus.config = corpus_config_from_json(docs.front().at("config"));
  for (std::size_t i = 1; i < docs.size(); ++i) {
    if (docs[i].at("index").get<std::size_t>() != i - 1) throw FormatError("corpus documents out of order");
    corpus.documents.push_back(docs[i].at("text").get<std::string>());
    corpus.splits.push_back(split_from_string(docs[i].at("split").get<std::string>()));
  }
  for (std::size_t i = 1; i < plants.size(); ++i) {
    const auto& p = plants[i];
    corpus.registry.push_back(Plant{p.at("doc").get<int>(), p.at("start").get<int>(), p.at("end").get<int>(),
                                    pii_class_from_string(p.at("class").get<std::string>()),
                                    p.at("value").get<std::string>()});
  }
  return corpus;
}

}  // namespace piisteer
