#include "piisteer/pii.hpp"

#include <algorithm>
#include <cctype>
#include <regex>
#include <sstream>

namespace piisteer {

namespace detail {
extern const std::string_view kFirstNamesText;
extern const std::string_view kLastNamesText;
}  // namespace detail

namespace {

const std::regex& email_pattern() {
  static const std::regex re(R"([A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(?:\.[A-Za-z0-9-]+)*\.[A-Za-z]{2,})");
  return re;
}

const std::regex& phone_pattern() {
  static const std::regex re(R"((?:\(\d{3}\) ?|\d{3}[-.])\d{3}[-.]\d{4})");
  return re;
}

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

void find_emails(std::string_view text, std::vector<PiiSpan>& out) {
  if (text.find('@') == std::string_view::npos) return;
  using It = std::string_view::const_iterator;
  std::match_results<It> m;
  It begin = text.begin();
  while (std::regex_search(begin, text.end(), m, email_pattern())) {
    const int start = static_cast<int>(m[0].first - text.begin());
    const int end = static_cast<int>(m[0].second - text.begin());
    std::string surface(m[0].first, m[0].second);
    out.push_back(PiiSpan{start, end, PiiClass::kEmail, surface, lowercase(surface)});
    begin = m[0].second;
  }
}

void find_phones(std::string_view text, std::vector<PiiSpan>& out) {
  using It = std::string_view::const_iterator;
  std::match_results<It> m;
  It begin = text.begin();
  while (begin != text.end() && std::regex_search(begin, text.end(), m, phone_pattern())) {
    const auto start = static_cast<std::size_t>(m[0].first - text.begin());
    const auto end = static_cast<std::size_t>(m[0].second - text.begin());
    const bool digit_before = start > 0 && is_digit(text[start - 1]);
    const bool digit_after = end < text.size() && is_digit(text[end]);
    if (digit_before || digit_after) {
      begin = m[0].first + 1;
      continue;
    }
    std::string surface(m[0].first, m[0].second);
    std::string digits;
    for (char c : surface) {
      if (is_digit(c)) digits.push_back(c);
    }
    out.push_back(PiiSpan{static_cast<int>(start), static_cast<int>(end), PiiClass::kPhone, surface, digits});
    begin = m[0].second;
  }
}

// Pairs of adjacent words "First Last" separated by one space, scanned left
// to right; a matched pair consumes both words.
void find_names(std::string_view text, const Gazetteer& gz, std::vector<PiiSpan>& out) {
  struct Word {
    std::size_t start, end;
  };
  std::vector<Word> words;
  for (std::size_t i = 0; i < text.size();) {
    if (!is_alpha(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && is_alpha(text[j])) ++j;
    words.push_back({i, j});
    i = j;
  }
  for (std::size_t w = 0; w + 1 < words.size(); ++w) {
    const auto& a = words[w];
    const auto& b = words[w + 1];
    if (b.start != a.end + 1 || text[a.end] != ' ') continue;
    if (!gz.is_first(text.substr(a.start, a.end - a.start))) continue;
    if (!gz.is_last(text.substr(b.start, b.end - b.start))) continue;
    std::string surface(text.substr(a.start, b.end - a.start));
    out.push_back(PiiSpan{static_cast<int>(a.start), static_cast<int>(b.end), PiiClass::kName, surface,
                          lowercase(surface)});
    ++w;
  }
}

}  // namespace

std::string_view to_string(PiiClass c) {
  switch (c) {
    case PiiClass::kEmail:
      return "email";
    case PiiClass::kPhone:
      return "phone";
    case PiiClass::kName:
      return "name";
  }
  return "unknown";
}

PiiClass pii_class_from_string(std::string_view name) {
  if (name == "email") return PiiClass::kEmail;
  if (name == "phone") return PiiClass::kPhone;
  if (name == "name") return PiiClass::kName;
  throw ConfigError("unknown PII class: " + std::string(name));
}

const Gazetteer& Gazetteer::builtin() {
  static const Gazetteer g(split_lines(detail::kFirstNamesText), split_lines(detail::kLastNamesText));
  return g;
}

Gazetteer::Gazetteer(std::vector<std::string> first, std::vector<std::string> last)
    : first_(std::move(first)), last_(std::move(last)) {
  first_set_.insert(first_.begin(), first_.end());
  last_set_.insert(last_.begin(), last_.end());
}

std::string canonicalize(std::string_view surface, PiiClass cls) {
  switch (cls) {
    case PiiClass::kEmail: {
      if (!std::regex_match(surface.begin(), surface.end(), email_pattern())) {
        throw CanonicalizationError("not an email address: " + std::string(surface));
      }
      return lowercase(surface);
    }
    case PiiClass::kPhone: {
      const bool bare = surface.size() == 10 && std::all_of(surface.begin(), surface.end(), is_digit);
      if (!bare && !std::regex_match(surface.begin(), surface.end(), phone_pattern())) {
        throw CanonicalizationError("not a phone number: " + std::string(surface));
      }
      std::string digits;
      for (char c : surface) {
        if (is_digit(c)) digits.push_back(c);
      }
      return digits;
    }
    case PiiClass::kName: {
      std::string out;
      std::size_t words = 0;
      bool in_word = false;
      for (char c : surface) {
        if (c == ' ' || c == '\t' || c == '\n') {
          in_word = false;
          continue;
        }
        if (!is_alpha(c)) throw CanonicalizationError("not a personal name: " + std::string(surface));
        if (!in_word) {
          if (words > 0) out.push_back(' ');
          ++words;
          in_word = true;
        }
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
      }
      if (words == 0) throw CanonicalizationError("empty name");
      return out;
    }
  }
  throw CanonicalizationError("unknown class");
}

std::vector<PiiSpan> annotate(std::string_view text, PiiClass cls, const Gazetteer& gazetteer) {
  std::vector<PiiSpan> out;
  switch (cls) {
    case PiiClass::kEmail:
      find_emails(text, out);
      break;
    case PiiClass::kPhone:
      find_phones(text, out);
      break;
    case PiiClass::kName:
      find_names(text, gazetteer, out);
      break;
  }
  return out;
}

std::vector<PiiSpan> annotate(std::string_view text, const Gazetteer& gazetteer) {
  std::vector<PiiSpan> out;
  for (PiiClass c : kAllPiiClasses) {
    auto spans = annotate(text, c, gazetteer);
    out.insert(out.end(), spans.begin(), spans.end());
  }
  std::stable_sort(out.begin(), out.end(), [](const PiiSpan& a, const PiiSpan& b) {
    return a.start < b.start || (a.start == b.start && a.cls < b.cls);
  });
  return out;
}

int LabelSequence::positives() const {
  int n = 0;
  for (auto l : labels) n += l;
  return n;
}

std::optional<LabelSequence> label_sequence(std::span<const TokenId> tokens, int text_offset, PiiClass cls,
                                            const Tokenizer& tokenizer, const Gazetteer& gazetteer) {
  if (text_offset < 0 || static_cast<std::size_t>(text_offset) > tokens.size()) {
    throw InputError("text offset outside token sequence");
  }
  std::string text;
  for (std::size_t i = static_cast<std::size_t>(text_offset); i < tokens.size(); ++i) {
    if (tokens[i] == Tokenizer::kBos || tokens[i] == Tokenizer::kEos) break;
    text.push_back(tokenizer.to_char(tokens[i]));
  }
  LabelSequence seq;
  seq.tokens.assign(tokens.begin(), tokens.end());
  seq.labels.assign(tokens.size(), 0);
  for (const auto& span : annotate(text, cls, gazetteer)) {
    for (int c = span.start; c < span.end; ++c) {
      const auto t = static_cast<std::size_t>(text_offset + c);
      if (tokenizer.to_char(seq.tokens[t]) != text[static_cast<std::size_t>(c)]) {
        throw AnnotationError("span does not align with tokens");
      }
      seq.labels[t] = 1;
    }
  }
  if (seq.positives() == 0) return std::nullopt;
  return seq;
}

ClassDataset build_class_dataset(std::span<const std::string> generations, PiiClass cls, const Tokenizer& tokenizer,
                                 const Gazetteer& gazetteer) {
  ClassDataset ds;
  ds.cls = cls;
  for (const auto& text : generations) {
    std::vector<TokenId> tokens{Tokenizer::kBos};
    const auto body = tokenizer.encode(text);
    tokens.insert(tokens.end(), body.begin(), body.end());
    if (auto seq = label_sequence(tokens, 1, cls, tokenizer, gazetteer)) ds.examples.push_back(std::move(*seq));
  }
  return ds;
}

void save_class_dataset(const ClassDataset& ds, const std::filesystem::path& path) {
  std::vector<Json> records;
  records.push_back(Json{{"type", "header"}, {"class", to_string(ds.cls)}, {"provenance", ds.provenance},
                         {"examples", ds.examples.size()}});
  for (const auto& ex : ds.examples) {
    std::string bits;
    bits.reserve(ex.labels.size());
    for (auto l : ex.labels) bits.push_back(l != 0 ? '1' : '0');
    records.push_back(Json{{"tokens", ex.tokens}, {"labels", bits}, {"class", to_string(ds.cls)}});
  }
  write_jsonl(path, records);
}

ClassDataset load_class_dataset(const std::filesystem::path& path) {
  const auto records = read_jsonl(path);
  if (records.empty() || records.front().value("type", "") != "header") {
    throw FormatError(path.string() + ": missing class dataset header");
  }
  ClassDataset ds;
  ds.cls = pii_class_from_string(records.front().at("class").get<std::string>());
  ds.provenance = records.front().value("provenance", Json::object());
  for (std::size_t i = 1; i < records.size(); ++i) {
    LabelSequence ex;
    ex.tokens = records[i].at("tokens").get<std::vector<TokenId>>();
    const auto bits = records[i].at("labels").get<std::string>();
    if (bits.size() != ex.tokens.size()) throw FormatError("label length mismatch in " + path.string());
    for (char b : bits) ex.labels.push_back(b == '1' ? 1 : 0);
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

}  // namespace piisteer
