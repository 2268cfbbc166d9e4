#ifndef PIISTEER_TOKENIZER_HPP_
#define PIISTEER_TOKENIZER_HPP_

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "piisteer/common.hpp"

namespace piisteer {

/// Character-level tokenizer over printable ASCII plus newline, with
/// dedicated BOS and EOS ids. One character maps to exactly one token, so a
/// character span [a, b) of a text is the token span [a, b) of its encoding.
class Tokenizer {
 public:
  static constexpr TokenId kBos = 0;
  static constexpr TokenId kEos = 1;

  Tokenizer();

  int vocab_size() const { return static_cast<int>(alphabet_.size()) + 2; }
  const std::string& alphabet() const { return alphabet_; }

  bool is_valid_text(std::string_view text) const;

  /// Throws InputError on characters outside the alphabet.
  std::vector<TokenId> encode(std::string_view text) const;

  /// BOS and EOS are dropped; every other id must be in range.
  std::string decode(std::span<const TokenId> tokens) const;

  char to_char(TokenId id) const;
  TokenId to_id(char c) const;

 private:
  std::string alphabet_;
  std::array<TokenId, 256> lookup_{};
};

}  // namespace piisteer

#endif  // PIISTEER_TOKENIZER_HPP_
