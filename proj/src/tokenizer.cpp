#include "piisteer/tokenizer.hpp"

namespace piisteer {

Tokenizer::Tokenizer() {
  alphabet_.push_back('\n');
  for (int c = 32; c < 127; ++c) alphabet_.push_back(static_cast<char>(c));
  lookup_.fill(-1);
  for (std::size_t i = 0; i < alphabet_.size(); ++i) {
    lookup_[static_cast<unsigned char>(alphabet_[i])] = static_cast<TokenId>(i) + 2;
  }
}

bool Tokenizer::is_valid_text(std::string_view text) const {
  for (char c : text) {
    if (lookup_[static_cast<unsigned char>(c)] < 0) return false;
  }
  return true;
}

TokenId Tokenizer::to_id(char c) const {
  TokenId id = lookup_[static_cast<unsigned char>(c)];
  if (id < 0) {
    throw InputError("character outside tokenizer alphabet: code " +
                     std::to_string(static_cast<int>(static_cast<unsigned char>(c))));
  }
  return id;
}

char Tokenizer::to_char(TokenId id) const {
  if (id < 2 || id >= vocab_size()) throw InputError("token id has no character: " + std::to_string(id));
  return alphabet_[static_cast<std::size_t>(id - 2)];
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> out;
  out.reserve(text.size());
  for (char c : text) out.push_back(to_id(c));
  return out;
}

std::string Tokenizer::decode(std::span<const TokenId> tokens) const {
  std::string out;
  out.reserve(tokens.size());
  for (TokenId t : tokens) {
    if (t == kBos || t == kEos) continue;
    out.push_back(to_char(t));
  }
  return out;
}

}  // namespace piisteer
