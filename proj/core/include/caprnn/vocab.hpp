#pragma once

// Token vocabulary with three reserved specials. Ids are stable across runs:
// START=0, END=1, UNKNOWN=2, then every retained word in lexicographic order
// starting at id 3.

#include <algorithm>
#include <cctype>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "caprnn/error.hpp"
#include "caprnn/types.hpp"

namespace caprnn {

inline constexpr const char* kStartToken = "<start>";
inline constexpr const char* kEndToken = "<end>";
inline constexpr const char* kUnknownToken = "<unk>";

class Vocabulary {
 public:
  Vocabulary() : Vocabulary(std::vector<std::string>{}, 5) {}

  /// Builds from already-selected, id-ordered non-special words (used by
  /// deserialization). Words must be distinct and must not collide with the
  /// special surface forms.
  Vocabulary(std::vector<std::string> words, std::size_t min_frequency)
      : min_frequency_(min_frequency) {
    id_to_token_ = {kStartToken, kEndToken, kUnknownToken};
    id_to_token_.insert(id_to_token_.end(), words.begin(), words.end());
    for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
      auto [it, inserted] =
          token_to_id_.emplace(id_to_token_[i], static_cast<TokenId>(i));
      if (!inserted)
        throw DataError("duplicate vocabulary token '" + id_to_token_[i] + "'");
    }
  }

  std::size_t size() const { return id_to_token_.size(); }
  std::size_t min_frequency() const { return min_frequency_; }

  bool contains(const std::string& token) const {
    return token_to_id_.count(token) != 0;
  }

  /// Id of a token; unknown surface forms map to the UNKNOWN id.
  TokenId id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnknownId : it->second;
  }

  const std::string& token_of(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
      throw IndexError("token id " + std::to_string(id) +
                       " out of range [0, " + std::to_string(size()) + ")");
    return id_to_token_[static_cast<std::size_t>(id)];
  }

  std::vector<TokenId> encode(std::span<const std::string> tokens) const {
    std::vector<TokenId> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(id_of(t));
    return ids;
  }

  std::vector<std::string> decode(std::span<const TokenId> ids) const {
    std::vector<std::string> tokens;
    tokens.reserve(ids.size());
    for (TokenId id : ids) tokens.push_back(token_of(id));
    return tokens;
  }

  /// Non-special words in id order (id 3 onward).
  std::vector<std::string> words() const {
    return {id_to_token_.begin() + kSpecialTokenCount, id_to_token_.end()};
  }

  bool operator==(const Vocabulary& other) const {
    return id_to_token_ == other.id_to_token_ &&
           min_frequency_ == other.min_frequency_;
  }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, TokenId> token_to_id_;
  std::size_t min_frequency_;
};

/// Builds a vocabulary from training captions only: every word with corpus
/// frequency >= min_frequency is retained, in lexicographic order.
inline Vocabulary build_vocabulary(
    const std::vector<std::vector<std::string>>& train_captions,
    std::size_t min_frequency = 5) {
  if (train_captions.empty())
    throw UsageError("cannot build a vocabulary from zero captions");
  if (min_frequency == 0)
    throw UsageError("min_frequency must be positive");
  std::map<std::string, std::size_t> freq;  // ordered → lexicographic ids
  for (const auto& caption : train_captions)
    for (const auto& token : caption) ++freq[token];
  std::vector<std::string> kept;
  for (const auto& [token, n] : freq)
    if (n >= min_frequency) kept.push_back(token);
  return Vocabulary(std::move(kept), min_frequency);
}

/// Approximate raw-text tokenizer for convenience ingestion: lowercases,
/// strips ASCII punctuation, splits on whitespace. Curated datasets arrive
/// pre-tokenized and never pass through here.
inline std::vector<std::string> tokenize_raw(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      if (!current.empty()) tokens.push_back(std::move(current)), current.clear();
    } else if (!std::ispunct(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

}  // namespace caprnn
