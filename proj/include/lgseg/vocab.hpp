#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace lgseg {

// Word-level vocabulary built from a corpus; ids are deterministic
// (tokens sorted lexicographically after the two reserved slots).
struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  std::vector<std::string> id_to_token;
  std::unordered_map<std::string, int> token_to_id;

  static Vocab build(const std::vector<std::string>& corpus);

  int id(const std::string& token) const;  // kUnk for unknown tokens
  int size() const { return static_cast<int>(id_to_token.size()); }

  nlohmann::json to_json() const;  // plain token list, index = id
  static Vocab from_json(const nlohmann::json& j);
};

// lowercase, strip punctuation, split on whitespace
std::vector<std::string> normalize_words(const std::string& expr);

struct Tokenized {
  std::vector<int> ids;        // length t_max, padded with kPad
  std::vector<uint8_t> keep;   // length t_max, 1 for real words
  int T = 0;                   // min(word count, t_max)
};

// Truncates past t_max, maps unknown words to kUnk. Throws on expressions
// that normalize to nothing.
Tokenized tokenize(const std::string& expr, const Vocab& vocab, int t_max);

}  // namespace lgseg
