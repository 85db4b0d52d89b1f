#include "lgseg/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <stdexcept>

namespace lgseg {

std::vector<std::string> normalize_words(const std::string& expr) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : expr) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (std::isspace(c)) {
      if (!cur.empty()) {
        words.push_back(cur);
        cur.clear();
      }
    }
    // punctuation is dropped entirely
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

Vocab Vocab::build(const std::vector<std::string>& corpus) {
  if (corpus.empty()) throw std::invalid_argument("Vocab::build: empty corpus");
  std::set<std::string> tokens;
  for (const std::string& expr : corpus)
    for (const std::string& w : normalize_words(expr)) tokens.insert(w);
  Vocab v;
  v.id_to_token = {"<pad>", "<unk>"};
  for (const std::string& t : tokens) v.id_to_token.push_back(t);
  for (size_t i = 0; i < v.id_to_token.size(); ++i)
    v.token_to_id[v.id_to_token[i]] = static_cast<int>(i);
  return v;
}

int Vocab::id(const std::string& token) const {
  auto it = token_to_id.find(token);
  return it == token_to_id.end() ? kUnk : it->second;
}

nlohmann::json Vocab::to_json() const { return nlohmann::json(id_to_token); }

Vocab Vocab::from_json(const nlohmann::json& j) {
  Vocab v;
  v.id_to_token = j.get<std::vector<std::string>>();
  if (v.id_to_token.size() < 2 || v.id_to_token[0] != "<pad>" ||
      v.id_to_token[1] != "<unk>")
    throw std::runtime_error("Vocab::from_json: missing reserved entries");
  for (size_t i = 0; i < v.id_to_token.size(); ++i)
    v.token_to_id[v.id_to_token[i]] = static_cast<int>(i);
  return v;
}

Tokenized tokenize(const std::string& expr, const Vocab& vocab, int t_max) {
  if (t_max < 1) throw std::invalid_argument("tokenize: t_max must be >= 1");
  const auto words = normalize_words(expr);
  if (words.empty())
    throw std::invalid_argument("tokenize: expression is empty after normalization");
  Tokenized out;
  out.T = std::min<int>(static_cast<int>(words.size()), t_max);
  out.ids.assign(t_max, Vocab::kPad);
  out.keep.assign(t_max, 0);
  for (int i = 0; i < out.T; ++i) {
    out.ids[i] = vocab.id(words[i]);
    out.keep[i] = 1;
  }
  return out;
}

}  // namespace lgseg
