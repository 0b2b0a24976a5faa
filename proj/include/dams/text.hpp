#pragma once

// Word-level tokenization and the vocabulary.

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dams/nn.hpp"

namespace dams {

/// Lowercases, splits on whitespace, and makes every ASCII punctuation
/// character its own token. Bytes ≥ 0x80 stay inside words.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return out;
}

inline std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

/// Tokens of one speaker turn: [CLS] speaker : text
inline std::vector<std::string> utterance_tokens(std::string_view speaker, std::string_view text) {
  std::vector<std::string> out{"[CLS]"};
  for (auto& t : tokenize(speaker)) out.push_back(std::move(t));
  out.emplace_back(":");
  for (auto& t : tokenize(text)) out.push_back(std::move(t));
  return out;
}

class Vocab {
 public:
  static inline const std::vector<std::string> kSpecials = {"[PAD]", "[CLS]", "[MASK]",
                                                            "[BOS]", "[EOS]", "[UNK]"};

  Vocab() {
    for (const auto& s : kSpecials) add(s);
  }

  /// Most frequent tokens after the specials; ties broken lexicographically.
  static Vocab build(const std::vector<std::vector<std::string>>& token_streams, std::size_t max_size) {
    if (token_streams.empty()) fail(ErrorKind::data, "build_vocab: no records");
    if (max_size < kSpecials.size()) fail(ErrorKind::config, "build_vocab: max_size smaller than specials");
    std::map<std::string, std::size_t> counts;
    for (const auto& s : token_streams)
      for (const auto& t : s) ++counts[t];
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocab v;
    for (const auto& [tok, n] : ranked) {
      if (v.size() >= max_size) break;
      if (v.index_.count(tok)) continue;
      v.add(tok);
    }
    return v;
  }

  static Vocab load(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot open vocab file " + path);
    std::vector<std::string> tokens;
    for (std::string line; std::getline(in, line);) tokens.push_back(line);
    return from_tokens(tokens, path);
  }

  /// Vocabulary with exactly these tokens in id order; specials must lead.
  static Vocab from_tokens(const std::vector<std::string>& tokens, const std::string& where = "vocab") {
    Vocab v;
    v.tokens_.clear();
    v.index_.clear();
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (v.index_.count(tokens[i]))
        fail(ErrorKind::data, where + ":" + std::to_string(i + 1) + ": duplicate token '" + tokens[i] + "'");
      v.add(tokens[i]);
    }
    for (std::size_t i = 0; i < kSpecials.size(); ++i)
      if (i >= v.tokens_.size() || v.tokens_[i] != kSpecials[i])
        fail(ErrorKind::data, where + ": special tokens missing from the first lines");
    return v;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write vocab file " + path);
    for (const auto& t : tokens_) out << t << '\n';
  }

  std::size_t size() const { return tokens_.size(); }
  bool contains(const std::string& tok) const { return index_.count(tok) != 0; }

  int id(const std::string& tok) const {
    auto it = index_.find(tok);
    return it == index_.end() ? token::unk : it->second;
  }
  const std::string& token_of(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  std::vector<int> encode(const std::vector<std::string>& toks) const {
    std::vector<int> out;
    out.reserve(toks.size());
    for (const auto& t : toks) out.push_back(id(t));
    return out;
  }

  /// Token strings with specials (other than [UNK]) removed.
  std::vector<std::string> decode(const std::vector<int>& ids, bool strip_specials = true) const {
    std::vector<std::string> out;
    for (int i : ids) {
      if (strip_specials && i >= 0 && i < token::num_specials && i != token::unk) continue;
      out.push_back(token_of(i));
    }
    return out;
  }

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  void add(const std::string& tok) {
    index_.emplace(tok, static_cast<int>(tokens_.size()));
    tokens_.push_back(tok);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace dams
