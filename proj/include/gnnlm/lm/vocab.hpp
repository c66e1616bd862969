#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "gnnlm/core/check.hpp"

namespace gnnlm {

enum class TokenizerMode { kWord, kByte };

inline std::string to_string(TokenizerMode m) {
  return m == TokenizerMode::kWord ? "word" : "byte";
}

inline TokenizerMode tokenizer_mode_from(const std::string& s) {
  if (s == "word") return TokenizerMode::kWord;
  if (s == "byte") return TokenizerMode::kByte;
  throw ConfigError("tokenizer must be 'word' or 'byte', got '" + s + "'");
}

// Token ↔ dense-id mapping. Word mode reserves <unk>=0 and <bos>=1 and maps
// whitespace-separated tokens; byte mode maps raw bytes with unk/bos appended
// after the 256 byte ids.
class Vocab {
 public:
  static Vocab word_level(const std::string& text, std::size_t max_size, std::size_t min_freq) {
    GNNLM_CHECK(max_size >= 3, "word vocab needs room beyond specials");
    Vocab v;
    v.mode_ = TokenizerMode::kWord;
    v.id_to_token_ = {"<unk>", "<bos>"};
    std::unordered_map<std::string, std::size_t> freq;
    for_each_word(text, [&](const std::string& w) { ++freq[w]; });
    std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    for (const auto& [tok, n] : ranked) {
      if (n < min_freq || v.id_to_token_.size() >= max_size) break;
      v.id_to_token_.push_back(tok);
    }
    v.unk_ = 0;
    v.bos_ = 1;
    v.rebuild_index();
    return v;
  }

  static Vocab byte_level() {
    Vocab v;
    v.mode_ = TokenizerMode::kByte;
    v.id_to_token_.resize(258);
    for (int b = 0; b < 256; ++b) v.id_to_token_[b] = std::string(1, static_cast<char>(b));
    v.id_to_token_[256] = "<unk>";
    v.id_to_token_[257] = "<bos>";
    v.unk_ = 256;
    v.bos_ = 257;
    return v;
  }

  TokenizerMode mode() const { return mode_; }
  std::size_t size() const { return id_to_token_.size(); }
  std::uint32_t unk_id() const { return unk_; }
  std::uint32_t bos_id() const { return bos_; }

  std::uint32_t id_of(const std::string& tok) const {
    if (mode_ == TokenizerMode::kByte) {
      if (tok.size() == 1) return static_cast<unsigned char>(tok[0]);
      return unk_;
    }
    auto it = index_.find(tok);
    return it == index_.end() ? unk_ : it->second;
  }

  const std::string& token(std::uint32_t id) const {
    GNNLM_CHECK(id < id_to_token_.size(), "token id out of range");
    return id_to_token_[id];
  }

  std::vector<std::uint32_t> encode(const std::string& text) const {
    std::vector<std::uint32_t> ids;
    if (mode_ == TokenizerMode::kByte) {
      ids.reserve(text.size());
      for (char c : text) ids.push_back(static_cast<unsigned char>(c));
    } else {
      for_each_word(text, [&](const std::string& w) { ids.push_back(id_of(w)); });
    }
    return ids;
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw RuntimeFailure("vocab: cannot write " + path);
    os << to_string(mode_) << "\n";
    if (mode_ == TokenizerMode::kWord) {
      // Specials are implicit; list the rest in id order.
      for (std::size_t i = 2; i < id_to_token_.size(); ++i) os << id_to_token_[i] << "\n";
    }
  }

  static Vocab load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw RuntimeFailure("vocab: cannot open " + path);
    std::string mode_line;
    std::getline(is, mode_line);
    if (tokenizer_mode_from(mode_line) == TokenizerMode::kByte) return byte_level();
    Vocab v;
    v.mode_ = TokenizerMode::kWord;
    v.id_to_token_ = {"<unk>", "<bos>"};
    std::string line;
    while (std::getline(is, line))
      if (!line.empty()) v.id_to_token_.push_back(line);
    v.unk_ = 0;
    v.bos_ = 1;
    v.rebuild_index();
    return v;
  }

 private:
  template <typename Fn>
  static void for_each_word(const std::string& text, Fn&& fn) {
    std::size_t i = 0;
    const auto is_space = [](char c) {
      return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
    };
    while (i < text.size()) {
      while (i < text.size() && is_space(text[i])) ++i;
      std::size_t j = i;
      while (j < text.size() && !is_space(text[j])) ++j;
      if (j > i) fn(text.substr(i, j - i));
      i = j;
    }
  }

  void rebuild_index() {
    index_.clear();
    for (std::size_t i = 0; i < id_to_token_.size(); ++i)
      index_[id_to_token_[i]] = static_cast<std::uint32_t>(i);
  }

  TokenizerMode mode_ = TokenizerMode::kWord;
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, std::uint32_t> index_;
  std::uint32_t unk_ = 0, bos_ = 1;
};

}  // namespace gnnlm
