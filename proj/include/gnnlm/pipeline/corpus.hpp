#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gnnlm/core/check.hpp"
#include "gnnlm/core/rng.hpp"
#include "gnnlm/lm/vocab.hpp"

namespace gnnlm {

// Tokenized corpus with a train/valid/test split. The train stream is viewed
// as consecutive fixed-length samples; retrieval metadata (sample id,
// position) refers to that chunking.
struct Corpus {
  Vocab vocab;
  std::vector<std::uint32_t> train, valid, test;
  std::size_t sample_len = 512;

  std::size_t n_samples() const { return (train.size() + sample_len - 1) / sample_len; }

  std::size_t sample_size(std::size_t s) const {
    const std::size_t begin = s * sample_len;
    GNNLM_CHECK(begin < train.size(), "sample id out of range");
    return std::min(sample_len, train.size() - begin);
  }

  std::uint32_t sample_token(std::size_t s, std::size_t pos) const {
    GNNLM_CHECK(pos < sample_size(s), "sample position out of range");
    return train[s * sample_len + pos];
  }

  std::size_t flat_index(std::size_t s, std::size_t pos) const { return s * sample_len + pos; }
};

struct CorpusSplit {
  double train = 0.90, valid = 0.05;  // remainder is test
};

inline Corpus make_corpus(const std::string& text, TokenizerMode mode, std::size_t vocab_max,
                          std::size_t vocab_min_freq, std::size_t sample_len,
                          CorpusSplit split = {}) {
  GNNLM_CHECK(!text.empty(), "corpus text is empty");
  Corpus c;
  c.vocab = mode == TokenizerMode::kByte ? Vocab::byte_level()
                                         : Vocab::word_level(text, vocab_max, vocab_min_freq);
  std::vector<std::uint32_t> ids = c.vocab.encode(text);
  GNNLM_CHECK(ids.size() > 16, "corpus too small to split");
  const std::size_t n_train = static_cast<std::size_t>(double(ids.size()) * split.train);
  const std::size_t n_valid = static_cast<std::size_t>(double(ids.size()) * split.valid);
  c.train.assign(ids.begin(), ids.begin() + n_train);
  c.valid.assign(ids.begin() + n_train, ids.begin() + n_train + n_valid);
  c.test.assign(ids.begin() + n_train + n_valid, ids.end());
  c.sample_len = sample_len;
  return c;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw RuntimeFailure("cannot open corpus file: " + path);
  std::ostringstream oss;
  oss << is.rdbuf();
  return oss.str();
}

struct SyntheticSpec {
  std::uint64_t seed = 1;
  std::size_t n_tokens = 1'000'000;
  std::size_t n_words = 2'000;       // distinct word types
  std::size_t n_templates = 3'000;   // recurring phrases, Zipf-weighted
  std::size_t template_len = 10;
  std::size_t filler_branch = 8;     // successors per word in the filler chain
};

// Word-level synthetic text: a low-entropy Markov "filler" stream interleaved
// with recurring template phrases whose frequencies follow a Zipf law, so a
// long tail of phrases appears only a handful of times across the corpus.
// Repetition is what makes nearest-neighbor retrieval informative here.
inline std::string generate_synthetic_text(const SyntheticSpec& spec) {
  GNNLM_CHECK(spec.n_words >= 50 && spec.template_len >= 2 && spec.n_templates >= 1);
  Rng rng(spec.seed);

  const auto word = [&](std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "w%04zu", i);
    return std::string(buf);
  };

  // Filler chain: each word has a small fixed successor set.
  std::vector<std::vector<std::uint32_t>> successors(spec.n_words);
  for (std::size_t w = 0; w < spec.n_words; ++w) {
    successors[w].resize(spec.filler_branch);
    for (auto& s : successors[w]) s = static_cast<std::uint32_t>(rng.next_below(spec.n_words));
  }

  std::vector<std::vector<std::uint32_t>> templates(spec.n_templates);
  for (auto& t : templates) {
    t.resize(spec.template_len);
    for (auto& w : t) w = static_cast<std::uint32_t>(rng.next_below(spec.n_words));
  }

  // Zipf CDF over template ranks.
  std::vector<double> cdf(spec.n_templates);
  double acc = 0;
  for (std::size_t r = 0; r < spec.n_templates; ++r) {
    acc += 1.0 / double(r + 3);
    cdf[r] = acc;
  }
  const auto sample_template = [&]() -> const std::vector<std::uint32_t>& {
    const double u = rng.next_double() * acc;
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
    return templates[static_cast<std::size_t>(it - cdf.begin())];
  };

  std::string out;
  out.reserve(spec.n_tokens * 6);
  std::size_t emitted = 0;
  std::uint32_t state = 0;
  const auto emit = [&](std::uint32_t w) {
    out += word(w);
    out += (emitted % 20 == 19) ? '\n' : ' ';
    ++emitted;
  };
  while (emitted < spec.n_tokens) {
    const std::size_t run = 6 + rng.next_below(13);  // filler run of 6..18 tokens
    for (std::size_t i = 0; i < run && emitted < spec.n_tokens; ++i) {
      state = successors[state][rng.next_below(spec.filler_branch)];
      emit(state);
    }
    const auto& tpl = sample_template();
    for (std::uint32_t w : tpl) {
      if (emitted >= spec.n_tokens) break;
      emit(w);
    }
    state = static_cast<std::uint32_t>(rng.next_below(spec.n_words));
  }
  return out;
}

}  // namespace gnnlm
