#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "gnnlm/lm/transformer.hpp"

namespace gnnlm {

// Sliding non-overlapping evaluation: the stream is scored in blocks of
// `scored` tokens, each encoded in a window of up to context+scored tokens
// where `context` counts warm tokens before the first scored position.
// Position 0 is never scored (it has no context).
struct EvalWindowing {
  std::size_t context = 96;
  std::size_t scored = 32;
  std::size_t max_tokens = 0;  // cap on scored tokens; 0 = whole stream
};

struct EvalBlock {
  std::size_t window_begin = 0;           // stream position of window[0]
  std::vector<std::uint32_t> window;      // tokens to encode
  std::size_t first_scored = 0;           // first scored stream position
  std::size_t n_scored = 0;
  // Window row holding the predictor representation for scored token p.
  std::size_t predictor_row(std::size_t p) const { return p - 1 - window_begin; }
};

inline std::vector<EvalBlock> make_eval_blocks(std::span<const std::uint32_t> stream,
                                               const EvalWindowing& w) {
  GNNLM_CHECK(stream.size() > 1, "stream must be longer than 1 token");
  GNNLM_CHECK(w.scored >= 1 && w.context >= 1);
  std::size_t limit = stream.size();
  if (w.max_tokens > 0) limit = std::min(limit, 1 + w.max_tokens);
  std::vector<EvalBlock> blocks;
  for (std::size_t b0 = 1; b0 < limit; b0 += w.scored) {
    const std::size_t b1 = std::min(limit, b0 + w.scored);
    EvalBlock blk;
    blk.window_begin = b0 > w.context ? b0 - w.context : 0;
    blk.window.assign(stream.begin() + blk.window_begin, stream.begin() + b1);
    blk.first_scored = b0;
    blk.n_scored = b1 - b0;
    blocks.push_back(std::move(blk));
  }
  return blocks;
}

// Returns a row-stochastic n_scored×V matrix: row i is the model's
// distribution over the token at stream position first_scored+i.
using BlockProbFn = std::function<Tensor(const EvalBlock&)>;

struct StreamScore {
  std::vector<std::size_t> positions;  // scored stream positions
  std::vector<double> nll;             // per-position negative log-likelihood
  double max_norm_err = 0;             // max |Σ probs − 1| over all rows seen

  double mean_nll() const {
    double s = 0;
    for (double v : nll) s += v;
    return nll.empty() ? 0.0 : s / double(nll.size());
  }
  double perplexity() const { return std::exp(mean_nll()); }
  double bits_per_char() const { return mean_nll() / std::log(2.0); }
};

inline StreamScore score_stream(std::span<const std::uint32_t> stream, const EvalWindowing& w,
                                const BlockProbFn& provider) {
  StreamScore score;
  for (const EvalBlock& blk : make_eval_blocks(stream, w)) {
    Tensor probs = provider(blk);
    GNNLM_CHECK(probs.ndim() == 2 && probs.rows() == blk.n_scored,
                "provider returned wrong row count");
    const std::size_t v = probs.cols();
    for (std::size_t i = 0; i < blk.n_scored; ++i) {
      const std::size_t p = blk.first_scored + i;
      const std::uint32_t gold = stream[p];
      GNNLM_CHECK(gold < v, "stream token outside distribution support");
      double row_sum = 0;
      for (std::size_t j = 0; j < v; ++j) row_sum += probs.at(i, j);
      score.max_norm_err = std::max(score.max_norm_err, std::abs(row_sum - 1.0));
      score.positions.push_back(p);
      score.nll.push_back(-std::log(static_cast<double>(probs.at(i, gold))));
    }
  }
  return score;
}

// Distribution provider backed by the frozen base LM.
inline BlockProbFn base_lm_provider(const LmConfig& cfg, LmParams& params) {
  return [&cfg, &params](const EvalBlock& blk) {
    LmOutput out = lm_encode(nullptr, cfg, params, blk.window);
    const std::size_t r0 = blk.predictor_row(blk.first_scored);
    Tensor rows = ops::row_slice(nullptr, out.logits, r0, r0 + blk.n_scored);
    return ops::softmax(nullptr, rows);
  };
}

inline double perplexity(const LmConfig& cfg, LmParams& params,
                         std::span<const std::uint32_t> stream, const EvalWindowing& w) {
  return score_stream(stream, w, base_lm_provider(cfg, params)).perplexity();
}

inline double bits_per_char(const LmConfig& cfg, LmParams& params,
                            std::span<const std::uint32_t> stream, const EvalWindowing& w) {
  return score_stream(stream, w, base_lm_provider(cfg, params)).bits_per_char();
}

}  // namespace gnnlm
