#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gnnlm/core/adam.hpp"
#include "gnnlm/core/checkpoint.hpp"
#include "gnnlm/core/ops.hpp"
#include "gnnlm/core/rng.hpp"
#include "gnnlm/pipeline/corpus.hpp"

namespace gnnlm {

struct LmConfig {
  std::size_t n_layers = 4;
  std::size_t d_model = 128;
  std::size_t n_heads = 4;
  std::size_t d_ff = 512;
  std::size_t max_seq_len = 128;
  Real dropout = Real(0);
  std::size_t vocab_size = 0;

  void validate() const {
    GNNLM_CHECK(n_layers >= 1 && d_model >= 1 && n_heads >= 1 && d_ff >= 1);
    GNNLM_CHECK(d_model % n_heads == 0, "d_model must be divisible by n_heads");
    GNNLM_CHECK(max_seq_len >= 2, "max_seq_len must be at least 2");
    GNNLM_CHECK(vocab_size >= 2, "vocab_size not set");
  }
};

// Pre-norm causal transformer with tied input/output embedding. The tied
// embedding matrix doubles as the V×d output projection.
struct LmParams {
  struct Layer {
    Tensor ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b, w_ff1, b_ff1, w_ff2, b_ff2;
  };
  Tensor tok_emb;  // V×d, also the output projection
  Tensor pos_emb;  // T×d
  std::vector<Layer> layers;
  Tensor lnf_g, lnf_b;

  static LmParams init(const LmConfig& cfg, Rng& rng) {
    cfg.validate();
    const Real std = Real(0.02);
    const std::size_t d = cfg.d_model;
    LmParams p;
    p.tok_emb = Tensor::randn({cfg.vocab_size, d}, rng, std, true);
    p.pos_emb = Tensor::randn({cfg.max_seq_len, d}, rng, std, true);
    p.layers.resize(cfg.n_layers);
    for (auto& l : p.layers) {
      l.ln1_g = Tensor::from({d}, std::vector<Real>(d, Real(1)), true);
      l.ln1_b = Tensor::zeros({d}, true);
      l.wq = Tensor::randn({d, d}, rng, std, true);
      l.bq = Tensor::zeros({d}, true);
      l.wk = Tensor::randn({d, d}, rng, std, true);
      l.bk = Tensor::zeros({d}, true);
      l.wv = Tensor::randn({d, d}, rng, std, true);
      l.bv = Tensor::zeros({d}, true);
      l.wo = Tensor::randn({d, d}, rng, std, true);
      l.bo = Tensor::zeros({d}, true);
      l.ln2_g = Tensor::from({d}, std::vector<Real>(d, Real(1)), true);
      l.ln2_b = Tensor::zeros({d}, true);
      l.w_ff1 = Tensor::randn({d, cfg.d_ff}, rng, std, true);
      l.b_ff1 = Tensor::zeros({cfg.d_ff}, true);
      l.w_ff2 = Tensor::randn({cfg.d_ff, d}, rng, std, true);
      l.b_ff2 = Tensor::zeros({d}, true);
    }
    p.lnf_g = Tensor::from({d}, std::vector<Real>(d, Real(1)), true);
    p.lnf_b = Tensor::zeros({d}, true);
    return p;
  }

  std::vector<Tensor> all() {
    std::vector<Tensor> out{tok_emb, pos_emb};
    for (auto& l : layers)
      for (Tensor* t : {&l.ln1_g, &l.ln1_b, &l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo,
                        &l.bo, &l.ln2_g, &l.ln2_b, &l.w_ff1, &l.b_ff1, &l.w_ff2, &l.b_ff2})
        out.push_back(*t);
    out.push_back(lnf_g);
    out.push_back(lnf_b);
    return out;
  }

  void set_requires_grad(bool rg) {
    for (Tensor t : all()) t.set_requires_grad(rg);
  }

  bool frozen() {
    for (Tensor t : all())
      if (t.requires_grad()) return false;
    return true;
  }

  Checkpoint to_checkpoint() {
    Checkpoint ck;
    ck.put("lm.tok_emb", tok_emb);
    ck.put("lm.pos_emb", pos_emb);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string pre = "lm.layer" + std::to_string(i) + ".";
      auto& l = layers[i];
      ck.put(pre + "ln1_g", l.ln1_g);
      ck.put(pre + "ln1_b", l.ln1_b);
      ck.put(pre + "wq", l.wq);
      ck.put(pre + "bq", l.bq);
      ck.put(pre + "wk", l.wk);
      ck.put(pre + "bk", l.bk);
      ck.put(pre + "wv", l.wv);
      ck.put(pre + "bv", l.bv);
      ck.put(pre + "wo", l.wo);
      ck.put(pre + "bo", l.bo);
      ck.put(pre + "ln2_g", l.ln2_g);
      ck.put(pre + "ln2_b", l.ln2_b);
      ck.put(pre + "w_ff1", l.w_ff1);
      ck.put(pre + "b_ff1", l.b_ff1);
      ck.put(pre + "w_ff2", l.w_ff2);
      ck.put(pre + "b_ff2", l.b_ff2);
    }
    ck.put("lm.lnf_g", lnf_g);
    ck.put("lm.lnf_b", lnf_b);
    return ck;
  }

  static LmParams from_checkpoint(const Checkpoint& ck, const LmConfig& cfg) {
    LmParams p;
    p.tok_emb = ck.get("lm.tok_emb").clone();
    p.pos_emb = ck.get("lm.pos_emb").clone();
    p.layers.resize(cfg.n_layers);
    for (std::size_t i = 0; i < cfg.n_layers; ++i) {
      const std::string pre = "lm.layer" + std::to_string(i) + ".";
      auto& l = p.layers[i];
      l.ln1_g = ck.get(pre + "ln1_g").clone();
      l.ln1_b = ck.get(pre + "ln1_b").clone();
      l.wq = ck.get(pre + "wq").clone();
      l.bq = ck.get(pre + "bq").clone();
      l.wk = ck.get(pre + "wk").clone();
      l.bk = ck.get(pre + "bk").clone();
      l.wv = ck.get(pre + "wv").clone();
      l.bv = ck.get(pre + "bv").clone();
      l.wo = ck.get(pre + "wo").clone();
      l.bo = ck.get(pre + "bo").clone();
      l.ln2_g = ck.get(pre + "ln2_g").clone();
      l.ln2_b = ck.get(pre + "ln2_b").clone();
      l.w_ff1 = ck.get(pre + "w_ff1").clone();
      l.b_ff1 = ck.get(pre + "b_ff1").clone();
      l.w_ff2 = ck.get(pre + "w_ff2").clone();
      l.b_ff2 = ck.get(pre + "b_ff2").clone();
    }
    p.lnf_g = ck.get("lm.lnf_g").clone();
    p.lnf_b = ck.get("lm.lnf_b").clone();
    for (Tensor t : p.all()) t.set_requires_grad(true);
    return p;
  }
};

struct LmOutput {
  Tensor hidden;  // seq×d, post final layer norm; row t sees tokens 0..t only
  Tensor logits;  // seq×V = hidden · tok_embᵀ
};

// Additive causal mask: 0 where j ≤ i, large negative elsewhere.
inline Tensor causal_mask(std::size_t n) {
  Tensor m = Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m.at(i, j) = Real(-1e30);
  return m;
}

inline LmOutput lm_encode(Tape* tape, const LmConfig& cfg, LmParams& params,
                          std::span<const std::uint32_t> tokens, Rng* dropout_rng = nullptr) {
  GNNLM_CHECK(!tokens.empty(), "empty token sequence");
  GNNLM_CHECK(tokens.size() <= cfg.max_seq_len, "sequence exceeds max_seq_len");
  for (auto t : tokens) GNNLM_CHECK(t < cfg.vocab_size, "token id out of vocab range");
  const std::size_t n = tokens.size();
  const std::size_t d = cfg.d_model;
  const std::size_t dh = d / cfg.n_heads;
  const Real inv_sqrt_dh = Real(1) / std::sqrt(Real(dh));

  std::vector<std::uint32_t> ids(tokens.begin(), tokens.end());
  Tensor x = ops::add(tape, ops::gather_rows(tape, params.tok_emb, ids),
                      ops::row_slice(tape, params.pos_emb, 0, n));
  Tensor mask = causal_mask(n);

  Rng no_drop(0);
  Rng& drop_rng = dropout_rng ? *dropout_rng : no_drop;
  const bool train_mode = tape != nullptr && dropout_rng != nullptr;

  for (auto& l : params.layers) {
    Tensor h1 = ops::layer_norm(tape, x, l.ln1_g, l.ln1_b);
    Tensor q = ops::add_bias(tape, ops::matmul(tape, h1, l.wq), l.bq);
    Tensor k = ops::add_bias(tape, ops::matmul(tape, h1, l.wk), l.bk);
    Tensor v = ops::add_bias(tape, ops::matmul(tape, h1, l.wv), l.bv);
    std::vector<Tensor> heads;
    heads.reserve(cfg.n_heads);
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      Tensor qh = ops::col_slice(tape, q, h * dh, (h + 1) * dh);
      Tensor kh = ops::col_slice(tape, k, h * dh, (h + 1) * dh);
      Tensor vh = ops::col_slice(tape, v, h * dh, (h + 1) * dh);
      Tensor scores = ops::add(tape, ops::scale(tape, ops::matmul_tb(tape, qh, kh), inv_sqrt_dh),
                               mask);
      Tensor att = ops::softmax(tape, scores);
      heads.push_back(ops::matmul(tape, att, vh));
    }
    Tensor ctx = cfg.n_heads == 1 ? heads[0] : ops::col_concat(tape, heads);
    Tensor attn_out = ops::add_bias(tape, ops::matmul(tape, ctx, l.wo), l.bo);
    if (train_mode) attn_out = ops::dropout(tape, attn_out, cfg.dropout, drop_rng);
    x = ops::add(tape, x, attn_out);

    Tensor h2 = ops::layer_norm(tape, x, l.ln2_g, l.ln2_b);
    Tensor ff = ops::add_bias(
        tape,
        ops::matmul(tape, ops::gelu(tape, ops::add_bias(tape, ops::matmul(tape, h2, l.w_ff1),
                                                        l.b_ff1)),
                    l.w_ff2),
        l.b_ff2);
    if (train_mode) ff = ops::dropout(tape, ff, cfg.dropout, drop_rng);
    x = ops::add(tape, x, ff);
  }

  LmOutput out;
  out.hidden = ops::layer_norm(tape, x, params.lnf_g, params.lnf_b);
  out.logits = ops::matmul_tb(tape, out.hidden, params.tok_emb);
  return out;
}

struct LmTrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 8;
  Real lr = Real(1e-3);
  std::size_t warmup_steps = 100;
  Real clip_norm = Real(1);
  std::uint64_t seed = 1;
  std::size_t epoch_steps = 0;      // 0: derive from corpus size
  std::size_t val_max_tokens = 4096;
};

struct LmTrainLog {
  std::vector<double> epoch_train_loss;
  std::vector<double> epoch_val_ppl;
};

// Next-token cross-entropy training over random windows of the train stream.
// Deterministic for a fixed seed; the model is frozen by the caller afterwards.
// val_fn, when given, is evaluated at each epoch boundary and logged.
inline LmTrainLog train_base(const Corpus& corpus, const LmConfig& cfg, const LmTrainConfig& tc,
                             LmParams& params,
                             const std::function<double()>& val_fn = {}) {
  GNNLM_CHECK(!corpus.train.empty(), "empty training corpus");
  GNNLM_CHECK(corpus.train.size() >= cfg.max_seq_len + 1, "training stream shorter than a window");
  Rng rng(tc.seed);
  Rng drop_rng = rng.fork();
  Adam adam({.lr = tc.lr, .clip_norm = tc.clip_norm});
  auto param_list = params.all();

  const std::size_t window = cfg.max_seq_len;
  const std::size_t epoch_steps =
      tc.epoch_steps > 0
          ? tc.epoch_steps
          : std::max<std::size_t>(1, corpus.train.size() / (tc.batch * window));

  LmTrainLog log;
  double epoch_loss = 0;
  std::size_t epoch_count = 0;
  for (std::size_t step = 0; step < tc.steps; ++step) {
    Tape tape;
    Tensor loss;
    for (std::size_t b = 0; b < tc.batch; ++b) {
      const std::size_t start = rng.next_below(corpus.train.size() - window);
      std::span<const std::uint32_t> in(corpus.train.data() + start, window);
      std::vector<std::uint32_t> targets(corpus.train.begin() + start + 1,
                                         corpus.train.begin() + start + 1 + window);
      LmOutput out = lm_encode(&tape, cfg, params, in, cfg.dropout > 0 ? &drop_rng : nullptr);
      Tensor ce = ops::cross_entropy(&tape, out.logits, targets);
      loss = loss.defined() ? ops::add(&tape, loss, ce) : ce;
    }
    loss = ops::scale(&tape, loss, Real(1) / Real(tc.batch));
    tape.backward(loss);
    if (tc.warmup_steps > 0 && step < tc.warmup_steps)
      adam.set_lr(tc.lr * Real(step + 1) / Real(tc.warmup_steps));
    else
      adam.set_lr(tc.lr);
    adam.step(param_list);
    Adam::zero_grads(param_list);

    epoch_loss += loss.at(0);
    ++epoch_count;
    if (epoch_count == epoch_steps || step + 1 == tc.steps) {
      log.epoch_train_loss.push_back(epoch_loss / double(epoch_count));
      if (val_fn) log.epoch_val_ppl.push_back(val_fn());
      epoch_loss = 0;
      epoch_count = 0;
    }
  }
  return log;
}

}  // namespace gnnlm
