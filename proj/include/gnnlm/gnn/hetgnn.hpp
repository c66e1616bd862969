#pragma once

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "gnnlm/core/adam.hpp"
#include "gnnlm/core/checkpoint.hpp"
#include "gnnlm/graph/hetero_graph.hpp"

namespace gnnlm {

struct GnnConfig {
  std::size_t n_layers = 3;
  std::size_t n_heads = 4;
  std::size_t d = 128;
  // Attention scores are normalized per edge type by default; the joint
  // variant softmaxes both types together for comparison runs.
  bool joint_softmax = false;

  void validate() const {
    GNNLM_CHECK(n_layers >= 1 && n_heads >= 1 && d >= 1);
    GNNLM_CHECK(d % n_heads == 0, "d must be divisible by n_heads");
  }
};

constexpr std::size_t kNodeTypes = 2;
constexpr std::size_t kEdgeTypes = 2;

inline std::size_t triple_index(NodeType src, EdgeType e, NodeType dst) {
  return static_cast<std::size_t>(src) * (kEdgeTypes * kNodeTypes) +
         static_cast<std::size_t>(e) * kNodeTypes + static_cast<std::size_t>(dst);
}

// Per-layer typed projections plus the learnable type-triple prior. The output
// projections start at zero, so an untrained stack is the identity on top of
// the initial embeddings.
struct GnnParams {
  struct Layer {
    Tensor wk[kNodeTypes], wq[kNodeTypes], wv[kNodeTypes], wo[kNodeTypes];
    Tensor watt[kEdgeTypes], wfea[kEdgeTypes];
    Tensor mu;  // |A|×|R|×|A| scalar prior
  };
  GnnConfig cfg;
  std::vector<Layer> layers;

  static GnnParams init(const GnnConfig& cfg, Rng& rng) {
    cfg.validate();
    const Real std = Real(0.02);
    const std::size_t d = cfg.d;
    GnnParams p;
    p.cfg = cfg;
    p.layers.resize(cfg.n_layers);
    for (auto& l : p.layers) {
      for (std::size_t t = 0; t < kNodeTypes; ++t) {
        l.wk[t] = Tensor::randn({d, d}, rng, std, true);
        l.wq[t] = Tensor::randn({d, d}, rng, std, true);
        l.wv[t] = Tensor::randn({d, d}, rng, std, true);
        l.wo[t] = Tensor::zeros({d, d}, true);
      }
      for (std::size_t e = 0; e < kEdgeTypes; ++e) {
        l.watt[e] = Tensor::randn({d, d}, rng, std, true);
        l.wfea[e] = Tensor::randn({d, d}, rng, std, true);
      }
      l.mu = Tensor::from({kNodeTypes, kEdgeTypes, kNodeTypes},
                          std::vector<Real>(kNodeTypes * kEdgeTypes * kNodeTypes, Real(1)),
                          true);
    }
    return p;
  }

  std::vector<Tensor> all() {
    std::vector<Tensor> out;
    for (auto& l : layers) {
      for (std::size_t t = 0; t < kNodeTypes; ++t)
        for (Tensor* m : {&l.wk[t], &l.wq[t], &l.wv[t], &l.wo[t]}) out.push_back(*m);
      for (std::size_t e = 0; e < kEdgeTypes; ++e) {
        out.push_back(l.watt[e]);
        out.push_back(l.wfea[e]);
      }
      out.push_back(l.mu);
    }
    return out;
  }

  Checkpoint to_checkpoint() {
    Checkpoint ck;
    static const char* node_tag[kNodeTypes] = {"a_o", "a_n"};
    static const char* edge_tag[kEdgeTypes] = {"r_inter", "r_intra"};
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string pre = "gnn.layer" + std::to_string(i) + ".";
      for (std::size_t t = 0; t < kNodeTypes; ++t) {
        ck.put(pre + "wk." + node_tag[t], layers[i].wk[t]);
        ck.put(pre + "wq." + node_tag[t], layers[i].wq[t]);
        ck.put(pre + "wv." + node_tag[t], layers[i].wv[t]);
        ck.put(pre + "wo." + node_tag[t], layers[i].wo[t]);
      }
      for (std::size_t e = 0; e < kEdgeTypes; ++e) {
        ck.put(pre + "watt." + edge_tag[e], layers[i].watt[e]);
        ck.put(pre + "wfea." + edge_tag[e], layers[i].wfea[e]);
      }
      ck.put(pre + "mu", layers[i].mu);
    }
    return ck;
  }

  static GnnParams from_checkpoint(const Checkpoint& ck, const GnnConfig& cfg) {
    GnnParams p;
    p.cfg = cfg;
    p.layers.resize(cfg.n_layers);
    static const char* node_tag[kNodeTypes] = {"a_o", "a_n"};
    static const char* edge_tag[kEdgeTypes] = {"r_inter", "r_intra"};
    for (std::size_t i = 0; i < cfg.n_layers; ++i) {
      const std::string pre = "gnn.layer" + std::to_string(i) + ".";
      for (std::size_t t = 0; t < kNodeTypes; ++t) {
        p.layers[i].wk[t] = ck.get(pre + "wk." + node_tag[t]).clone();
        p.layers[i].wq[t] = ck.get(pre + "wq." + node_tag[t]).clone();
        p.layers[i].wv[t] = ck.get(pre + "wv." + node_tag[t]).clone();
        p.layers[i].wo[t] = ck.get(pre + "wo." + node_tag[t]).clone();
      }
      for (std::size_t e = 0; e < kEdgeTypes; ++e) {
        p.layers[i].watt[e] = ck.get(pre + "watt." + edge_tag[e]).clone();
        p.layers[i].wfea[e] = ck.get(pre + "wfea." + edge_tag[e]).clone();
      }
      p.layers[i].mu = ck.get(pre + "mu").clone();
    }
    for (Tensor t : p.all()) t.set_requires_grad(true);
    return p;
  }
};

// Edge lists in struct-of-array form, grouped by edge type.
struct EdgeGroup {
  std::vector<std::uint32_t> src, dst, triple;
};

struct CompiledGraph {
  std::size_t n = 0, n_input = 0, d = 0;
  Tensor h0;  // N×d initial embeddings (constant)
  EdgeGroup by_type[kEdgeTypes];
  std::vector<std::uint32_t> query_nodes;
};

inline CompiledGraph compile_graph(const HeteroGraph& g) {
  CompiledGraph cg;
  cg.n = g.n_nodes();
  cg.n_input = g.n_input;
  cg.d = g.d;
  cg.h0 = Tensor::from({cg.n, cg.d}, g.init_embed);
  const auto add_edges = [&](const std::vector<EdgeRef>& edges) {
    for (const EdgeRef& e : edges) {
      EdgeGroup& grp = cg.by_type[static_cast<std::size_t>(e.type)];
      grp.src.push_back(e.src);
      grp.dst.push_back(e.dst);
      grp.triple.push_back(static_cast<std::uint32_t>(
          triple_index(g.nodes[e.src].type, e.type, g.nodes[e.dst].type)));
    }
  };
  add_edges(g.inter);
  add_edges(g.intra);
  cg.query_nodes = g.query_positions;
  return cg;
}

// Per-edge attention weights of one layer, normalized per target node and per
// edge type (Z only spans present types, so nodes lacking a type are safe).
// Exposed for the straight-line attention tests; the layer forward inlines the
// same computation.
struct GnnForward {
  const GnnParams& params;
  const CompiledGraph& g;

  Tensor typed_projection(Tape* tape, Tensor h, const Tensor per_type[kNodeTypes]) const {
    const std::size_t n_in = g.n_input, n_all = g.n;
    Tensor top = ops::matmul(tape, ops::row_slice(tape, h, 0, n_in), per_type[0]);
    if (n_all == n_in) return top;
    Tensor bottom =
        ops::matmul(tape, ops::row_slice(tape, h, n_in, n_all), per_type[1]);
    return ops::row_concat(tape, {top, bottom});
  }

  // Raw (unnormalized-in-log-space) per-edge scores S[e, head] for one type.
  Tensor edge_scores(Tape* tape, Tensor k_all, Tensor q_all, const GnnParams::Layer& layer,
                     std::size_t et) const {
    const EdgeGroup& grp = g.by_type[et];
    const std::size_t heads = params.cfg.n_heads;
    const Real inv_sqrt_dh = Real(1) / std::sqrt(Real(g.d / heads));
    Tensor kw = ops::blockdiag_matmul(tape, ops::gather_rows(tape, k_all, grp.src),
                                      layer.watt[et], heads);
    Tensor qd = ops::gather_rows(tape, q_all, grp.dst);
    Tensor s = ops::head_dot(tape, kw, qd, heads);
    return ops::select_scale(tape, s, layer.mu, grp.triple, inv_sqrt_dh);
  }

  Tensor layer_forward(Tape* tape, Tensor h, std::size_t li) const {
    const GnnParams::Layer& layer = params.layers[li];
    const std::size_t heads = params.cfg.n_heads;
    const std::size_t n_in = g.n_input, n_all = g.n;

    Tensor k_all = typed_projection(tape, h, layer.wk);
    Tensor q_all = typed_projection(tape, h, layer.wq);
    Tensor v_all = typed_projection(tape, h, layer.wv);

    // Scores per present edge type.
    Tensor scores[kEdgeTypes];
    bool present[kEdgeTypes] = {false, false};
    for (std::size_t et = 0; et < kEdgeTypes; ++et) {
      if (g.by_type[et].src.empty()) continue;
      present[et] = true;
      scores[et] = edge_scores(tape, k_all, q_all, layer, et);
    }

    // Normalization: per (target, type) by default, or jointly across types.
    Tensor att[kEdgeTypes];
    if (!params.cfg.joint_softmax) {
      for (std::size_t et = 0; et < kEdgeTypes; ++et)
        if (present[et])
          att[et] = ops::segment_softmax(tape, scores[et], g.by_type[et].dst, n_all);
    } else {
      std::vector<Tensor> parts;
      std::vector<std::uint32_t> seg;
      for (std::size_t et = 0; et < kEdgeTypes; ++et) {
        if (!present[et]) continue;
        parts.push_back(scores[et]);
        seg.insert(seg.end(), g.by_type[et].dst.begin(), g.by_type[et].dst.end());
      }
      if (!parts.empty()) {
        Tensor joint = parts.size() == 1 ? parts[0] : ops::row_concat(tape, parts);
        Tensor jatt = ops::segment_softmax(tape, joint, seg, n_all);
        std::size_t row = 0;
        for (std::size_t et = 0; et < kEdgeTypes; ++et) {
          if (!present[et]) continue;
          const std::size_t rows = g.by_type[et].src.size();
          att[et] = ops::row_slice(tape, jatt, row, row + rows);
          row += rows;
        }
      }
    }

    // Weighted feature aggregation.
    Tensor aggregated;
    for (std::size_t et = 0; et < kEdgeTypes; ++et) {
      if (!present[et]) continue;
      Tensor f_nodes = ops::blockdiag_matmul(tape, v_all, layer.wfea[et], heads);
      Tensor fe = ops::gather_rows(tape, f_nodes, g.by_type[et].src);
      Tensor weighted = ops::head_scale(tape, fe, att[et]);
      Tensor m = ops::scatter_add_rows(tape, weighted, g.by_type[et].dst, n_all);
      aggregated = aggregated.defined() ? ops::add(tape, aggregated, m) : m;
    }
    if (!aggregated.defined()) return h;  // no edges at all: pure residual

    Tensor out = typed_projection(tape, aggregated, layer.wo);
    return ops::add(tape, out, h);
  }

  // Representations after the full stack; per-layer states on request.
  Tensor run(Tape* tape, std::vector<Tensor>* states = nullptr) const {
    Tensor h = g.h0;
    if (states) states->push_back(h);
    for (std::size_t li = 0; li < params.layers.size(); ++li) {
      h = layer_forward(tape, h, li);
      if (states) states->push_back(h);
    }
    return h;
  }
};

// Distribution over the vocabulary for each query node, through the frozen
// output projection of the base LM.
inline Tensor gnn_lm_logits(Tape* tape, const GnnParams& params, const CompiledGraph& g,
                            Tensor frozen_w) {
  GnnForward fwd{params, g};
  Tensor h = fwd.run(tape);
  Tensor rows = ops::gather_rows(tape, h, g.query_nodes);
  return ops::matmul_tb(tape, rows, frozen_w);
}

inline Tensor gnn_lm_distribution(const GnnParams& params, const CompiledGraph& g,
                                  Tensor frozen_w) {
  return ops::softmax(nullptr, gnn_lm_logits(nullptr, params, g, frozen_w));
}

}  // namespace gnnlm
