#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "gnnlm/store/datastore.hpp"

namespace gnnlm {

enum class NodeType : std::uint8_t { kInput = 0, kNeighbor = 1 };   // a_o / a_n
enum class EdgeType : std::uint8_t { kInter = 0, kIntra = 1 };      // r_inter / r_intra

struct NodeRef {
  NodeType type = NodeType::kInput;
  std::uint32_t token = 0;
  std::uint32_t sample_id = 0;  // a_n: training sample; a_o: unused (max value)
  std::uint32_t pos = 0;        // a_n: position in sample; a_o: input position
};

struct EdgeRef {
  std::uint32_t src = 0;
  std::uint32_t dst = 0;
  EdgeType type = EdgeType::kIntra;
};

struct GraphConfig {
  std::size_t k_retrieve = 128;
  std::size_t k_graph = 16;
  std::size_t win_l = 1;
  std::size_t win_r = 1;
  enum class InputIntra { kCausal, kAdjacent };
  InputIntra input_intra = InputIntra::kCausal;
  bool neighbor_intra_bidirectional = false;

  void validate() const {
    GNNLM_CHECK(k_graph <= k_retrieve, "k_graph must not exceed k_retrieve");
  }
};

// Directed heterogeneous graph over the input window and the window-expanded
// retrieved neighbors. Node order is canonical: input nodes by position, then
// neighbor nodes by (sample, pos). Inter edges keep their multiplicity (one
// per retrieved window slot); intra edges are deduplicated.
struct HeteroGraph {
  std::size_t n_input = 0;
  std::size_t d = 0;
  std::vector<NodeRef> nodes;
  std::vector<Real> init_embed;        // N×d
  std::vector<EdgeRef> inter, intra;
  std::vector<std::uint32_t> query_positions;  // node id per input position

  std::size_t n_nodes() const { return nodes.size(); }
  std::size_t n_edges() const { return inter.size() + intra.size(); }

  std::string dump() const {
    std::ostringstream oss;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const NodeRef& n = nodes[i];
      if (n.type == NodeType::kInput)
        oss << "node " << i << " type=a_o pos=" << n.pos << " token=" << n.token << "\n";
      else
        oss << "node " << i << " type=a_n sample=" << n.sample_id << " pos=" << n.pos
            << " token=" << n.token << "\n";
    }
    for (const EdgeRef& e : intra) oss << "edge " << e.src << " " << e.dst << " type=r_intra\n";
    for (const EdgeRef& e : inter) oss << "edge " << e.src << " " << e.dst << " type=r_inter\n";
    return oss.str();
  }
};

struct ExpandedNode {
  std::uint32_t sample_id = 0;
  std::uint32_t pos = 0;
  std::uint32_t token = 0;
  std::size_t entry_idx = 0;  // datastore entry supplying the embedding
};

// Window expansion of one retrieved anchor: positions pos−l .. pos+r of the
// anchor's sample, clipped at the sample's cached-representation range.
inline std::vector<ExpandedNode> expand_neighbor(std::uint32_t sample_id, std::uint32_t pos,
                                                 std::size_t l, std::size_t r,
                                                 const Corpus& corpus, const Datastore& ds) {
  const std::size_t entries = ds.sample_entry_count(sample_id);
  GNNLM_CHECK(pos < entries, "anchor has no cached representation");
  const std::size_t lo = pos > l ? pos - l : 0;
  const std::size_t hi = std::min<std::size_t>(entries - 1, pos + r);
  std::vector<ExpandedNode> out;
  out.reserve(hi - lo + 1);
  for (std::size_t q = lo; q <= hi; ++q) {
    ExpandedNode n;
    n.sample_id = sample_id;
    n.pos = static_cast<std::uint32_t>(q);
    n.token = corpus.sample_token(sample_id, q);
    n.entry_idx = ds.entry_index(sample_id, static_cast<std::uint32_t>(q));
    out.push_back(n);
  }
  return out;
}

// Builds the graph for one input window. hidden must hold n×d row-major
// representations of the input tokens; neighbor_lists[t] are the (already
// leakage-filtered, similarity-sorted) retrievals for position t, of which the
// top k_graph enter the graph.
inline HeteroGraph build_graph(std::span<const std::uint32_t> tokens, const Real* hidden,
                               std::size_t d,
                               const std::vector<std::vector<Neighbor>>& neighbor_lists,
                               const GraphConfig& gc, const Corpus& corpus,
                               const Datastore& ds) {
  GNNLM_CHECK(!tokens.empty(), "empty input window");
  GNNLM_CHECK(neighbor_lists.size() == tokens.size(), "one neighbor list per input position");
  gc.validate();
  const std::size_t n = tokens.size();

  HeteroGraph g;
  g.n_input = n;
  g.d = d;
  g.nodes.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    NodeRef node;
    node.type = NodeType::kInput;
    node.token = tokens[t];
    node.sample_id = std::numeric_limits<std::uint32_t>::max();
    node.pos = static_cast<std::uint32_t>(t);
    g.nodes.push_back(node);
    g.query_positions.push_back(static_cast<std::uint32_t>(t));
  }

  // Expand all windows first, then merge duplicate (sample, pos) nodes.
  struct WindowSlot {
    std::uint32_t target;  // input node retrieving this window
    std::vector<ExpandedNode> nodes;
  };
  std::vector<WindowSlot> slots;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> mentioned;
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t use = std::min(gc.k_graph, neighbor_lists[t].size());
    for (std::size_t j = 0; j < use; ++j) {
      const Neighbor& nb = neighbor_lists[t][j];
      WindowSlot slot;
      slot.target = static_cast<std::uint32_t>(t);
      slot.nodes = expand_neighbor(nb.sample_id, nb.pos, gc.win_l, gc.win_r, corpus, ds);
      for (const ExpandedNode& en : slot.nodes) mentioned.emplace_back(en.sample_id, en.pos);
      slots.push_back(std::move(slot));
    }
  }
  std::sort(mentioned.begin(), mentioned.end());
  mentioned.erase(std::unique(mentioned.begin(), mentioned.end()), mentioned.end());

  const auto neighbor_node_id = [&](std::uint32_t s, std::uint32_t p) -> std::uint32_t {
    const auto it = std::lower_bound(mentioned.begin(), mentioned.end(), std::make_pair(s, p));
    return static_cast<std::uint32_t>(n + (it - mentioned.begin()));
  };

  for (const auto& [s, p] : mentioned) {
    NodeRef node;
    node.type = NodeType::kNeighbor;
    node.sample_id = s;
    node.pos = p;
    node.token = corpus.sample_token(s, p);
    g.nodes.push_back(node);
  }

  // Initial embeddings: base-LM hidden states for a_o, cached (possibly
  // PQ-decoded) keys for a_n.
  g.init_embed.assign(g.nodes.size() * d, Real(0));
  for (std::size_t t = 0; t < n; ++t)
    std::copy_n(hidden + t * d, d, g.init_embed.begin() + t * d);
  for (std::size_t i = n; i < g.nodes.size(); ++i) {
    const NodeRef& node = g.nodes[i];
    const std::size_t e = ds.entry_index(node.sample_id, node.pos);
    GNNLM_CHECK(e != ds.size(), "merged neighbor node lost its entry");
    ds.entry_embedding(e, g.init_embed.data() + i * d);
  }

  // Inter edges: every window node feeds the input position that retrieved
  // its window; multiplicity preserved across overlapping windows.
  for (const WindowSlot& slot : slots)
    for (const ExpandedNode& en : slot.nodes)
      g.inter.push_back({neighbor_node_id(en.sample_id, en.pos), slot.target, EdgeType::kInter});

  // Neighbor intra edges: adjacency inside each window, forward (optionally
  // both directions), deduplicated across overlapping windows.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> nbr_intra;
  for (const WindowSlot& slot : slots)
    for (std::size_t i = 1; i < slot.nodes.size(); ++i) {
      const std::uint32_t a = neighbor_node_id(slot.nodes[i - 1].sample_id,
                                               slot.nodes[i - 1].pos);
      const std::uint32_t b = neighbor_node_id(slot.nodes[i].sample_id, slot.nodes[i].pos);
      nbr_intra.emplace_back(a, b);
      if (gc.neighbor_intra_bidirectional) nbr_intra.emplace_back(b, a);
    }
  std::sort(nbr_intra.begin(), nbr_intra.end());
  nbr_intra.erase(std::unique(nbr_intra.begin(), nbr_intra.end()), nbr_intra.end());

  // Input intra edges: the causal complete graph with self-loops, or the
  // adjacent-only variant for the ablation switch.
  if (gc.input_intra == GraphConfig::InputIntra::kCausal) {
    for (std::uint32_t i = 0; i < n; ++i)
      for (std::uint32_t j = i; j < n; ++j) g.intra.push_back({i, j, EdgeType::kIntra});
  } else {
    for (std::uint32_t i = 0; i + 1 < n; ++i)
      g.intra.push_back({i, static_cast<std::uint32_t>(i + 1), EdgeType::kIntra});
  }
  for (const auto& [a, b] : nbr_intra) g.intra.push_back({a, b, EdgeType::kIntra});

  // Canonical edge order: by (dst, src) within each type, stably.
  const auto by_dst_src = [](const EdgeRef& a, const EdgeRef& b) {
    if (a.dst != b.dst) return a.dst < b.dst;
    return a.src < b.src;
  };
  std::stable_sort(g.intra.begin(), g.intra.end(), by_dst_src);
  std::stable_sort(g.inter.begin(), g.inter.end(), by_dst_src);
  return g;
}

// Count of a_n nodes that originate within `radius` positions of their
// target's own (sample, position) origin; the train-mode contract requires 0.
// Input node t is taken to originate at (origin_sample, origin_pos0 + t).
inline std::size_t count_leakage_violations(const HeteroGraph& g, std::uint32_t origin_sample,
                                            std::uint32_t origin_pos0, std::uint32_t radius) {
  std::size_t violations = 0;
  for (const EdgeRef& e : g.inter) {
    const NodeRef& src = g.nodes[e.src];
    const NodeRef& dst = g.nodes[e.dst];
    if (src.type != NodeType::kNeighbor || dst.type != NodeType::kInput) continue;
    if (src.sample_id != origin_sample) continue;
    const std::int64_t qpos = std::int64_t(origin_pos0) + dst.pos;
    const std::int64_t delta = std::int64_t(src.pos) - qpos;
    if (delta >= -std::int64_t(radius) && delta <= std::int64_t(radius)) ++violations;
  }
  return violations;
}

}  // namespace gnnlm
