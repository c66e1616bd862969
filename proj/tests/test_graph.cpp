#include <gtest/gtest.h>

#include <set>

#include "gnnlm/graph/hetero_graph.hpp"

using namespace gnnlm;

namespace {

struct Fixture {
  Corpus corpus;
  LmConfig cfg;
  LmParams params;
  Datastore ds;

  static Fixture make() {
    std::string text;
    Rng rng(31);
    for (int i = 0; i < 400; ++i) text += "g" + std::to_string(rng.next_below(40)) + " ";
    Corpus c;
    c.vocab = Vocab::word_level(text, 256, 1);
    c.train = c.vocab.encode(text);
    c.valid = c.train;
    c.test = c.train;
    c.sample_len = 50;
    LmConfig cfg;
    cfg.n_layers = 1;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.max_seq_len = 16;
    cfg.vocab_size = c.vocab.size();
    Rng prng(32);
    LmParams params = LmParams::init(cfg, prng);
    Datastore ds = Datastore::build(cfg, params, c, 8);
    return {std::move(c), cfg, std::move(params), std::move(ds)};
  }

  // Hidden states for an input window taken from the first sample.
  std::vector<Real> hidden_for(std::span<const std::uint32_t> tokens) {
    LmOutput out = lm_encode(nullptr, cfg, params, tokens);
    return out.hidden.values();
  }

  std::vector<std::uint32_t> window(std::size_t n) const {
    return std::vector<std::uint32_t>(corpus.train.begin(), corpus.train.begin() + n);
  }
};

Neighbor nb(std::uint32_t s, std::uint32_t p, Real sim = Real(0.5)) {
  Neighbor n;
  n.sample_id = s;
  n.pos = p;
  n.value = 0;
  n.similarity = sim;
  return n;
}

}  // namespace

TEST(ExpandNeighbor, ClipsAtSampleStart) {
  Fixture f = Fixture::make();
  auto nodes = expand_neighbor(0, 0, 1, 1, f.corpus, f.ds);
  ASSERT_EQ(nodes.size(), 2u);  // left context clipped away
  EXPECT_EQ(nodes[0].pos, 0u);
  EXPECT_EQ(nodes[1].pos, 1u);
}

TEST(ExpandNeighbor, ZeroWindowIsAnchorOnly) {
  Fixture f = Fixture::make();
  auto nodes = expand_neighbor(1, 7, 0, 0, f.corpus, f.ds);
  ASSERT_EQ(nodes.size(), 1u);
  EXPECT_EQ(nodes[0].sample_id, 1u);
  EXPECT_EQ(nodes[0].pos, 7u);
}

TEST(ExpandNeighbor, InteriorWindowReadsCorpusTokens) {
  Fixture f = Fixture::make();
  auto nodes = expand_neighbor(2, 10, 1, 1, f.corpus, f.ds);
  ASSERT_EQ(nodes.size(), 3u);
  EXPECT_EQ(nodes[0].token, f.corpus.sample_token(2, 9));
  EXPECT_EQ(nodes[1].token, f.corpus.sample_token(2, 10));
  EXPECT_EQ(nodes[2].token, f.corpus.sample_token(2, 11));
}

TEST(BuildGraph, InterEdgeCountMatchesFormula) {
  Fixture f = Fixture::make();
  const std::size_t n = 4, k = 2;
  auto tokens = f.window(n);
  auto hidden = f.hidden_for(tokens);
  GraphConfig gc;
  gc.k_graph = k;
  gc.win_l = 1;
  gc.win_r = 1;
  // Interior anchors so windows never clip.
  std::vector<std::vector<Neighbor>> lists(n);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j < k; ++j)
      lists[t].push_back(nb(static_cast<std::uint32_t>(t), 10 + 2 * static_cast<std::uint32_t>(j)));
  HeteroGraph g = build_graph(tokens, hidden.data(), f.cfg.d_model, lists, gc, f.corpus, f.ds);
  EXPECT_EQ(g.inter.size(), (gc.win_l + gc.win_r + 1) * k * n);  // 3·2·4 = 24
  EXPECT_EQ(g.inter.size(), 24u);
}

TEST(BuildGraph, NoNeighborsGivesCausalInputGraph) {
  Fixture f = Fixture::make();
  const std::size_t n = 6;
  auto tokens = f.window(n);
  auto hidden = f.hidden_for(tokens);
  GraphConfig gc;
  gc.k_graph = 0;
  std::vector<std::vector<Neighbor>> lists(n);
  HeteroGraph g = build_graph(tokens, hidden.data(), f.cfg.d_model, lists, gc, f.corpus, f.ds);
  EXPECT_EQ(g.n_nodes(), n);
  EXPECT_EQ(g.inter.size(), 0u);
  EXPECT_EQ(g.intra.size(), n * (n + 1) / 2);
}

TEST(BuildGraph, OverlappingWindowsMergeNodesButKeepInDegree) {
  Fixture f = Fixture::make();
  const std::size_t n = 2, k = 2;
  auto tokens = f.window(n);
  auto hidden = f.hidden_for(tokens);
  GraphConfig gc;
  gc.k_graph = k;
  // Anchors 10 and 11 of the same sample overlap in their expanded windows.
  std::vector<std::vector<Neighbor>> lists(n);
  for (std::size_t t = 0; t < n; ++t) {
    lists[t].push_back(nb(3, 10));
    lists[t].push_back(nb(3, 11));
  }
  HeteroGraph g = build_graph(tokens, hidden.data(), f.cfg.d_model, lists, gc, f.corpus, f.ds);

  // Brute-force dedup oracle over (sample, pos) pairs.
  std::set<std::pair<std::uint32_t, std::uint32_t>> distinct;
  for (std::uint32_t p : {9, 10, 11, 12}) distinct.insert({3, p});
  EXPECT_EQ(g.n_nodes() - g.n_input, distinct.size());
  EXPECT_LT(g.n_nodes() - g.n_input, 3 * k * n);  // merged below the naive bound

  // Per-target inter in-degree is unchanged by merging.
  std::vector<std::size_t> indeg(n, 0);
  for (const EdgeRef& e : g.inter) ++indeg[e.dst];
  for (std::size_t t = 0; t < n; ++t) EXPECT_EQ(indeg[t], 3 * k);
}

TEST(BuildGraph, TypeDisciplineHolds) {
  Fixture f = Fixture::make();
  Rng rng(33);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 1 + rng.next_below(6);
    auto tokens = f.window(n);
    auto hidden = f.hidden_for(tokens);
    GraphConfig gc;
    gc.k_graph = rng.next_below(4);
    std::vector<std::vector<Neighbor>> lists(n);
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t j = 0; j < gc.k_graph; ++j)
        lists[t].push_back(nb(static_cast<std::uint32_t>(rng.next_below(4)),
                              static_cast<std::uint32_t>(5 + rng.next_below(30))));
    HeteroGraph g = build_graph(tokens, hidden.data(), f.cfg.d_model, lists, gc, f.corpus, f.ds);
    for (const EdgeRef& e : g.inter) {
      EXPECT_EQ(g.nodes[e.src].type, NodeType::kNeighbor);
      EXPECT_EQ(g.nodes[e.dst].type, NodeType::kInput);
    }
    for (const EdgeRef& e : g.intra) EXPECT_EQ(g.nodes[e.src].type, g.nodes[e.dst].type);
    // No a_o → a_n edges anywhere.
    for (const EdgeRef& e : g.inter) EXPECT_NE(g.nodes[e.dst].type, NodeType::kNeighbor);
  }
}

TEST(BuildGraph, PureFunctionOfInputs) {
  Fixture f = Fixture::make();
  const std::size_t n = 5;
  auto tokens = f.window(n);
  auto hidden = f.hidden_for(tokens);
  GraphConfig gc;
  gc.k_graph = 2;
  std::vector<std::vector<Neighbor>> lists(n);
  for (std::size_t t = 0; t < n; ++t) {
    lists[t].push_back(nb(1, 20));
    lists[t].push_back(nb(2, 15));
  }
  HeteroGraph a = build_graph(tokens, hidden.data(), f.cfg.d_model, lists, gc, f.corpus, f.ds);
  HeteroGraph b = build_graph(tokens, hidden.data(), f.cfg.d_model, lists, gc, f.corpus, f.ds);
  EXPECT_EQ(a.dump(), b.dump());
  EXPECT_EQ(a.init_embed, b.init_embed);
}

TEST(BuildGraph, GoldenDumpForTinyGraph) {
  Fixture f = Fixture::make();
  std::vector<std::uint32_t> tokens{f.corpus.train[0], f.corpus.train[1]};
  auto hidden = f.hidden_for(tokens);
  GraphConfig gc;
  gc.k_graph = 1;
  std::vector<std::vector<Neighbor>> lists(2);
  lists[0].push_back(nb(1, 5));
  lists[1].push_back(nb(1, 6));
  HeteroGraph g = build_graph(tokens, hidden.data(), f.cfg.d_model, lists, gc, f.corpus, f.ds);

  std::ostringstream want;
  want << "node 0 type=a_o pos=0 token=" << tokens[0] << "\n"
       << "node 1 type=a_o pos=1 token=" << tokens[1] << "\n"
       << "node 2 type=a_n sample=1 pos=4 token=" << f.corpus.sample_token(1, 4) << "\n"
       << "node 3 type=a_n sample=1 pos=5 token=" << f.corpus.sample_token(1, 5) << "\n"
       << "node 4 type=a_n sample=1 pos=6 token=" << f.corpus.sample_token(1, 6) << "\n"
       << "node 5 type=a_n sample=1 pos=7 token=" << f.corpus.sample_token(1, 7) << "\n"
       << "edge 0 0 type=r_intra\n"
       << "edge 0 1 type=r_intra\n"
       << "edge 1 1 type=r_intra\n"
       << "edge 2 3 type=r_intra\n"
       << "edge 3 4 type=r_intra\n"
       << "edge 4 5 type=r_intra\n"
       << "edge 2 0 type=r_inter\n"
       << "edge 3 0 type=r_inter\n"
       << "edge 4 0 type=r_inter\n"
       << "edge 3 1 type=r_inter\n"
       << "edge 4 1 type=r_inter\n"
       << "edge 5 1 type=r_inter\n";
  EXPECT_EQ(g.dump(), want.str());
}

TEST(BuildGraph, LeakageViolationCounter) {
  Fixture f = Fixture::make();
  const std::size_t n = 3;
  auto tokens = f.window(n);
  auto hidden = f.hidden_for(tokens);
  GraphConfig gc;
  gc.k_graph = 1;
  // Input nodes originate at sample 0, positions 0..2; an anchor at (0, 1) is
  // flagrantly inside any radius.
  std::vector<std::vector<Neighbor>> bad(n);
  for (std::size_t t = 0; t < n; ++t) bad[t].push_back(nb(0, 1));
  HeteroGraph g = build_graph(tokens, hidden.data(), f.cfg.d_model, bad, gc, f.corpus, f.ds);
  EXPECT_GT(count_leakage_violations(g, 0, 0, 8), 0u);

  // Far-away anchors in another sample are clean.
  std::vector<std::vector<Neighbor>> good(n);
  for (std::size_t t = 0; t < n; ++t) good[t].push_back(nb(5, 20));
  HeteroGraph h = build_graph(tokens, hidden.data(), f.cfg.d_model, good, gc, f.corpus, f.ds);
  EXPECT_EQ(count_leakage_violations(h, 0, 0, 8), 0u);
}

TEST(BuildGraph, EmptyInputIsContractError) {
  Fixture f = Fixture::make();
  GraphConfig gc;
  std::vector<std::uint32_t> empty;
  std::vector<std::vector<Neighbor>> lists;
  std::vector<Real> hidden;
  EXPECT_THROW(build_graph(empty, hidden.data(), f.cfg.d_model, lists, gc, f.corpus, f.ds),
               ContractError);
}
