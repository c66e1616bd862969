#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "gnnlm/store/datastore.hpp"
#include "support/kmeans_oracle.hpp"

using namespace gnnlm;

namespace {

// Random unit-ish vectors with a one-sample-per-entry layout.
Datastore random_store(std::size_t n, std::size_t d, std::uint64_t seed,
                       std::size_t vocab = 50) {
  Rng rng(seed);
  std::vector<Real> keys(n * d);
  for (auto& v : keys) v = static_cast<Real>(rng.next_normal());
  std::vector<std::uint32_t> sids(n), poss(n, 0), vals(n);
  for (std::size_t i = 0; i < n; ++i) {
    sids[i] = static_cast<std::uint32_t>(i);
    vals[i] = static_cast<std::uint32_t>(rng.next_below(vocab));
  }
  return Datastore::from_vectors(d, std::move(keys), std::move(sids), std::move(poss),
                                 std::move(vals));
}

Corpus tiny_corpus(std::size_t sample_len = 24) {
  std::string text;
  Rng rng(5);
  for (int i = 0; i < 120; ++i) text += "q" + std::to_string(rng.next_below(30)) + " ";
  Corpus c;
  c.vocab = Vocab::word_level(text, 256, 1);
  c.train = c.vocab.encode(text);
  c.valid = c.train;
  c.test = c.train;
  c.sample_len = sample_len;
  return c;
}

LmConfig store_lm_config(std::size_t vocab) {
  LmConfig cfg;
  cfg.n_layers = 1;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.max_seq_len = 16;
  cfg.vocab_size = vocab;
  return cfg;
}

}  // namespace

TEST(BuildStore, OneEntryPerPositionWithSuccessor) {
  Corpus c = tiny_corpus(24);
  LmConfig cfg = store_lm_config(c.vocab.size());
  Rng rng(2);
  LmParams params = LmParams::init(cfg, rng);
  Datastore ds = Datastore::build(cfg, params, c, 8);
  std::size_t expect = 0;
  for (std::size_t s = 0; s < c.n_samples(); ++s) expect += c.sample_size(s) - 1;
  EXPECT_EQ(ds.size(), expect);
  // Entry values re-read from the corpus match exactly.
  for (std::size_t i = 0; i < ds.size(); ++i)
    EXPECT_EQ(ds.value(i), c.sample_token(ds.sample_id(i), ds.position(i) + 1));
}

TEST(BuildStore, KeysMatchIndependentReplay) {
  Corpus c = tiny_corpus(20);
  LmConfig cfg = store_lm_config(c.vocab.size());
  Rng rng(3);
  LmParams params = LmParams::init(cfg, rng);
  const std::size_t stride = 8;
  Datastore ds = Datastore::build(cfg, params, c, stride);
  // Replay the same windowing independently and compare bit-exactly.
  for (std::size_t s = 0; s < c.n_samples(); ++s) {
    Datastore::for_each_key_window(
        cfg, params, c, s, stride,
        [&](std::size_t w0, const LmOutput& out, std::size_t row0, std::size_t rows) {
          for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t pos = w0 + r;
            const std::size_t e = ds.entry_index(static_cast<std::uint32_t>(s),
                                                 static_cast<std::uint32_t>(pos));
            if (e == ds.size()) continue;
            for (std::size_t j = 0; j < cfg.d_model; ++j)
              EXPECT_EQ(ds.raw_key(e)[j], out.hidden.at(row0 + r, j));
          }
        });
  }
  EXPECT_THROW(Datastore::build(store_lm_config(c.vocab.size() + 5), params, c, stride),
               ContractError);
}

TEST(ExactTopK, SelfQueryScoresOne) {
  Datastore ds = random_store(64, 8, 7);
  std::vector<Real> q(ds.raw_key(13), ds.raw_key(13) + 8);
  auto hits = ds.exact_topk(q, 1);
  ASSERT_EQ(hits.size(), 1u);
  EXPECT_EQ(hits[0].sample_id, 13u);
  EXPECT_NEAR(hits[0].similarity, 1.0, 1e-12);
}

TEST(ExactTopK, KLargerThanStoreReturnsAllSorted) {
  Datastore ds = random_store(12, 4, 8);
  std::vector<Real> q{1, 0, 0, 0};
  auto hits = ds.exact_topk(q, 100);
  EXPECT_EQ(hits.size(), 12u);
  for (std::size_t i = 1; i < hits.size(); ++i)
    EXPECT_GE(hits[i - 1].similarity, hits[i].similarity);
}

TEST(ExactTopK, MatchesFullSortOracle) {
  const std::size_t n = 200, d = 16, k = 10;
  Datastore ds = random_store(n, d, 9);
  Rng rng(10);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Real> q(d);
    for (auto& v : q) v = static_cast<Real>(rng.next_normal());
    // Oracle: score every entry with scalar cosine, full stable sort.
    Real qn = 0;
    for (Real v : q) qn += v * v;
    qn = std::sqrt(qn);
    std::vector<std::pair<Real, std::uint32_t>> scored(n);
    for (std::size_t i = 0; i < n; ++i) {
      const Real* key = ds.raw_key(i);
      Real dot = 0, kn = 0;
      for (std::size_t j = 0; j < d; ++j) {
        dot += q[j] * key[j];
        kn += key[j] * key[j];
      }
      scored[i] = {dot / (qn * std::sqrt(kn)), static_cast<std::uint32_t>(i)};
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    auto hits = ds.exact_topk(q, k);
    ASSERT_EQ(hits.size(), k);
    for (std::size_t i = 0; i < k; ++i) {
      EXPECT_EQ(hits[i].sample_id, scored[i].second);
      EXPECT_NEAR(hits[i].similarity, scored[i].first, 1e-9);
    }
  }
}

TEST(ExactTopK, DeterministicTieBreak) {
  // Four identical keys: ties resolved by (sample_id, pos) ascending.
  std::vector<Real> keys{1, 0, 1, 0, 1, 0, 1, 0};
  Datastore ds = Datastore::from_vectors(2, std::move(keys), {0, 1, 2, 3}, {0, 0, 0, 0},
                                         {9, 9, 9, 9});
  std::vector<Real> q{2, 0};
  auto hits = ds.exact_topk(q, 3);
  ASSERT_EQ(hits.size(), 3u);
  EXPECT_EQ(hits[0].sample_id, 0u);
  EXPECT_EQ(hits[1].sample_id, 1u);
  EXPECT_EQ(hits[2].sample_id, 2u);
}

TEST(ExactTopK, ZeroNormQueryIsContractError) {
  Datastore ds = random_store(10, 4, 11);
  std::vector<Real> q{0, 0, 0, 0};
  EXPECT_THROW(ds.exact_topk(q, 1), ContractError);
}

TEST(Pq, DegenerateQuantizerDecodesToGlobalMean) {
  const std::size_t n = 50, d = 6;
  Rng rng(12);
  std::vector<Real> data(n * d);
  for (auto& v : data) v = static_cast<Real>(rng.next_normal());
  ProductQuantizer pq(d, 1, 1);  // one subspace, one centroid
  Rng train_rng(13);
  pq.train(data.data(), n, 25, train_rng);
  std::vector<Real> mean(d, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += data[i * d + j];
  for (auto& v : mean) v /= Real(n);
  std::uint8_t code;
  pq.encode(data.data(), &code);
  std::vector<Real> dec(d);
  pq.decode(&code, dec.data());
  for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(dec[j], mean[j], 1e-12);
}

TEST(Pq, CodesOccupyExactlyMBytes) {
  const std::size_t n = 300, d = 16, m = 4;
  Rng rng(14);
  std::vector<Real> data(n * d);
  for (auto& v : data) v = static_cast<Real>(rng.next_normal());
  ProductQuantizer pq(d, m);
  Rng train_rng(15);
  pq.train(data.data(), n, 10, train_rng);
  auto codes = pq.encode_all(data.data(), n);
  EXPECT_EQ(pq.code_bytes(), m);
  EXPECT_EQ(codes.size(), n * m);
}

TEST(Pq, MseMatchesIndependentPerSubspaceKMeansOracle) {
  const std::size_t n = 400, d = 12, m = 3, iters = 25;
  Rng rng(16);
  std::vector<Real> data(n * d);
  for (auto& v : data) v = static_cast<Real>(rng.next_normal());

  ProductQuantizer pq(d, m, 16);
  Rng train_rng(77);
  pq.train(data.data(), n, iters, train_rng);
  const double pq_mse = pq.reconstruction_mse(data.data(), n);

  // Oracle: same recipe per subspace, fed by an identically-seeded stream.
  Rng oracle_rng(77);
  const std::size_t sd = d / m;
  double oracle_total = 0;
  for (std::size_t sub = 0; sub < m; ++sub) {
    std::vector<Real> slice(n * sd);
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(data.begin() + i * d + sub * sd, sd, slice.begin() + i * sd);
    Rng sub_rng = oracle_rng.fork();
    auto cent = oracle::kmeans_fit(slice.data(), n, sd, 16, iters, sub_rng);
    oracle_total += oracle::kmeans_mse(slice.data(), n, sd, cent, 16) * double(n * sd);
  }
  const double oracle_mse = oracle_total / double(n * d);
  EXPECT_NEAR(pq_mse, oracle_mse, 1e-9);
}

TEST(Pq, DecodedVectorIsConcatenationOfNearestSubCentroids) {
  const std::size_t n = 200, d = 8, m = 2;
  Rng rng(18);
  std::vector<Real> data(n * d);
  for (auto& v : data) v = static_cast<Real>(rng.next_normal());
  ProductQuantizer pq(d, m);
  Rng train_rng(19);
  pq.train(data.data(), n, 8, train_rng);
  const std::size_t sd = d / m;
  std::vector<std::uint8_t> code(m);
  std::vector<Real> dec(d);
  pq.encode(data.data(), code.data());
  pq.decode(code.data(), dec.data());
  for (std::size_t sub = 0; sub < m; ++sub) {
    // Independently find the nearest centroid of this subvector.
    std::size_t best = 0;
    Real bd = std::numeric_limits<Real>::max();
    for (std::size_t cidx = 0; cidx < pq.codebook_size(); ++cidx) {
      const Real dd = oracle::sqd(data.data() + sub * sd, pq.centroid(sub, cidx), sd);
      if (dd < bd) {
        bd = dd;
        best = cidx;
      }
    }
    EXPECT_EQ(code[sub], best);
    for (std::size_t j = 0; j < sd; ++j)
      EXPECT_EQ(dec[sub * sd + j], pq.centroid(sub, code[sub])[j]);
  }
}

TEST(Pq, MseNonIncreasingInSubspaceCount) {
  const std::size_t n = 2000, d = 16;
  Rng rng(20);
  std::vector<Real> data(n * d);
  // Correlated dimensions: smooth profiles plus noise.
  for (std::size_t i = 0; i < n; ++i) {
    const Real a = static_cast<Real>(rng.next_normal());
    const Real b = static_cast<Real>(rng.next_normal());
    for (std::size_t j = 0; j < d; ++j)
      data[i * d + j] = a * std::sin(Real(j) * Real(0.4)) + b * std::cos(Real(j) * Real(0.7)) +
                        Real(0.1) * static_cast<Real>(rng.next_normal());
  }
  double prev = std::numeric_limits<double>::max();
  for (std::size_t m : {2, 4, 8}) {
    ProductQuantizer pq(d, m);
    Rng train_rng(21);
    pq.train(data.data(), n, 15, train_rng);
    const double mse = pq.reconstruction_mse(data.data(), n);
    EXPECT_LT(mse, prev);
    prev = mse;
  }
}

TEST(AnnTopK, ExhaustiveProbeWithoutPqEqualsExact) {
  const std::size_t n = 1000, d = 16, k = 10;
  Datastore ds = random_store(n, d, 22);
  IndexParams ip;
  ip.clusters = 16;
  ip.pq = false;
  ip.seed = 3;
  ds.train_index(ip);
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Real> q(d);
    for (auto& v : q) v = static_cast<Real>(rng.next_normal());
    auto exact = ds.exact_topk(q, k);
    auto ann = ds.ann_topk(q, k, ds.clusters());
    ASSERT_EQ(exact.size(), ann.size());
    for (std::size_t i = 0; i < exact.size(); ++i) {
      EXPECT_EQ(exact[i].sample_id, ann[i].sample_id);
      EXPECT_EQ(exact[i].pos, ann[i].pos);
      EXPECT_EQ(exact[i].similarity, ann[i].similarity);
    }
  }
}

TEST(AnnTopK, SingleProbeDrawsFromOneCluster) {
  Datastore ds = random_store(300, 8, 24);
  IndexParams ip;
  ip.clusters = 8;
  ip.pq = false;
  ds.train_index(ip);
  std::vector<Real> q(8, Real(0.5));
  auto hits = ds.ann_topk(q, 300, 1);
  // All hits must share the cluster nearest to the query; verify by checking
  // candidate count is bounded by the largest single cluster.
  EXPECT_LT(hits.size(), 300u);
}

TEST(AnnTopK, RecallNonDecreasingInNprobe) {
  const std::size_t n = 5000, d = 16, k = 10;
  Datastore ds = random_store(n, d, 25);
  IndexParams ip;
  ip.clusters = 64;
  ip.pq = false;
  ip.seed = 7;
  ds.train_index(ip);
  Rng rng(26);
  std::vector<std::size_t> probes{1, 2, 4, 8, 64};
  std::vector<double> recall(probes.size(), 0);
  const int n_queries = 30;
  for (int t = 0; t < n_queries; ++t) {
    std::vector<Real> q(d);
    for (auto& v : q) v = static_cast<Real>(rng.next_normal());
    auto exact = ds.exact_topk(q, k);
    for (std::size_t pi = 0; pi < probes.size(); ++pi) {
      auto ann = ds.ann_topk(q, k, probes[pi]);
      for (const auto& h : ann)
        for (const auto& e : exact)
          if (h.sample_id == e.sample_id && h.pos == e.pos) {
            recall[pi] += 1;
            break;
          }
    }
  }
  for (std::size_t pi = 1; pi < probes.size(); ++pi) EXPECT_GE(recall[pi], recall[pi - 1]);
  EXPECT_NEAR(recall.back(), double(n_queries * k), 1e-9);  // full probe = exact
}

TEST(LeakageFilter, RejectsWithinRadiusSameSampleOnly) {
  const std::uint32_t d_radius = 128;
  auto filter = leakage_filter(4, 200, LeakageMode::kTrain, d_radius);
  // The position immediately before the query is exactly the forbidden case.
  EXPECT_FALSE(filter(4, 199));
  EXPECT_FALSE(filter(4, 200));
  // Different sample: accepted regardless of position.
  EXPECT_TRUE(filter(5, 199));
  EXPECT_TRUE(filter(3, 200));
  // Boundary enumeration at Δpos ∈ {D−1, D, D+1}, both sides.
  EXPECT_FALSE(filter(4, 200 - (d_radius - 1)));
  EXPECT_FALSE(filter(4, 200 - d_radius));
  EXPECT_TRUE(filter(4, 200 + d_radius + 1));
  EXPECT_FALSE(filter(4, 200 + d_radius));
  EXPECT_FALSE(filter(4, 200 + (d_radius - 1)));
  // Near-zero clamp: lo saturates at 0.
  auto near_zero = leakage_filter(0, 5, LeakageMode::kTrain, d_radius);
  EXPECT_FALSE(near_zero(0, 0));
  // Eval mode imposes no constraint.
  auto open = leakage_filter(4, 200, LeakageMode::kEval, d_radius);
  EXPECT_FALSE(static_cast<bool>(open));
  EXPECT_THROW(leakage_filter(0, 0, LeakageMode::kTrain, 0), ContractError);
}

TEST(QuantizeFeatures, DisabledDecodeIsBitExact) {
  Datastore ds = random_store(40, 8, 27);
  IndexParams ip;
  ip.clusters = 4;
  ip.pq = false;
  ds.train_index(ip);
  std::vector<Real> emb(8);
  ds.entry_embedding(17, emb.data());
  for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(emb[j], ds.raw_key(17)[j]);
}

TEST(QuantizeFeatures, DecodedCosineStaysHigh) {
  // Frozen regression bound: structured keys at m = d/4 reconstruct with mean
  // cosine above 0.95.
  const std::size_t n = 3000, d = 16;
  Rng rng(28);
  std::vector<Real> keys(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const Real a = static_cast<Real>(rng.next_normal());
    const Real b = static_cast<Real>(rng.next_normal());
    for (std::size_t j = 0; j < d; ++j)
      keys[i * d + j] = a * std::sin(Real(j)) + b * std::cos(Real(2 * j)) +
                        Real(0.05) * static_cast<Real>(rng.next_normal());
  }
  std::vector<std::uint32_t> sids(n), poss(n, 0), vals(n, 0);
  for (std::size_t i = 0; i < n; ++i) sids[i] = static_cast<std::uint32_t>(i);
  Datastore ds = Datastore::from_vectors(d, keys, sids, poss, vals);
  IndexParams ip;
  ip.clusters = 16;
  ip.subspaces = d / 4;
  ip.pq = true;
  ds.train_index(ip);
  double mean_cos = 0;
  std::vector<Real> dec(d);
  for (std::size_t i = 0; i < n; ++i) {
    ds.entry_embedding(i, dec.data());
    Real dot = 0, na = 0, nb = 0;
    for (std::size_t j = 0; j < d; ++j) {
      dot += dec[j] * keys[i * d + j];
      na += dec[j] * dec[j];
      nb += keys[i * d + j] * keys[i * d + j];
    }
    mean_cos += double(dot) / std::sqrt(double(na) * double(nb));
  }
  mean_cos /= double(n);
  EXPECT_GT(mean_cos, 0.95);
}

TEST(Persistence, SaveLoadPreservesSearchBehavior) {
  const std::size_t n = 500, d = 16;
  Datastore ds = random_store(n, d, 29);
  IndexParams ip;
  ip.clusters = 8;
  ip.subspaces = 4;
  ip.pq = true;
  ds.train_index(ip);
  const std::string path = ::testing::TempDir() + "store.glmds";
  ds.save(path);
  Datastore loaded = Datastore::load(path);
  EXPECT_EQ(loaded.size(), ds.size());
  EXPECT_FALSE(loaded.has_raw_keys());  // PQ on → raw keys dropped by format
  Rng rng(30);
  std::vector<Real> q(d);
  for (auto& v : q) v = static_cast<Real>(rng.next_normal());
  auto a = ds.ann_topk(q, 10, 4);
  auto b = loaded.ann_topk(q, 10, 4);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].sample_id, b[i].sample_id);
    EXPECT_EQ(a[i].pos, b[i].pos);
    EXPECT_EQ(a[i].value, b[i].value);
    EXPECT_EQ(a[i].similarity, b[i].similarity);
  }
  // Re-saving the loaded store reproduces the file byte for byte.
  const std::string path2 = ::testing::TempDir() + "store2.glmds";
  loaded.save(path2);
  EXPECT_EQ(hash_file(path), hash_file(path2));
}

TEST(Persistence, BadMagicRejected) {
  const std::string path = ::testing::TempDir() + "bad.glmds";
  {
    std::ofstream os(path, std::ios::binary);
    os << "WRONGMAGICFILE";
  }
  EXPECT_THROW(Datastore::load(path), RuntimeFailure);
}
