#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gnnlm/lm/transformer.hpp"
#include "gnnlm/core/hash.hpp"
#include "gnnlm/store/pq.hpp"

namespace gnnlm {

// One retrieval hit: the anchor token position in the training set, the token
// that follows it, and the cosine score of its cached representation.
struct Neighbor {
  std::uint32_t sample_id = 0;
  std::uint32_t pos = 0;
  std::uint32_t value = 0;
  Real similarity = 0;
};

using EntryFilter = std::function<bool(std::uint32_t sample_id, std::uint32_t pos)>;

enum class LeakageMode { kTrain, kEval };

// Training-time retrieval guard: representations near the query position in
// the same sample encode the query's own continuation, so everything within
// the exclusion radius is rejected. Inference imposes no constraint.
inline EntryFilter leakage_filter(std::uint32_t query_sample, std::uint32_t query_pos,
                                  LeakageMode mode, std::uint32_t radius) {
  if (mode == LeakageMode::kEval) return {};
  GNNLM_CHECK(radius >= 1, "exclusion radius must be >= 1 in train mode");
  return [query_sample, query_pos, radius](std::uint32_t s, std::uint32_t p) {
    if (s != query_sample) return true;
    const std::uint32_t lo = query_pos > radius ? query_pos - radius : 0;
    return p < lo || p > query_pos + radius;
  };
}

struct IndexParams {
  std::size_t clusters = 64;
  std::size_t subspaces = 16;
  bool pq = true;
  std::size_t nprobe_default = 8;
  std::uint64_t seed = 1;
  std::size_t kmeans_iters = 25;
  std::size_t kmeans_sample = 100'000;
  std::size_t pq_sample = 100'000;
  std::size_t pq_codebook = 256;
};

constexpr char kDatastoreMagic[6] = {'G', 'L', 'M', 'D', 'S', '1'};

// Key→value table over every training-token position with a successor, plus
// an IVF-PQ index for approximate search. Immutable once built.
class Datastore {
 public:
  // --- construction -------------------------------------------------------

  // Caches the frozen LM's hidden state at every training position. Samples
  // are encoded in stride-sized blocks, each warmed with the previous
  // max_seq_len − stride tokens of its sample.
  static Datastore build(const LmConfig& cfg, LmParams& params, const Corpus& corpus,
                         std::size_t stride) {
    GNNLM_CHECK(corpus.vocab.size() == cfg.vocab_size, "corpus/model vocab mismatch");
    GNNLM_CHECK(stride >= 1 && stride <= cfg.max_seq_len);
    GNNLM_CHECK(!corpus.train.empty(), "empty training corpus");
    Datastore ds;
    ds.d_ = cfg.d_model;
    ds.sample_offsets_.push_back(0);
    for (std::size_t s = 0; s < corpus.n_samples(); ++s) {
      const std::size_t len = corpus.sample_size(s);
      const std::size_t n_entries = len > 1 ? len - 1 : 0;
      const std::size_t base = ds.values_.size();
      ds.keys_.resize((base + n_entries) * ds.d_);
      for_each_key_window(
          cfg, params, corpus, s, stride,
          [&](std::size_t w0, const LmOutput& out, std::size_t row0, std::size_t rows) {
            for (std::size_t r = 0; r < rows; ++r) {
              const std::size_t pos = w0 + r;
              if (pos >= n_entries) continue;  // final position has no successor
              std::copy_n(out.hidden.data() + (row0 + r) * ds.d_, ds.d_,
                          ds.keys_.begin() + (base + pos) * ds.d_);
            }
          });
      for (std::size_t pos = 0; pos < n_entries; ++pos) {
        ds.sample_ids_.push_back(static_cast<std::uint32_t>(s));
        ds.positions_.push_back(static_cast<std::uint32_t>(pos));
        ds.values_.push_back(corpus.sample_token(s, pos + 1));
      }
      ds.sample_offsets_.push_back(ds.values_.size());
    }
    ds.raw_keys_ = true;
    ds.recompute_inv_norms();
    return ds;
  }

  // Assembles a store from precomputed key vectors. Entries must be grouped
  // by sample id (ascending) with contiguous positions starting at 0.
  static Datastore from_vectors(std::size_t d, std::vector<Real> keys,
                                std::vector<std::uint32_t> sample_ids,
                                std::vector<std::uint32_t> positions,
                                std::vector<std::uint32_t> values) {
    GNNLM_CHECK(keys.size() == sample_ids.size() * d);
    GNNLM_CHECK(sample_ids.size() == positions.size() && positions.size() == values.size());
    Datastore ds;
    ds.d_ = d;
    ds.keys_ = std::move(keys);
    ds.sample_ids_ = std::move(sample_ids);
    ds.positions_ = std::move(positions);
    ds.values_ = std::move(values);
    ds.raw_keys_ = true;
    ds.recompute_inv_norms();
    ds.rebuild_sample_offsets();
    return ds;
  }

  // Invokes fn(block_start, lm_output, first_scored_row, n_scored_rows) for
  // each encode window of one sample; shared by build and its replay oracle.
  template <typename Fn>
  static void for_each_key_window(const LmConfig& cfg, LmParams& params, const Corpus& corpus,
                                  std::size_t s, std::size_t stride, Fn&& fn) {
    const std::size_t len = corpus.sample_size(s);
    const std::size_t warm = cfg.max_seq_len - stride;
    std::vector<std::uint32_t> window;
    for (std::size_t w0 = 0; w0 < len; w0 += stride) {
      const std::size_t wb = w0 > warm ? w0 - warm : 0;
      const std::size_t we = std::min(len, w0 + stride);
      window.clear();
      for (std::size_t p = wb; p < we; ++p) window.push_back(corpus.sample_token(s, p));
      LmOutput out = lm_encode(nullptr, cfg, params, window);
      fn(w0, out, w0 - wb, we - w0);
    }
  }

  // --- entry access -------------------------------------------------------

  std::size_t size() const { return values_.size(); }
  std::size_t dim() const { return d_; }
  bool has_raw_keys() const { return raw_keys_; }
  bool pq_enabled() const { return pq_enabled_; }
  std::size_t clusters() const { return c_; }
  std::size_t nprobe_default() const { return nprobe_default_; }
  const ProductQuantizer& quantizer() const { return pq_; }

  std::uint32_t sample_id(std::size_t i) const { return sample_ids_[i]; }
  std::uint32_t position(std::size_t i) const { return positions_[i]; }
  std::uint32_t value(std::size_t i) const { return values_[i]; }
  const Real* raw_key(std::size_t i) const {
    GNNLM_CHECK(raw_keys_, "raw keys not stored");
    return keys_.data() + i * d_;
  }

  // Entry index of (sample, pos); size() when absent.
  std::size_t entry_index(std::uint32_t s, std::uint32_t pos) const {
    if (s + 1 >= sample_offsets_.size()) return size();
    const std::size_t begin = sample_offsets_[s], end = sample_offsets_[s + 1];
    if (pos >= end - begin) return size();
    return begin + pos;
  }

  std::size_t sample_entry_count(std::uint32_t s) const {
    if (s + 1 >= sample_offsets_.size()) return 0;
    return sample_offsets_[s + 1] - sample_offsets_[s];
  }

  // Initial node embedding: the decoded PQ approximation when compression is
  // on, the exact cached key otherwise.
  void entry_embedding(std::size_t i, Real* out) const {
    if (pq_enabled_)
      pq_.decode(codes_.data() + i * pq_.code_bytes(), out);
    else
      std::copy_n(raw_key(i), d_, out);
  }

  // --- index --------------------------------------------------------------

  void train_index(const IndexParams& ip) {
    GNNLM_CHECK(raw_keys_, "index training needs raw keys in memory");
    GNNLM_CHECK(ip.clusters >= 1, "cluster count must be positive");
    GNNLM_CHECK(size() >= ip.clusters, "fewer entries than clusters");
    if (ip.pq)
      GNNLM_CHECK(ip.subspaces >= 1 && d_ % ip.subspaces == 0,
                  "d must be divisible by subspace count");
    Rng rng(ip.seed);
    c_ = ip.clusters;
    nprobe_default_ = ip.nprobe_default;

    // Coarse quantizer: k-means over L2-normalized keys (a subsample when the
    // store is large), so nearest-centroid order matches cosine order.
    {
      const std::size_t n_train = std::min(size(), ip.kmeans_sample);
      std::vector<std::size_t> picks = subsample_indices(size(), n_train, rng);
      std::vector<Real> train(n_train * d_);
      for (std::size_t i = 0; i < n_train; ++i) normalized_key(picks[i], train.data() + i * d_);
      Rng km_rng = rng.fork();
      KMeans km = KMeans::fit(train.data(), n_train, d_, c_, ip.kmeans_iters, km_rng);
      centroids_ = std::move(km.centroids);
    }

    pq_enabled_ = ip.pq;
    if (pq_enabled_) {
      pq_ = ProductQuantizer(d_, ip.subspaces, ip.pq_codebook);
      const std::size_t n_train = std::min(size(), ip.pq_sample);
      std::vector<std::size_t> picks = subsample_indices(size(), n_train, rng);
      std::vector<Real> train(n_train * d_);
      for (std::size_t i = 0; i < n_train; ++i)
        std::copy_n(raw_key(picks[i]), d_, train.begin() + i * d_);
      Rng pq_rng = rng.fork();
      pq_.train(train.data(), n_train, ip.kmeans_iters, pq_rng);
      codes_ = pq_.encode_all(keys_.data(), size());
      build_decoded_norm_table();
    }
    assign_and_build_lists();
  }

  // --- search -------------------------------------------------------------

  std::vector<Neighbor> exact_topk(std::span<const Real> query, std::size_t k,
                                   const EntryFilter& filter = {}) const {
    GNNLM_CHECK(k >= 1, "k must be at least 1");
    GNNLM_CHECK(raw_keys_, "exact search needs raw keys");
    std::vector<Real> q = normalize_query(query);
    std::vector<Real> scores(size());
    parallel_for(size(), 4096, [&](std::size_t i0, std::size_t i1) {
      for (std::size_t i = i0; i < i1; ++i) {
        const Real* key = keys_.data() + i * d_;
        Real dot = 0;
        for (std::size_t j = 0; j < d_; ++j) dot += q[j] * key[j];
        scores[i] = dot * inv_norms_[i];
      }
    });
    std::vector<Cand> cands;
    cands.reserve(size());
    for (std::size_t i = 0; i < size(); ++i)
      if (!filter || filter(sample_ids_[i], positions_[i]))
        cands.push_back({scores[i], static_cast<std::uint32_t>(i)});
    return select_top(cands, k);
  }

  std::vector<Neighbor> ann_topk(std::span<const Real> query, std::size_t k, std::size_t nprobe,
                                 const EntryFilter& filter = {}) const {
    GNNLM_CHECK(k >= 1, "k must be at least 1");
    GNNLM_CHECK(c_ >= 1, "index not trained");
    GNNLM_CHECK(nprobe >= 1 && nprobe <= c_, "nprobe must be in [1, clusters]");
    std::vector<Real> q = normalize_query(query);

    std::vector<std::uint32_t> cluster_order(c_);
    for (std::size_t i = 0; i < c_; ++i) cluster_order[i] = static_cast<std::uint32_t>(i);
    std::vector<Real> cdist(c_);
    for (std::size_t i = 0; i < c_; ++i)
      cdist[i] = KMeans::sq_dist(q.data(), centroids_.data() + i * d_, d_);
    std::partial_sort(cluster_order.begin(), cluster_order.begin() + nprobe, cluster_order.end(),
                      [&](std::uint32_t a, std::uint32_t b) {
                        if (cdist[a] != cdist[b]) return cdist[a] < cdist[b];
                        return a < b;
                      });

    std::vector<Cand> cands;
    if (pq_enabled_) {
      // ADC lookup tables: dot(q, centroid) per (sub, code); decoded norms are
      // precomputed once per index.
      const std::size_t sd = pq_.sub_dim(), m = pq_.subspaces();
      std::vector<Real> dot_tab(m * 256);
      for (std::size_t sub = 0; sub < m; ++sub)
        for (std::size_t code = 0; code < 256; ++code) {
          const Real* cb = pq_.centroid(sub, code);
          Real dot = 0;
          for (std::size_t j = 0; j < sd; ++j) dot += q[sub * sd + j] * cb[j];
          dot_tab[sub * 256 + code] = dot;
        }
      for (std::size_t p = 0; p < nprobe; ++p) {
        const std::uint32_t cl = cluster_order[p];
        for (std::size_t e = ivf_offsets_[cl]; e < ivf_offsets_[cl + 1]; ++e) {
          const std::uint32_t i = ivf_entries_[e];
          if (filter && !filter(sample_ids_[i], positions_[i])) continue;
          const std::uint8_t* code = codes_.data() + std::size_t(i) * m;
          Real dot = 0, norm2 = 0;
          for (std::size_t sub = 0; sub < m; ++sub) {
            dot += dot_tab[sub * 256 + code[sub]];
            norm2 += decoded_norm2_[sub * 256 + code[sub]];
          }
          cands.push_back({norm2 > Real(0) ? dot / std::sqrt(norm2) : Real(0), i});
        }
      }
    } else {
      for (std::size_t p = 0; p < nprobe; ++p) {
        const std::uint32_t cl = cluster_order[p];
        for (std::size_t e = ivf_offsets_[cl]; e < ivf_offsets_[cl + 1]; ++e) {
          const std::uint32_t i = ivf_entries_[e];
          if (filter && !filter(sample_ids_[i], positions_[i])) continue;
          const Real* key = keys_.data() + std::size_t(i) * d_;
          Real dot = 0;
          for (std::size_t j = 0; j < d_; ++j) dot += q[j] * key[j];
          cands.push_back({dot * inv_norms_[i], i});
        }
      }
    }
    return select_top(cands, k);
  }

  // --- persistence --------------------------------------------------------

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw RuntimeFailure("datastore: cannot open for writing: " + path);
    os.write(kDatastoreMagic, sizeof kDatastoreMagic);
    write_u32(os, static_cast<std::uint32_t>(d_));
    write_u64(os, size());
    write_u32(os, static_cast<std::uint32_t>(c_));
    write_u32(os, static_cast<std::uint32_t>(pq_enabled_ ? pq_.subspaces() : 0));
    std::uint32_t flags = 0;
    if (pq_enabled_) flags |= 1u;
    const bool persist_raw = !pq_enabled_;
    if (persist_raw) flags |= 2u;
    if (sizeof(Real) == 4) flags |= 4u;
    write_u32(os, flags);
    write_reals(os, centroids_);
    if (pq_enabled_) {
      write_reals(os, pq_.codebooks());
      os.write(reinterpret_cast<const char*>(codes_.data()),
               static_cast<std::streamsize>(codes_.size()));
    }
    for (std::size_t i = 0; i < size(); ++i) {
      write_u32(os, sample_ids_[i]);
      write_u32(os, positions_[i]);
      write_u32(os, values_[i]);
    }
    if (persist_raw) write_reals(os, keys_);
    if (!os) throw RuntimeFailure("datastore: write failed: " + path);
  }

  static Datastore load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw RuntimeFailure("datastore: cannot open: " + path);
    char magic[6];
    is.read(magic, 6);
    if (!is || std::memcmp(magic, kDatastoreMagic, 6) != 0)
      throw RuntimeFailure("datastore: bad magic in " + path);
    Datastore ds;
    ds.d_ = read_u32(is);
    const std::uint64_t n = read_u64(is);
    ds.c_ = read_u32(is);
    const std::uint32_t m = read_u32(is);
    const std::uint32_t flags = read_u32(is);
    GNNLM_CHECK(((flags & 4u) != 0) == (sizeof(Real) == 4),
                "datastore precision differs from build");
    ds.pq_enabled_ = (flags & 1u) != 0;
    ds.raw_keys_ = (flags & 2u) != 0;
    ds.centroids_.resize(ds.c_ * ds.d_);
    read_reals(is, ds.centroids_);
    if (ds.pq_enabled_) {
      ds.pq_ = ProductQuantizer(ds.d_, m);
      read_reals(is, ds.pq_.codebooks());
      ds.pq_.mark_trained();
      ds.codes_.resize(n * m);
      is.read(reinterpret_cast<char*>(ds.codes_.data()),
              static_cast<std::streamsize>(ds.codes_.size()));
      ds.build_decoded_norm_table();
    }
    ds.sample_ids_.resize(n);
    ds.positions_.resize(n);
    ds.values_.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      ds.sample_ids_[i] = read_u32(is);
      ds.positions_[i] = read_u32(is);
      ds.values_[i] = read_u32(is);
    }
    if (ds.raw_keys_) {
      ds.keys_.resize(n * ds.d_);
      read_reals(is, ds.keys_);
      ds.recompute_inv_norms();
    }
    if (!is) throw RuntimeFailure("datastore: truncated file: " + path);
    ds.rebuild_sample_offsets();
    if (ds.c_ >= 1) ds.assign_and_build_lists();
    return ds;
  }

 private:
  struct Cand {
    Real score;
    std::uint32_t id;
  };

  static void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  static void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  static std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
  }
  static std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
  }
  static void write_reals(std::ostream& os, const std::vector<Real>& v) {
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(Real)));
  }
  static void read_reals(std::istream& is, std::vector<Real>& v) {
    is.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(Real)));
  }

  static std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t k, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (k >= n) return idx;
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.next_below(n - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
  }

  void recompute_inv_norms() {
    inv_norms_.resize(size());
    parallel_for(size(), 8192, [&](std::size_t i0, std::size_t i1) {
      for (std::size_t i = i0; i < i1; ++i) {
        const Real* key = keys_.data() + i * d_;
        Real n2 = 0;
        for (std::size_t j = 0; j < d_; ++j) n2 += key[j] * key[j];
        inv_norms_[i] = n2 > Real(0) ? Real(1) / std::sqrt(n2) : Real(0);
      }
    });
  }

  void normalized_key(std::size_t i, Real* out) const {
    const Real* key = keys_.data() + i * d_;
    const Real inv = inv_norms_[i];
    for (std::size_t j = 0; j < d_; ++j) out[j] = key[j] * inv;
  }

  std::vector<Real> normalize_query(std::span<const Real> query) const {
    GNNLM_CHECK(query.size() == d_, "query dimension mismatch");
    Real n2 = 0;
    for (Real v : query) n2 += v * v;
    GNNLM_CHECK(n2 > Real(0), "zero-norm query");
    const Real inv = Real(1) / std::sqrt(n2);
    std::vector<Real> q(query.begin(), query.end());
    for (Real& v : q) v *= inv;
    return q;
  }

  void build_decoded_norm_table() {
    const std::size_t sd = pq_.sub_dim(), m = pq_.subspaces();
    decoded_norm2_.assign(m * 256, Real(0));
    for (std::size_t sub = 0; sub < m; ++sub)
      for (std::size_t code = 0; code < 256; ++code) {
        const Real* cb = pq_.centroid(sub, code);
        Real n2 = 0;
        for (std::size_t j = 0; j < sd; ++j) n2 += cb[j] * cb[j];
        decoded_norm2_[sub * 256 + code] = n2;
      }
  }

  // Cluster assignment works from whatever the on-disk format preserves —
  // decoded keys under PQ, raw keys otherwise — so a loaded store behaves
  // identically to a freshly built one.
  void assign_and_build_lists() {
    assignments_.assign(size(), 0);
    parallel_for(size(), 2048, [&](std::size_t i0, std::size_t i1) {
      std::vector<Real> buf(d_);
      for (std::size_t i = i0; i < i1; ++i) {
        if (pq_enabled_) {
          pq_.decode(codes_.data() + i * pq_.code_bytes(), buf.data());
          Real n2 = 0;
          for (std::size_t j = 0; j < d_; ++j) n2 += buf[j] * buf[j];
          const Real inv = n2 > Real(0) ? Real(1) / std::sqrt(n2) : Real(0);
          for (std::size_t j = 0; j < d_; ++j) buf[j] *= inv;
        } else {
          normalized_key(i, buf.data());
        }
        assignments_[i] = KMeans::nearest(buf.data(), centroids_.data(), c_, d_);
      }
    });
    ivf_offsets_.assign(c_ + 1, 0);
    for (std::uint32_t a : assignments_) ++ivf_offsets_[a + 1];
    for (std::size_t i = 1; i <= c_; ++i) ivf_offsets_[i] += ivf_offsets_[i - 1];
    ivf_entries_.resize(size());
    std::vector<std::uint64_t> cursor(ivf_offsets_.begin(), ivf_offsets_.end() - 1);
    for (std::size_t i = 0; i < size(); ++i)
      ivf_entries_[cursor[assignments_[i]]++] = static_cast<std::uint32_t>(i);
  }

  void rebuild_sample_offsets() {
    sample_offsets_.clear();
    sample_offsets_.push_back(0);
    for (std::size_t i = 0; i < size(); ++i)
      while (sample_offsets_.size() <= sample_ids_[i]) sample_offsets_.push_back(i);
    sample_offsets_.push_back(size());
  }

  std::vector<Neighbor> select_top(std::vector<Cand>& cands, std::size_t k) const {
    const auto better = [&](const Cand& a, const Cand& b) {
      if (a.score != b.score) return a.score > b.score;
      if (sample_ids_[a.id] != sample_ids_[b.id]) return sample_ids_[a.id] < sample_ids_[b.id];
      return positions_[a.id] < positions_[b.id];
    };
    const std::size_t take = std::min(k, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + take, cands.end(), better);
    std::vector<Neighbor> out(take);
    for (std::size_t i = 0; i < take; ++i)
      out[i] = {sample_ids_[cands[i].id], positions_[cands[i].id], values_[cands[i].id],
                cands[i].score};
    return out;
  }

  std::size_t d_ = 0;
  std::vector<Real> keys_;       // n×d raw cached representations
  std::vector<Real> inv_norms_;  // per-entry 1/‖key‖
  std::vector<std::uint32_t> sample_ids_, positions_, values_;
  std::vector<std::uint64_t> sample_offsets_;
  bool raw_keys_ = false;

  std::size_t c_ = 0;
  std::size_t nprobe_default_ = 8;
  std::vector<Real> centroids_;  // C×d, unit-sphere space
  bool pq_enabled_ = false;
  ProductQuantizer pq_;
  std::vector<std::uint8_t> codes_;
  std::vector<Real> decoded_norm2_;  // per (sub, code) squared norm
  std::vector<std::uint32_t> assignments_;
  std::vector<std::uint64_t> ivf_offsets_;
  std::vector<std::uint32_t> ivf_entries_;
};

}  // namespace gnnlm
