#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "gnnlm/core/check.hpp"
#include "gnnlm/core/parallel.hpp"
#include "gnnlm/core/rng.hpp"
#include "gnnlm/core/tensor.hpp"

namespace gnnlm {

// Lloyd k-means with seeded k-means++ initialization. Empty clusters are
// re-seeded from the point farthest from its assigned centroid. Ties break
// toward the lower index everywhere, so the result is deterministic.
struct KMeans {
  std::vector<Real> centroids;          // C×d
  std::vector<std::uint32_t> assignment;  // per input point

  static Real sq_dist(const Real* a, const Real* b, std::size_t d) {
    Real s = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const Real t = a[j] - b[j];
      s += t * t;
    }
    return s;
  }

  static std::uint32_t nearest(const Real* x, const Real* centroids, std::size_t c,
                               std::size_t d) {
    std::uint32_t best = 0;
    Real best_d = sq_dist(x, centroids, d);
    for (std::size_t i = 1; i < c; ++i) {
      const Real dd = sq_dist(x, centroids + i * d, d);
      if (dd < best_d) {
        best_d = dd;
        best = static_cast<std::uint32_t>(i);
      }
    }
    return best;
  }

  static KMeans fit(const Real* data, std::size_t n, std::size_t d, std::size_t c,
                    std::size_t iters, Rng& rng) {
    GNNLM_CHECK(n >= c && c >= 1, "k-means needs at least as many points as clusters");
    KMeans km;
    km.centroids.resize(c * d);

    // k-means++ seeding
    std::vector<Real> min_d(n, std::numeric_limits<Real>::max());
    std::size_t first = static_cast<std::size_t>(rng.next_below(n));
    std::copy_n(data + first * d, d, km.centroids.begin());
    for (std::size_t k = 1; k < c; ++k) {
      const Real* last = km.centroids.data() + (k - 1) * d;
      Real total = 0;
      for (std::size_t i = 0; i < n; ++i) {
        min_d[i] = std::min(min_d[i], sq_dist(data + i * d, last, d));
        total += min_d[i];
      }
      std::size_t chosen = 0;
      if (total > 0) {
        const Real target = static_cast<Real>(rng.next_double()) * total;
        Real acc = 0;
        chosen = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          acc += min_d[i];
          if (acc >= target) {
            chosen = i;
            break;
          }
        }
      } else {
        chosen = static_cast<std::size_t>(rng.next_below(n));
      }
      std::copy_n(data + chosen * d, d, km.centroids.begin() + k * d);
    }

    km.assignment.assign(n, 0);
    std::vector<Real> sums(c * d);
    std::vector<std::size_t> counts(c);
    for (std::size_t it = 0; it < iters; ++it) {
      parallel_for(n, 4096, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i)
          km.assignment[i] = nearest(data + i * d, km.centroids.data(), c, d);
      });
      std::fill(sums.begin(), sums.end(), Real(0));
      std::fill(counts.begin(), counts.end(), 0);
      for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t a = km.assignment[i];
        ++counts[a];
        const Real* x = data + i * d;
        Real* s = sums.data() + std::size_t(a) * d;
        for (std::size_t j = 0; j < d; ++j) s[j] += x[j];
      }
      // Re-seed empty clusters from the farthest point, in cluster order.
      std::vector<bool> taken(n, false);
      for (std::size_t k = 0; k < c; ++k) {
        if (counts[k] > 0) continue;
        std::size_t far = n;
        Real far_d = Real(-1);
        for (std::size_t i = 0; i < n; ++i) {
          if (taken[i]) continue;
          const Real dd =
              sq_dist(data + i * d, km.centroids.data() + std::size_t(km.assignment[i]) * d, d);
          if (dd > far_d) {
            far_d = dd;
            far = i;
          }
        }
        if (far == n) break;
        taken[far] = true;
        std::copy_n(data + far * d, d, sums.begin() + k * d);
        counts[k] = 1;
        // Give the donor cluster its centroid back next round; the donated
        // point will reassign itself on the following iteration.
      }
      for (std::size_t k = 0; k < c; ++k) {
        if (counts[k] == 0) continue;
        const Real inv = Real(1) / Real(counts[k]);
        Real* dst = km.centroids.data() + k * d;
        const Real* s = sums.data() + k * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] = s[j] * inv;
      }
    }
    // Final assignment against the converged centroids.
    parallel_for(n, 4096, [&](std::size_t i0, std::size_t i1) {
      for (std::size_t i = i0; i < i1; ++i)
        km.assignment[i] = nearest(data + i * d, km.centroids.data(), c, d);
    });
    return km;
  }
};

}  // namespace gnnlm
