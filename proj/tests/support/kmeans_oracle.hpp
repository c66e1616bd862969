#pragma once

// Straight-line re-implementation of the pinned k-means recipe (seeded
// k-means++ init, fixed Lloyd iterations, empty clusters re-seeded from the
// farthest point) used to cross-check the production quantizer.

#include <algorithm>
#include <limits>
#include <vector>

#include "gnnlm/core/rng.hpp"
#include "gnnlm/core/tensor.hpp"

namespace oracle {

using gnnlm::Real;
using gnnlm::Rng;

inline Real sqd(const Real* a, const Real* b, std::size_t d) {
  Real s = 0;
  for (std::size_t j = 0; j < d; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return s;
}

inline std::vector<Real> kmeans_fit(const Real* data, std::size_t n, std::size_t d,
                                    std::size_t c, std::size_t iters, Rng& rng) {
  std::vector<Real> cent(c * d);
  std::vector<Real> min_d(n, std::numeric_limits<Real>::max());
  std::size_t first = static_cast<std::size_t>(rng.next_below(n));
  std::copy_n(data + first * d, d, cent.begin());
  for (std::size_t k = 1; k < c; ++k) {
    const Real* last = cent.data() + (k - 1) * d;
    Real total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      min_d[i] = std::min(min_d[i], sqd(data + i * d, last, d));
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
    std::copy_n(data + chosen * d, d, cent.begin() + k * d);
  }

  std::vector<std::uint32_t> assign(n, 0);
  for (std::size_t it = 0; it < iters; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t best = 0;
      Real bd = sqd(data + i * d, cent.data(), d);
      for (std::size_t k = 1; k < c; ++k) {
        const Real dd = sqd(data + i * d, cent.data() + k * d, d);
        if (dd < bd) {
          bd = dd;
          best = static_cast<std::uint32_t>(k);
        }
      }
      assign[i] = best;
    }
    std::vector<Real> sums(c * d, Real(0));
    std::vector<std::size_t> counts(c, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      for (std::size_t j = 0; j < d; ++j) sums[assign[i] * d + j] += data[i * d + j];
    }
    std::vector<bool> taken(n, false);
    for (std::size_t k = 0; k < c; ++k) {
      if (counts[k] > 0) continue;
      std::size_t far = n;
      Real far_d = Real(-1);
      for (std::size_t i = 0; i < n; ++i) {
        if (taken[i]) continue;
        const Real dd = sqd(data + i * d, cent.data() + std::size_t(assign[i]) * d, d);
        if (dd > far_d) {
          far_d = dd;
          far = i;
        }
      }
      if (far == n) break;
      taken[far] = true;
      for (std::size_t j = 0; j < d; ++j) sums[k * d + j] = data[far * d + j];
      counts[k] = 1;
    }
    for (std::size_t k = 0; k < c; ++k) {
      if (counts[k] == 0) continue;
      for (std::size_t j = 0; j < d; ++j) cent[k * d + j] = sums[k * d + j] / Real(counts[k]);
    }
  }
  return cent;
}

// Mean squared reconstruction error of quantizing each d-vector to its
// nearest of the c centroids, per dimension.
inline double kmeans_mse(const Real* data, std::size_t n, std::size_t d,
                         const std::vector<Real>& cent, std::size_t c) {
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Real best = sqd(data + i * d, cent.data(), d);
    for (std::size_t k = 1; k < c; ++k)
      best = std::min(best, sqd(data + i * d, cent.data() + k * d, d));
    total += double(best);
  }
  return total / double(n * d);
}

}  // namespace oracle
