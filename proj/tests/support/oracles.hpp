#pragma once

// Test-only reference implementations. These are written straight-line and
// stay independent of the library code paths they check.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "gnnlm/core/tensor.hpp"

namespace oracle {

using gnnlm::Real;
using gnnlm::Tensor;

// Naive triple-loop matrix product.
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b,
                                  std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

// Central finite difference of a scalar-valued function w.r.t. one parameter
// tensor, evaluated entry by entry.
inline std::vector<double> finite_diff(Tensor param, const std::function<double()>& eval,
                                       double step = 1e-5) {
  std::vector<double> g(param.numel());
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const Real saved = param.at(i);
    param.at(i) = saved + static_cast<Real>(step);
    const double up = eval();
    param.at(i) = saved - static_cast<Real>(step);
    const double down = eval();
    param.at(i) = saved;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

// Largest relative error between an analytic gradient and a reference, with an
// absolute floor so near-zero entries compare sanely.
inline double max_rel_err(const std::vector<Real>& analytic, const std::vector<double>& reference,
                          double floor = 1e-3) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = static_cast<double>(analytic[i]);
    const double r = reference[i];
    const double denom = std::max({std::abs(a), std::abs(r), floor});
    worst = std::max(worst, std::abs(a - r) / denom);
  }
  return worst;
}

}  // namespace oracle
