#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "gnnlm/core/parallel.hpp"
#include "gnnlm/core/tensor.hpp"

// Differentiable tensor operations. Every op takes an optional Tape*; with a
// null tape (or when no input requires grad) the op is a pure function.
// Backward closures accumulate into .grad, so gradients from multiple uses of
// a tensor add up.
namespace gnnlm::ops {

namespace detail {

inline bool want_grad(const Tape* tape, std::initializer_list<const Tensor*> ins) {
  if (!tape) return false;
  for (const Tensor* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

// C += A(m×k) · B(k×n)
inline void addmm_nn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k,
                     std::size_t n) {
  const std::size_t grain = std::max<std::size_t>(1, (1u << 19) / std::max<std::size_t>(1, k * n));
  parallel_for(m, grain, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      Real* ci = c + i * n;
      const Real* ai = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const Real av = ai[p];
        const Real* bp = b + p * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  });
}

// C += A(m×k) · B(n×k)ᵀ
inline void addmm_nt(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k,
                     std::size_t n) {
  const std::size_t grain = std::max<std::size_t>(1, (1u << 19) / std::max<std::size_t>(1, k * n));
  parallel_for(m, grain, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      const Real* ai = a + i * k;
      Real* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const Real* bj = b + j * k;
        Real acc = 0;
        for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
        ci[j] += acc;
      }
    }
  });
}

// C += A(m×k)ᵀ · B(m×n), so C is k×n
inline void addmm_tn(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k,
                     std::size_t n) {
  const std::size_t grain = std::max<std::size_t>(1, (1u << 19) / std::max<std::size_t>(1, m * n));
  parallel_for(k, grain, [&](std::size_t p0, std::size_t p1) {
    for (std::size_t p = p0; p < p1; ++p) {
      Real* cp = c + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const Real av = a[i * k + p];
        const Real* bi = b + i * n;
        for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
      }
    }
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear algebra
// ---------------------------------------------------------------------------

inline Tensor add(Tape* tape, Tensor a, Tensor b) {
  GNNLM_CHECK(a.shape() == b.shape(), "add: shape mismatch");
  Tensor out = Tensor::zeros(a.shape(), detail::want_grad(tape, {&a, &b}));
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = a.at(i) + b.at(i);
  if (out.requires_grad()) {
    tape->record([a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

// y[i, j] = a[i, j] + bias[j]
inline Tensor add_bias(Tape* tape, Tensor a, Tensor bias) {
  GNNLM_CHECK(a.ndim() == 2 && bias.ndim() == 1 && a.cols() == bias.numel(),
              "add_bias: trailing axis mismatch");
  Tensor out = Tensor::zeros(a.shape(), detail::want_grad(tape, {&a, &bias}));
  const std::size_t m = a.rows(), n = a.cols();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = a.at(i, j) + bias.at(j);
  if (out.requires_grad()) {
    tape->record([a, bias, out, m, n]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto& gb = bias.grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
      }
    });
  }
  return out;
}

inline Tensor mul(Tape* tape, Tensor a, Tensor b) {
  GNNLM_CHECK(a.shape() == b.shape(), "mul: shape mismatch");
  Tensor out = Tensor::zeros(a.shape(), detail::want_grad(tape, {&a, &b}));
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = a.at(i) * b.at(i);
  if (out.requires_grad()) {
    tape->record([a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.at(i);
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.at(i);
      }
    });
  }
  return out;
}

inline Tensor scale(Tape* tape, Tensor a, Real c) {
  Tensor out = Tensor::zeros(a.shape(), detail::want_grad(tape, {&a}));
  for (std::size_t i = 0; i < a.numel(); ++i) out.at(i) = a.at(i) * c;
  if (out.requires_grad()) {
    tape->record([a, out, c]() mutable {
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    });
  }
  return out;
}

inline Tensor sub(Tape* tape, Tensor a, Tensor b) {
  return add(tape, a, scale(tape, b, Real(-1)));
}

inline Tensor matmul(Tape* tape, Tensor a, Tensor b) {
  GNNLM_CHECK(a.ndim() == 2 && b.ndim() == 2, "matmul: operands must be 2-D");
  GNNLM_CHECK(a.cols() == b.rows(), "matmul: inner dimensions disagree");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = Tensor::zeros({m, n}, detail::want_grad(tape, {&a, &b}));
  detail::addmm_nn(a.data(), b.data(), out.data(), m, k, n);
  if (out.requires_grad()) {
    tape->record([a, b, out, m, k, n]() mutable {
      const Real* g = out.grad().data();
      if (a.requires_grad()) detail::addmm_nt(g, b.data(), a.grad().data(), m, n, k);
      if (b.requires_grad()) detail::addmm_tn(a.data(), g, b.grad().data(), m, k, n);
    });
  }
  return out;
}

// a(m×k) · b(n×k)ᵀ → m×n
inline Tensor matmul_tb(Tape* tape, Tensor a, Tensor b) {
  GNNLM_CHECK(a.ndim() == 2 && b.ndim() == 2 && a.cols() == b.cols(),
              "matmul_tb: trailing dimensions disagree");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor out = Tensor::zeros({m, n}, detail::want_grad(tape, {&a, &b}));
  detail::addmm_nt(a.data(), b.data(), out.data(), m, k, n);
  if (out.requires_grad()) {
    tape->record([a, b, out, m, k, n]() mutable {
      const Real* g = out.grad().data();
      if (a.requires_grad()) detail::addmm_nn(g, b.data(), a.grad().data(), m, n, k);
      if (b.requires_grad()) detail::addmm_tn(g, a.data(), b.grad().data(), m, n, k);
    });
  }
  return out;
}

inline Tensor gelu(Tape* tape, Tensor a) {
  Tensor out = Tensor::zeros(a.shape(), detail::want_grad(tape, {&a}));
  constexpr Real inv_sqrt2 = Real(0.7071067811865475244);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const Real x = a.at(i);
    out.at(i) = Real(0.5) * x * (Real(1) + std::erf(x * inv_sqrt2));
  }
  if (out.requires_grad()) {
    tape->record([a, out]() mutable {
      constexpr Real inv_sqrt2_ = Real(0.7071067811865475244);
      constexpr Real inv_sqrt2pi = Real(0.3989422804014326779);
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const Real x = a.at(i);
        const Real cdf = Real(0.5) * (Real(1) + std::erf(x * inv_sqrt2_));
        const Real pdf = inv_sqrt2pi * std::exp(Real(-0.5) * x * x);
        ga[i] += g[i] * (cdf + x * pdf);
      }
    });
  }
  return out;
}

// Max-subtracted softmax over the trailing axis.
inline Tensor softmax(Tape* tape, Tensor a) {
  GNNLM_CHECK(a.ndim() >= 1);
  const std::size_t n = a.shape().back();
  const std::size_t rows = a.numel() / n;
  Tensor out = Tensor::zeros(a.shape(), detail::want_grad(tape, {&a}));
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* x = a.data() + r * n;
    Real* y = out.data() + r * n;
    Real mx = x[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    Real z = 0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    const Real inv = Real(1) / z;
    for (std::size_t j = 0; j < n; ++j) y[j] *= inv;
  }
  if (out.requires_grad()) {
    tape->record([a, out, rows, n]() mutable {
      auto& ga = a.grad();
      const auto& g = out.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const Real* y = out.data() + r * n;
        const Real* gy = g.data() + r * n;
        Real dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += y[j] * gy[j];
        Real* gx = ga.data() + r * n;
        for (std::size_t j = 0; j < n; ++j) gx[j] += y[j] * (gy[j] - dot);
      }
    });
  }
  return out;
}

// Layer normalization over the trailing axis with affine gain/bias.
inline Tensor layer_norm(Tape* tape, Tensor a, Tensor gain, Tensor bias,
                         Real eps = Real(1e-5)) {
  const std::size_t n = a.shape().back();
  GNNLM_CHECK(gain.numel() == n && bias.numel() == n, "layer_norm: affine shape mismatch");
  const std::size_t rows = a.numel() / n;
  Tensor out = Tensor::zeros(a.shape(), detail::want_grad(tape, {&a, &gain, &bias}));
  std::vector<Real> mean(rows), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* x = a.data() + r * n;
    Real mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += x[j];
    mu /= Real(n);
    Real var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= Real(n);
    const Real is = Real(1) / std::sqrt(var + eps);
    mean[r] = mu;
    inv_std[r] = is;
    Real* y = out.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) y[j] = (x[j] - mu) * is * gain.at(j) + bias.at(j);
  }
  if (out.requires_grad()) {
    tape->record([a, gain, bias, out, rows, n, mean = std::move(mean),
                  inv_std = std::move(inv_std)]() mutable {
      const auto& g = out.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const Real* x = a.data() + r * n;
        const Real* gy = g.data() + r * n;
        const Real mu = mean[r], is = inv_std[r];
        if (gain.requires_grad()) {
          auto& gg = gain.grad();
          for (std::size_t j = 0; j < n; ++j) gg[j] += gy[j] * (x[j] - mu) * is;
        }
        if (bias.requires_grad()) {
          auto& gb = bias.grad();
          for (std::size_t j = 0; j < n; ++j) gb[j] += gy[j];
        }
        if (a.requires_grad()) {
          // dL/dx through x̂ = (x-μ)·is
          Real sum_dxhat = 0, sum_dxhat_xhat = 0;
          for (std::size_t j = 0; j < n; ++j) {
            const Real dxhat = gy[j] * gain.at(j);
            const Real xhat = (x[j] - mu) * is;
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
          }
          auto& ga = a.grad();
          Real* gx = ga.data() + r * n;
          const Real invn = Real(1) / Real(n);
          for (std::size_t j = 0; j < n; ++j) {
            const Real dxhat = gy[j] * gain.at(j);
            const Real xhat = (x[j] - mu) * is;
            gx[j] += is * (dxhat - invn * sum_dxhat - xhat * invn * sum_dxhat_xhat);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Indexing, slicing, concatenation
// ---------------------------------------------------------------------------

inline Tensor gather_rows(Tape* tape, Tensor a, const std::vector<std::uint32_t>& idx) {
  GNNLM_CHECK(a.ndim() == 2);
  const std::size_t d = a.cols();
  Tensor out = Tensor::zeros({idx.size(), d}, detail::want_grad(tape, {&a}));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    GNNLM_CHECK(idx[i] < a.rows(), "gather_rows: index out of range");
    std::copy_n(a.data() + std::size_t(idx[i]) * d, d, out.data() + i * d);
  }
  if (out.requires_grad()) {
    tape->record([a, out, idx, d]() mutable {
      auto& ga = a.grad();
      const auto& g = out.grad();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        Real* dst = ga.data() + std::size_t(idx[i]) * d;
        const Real* src = g.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

// out(n_rows×d); out[dst[e]] += x[e]. Duplicate destinations accumulate.
inline Tensor scatter_add_rows(Tape* tape, Tensor x, const std::vector<std::uint32_t>& dst,
                               std::size_t n_rows) {
  GNNLM_CHECK(x.ndim() == 2 && x.rows() == dst.size());
  const std::size_t d = x.cols();
  Tensor out = Tensor::zeros({n_rows, d}, detail::want_grad(tape, {&x}));
  for (std::size_t e = 0; e < dst.size(); ++e) {
    GNNLM_CHECK(dst[e] < n_rows, "scatter_add_rows: index out of range");
    Real* o = out.data() + std::size_t(dst[e]) * d;
    const Real* xe = x.data() + e * d;
    for (std::size_t j = 0; j < d; ++j) o[j] += xe[j];
  }
  if (out.requires_grad()) {
    tape->record([x, out, dst, d]() mutable {
      auto& gx = x.grad();
      const auto& g = out.grad();
      for (std::size_t e = 0; e < dst.size(); ++e) {
        const Real* src = g.data() + std::size_t(dst[e]) * d;
        Real* dstp = gx.data() + e * d;
        for (std::size_t j = 0; j < d; ++j) dstp[j] += src[j];
      }
    });
  }
  return out;
}

inline Tensor row_slice(Tape* tape, Tensor a, std::size_t r0, std::size_t r1) {
  GNNLM_CHECK(a.ndim() == 2 && r0 <= r1 && r1 <= a.rows());
  const std::size_t d = a.cols();
  Tensor out = Tensor::zeros({r1 - r0, d}, detail::want_grad(tape, {&a}));
  std::copy_n(a.data() + r0 * d, (r1 - r0) * d, out.data());
  if (out.requires_grad()) {
    tape->record([a, out, r0, d]() mutable {
      auto& ga = a.grad();
      const auto& g = out.grad();
      Real* dst = ga.data() + r0 * d;
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    });
  }
  return out;
}

inline Tensor row_concat(Tape* tape, std::vector<Tensor> parts) {
  GNNLM_CHECK(!parts.empty());
  const std::size_t d = parts[0].cols();
  std::size_t rows = 0;
  bool rg = false;
  for (const auto& p : parts) {
    GNNLM_CHECK(p.ndim() == 2 && p.cols() == d, "row_concat: column mismatch");
    rows += p.rows();
    rg = rg || p.requires_grad();
  }
  Tensor out = Tensor::zeros({rows, d}, tape && rg);
  std::size_t r = 0;
  for (const auto& p : parts) {
    std::copy_n(p.data(), p.numel(), out.data() + r * d);
    r += p.rows();
  }
  if (out.requires_grad()) {
    tape->record([parts, out, d]() mutable {
      const auto& g = out.grad();
      std::size_t r = 0;
      for (auto& p : parts) {
        if (p.requires_grad()) {
          auto& gp = p.grad();
          const Real* src = g.data() + r * d;
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += src[i];
        }
        r += p.rows();
      }
    });
  }
  return out;
}

inline Tensor col_slice(Tape* tape, Tensor a, std::size_t c0, std::size_t c1) {
  GNNLM_CHECK(a.ndim() == 2 && c0 <= c1 && c1 <= a.cols());
  const std::size_t m = a.rows(), n = a.cols(), w = c1 - c0;
  Tensor out = Tensor::zeros({m, w}, detail::want_grad(tape, {&a}));
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(a.data() + i * n + c0, w, out.data() + i * w);
  if (out.requires_grad()) {
    tape->record([a, out, c0, m, n, w]() mutable {
      auto& ga = a.grad();
      const auto& g = out.grad();
      for (std::size_t i = 0; i < m; ++i) {
        Real* dst = ga.data() + i * n + c0;
        const Real* src = g.data() + i * w;
        for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

inline Tensor col_concat(Tape* tape, std::vector<Tensor> parts) {
  GNNLM_CHECK(!parts.empty());
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  bool rg = false;
  for (const auto& p : parts) {
    GNNLM_CHECK(p.ndim() == 2 && p.rows() == m, "col_concat: row mismatch");
    n += p.cols();
    rg = rg || p.requires_grad();
  }
  Tensor out = Tensor::zeros({m, n}, tape && rg);
  std::size_t c = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(p.data() + i * w, w, out.data() + i * n + c);
    c += w;
  }
  if (out.requires_grad()) {
    tape->record([parts, out, m, n]() mutable {
      const auto& g = out.grad();
      std::size_t c = 0;
      for (auto& p : parts) {
        const std::size_t w = p.cols();
        if (p.requires_grad()) {
          auto& gp = p.grad();
          for (std::size_t i = 0; i < m; ++i) {
            const Real* src = g.data() + i * n + c;
            Real* dst = gp.data() + i * w;
            for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
          }
        }
        c += w;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Head-blocked operations (d split into n_heads contiguous blocks)
// ---------------------------------------------------------------------------

// y[:, hb] = x[:, hb] · w[hb, hb] for each head block hb; only the diagonal
// blocks of w participate.
inline Tensor blockdiag_matmul(Tape* tape, Tensor x, Tensor w,
                               std::size_t n_heads) {
  GNNLM_CHECK(x.ndim() == 2 && w.ndim() == 2);
  const std::size_t d = x.cols();
  GNNLM_CHECK(w.rows() == d && w.cols() == d && d % n_heads == 0,
              "blockdiag_matmul: shape mismatch");
  const std::size_t dh = d / n_heads, m = x.rows();
  Tensor out = Tensor::zeros({m, d}, detail::want_grad(tape, {&x, &w}));
  for (std::size_t i = 0; i < m; ++i) {
    const Real* xi = x.data() + i * d;
    Real* yi = out.data() + i * d;
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t o = h * dh;
      for (std::size_t p = 0; p < dh; ++p) {
        const Real xv = xi[o + p];
        const Real* wrow = w.data() + (o + p) * d + o;
        for (std::size_t j = 0; j < dh; ++j) yi[o + j] += xv * wrow[j];
      }
    }
  }
  if (out.requires_grad()) {
    tape->record([x, w, out, m, d, dh, n_heads]() mutable {
      const auto& g = out.grad();
      for (std::size_t i = 0; i < m; ++i) {
        const Real* gi = g.data() + i * d;
        const Real* xi = x.data() + i * d;
        for (std::size_t h = 0; h < n_heads; ++h) {
          const std::size_t o = h * dh;
          if (x.requires_grad()) {
            Real* gx = x.grad().data() + i * d;
            for (std::size_t p = 0; p < dh; ++p) {
              const Real* wrow = w.data() + (o + p) * d + o;
              Real acc = 0;
              for (std::size_t j = 0; j < dh; ++j) acc += gi[o + j] * wrow[j];
              gx[o + p] += acc;
            }
          }
          if (w.requires_grad()) {
            auto& gw = w.grad();
            for (std::size_t p = 0; p < dh; ++p) {
              const Real xv = xi[o + p];
              Real* gwrow = gw.data() + (o + p) * d + o;
              for (std::size_t j = 0; j < dh; ++j) gwrow[j] += xv * gi[o + j];
            }
          }
        }
      }
    });
  }
  return out;
}

// y[e, h] = Σ_{j in head h} a[e, j]·b[e, j]
inline Tensor head_dot(Tape* tape, Tensor a, Tensor b, std::size_t n_heads) {
  GNNLM_CHECK(a.shape() == b.shape() && a.ndim() == 2 && a.cols() % n_heads == 0);
  const std::size_t m = a.rows(), d = a.cols(), dh = d / n_heads;
  Tensor out = Tensor::zeros({m, n_heads}, detail::want_grad(tape, {&a, &b}));
  for (std::size_t i = 0; i < m; ++i) {
    const Real* ai = a.data() + i * d;
    const Real* bi = b.data() + i * d;
    for (std::size_t h = 0; h < n_heads; ++h) {
      Real acc = 0;
      for (std::size_t j = h * dh; j < (h + 1) * dh; ++j) acc += ai[j] * bi[j];
      out.at(i, h) = acc;
    }
  }
  if (out.requires_grad()) {
    tape->record([a, b, out, m, d, dh, n_heads]() mutable {
      const auto& g = out.grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t h = 0; h < n_heads; ++h) {
          const Real gv = g[i * n_heads + h];
          if (a.requires_grad()) {
            Real* ga = a.grad().data() + i * d;
            const Real* bi = b.data() + i * d;
            for (std::size_t j = h * dh; j < (h + 1) * dh; ++j) ga[j] += gv * bi[j];
          }
          if (b.requires_grad()) {
            Real* gb = b.grad().data() + i * d;
            const Real* ai = a.data() + i * d;
            for (std::size_t j = h * dh; j < (h + 1) * dh; ++j) gb[j] += gv * ai[j];
          }
        }
      }
    });
  }
  return out;
}

// y[e, h] = s[e, h] · prior[sel[e]] · c, where prior is a flat parameter vector.
inline Tensor select_scale(Tape* tape, Tensor s, Tensor prior,
                           const std::vector<std::uint32_t>& sel, Real c) {
  GNNLM_CHECK(s.ndim() == 2 && s.rows() == sel.size());
  Tensor out = Tensor::zeros(s.shape(), detail::want_grad(tape, {&s, &prior}));
  const std::size_t m = s.rows(), n = s.cols();
  for (std::size_t i = 0; i < m; ++i) {
    GNNLM_CHECK(sel[i] < prior.numel(), "select_scale: selector out of range");
    const Real f = prior.at(sel[i]) * c;
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = s.at(i, j) * f;
  }
  if (out.requires_grad()) {
    tape->record([s, prior, out, sel, c, m, n]() mutable {
      const auto& g = out.grad();
      for (std::size_t i = 0; i < m; ++i) {
        const Real pv = prior.at(sel[i]);
        if (s.requires_grad()) {
          auto& gs = s.grad();
          for (std::size_t j = 0; j < n; ++j) gs[i * n + j] += g[i * n + j] * pv * c;
        }
        if (prior.requires_grad()) {
          auto& gp = prior.grad();
          Real acc = 0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * s.at(i, j);
          gp[sel[i]] += acc * c;
        }
      }
    });
  }
  return out;
}

// Per-column softmax over row segments: rows sharing seg[r] are normalized
// together, independently per column. Segments with a single row get 1.
inline Tensor segment_softmax(Tape* tape, Tensor s, const std::vector<std::uint32_t>& seg,
                              std::size_t n_segments) {
  GNNLM_CHECK(s.ndim() == 2 && s.rows() == seg.size());
  const std::size_t m = s.rows(), n = s.cols();
  Tensor out = Tensor::zeros(s.shape(), detail::want_grad(tape, {&s}));
  std::vector<Real> mx(n_segments * n, -std::numeric_limits<Real>::infinity());
  std::vector<Real> z(n_segments * n, Real(0));
  for (std::size_t i = 0; i < m; ++i) {
    GNNLM_CHECK(seg[i] < n_segments, "segment_softmax: segment out of range");
    for (std::size_t j = 0; j < n; ++j)
      mx[std::size_t(seg[i]) * n + j] = std::max(mx[std::size_t(seg[i]) * n + j], s.at(i, j));
  }
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const Real e = std::exp(s.at(i, j) - mx[std::size_t(seg[i]) * n + j]);
      out.at(i, j) = e;
      z[std::size_t(seg[i]) * n + j] += e;
    }
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) /= z[std::size_t(seg[i]) * n + j];
  if (out.requires_grad()) {
    tape->record([s, out, seg, n_segments, m, n]() mutable {
      const auto& g = out.grad();
      std::vector<Real> dot(n_segments * n, Real(0));
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          dot[std::size_t(seg[i]) * n + j] += out.at(i, j) * g[i * n + j];
      auto& gs = s.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          gs[i * n + j] += out.at(i, j) * (g[i * n + j] - dot[std::size_t(seg[i]) * n + j]);
    });
  }
  return out;
}

// y[e, j] = f[e, j] · a[e, head(j)] — scales each head block of f by the
// matching attention column.
inline Tensor head_scale(Tape* tape, Tensor f, Tensor a) {
  GNNLM_CHECK(f.ndim() == 2 && a.ndim() == 2 && f.rows() == a.rows());
  const std::size_t n_heads = a.cols();
  GNNLM_CHECK(f.cols() % n_heads == 0);
  const std::size_t m = f.rows(), d = f.cols(), dh = d / n_heads;
  Tensor out = Tensor::zeros(f.shape(), detail::want_grad(tape, {&f, &a}));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t h = 0; h < n_heads; ++h) {
      const Real av = a.at(i, h);
      for (std::size_t j = h * dh; j < (h + 1) * dh; ++j) out.at(i, j) = f.at(i, j) * av;
    }
  if (out.requires_grad()) {
    tape->record([f, a, out, m, d, dh, n_heads]() mutable {
      const auto& g = out.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t h = 0; h < n_heads; ++h) {
          const Real av = a.at(i, h);
          if (f.requires_grad()) {
            auto& gf = f.grad();
            for (std::size_t j = h * dh; j < (h + 1) * dh; ++j)
              gf[i * d + j] += g[i * d + j] * av;
          }
          if (a.requires_grad()) {
            auto& ga = a.grad();
            Real acc = 0;
            for (std::size_t j = h * dh; j < (h + 1) * dh; ++j)
              acc += g[i * d + j] * f.at(i, j);
            ga[i * n_heads + h] += acc;
          }
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses and reductions
// ---------------------------------------------------------------------------

inline Tensor sum(Tape* tape, Tensor a) {
  Tensor out = Tensor::zeros({1}, detail::want_grad(tape, {&a}));
  Real acc = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += a.at(i);
  out.at(0) = acc;
  if (out.requires_grad()) {
    tape->record([a, out]() mutable {
      const Real g = out.grad()[0];
      auto& ga = a.grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

// Mean negative log-likelihood of targets under softmax(logits); fused and
// numerically stable. targets.size() == logits.rows().
inline Tensor cross_entropy(Tape* tape, Tensor logits,
                            const std::vector<std::uint32_t>& targets) {
  GNNLM_CHECK(logits.ndim() == 2 && logits.rows() == targets.size());
  const std::size_t m = logits.rows(), v = logits.cols();
  Tensor out = Tensor::zeros({1}, detail::want_grad(tape, {&logits}));
  // Cache probabilities for the backward pass.
  auto probs = std::make_shared<std::vector<Real>>();
  if (out.requires_grad()) probs->resize(m * v);
  Real total = 0;
  for (std::size_t i = 0; i < m; ++i) {
    GNNLM_CHECK(targets[i] < v, "cross_entropy: target out of range");
    const Real* x = logits.data() + i * v;
    Real mx = x[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, x[j]);
    Real z = 0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(x[j] - mx);
    total += std::log(z) + mx - x[targets[i]];
    if (out.requires_grad()) {
      const Real inv = Real(1) / z;
      Real* p = probs->data() + i * v;
      for (std::size_t j = 0; j < v; ++j) p[j] = std::exp(x[j] - mx) * inv;
    }
  }
  out.at(0) = total / Real(m);
  if (out.requires_grad()) {
    tape->record([logits, out, targets, probs, m, v]() mutable {
      const Real g = out.grad()[0] / Real(m);
      auto& gl = logits.grad();
      for (std::size_t i = 0; i < m; ++i) {
        const Real* p = probs->data() + i * v;
        Real* gx = gl.data() + i * v;
        for (std::size_t j = 0; j < v; ++j) gx[j] += g * p[j];
        gx[targets[i]] -= g;
      }
    });
  }
  return out;
}

// Inverted dropout; identity when p == 0 or tape is null.
inline Tensor dropout(Tape* tape, Tensor a, Real p, Rng& rng) {
  if (!tape || p <= Real(0)) return a;
  GNNLM_CHECK(p < Real(1), "dropout: p must be < 1");
  auto mask = std::make_shared<std::vector<Real>>(a.numel());
  const Real keep = Real(1) - p;
  const Real inv_keep = Real(1) / keep;
  Tensor out = Tensor::zeros(a.shape(), detail::want_grad(tape, {&a}));
  for (std::size_t i = 0; i < a.numel(); ++i) {
    (*mask)[i] = (rng.next_double() < double(keep)) ? inv_keep : Real(0);
    out.at(i) = a.at(i) * (*mask)[i];
  }
  if (out.requires_grad()) {
    tape->record([a, out, mask]() mutable {
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*mask)[i];
    });
  }
  return out;
}

}  // namespace gnnlm::ops
