#pragma once

#include <cstdint>
#include <vector>

#include "gnnlm/store/kmeans.hpp"

namespace gnnlm {

// Product quantizer: a d-vector is split into m contiguous subvectors, each
// encoded as one byte indexing a per-subspace codebook. Codebook storage is
// always m×256×(d/m); when fewer than 256 centroids are trained the tail
// repeats entry 0 and is never selected by encode.
class ProductQuantizer {
 public:
  ProductQuantizer() = default;
  ProductQuantizer(std::size_t d, std::size_t m, std::size_t codebook_size = 256)
      : d_(d), m_(m), cb_(codebook_size) {
    GNNLM_CHECK(m >= 1 && d % m == 0, "d must be divisible by m");
    GNNLM_CHECK(cb_ >= 1 && cb_ <= 256, "codebook size must be in [1, 256]");
    codebooks_.assign(m_ * 256 * sub_dim(), Real(0));
  }

  std::size_t dim() const { return d_; }
  std::size_t subspaces() const { return m_; }
  std::size_t sub_dim() const { return d_ / m_; }
  std::size_t codebook_size() const { return cb_; }
  std::size_t code_bytes() const { return m_; }
  const std::vector<Real>& codebooks() const { return codebooks_; }
  std::vector<Real>& codebooks() { return codebooks_; }

  const Real* centroid(std::size_t sub, std::size_t code) const {
    return codebooks_.data() + (sub * 256 + code) * sub_dim();
  }

  // Independent k-means per subspace over the training vectors.
  void train(const Real* data, std::size_t n, std::size_t iters, Rng& rng) {
    GNNLM_CHECK(n >= 1, "PQ training needs data");
    const std::size_t sd = sub_dim();
    const std::size_t k = std::min<std::size_t>(cb_, n);
    std::vector<Real> slice(n * sd);
    for (std::size_t sub = 0; sub < m_; ++sub) {
      for (std::size_t i = 0; i < n; ++i)
        std::copy_n(data + i * d_ + sub * sd, sd, slice.begin() + i * sd);
      Rng sub_rng = rng.fork();
      KMeans km = KMeans::fit(slice.data(), n, sd, k, iters, sub_rng);
      Real* cb = codebooks_.data() + sub * 256 * sd;
      std::copy_n(km.centroids.data(), k * sd, cb);
      for (std::size_t pad = k; pad < 256; ++pad) std::copy_n(km.centroids.data(), sd, cb + pad * sd);
    }
    trained_k_ = k;
    trained_ = true;
  }

  bool trained() const { return trained_; }

  // Restores the trained flag after deserialization of the codebooks; the
  // padded tail duplicates real centroids so encode stays well-defined.
  void mark_trained() {
    trained_k_ = cb_;
    trained_ = true;
  }

  void encode(const Real* vec, std::uint8_t* code) const {
    GNNLM_CHECK(trained_, "PQ not trained");
    const std::size_t sd = sub_dim();
    for (std::size_t sub = 0; sub < m_; ++sub) {
      code[sub] = static_cast<std::uint8_t>(
          KMeans::nearest(vec + sub * sd, centroid(sub, 0), trained_k_, sd));
    }
  }

  void decode(const std::uint8_t* code, Real* out) const {
    const std::size_t sd = sub_dim();
    for (std::size_t sub = 0; sub < m_; ++sub)
      std::copy_n(centroid(sub, code[sub]), sd, out + sub * sd);
  }

  std::vector<std::uint8_t> encode_all(const Real* data, std::size_t n) const {
    std::vector<std::uint8_t> codes(n * m_);
    parallel_for(n, 2048, [&](std::size_t i0, std::size_t i1) {
      for (std::size_t i = i0; i < i1; ++i) encode(data + i * d_, codes.data() + i * m_);
    });
    return codes;
  }

  double reconstruction_mse(const Real* data, std::size_t n) const {
    std::vector<Real> buf(d_);
    std::vector<std::uint8_t> code(m_);
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      encode(data + i * d_, code.data());
      decode(code.data(), buf.data());
      for (std::size_t j = 0; j < d_; ++j) {
        const double e = double(data[i * d_ + j]) - double(buf[j]);
        total += e * e;
      }
    }
    return total / double(n * d_);
  }

 private:
  std::size_t d_ = 0, m_ = 0, cb_ = 256;
  std::size_t trained_k_ = 0;
  bool trained_ = false;
  std::vector<Real> codebooks_;  // m × 256 × sub_dim
};

}  // namespace gnnlm
