#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "gnnlm/core/check.hpp"
#include "gnnlm/core/rng.hpp"

namespace gnnlm {

#ifdef GNNLM_REAL_F32
using Real = float;
#else
using Real = double;
#endif

// Dense row-major tensor with an optional gradient buffer. Copying a Tensor
// copies the handle, not the storage; distinct storage comes from the factory
// functions or clone().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
    Tensor t;
    t.p_ = std::make_shared<Data>();
    t.p_->shape = std::move(shape);
    t.p_->value.assign(numel_of(t.p_->shape), Real(0));
    t.p_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(Real v, bool requires_grad = false) {
    Tensor t = zeros({1}, requires_grad);
    t.p_->value[0] = v;
    return t;
  }

  static Tensor from(std::vector<std::size_t> shape, std::vector<Real> data,
                     bool requires_grad = false) {
    GNNLM_CHECK(numel_of(shape) == data.size(), "shape does not match data length");
    Tensor t;
    t.p_ = std::make_shared<Data>();
    t.p_->shape = std::move(shape);
    t.p_->value = std::move(data);
    t.p_->requires_grad = requires_grad;
    return t;
  }

  static Tensor randn(std::vector<std::size_t> shape, Rng& rng, Real stddev,
                      bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.p_->value) v = static_cast<Real>(rng.next_normal()) * stddev;
    return t;
  }

  bool defined() const { return p_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return p_->shape; }
  std::size_t ndim() const { return p_->shape.size(); }
  std::size_t numel() const { return p_->value.size(); }
  std::size_t rows() const {
    GNNLM_CHECK(ndim() == 2);
    return p_->shape[0];
  }
  std::size_t cols() const {
    GNNLM_CHECK(ndim() == 2);
    return p_->shape[1];
  }

  Real* data() { return p_->value.data(); }
  const Real* data() const { return p_->value.data(); }
  std::vector<Real>& values() { return p_->value; }
  const std::vector<Real>& values() const { return p_->value; }

  Real& at(std::size_t i) { return p_->value[i]; }
  Real at(std::size_t i) const { return p_->value[i]; }
  Real& at(std::size_t i, std::size_t j) { return p_->value[i * p_->shape[1] + j]; }
  Real at(std::size_t i, std::size_t j) const { return p_->value[i * p_->shape[1] + j]; }

  bool requires_grad() const { return p_->requires_grad; }
  void set_requires_grad(bool rg) {
    p_->requires_grad = rg;
    if (!rg) p_->grad.clear();
  }

  bool has_grad() const { return !p_->grad.empty(); }
  std::vector<Real>& grad() {
    ensure_grad();
    return p_->grad;
  }
  const std::vector<Real>& grad() const {
    GNNLM_CHECK(has_grad(), "gradient not populated");
    return p_->grad;
  }
  void ensure_grad() {
    GNNLM_CHECK(p_->requires_grad, "tensor does not require grad");
    if (p_->grad.empty()) p_->grad.assign(p_->value.size(), Real(0));
  }
  void zero_grad() {
    if (!p_->grad.empty()) std::fill(p_->grad.begin(), p_->grad.end(), Real(0));
  }

  Tensor clone() const {
    Tensor t;
    t.p_ = std::make_shared<Data>(*p_);
    return t;
  }

  // Same storage viewed under a different shape (element count must match).
  Tensor reshaped(std::vector<std::size_t> shape) const {
    GNNLM_CHECK(numel_of(shape) == p_->value.size(), "reshape changes element count");
    Tensor t;
    t.p_ = p_;
    // Shape lives in the shared block, so reshaping aliases; make a new block
    // that shares nothing to keep value semantics simple.
    t.p_ = std::make_shared<Data>(*p_);
    t.p_->shape = std::move(shape);
    return t;
  }

  bool same_storage(const Tensor& other) const { return p_ == other.p_; }

 private:
  struct Data {
    std::vector<std::size_t> shape;
    std::vector<Real> value;
    std::vector<Real> grad;  // empty until first accumulation
    bool requires_grad = false;
  };

  static std::size_t numel_of(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }

  std::shared_ptr<Data> p_;
};

// Records the forward pass as a list of backward closures in topological
// (execution) order. backward() walks the list once, in reverse.
class Tape {
 public:
  void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }

  std::size_t size() const { return ops_.size(); }

  void backward(Tensor loss) {
    GNNLM_CHECK(loss.numel() == 1, "backward requires a scalar loss");
    GNNLM_CHECK(loss.requires_grad(), "loss is not connected to the tape");
    loss.ensure_grad();
    loss.grad()[0] += Real(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  void clear() { ops_.clear(); }

 private:
  std::vector<std::function<void()>> ops_;
};

}  // namespace gnnlm
