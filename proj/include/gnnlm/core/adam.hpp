#pragma once

#include <cmath>
#include <vector>

#include "gnnlm/core/tensor.hpp"

namespace gnnlm {

struct AdamConfig {
  Real lr = Real(1e-3);
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real eps = Real(1e-8);
  Real clip_norm = Real(0);  // 0 disables global-norm clipping
};

// Standard Adam with bias correction. Moment state is keyed by the parameter's
// position in the list passed to step(), which therefore must be stable.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  void set_lr(Real lr) { cfg_.lr = lr; }

  void step(std::vector<Tensor>& params) {
    if (state_.empty()) {
      state_.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        state_[i].m.assign(params[i].numel(), Real(0));
        state_[i].v.assign(params[i].numel(), Real(0));
      }
    }
    GNNLM_CHECK(state_.size() == params.size(), "parameter list changed between steps");
    ++t_;

    Real scale = Real(1);
    if (cfg_.clip_norm > Real(0)) {
      Real sq = 0;
      for (auto& p : params) {
        GNNLM_CHECK(p.has_grad(), "adam: parameter has no gradient");
        for (Real g : p.grad()) sq += g * g;
      }
      const Real norm = std::sqrt(sq);
      if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
    }

    const Real bc1 = Real(1) - std::pow(cfg_.beta1, Real(t_));
    const Real bc2 = Real(1) - std::pow(cfg_.beta2, Real(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      GNNLM_CHECK(params[i].has_grad(), "adam: parameter has no gradient");
      auto& m = state_[i].m;
      auto& v = state_[i].v;
      auto& g = params[i].grad();
      Real* w = params[i].data();
      for (std::size_t j = 0; j < g.size(); ++j) {
        const Real gj = g[j] * scale;
        m[j] = cfg_.beta1 * m[j] + (Real(1) - cfg_.beta1) * gj;
        v[j] = cfg_.beta2 * v[j] + (Real(1) - cfg_.beta2) * gj * gj;
        const Real mhat = m[j] / bc1;
        const Real vhat = v[j] / bc2;
        w[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  static void zero_grads(std::vector<Tensor>& params) {
    for (auto& p : params) p.zero_grad();
  }

  // Moment inspection for tests.
  const std::vector<Real>& first_moment(std::size_t i) const { return state_[i].m; }
  const std::vector<Real>& second_moment(std::size_t i) const { return state_[i].v; }
  std::size_t steps_taken() const { return t_; }

 private:
  struct Moments {
    std::vector<Real> m, v;
  };
  AdamConfig cfg_;
  std::vector<Moments> state_;
  std::size_t t_ = 0;
};

}  // namespace gnnlm
