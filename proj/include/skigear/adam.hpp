#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "skigear/tensor.hpp"

namespace skigear {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment accumulators, one pair per parameter tensor.
struct AdamState {
  std::uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

/// One bias-corrected Adam update, in place. Empty state is initialised to zeros.
inline void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state,
                      const AdamConfig& cfg = {}) {
  if (params.size() != grads.size()) throw dimension_error("adam_step: parameter/gradient count mismatch");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.shape());
      state.v.emplace_back(p.shape());
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw dimension_error("adam_step: state does not match parameter count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape() || params[i].shape() != state.m[i].shape() ||
        params[i].shape() != state.v[i].shape())
      throw dimension_error("adam_step: shape mismatch for parameter " + std::to_string(i) + ": " +
                            to_string(params[i].shape()) + " vs gradient " + to_string(grads[i].shape()));
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      p[j] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

}  // namespace skigear
