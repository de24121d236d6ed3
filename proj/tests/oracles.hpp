#pragma once

// Independent reference implementations used only by the test suites.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include "skigear/autodiff.hpp"

namespace skigear::oracle {

struct gradcheck_result {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Central finite differences of `loss_fn` over a sample of coordinates of every parameter.
/// For each tensor all coordinates are checked when it has at most `full_limit` elements;
/// otherwise `samples` random coordinates plus the `top` largest-|gradient| coordinates.
/// Error metric: |g_ad - g_fd| / max(1, |g_fd|).
inline gradcheck_result gradcheck(ParameterStore& store, const std::function<Var(GradientTape&)>& loss_fn,
                                  std::uint64_t seed = 1, double step = 1e-5, std::size_t full_limit = 64,
                                  std::size_t samples = 12, std::size_t top = 4) {
  std::vector<Tensor> analytic;
  {
    GradientTape tape;
    const Var loss = loss_fn(tape);
    analytic = tape.backward(loss, store);
  }
  auto eval = [&] {
    GradientTape tape;
    return tape.value(loss_fn(tape)).item();
  };
  std::mt19937_64 rng(seed);
  gradcheck_result res;
  for (std::size_t p = 0; p < store.size(); ++p) {
    Tensor& w = store.value(p);
    std::vector<std::size_t> coords;
    if (w.size() <= full_limit) {
      for (std::size_t i = 0; i < w.size(); ++i) coords.push_back(i);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, w.size() - 1);
      for (std::size_t i = 0; i < samples; ++i) coords.push_back(pick(rng));
      std::vector<std::size_t> order(w.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(),
                        [&](std::size_t a, std::size_t b) { return std::abs(analytic[p][a]) > std::abs(analytic[p][b]); });
      coords.insert(coords.end(), order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top));
    }
    for (std::size_t i : coords) {
      const double orig = w[i];
      w[i] = orig + step;
      const double up = eval();
      w[i] = orig - step;
      const double down = eval();
      w[i] = orig;
      const double fd = (up - down) / (2.0 * step);
      res.max_rel_error = std::max(res.max_rel_error, std::abs(analytic[p][i] - fd) / std::max(1.0, std::abs(fd)));
      ++res.checked;
    }
  }
  return res;
}

inline Tensor random_tensor(shape_t shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = n(rng);
  return t;
}

/// Direct quadruple loop for valid 1-D convolution of a [T x C] input.
inline Tensor conv1d_reference(const Tensor& x, const Tensor& k, const Tensor& bias, std::size_t stride) {
  const std::size_t T = x.dim(0), C = x.dim(1), F = k.dim(0), K = k.dim(1);
  const std::size_t out_len = (T - K) / stride + 1;
  Tensor out({out_len, F});
  for (std::size_t t = 0; t < out_len; ++t)
    for (std::size_t f = 0; f < F; ++f) {
      double s = bias[f];
      for (std::size_t kk = 0; kk < K; ++kk)
        for (std::size_t c = 0; c < C; ++c) s += x.at(t * stride + kk, c) * k.at(f, kk, c);
      out.at(t, f) = s;
    }
  return out;
}

/// Falling-edge split points from a run-length view of the thresholded signal: every run of
/// samples at or above `threshold` that is followed by a sample below it ends at a split point.
inline std::vector<std::size_t> falling_edges_reference(const std::vector<double>& force, double threshold) {
  std::vector<std::size_t> edges;
  std::size_t i = 0;
  while (i < force.size()) {
    const bool high = !(force[i] < threshold);
    std::size_t j = i;
    while (j < force.size() && !(force[j] < threshold) == high) ++j;
    if (high && j < force.size()) edges.push_back(j);
    i = j;
  }
  return edges;
}

}  // namespace skigear::oracle
