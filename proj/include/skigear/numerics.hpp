#pragma once

// Pure tensor kernels. Every function here is deterministic and side-effect
// free; the differentiable wrappers in autodiff.hpp call into these.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <limits>
#include <vector>

#include "skigear/tensor.hpp"

namespace skigear {

/// [m x k] . [k x n] -> [m x n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw dimension_error("matmul shape mismatch: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  Tensor out({a.dim(0), b.dim(1)});
  out.as_matrix().noalias() = a.as_matrix() * b.as_matrix();
  return out;
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

inline Tensor sigmoid(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.values()) v = sigmoid(v);
  return out;
}

inline Tensor tanh(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.values()) v = std::tanh(v);
  return out;
}

inline Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.values()) v = relu(v);
  return out;
}

/// Softmax along the last axis, max-subtracted.
inline Tensor softmax(const Tensor& x) {
  Tensor out = x;
  const std::size_t n = x.shape().back();
  for (std::size_t row = 0; row < x.size() / n; ++row) {
    double* v = out.data().data() + row * n;
    const double peak = *std::max_element(v, v + n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += (v[i] = std::exp(v[i] - peak));
    for (std::size_t i = 0; i < n; ++i) v[i] /= total;
  }
  return out;
}

/// Output length of a valid (unpadded) 1-D convolution.
inline std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride) {
  if (stride == 0) throw contract_error("conv1d stride must be >= 1");
  if (length < kernel)
    throw dimension_error("sequence too short for convolution: length " + std::to_string(length) + " < kernel " +
                          std::to_string(kernel));
  return (length - kernel) / stride + 1;
}

namespace detail {

struct sequence_view {
  std::size_t batch;
  std::size_t steps;
  std::size_t channels;
  bool batched;
};

inline sequence_view view_sequence(const Tensor& x, const char* op) {
  if (x.rank() == 2) return {1, x.dim(0), x.dim(1), false};
  if (x.rank() == 3) return {x.dim(0), x.dim(1), x.dim(2), true};
  throw dimension_error(std::string(op) + " expects [T x C] or [B x T x C], got " + to_string(x.shape()));
}

inline Tensor make_sequence(const sequence_view& v, std::size_t steps, std::size_t channels) {
  return v.batched ? Tensor({v.batch, steps, channels}) : Tensor({steps, channels});
}

/// Sliding windows of `kernel` rows, flattened: [B*T' x K*C].
inline Tensor im2col(const Tensor& x, const sequence_view& v, std::size_t kernel, std::size_t stride,
                     std::size_t out_len) {
  const std::size_t width = kernel * v.channels;
  Tensor patches({v.batch * out_len, width});
  for (std::size_t b = 0; b < v.batch; ++b)
    for (std::size_t t = 0; t < out_len; ++t)
      std::memcpy(&patches[(b * out_len + t) * width], &x[(b * v.steps + t * stride) * v.channels],
                  width * sizeof(double));
  return patches;
}

inline void check_conv_shapes(const sequence_view& v, const Tensor& kernels, const Tensor& bias) {
  if (kernels.rank() != 3 || kernels.dim(2) != v.channels)
    throw dimension_error("conv1d kernels " + to_string(kernels.shape()) + " do not match input channels " +
                          std::to_string(v.channels));
  if (bias.rank() != 1 || bias.dim(0) != kernels.dim(0))
    throw dimension_error("conv1d bias " + to_string(bias.shape()) + " does not match " +
                          std::to_string(kernels.dim(0)) + " filters");
}

}  // namespace detail

/// Valid 1-D convolution. input [T x C] (or batched [B x T x C]), kernels [F x K x C], bias [F].
/// out[t, f] = sum_{k,c} input[t*stride + k, c] * kernels[f, k, c] + bias[f]
inline Tensor conv1d(const Tensor& input, const Tensor& kernels, const Tensor& bias, std::size_t stride = 1) {
  const auto v = detail::view_sequence(input, "conv1d");
  detail::check_conv_shapes(v, kernels, bias);
  const std::size_t filters = kernels.dim(0);
  const std::size_t kernel = kernels.dim(1);
  const std::size_t out_len = conv1d_output_length(v.steps, kernel, stride);
  const Tensor patches = detail::im2col(input, v, kernel, stride, out_len);
  Tensor out = detail::make_sequence(v, out_len, filters);
  const const_matrix_map w(kernels.data().data(), static_cast<Eigen::Index>(filters),
                           static_cast<Eigen::Index>(kernel * v.channels));
  auto o = out.as_matrix();
  o.noalias() = patches.as_matrix() * w.transpose();
  o.rowwise() += bias.as_matrix().row(0);
  return out;
}

/// Non-overlapping max pooling along time; a trailing remainder shorter than `pool` is dropped.
/// `argmax`, when given, receives the flat input index chosen for every output element.
inline Tensor maxpool1d(const Tensor& input, std::size_t pool, std::vector<std::size_t>* argmax = nullptr) {
  if (pool == 0) throw contract_error("maxpool1d pool must be >= 1");
  const auto v = detail::view_sequence(input, "maxpool1d");
  const std::size_t out_len = v.steps / pool;
  Tensor out = detail::make_sequence(v, out_len, v.channels);
  if (argmax) argmax->assign(out.size(), 0);
  for (std::size_t b = 0; b < v.batch; ++b)
    for (std::size_t j = 0; j < out_len; ++j)
      for (std::size_t f = 0; f < v.channels; ++f) {
        std::size_t best = (b * v.steps + j * pool) * v.channels + f;
        for (std::size_t i = 1; i < pool; ++i) {
          const std::size_t idx = (b * v.steps + j * pool + i) * v.channels + f;
          if (input[idx] > input[best]) best = idx;
        }
        const std::size_t o = (b * out_len + j) * v.channels + f;
        out[o] = input[best];
        if (argmax) (*argmax)[o] = best;
      }
  return out;
}

/// Per-feature maximum over the whole time axis: [T x F] -> [F], [B x T x F] -> [B x F].
inline Tensor global_maxpool(const Tensor& input, std::vector<std::size_t>* argmax = nullptr) {
  const auto v = detail::view_sequence(input, "global_maxpool");
  if (v.steps == 0) throw dimension_error("global_maxpool over an empty time axis");
  Tensor out = v.batched ? Tensor({v.batch, v.channels}) : Tensor({v.channels});
  if (argmax) argmax->assign(out.size(), 0);
  for (std::size_t b = 0; b < v.batch; ++b)
    for (std::size_t f = 0; f < v.channels; ++f) {
      std::size_t best = b * v.steps * v.channels + f;
      for (std::size_t t = 1; t < v.steps; ++t) {
        const std::size_t idx = (b * v.steps + t) * v.channels + f;
        if (input[idx] > input[best]) best = idx;
      }
      out[b * v.channels + f] = input[best];
      if (argmax) (*argmax)[b * v.channels + f] = best;
    }
  return out;
}

}  // namespace skigear
