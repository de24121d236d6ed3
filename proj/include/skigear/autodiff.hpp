#pragma once

// Reverse-mode differentiation over a linear tape of coarse-grained tensor ops.
//
// Nodes are appended in evaluation order, so the tape is already topologically
// sorted and backward() is a single reverse sweep. Parameters are bound by
// reference: the ParameterStore must outlive every tape that uses it.

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "skigear/numerics.hpp"
#include "skigear/tensor.hpp"

namespace skigear {

/// Ordered collection of named trainable tensors.
class ParameterStore {
 public:
  std::size_t add(std::string name, Tensor value) {
    if (find(name)) throw contract_error("duplicate parameter name '" + name + "'");
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return values_.size() - 1;
  }

  std::size_t size() const noexcept { return values_.size(); }
  const std::string& name(std::size_t id) const { return names_.at(id); }
  Tensor& value(std::size_t id) { return values_.at(id); }
  const Tensor& value(std::size_t id) const { return values_.at(id); }
  std::vector<Tensor>& values() noexcept { return values_; }
  const std::vector<Tensor>& values() const noexcept { return values_; }

  std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return i;
    return std::nullopt;
  }

  std::size_t at(const std::string& name) const {
    if (auto id = find(name)) return *id;
    throw contract_error("no parameter named '" + name + "'");
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  friend bool operator==(const ParameterStore&, const ParameterStore&) = default;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

struct Var {
  std::size_t index;
};

class GradientTape {
 public:
  /// Receives the gradient of the loss w.r.t. the node's output.
  using backward_fn = std::function<void(GradientTape&, const Tensor&)>;

  Var constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), nullptr, std::nullopt, false, {}});
    return {nodes_.size() - 1};
  }

  Var parameter(const ParameterStore& store, std::size_t id) {
    nodes_.push_back(Node{{}, &store.value(id), id, true, {}});
    return {nodes_.size() - 1};
  }

  /// Appends an op result. `fn` is only kept when some input needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, backward_fn fn) {
    if (!value.all_finite()) throw error("non-finite value produced on the gradient tape");
    bool needs = false;
    for (Var in : inputs) needs = needs || nodes_.at(in.index).needs_grad;
    nodes_.push_back(Node{std::move(value), nullptr, std::nullopt, needs, needs ? std::move(fn) : backward_fn{}});
    return {nodes_.size() - 1};
  }

  const Tensor& value(Var v) const {
    const Node& n = nodes_.at(v.index);
    return n.external ? *n.external : n.owned;
  }

  bool needs_grad(Var v) const { return nodes_.at(v.index).needs_grad; }

  /// Gradient accumulator of `v`, zero-initialised on first access.
  Tensor& grad(Var v) {
    Tensor& g = grads_.at(v.index);
    if (g.empty()) g = Tensor(value(v).shape());
    return g;
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradients of scalar `loss` for every parameter in `store`; untouched parameters get exact zeros.
  std::vector<Tensor> backward(Var loss, const ParameterStore& store) {
    if (value(loss).size() != 1)
      throw contract_error("backward() needs a scalar loss, got shape " + to_string(value(loss).shape()));
    grads_.assign(nodes_.size(), Tensor{});
    grad(loss)[0] = 1.0;
    for (std::size_t i = loss.index + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && !grads_[i].empty()) n.backward(*this, grads_[i]);
    }
    std::vector<Tensor> out;
    out.reserve(store.size());
    for (const auto& v : store.values()) out.emplace_back(v.shape());
    for (std::size_t i = 0; i <= loss.index; ++i) {
      const Node& n = nodes_[i];
      if (!n.param || grads_[i].empty()) continue;
      if (n.external != &store.value(*n.param))
        throw contract_error("tape parameter bound to a different store");
      out[*n.param].as_matrix() += grads_[i].as_matrix();
    }
    return out;
  }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external;
    std::optional<std::size_t> param;
    bool needs_grad;
    backward_fn backward;
  };

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
};

namespace ad {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw dimension_error(std::string(op) + " shape mismatch: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

inline Var matmul(GradientTape& tape, Var a, Var b) {
  return tape.record(skigear::matmul(tape.value(a), tape.value(b)), {a, b}, [a, b](GradientTape& t, const Tensor& g) {
    const auto gm = g.as_matrix();
    if (t.needs_grad(a)) t.grad(a).as_matrix().noalias() += gm * t.value(b).as_matrix().transpose();
    if (t.needs_grad(b)) t.grad(b).as_matrix().noalias() += t.value(a).as_matrix().transpose() * gm;
  });
}

inline Var add(GradientTape& tape, Var a, Var b) {
  require_same_shape(tape.value(a), tape.value(b), "add");
  Tensor out = tape.value(a);
  out.as_matrix() += tape.value(b).as_matrix();
  return tape.record(std::move(out), {a, b}, [a, b](GradientTape& t, const Tensor& g) {
    if (t.needs_grad(a)) t.grad(a).as_matrix() += g.as_matrix();
    if (t.needs_grad(b)) t.grad(b).as_matrix() += g.as_matrix();
  });
}

inline Var mul(GradientTape& tape, Var a, Var b) {
  require_same_shape(tape.value(a), tape.value(b), "mul");
  Tensor out = tape.value(a);
  out.as_matrix().array() *= tape.value(b).as_matrix().array();
  return tape.record(std::move(out), {a, b}, [a, b](GradientTape& t, const Tensor& g) {
    if (t.needs_grad(a)) t.grad(a).as_matrix().array() += g.as_matrix().array() * t.value(b).as_matrix().array();
    if (t.needs_grad(b)) t.grad(b).as_matrix().array() += g.as_matrix().array() * t.value(a).as_matrix().array();
  });
}

/// x[..., n] + bias[n], broadcast over leading axes.
inline Var add_bias(GradientTape& tape, Var x, Var bias) {
  const Tensor& xv = tape.value(x);
  const Tensor& bv = tape.value(bias);
  if (bv.rank() != 1 || bv.dim(0) != xv.shape().back())
    throw dimension_error("bias " + to_string(bv.shape()) + " does not match " + to_string(xv.shape()));
  Tensor out = xv;
  out.as_matrix().rowwise() += bv.as_matrix().row(0);
  return tape.record(std::move(out), {x, bias}, [x, bias](GradientTape& t, const Tensor& g) {
    if (t.needs_grad(x)) t.grad(x).as_matrix() += g.as_matrix();
    if (t.needs_grad(bias)) t.grad(bias).as_matrix() += g.as_matrix().colwise().sum();
  });
}

inline Var sigmoid(GradientTape& tape, Var x) {
  Tensor out = skigear::sigmoid(tape.value(x));
  return tape.record(std::move(out), {x}, [x, self = tape.size()](GradientTape& t, const Tensor& g) {
    const auto y = t.value(Var{self}).as_matrix().array();
    t.grad(x).as_matrix().array() += g.as_matrix().array() * y * (1.0 - y);
  });
}

inline Var tanh(GradientTape& tape, Var x) {
  Tensor out = skigear::tanh(tape.value(x));
  return tape.record(std::move(out), {x}, [x, self = tape.size()](GradientTape& t, const Tensor& g) {
    const auto y = t.value(Var{self}).as_matrix().array();
    t.grad(x).as_matrix().array() += g.as_matrix().array() * (1.0 - y * y);
  });
}

inline Var relu(GradientTape& tape, Var x) {
  return tape.record(skigear::relu(tape.value(x)), {x}, [x](GradientTape& t, const Tensor& g) {
    const auto in = t.value(x).as_matrix().array();
    t.grad(x).as_matrix().array() += (in > 0.0).select(g.as_matrix().array(), 0.0);
  });
}

inline Var reshape(GradientTape& tape, Var x, shape_t shape) {
  return tape.record(tape.value(x).reshaped(std::move(shape)), {x}, [x](GradientTape& t, const Tensor& g) {
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
  });
}

/// Sum of all elements -> [1].
inline Var sum(GradientTape& tape, Var x) {
  return tape.record(Tensor::scalar(tape.value(x).as_matrix().sum()), {x}, [x](GradientTape& t, const Tensor& g) {
    t.grad(x).as_matrix().array() += g[0];
  });
}

inline Var square(GradientTape& tape, Var x) { return mul(tape, x, x); }

/// Concatenate along the last axis.
inline Var concat_last(GradientTape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  if (av.rank() != bv.rank() || !std::equal(av.shape().begin(), av.shape().end() - 1, bv.shape().begin()))
    throw dimension_error("concat shape mismatch: " + to_string(av.shape()) + " vs " + to_string(bv.shape()));
  const std::size_t na = av.shape().back();
  const std::size_t nb = bv.shape().back();
  shape_t shape = av.shape();
  shape.back() = na + nb;
  Tensor out(shape);
  auto o = out.as_matrix();
  o.leftCols(static_cast<Eigen::Index>(na)) = av.as_matrix();
  o.rightCols(static_cast<Eigen::Index>(nb)) = bv.as_matrix();
  return tape.record(std::move(out), {a, b}, [a, b, na, nb](GradientTape& t, const Tensor& g) {
    const auto gm = g.as_matrix();
    if (t.needs_grad(a)) t.grad(a).as_matrix() += gm.leftCols(static_cast<Eigen::Index>(na));
    if (t.needs_grad(b)) t.grad(b).as_matrix() += gm.rightCols(static_cast<Eigen::Index>(nb));
  });
}

inline Var conv1d(GradientTape& tape, Var x, Var kernels, Var bias, std::size_t stride = 1) {
  Tensor out = skigear::conv1d(tape.value(x), tape.value(kernels), tape.value(bias), stride);
  return tape.record(std::move(out), {x, kernels, bias}, [=](GradientTape& t, const Tensor& g) {
    const Tensor& xv = t.value(x);
    const Tensor& kv = t.value(kernels);
    const auto v = detail::view_sequence(xv, "conv1d");
    const std::size_t filters = kv.dim(0);
    const std::size_t kernel = kv.dim(1);
    const std::size_t width = kernel * v.channels;
    const std::size_t out_len = g.size() / (v.batch * filters);
    const auto gm = const_matrix_map(g.data().data(), static_cast<Eigen::Index>(v.batch * out_len),
                                     static_cast<Eigen::Index>(filters));
    if (t.needs_grad(bias)) t.grad(bias).as_matrix() += gm.colwise().sum();
    if (t.needs_grad(kernels)) {
      const Tensor patches = detail::im2col(xv, v, kernel, stride, out_len);
      matrix_map gk(t.grad(kernels).data().data(), static_cast<Eigen::Index>(filters),
                    static_cast<Eigen::Index>(width));
      gk.noalias() += gm.transpose() * patches.as_matrix();
    }
    if (t.needs_grad(x)) {
      const const_matrix_map w(kv.data().data(), static_cast<Eigen::Index>(filters), static_cast<Eigen::Index>(width));
      const row_matrix gpatch = gm * w;
      Tensor& gx = t.grad(x);
      for (std::size_t b = 0; b < v.batch; ++b)
        for (std::size_t s = 0; s < out_len; ++s) {
          const double* src = gpatch.data() + (b * out_len + s) * width;
          double* dst = &gx[(b * v.steps + s * stride) * v.channels];
          for (std::size_t i = 0; i < width; ++i) dst[i] += src[i];
        }
    }
  });
}

inline Var maxpool1d(GradientTape& tape, Var x, std::size_t pool) {
  std::vector<std::size_t> argmax;
  Tensor out = skigear::maxpool1d(tape.value(x), pool, &argmax);
  return tape.record(std::move(out), {x}, [x, argmax = std::move(argmax)](GradientTape& t, const Tensor& g) {
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += g[i];
  });
}

inline Var global_maxpool(GradientTape& tape, Var x) {
  std::vector<std::size_t> argmax;
  Tensor out = skigear::global_maxpool(tape.value(x), &argmax);
  return tape.record(std::move(out), {x}, [x, argmax = std::move(argmax)](GradientTape& t, const Tensor& g) {
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += g[i];
  });
}

/// Mean over the batch of -log softmax(logits)[target]. logits [B x N], targets one-hot [B x N].
/// The gradient w.r.t. logits is (softmax(logits) - targets) / B.
inline Var softmax_cross_entropy(GradientTape& tape, Var logits, const Tensor& targets) {
  const Tensor& z = tape.value(logits);
  if (z.rank() != 2) throw dimension_error("softmax_cross_entropy expects [B x N] logits, got " + to_string(z.shape()));
  require_same_shape(z, targets, "softmax_cross_entropy");
  Tensor probs = skigear::softmax(z);
  const std::size_t batch = z.dim(0);
  const std::size_t n = z.dim(1);
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = &z[b * n];
    const double peak = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += std::exp(row[i] - peak);
    const double log_norm = peak + std::log(total);
    for (std::size_t i = 0; i < n; ++i) loss -= targets[b * n + i] * (row[i] - log_norm);
  }
  loss /= static_cast<double>(batch);
  return tape.record(Tensor::scalar(loss), {logits},
                     [logits, probs = std::move(probs), targets, batch](GradientTape& t, const Tensor& g) {
                       const double scale = g[0] / static_cast<double>(batch);
                       t.grad(logits).as_matrix() += scale * (probs.as_matrix() - targets.as_matrix());
                     });
}

/// Fused LSTM layer over a whole sequence, returning every hidden state.
///
/// x [B x T x D], input kernel [D x 4H], recurrent kernel [H x 4H], bias [4H] -> [B x T x H].
/// Gate column blocks are ordered input, forget, cell candidate, output. With `reverse`
/// the sequence is consumed from the last step to the first; outputs stay time-aligned.
inline Var lstm(GradientTape& tape, Var x, Var input_kernel, Var recurrent_kernel, Var bias, bool reverse = false) {
  const Tensor& xv = tape.value(x);
  const Tensor& wx = tape.value(input_kernel);
  const Tensor& wh = tape.value(recurrent_kernel);
  const Tensor& bv = tape.value(bias);
  if (xv.rank() != 3) throw dimension_error("lstm expects [B x T x D] input, got " + to_string(xv.shape()));
  const std::size_t B = xv.dim(0), T = xv.dim(1), D = xv.dim(2);
  if (wh.rank() != 2 || wh.dim(1) != 4 * wh.dim(0))
    throw dimension_error("lstm recurrent kernel must be [H x 4H], got " + to_string(wh.shape()));
  const std::size_t H = wh.dim(0);
  if (wx.rank() != 2 || wx.dim(0) != D || wx.dim(1) != 4 * H)
    throw dimension_error("lstm input kernel " + to_string(wx.shape()) + " does not match input " + to_string(xv.shape()));
  if (bv.rank() != 1 || bv.dim(0) != 4 * H) throw dimension_error("lstm bias must be [4H], got " + to_string(bv.shape()));

  using Eigen::Index;
  const auto iB = static_cast<Index>(B), iH = static_cast<Index>(H), iD = static_cast<Index>(D);

  // Time-major copy of the input: row (t, b).
  row_matrix x_tm(static_cast<Index>(T * B), iD);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t b = 0; b < B; ++b)
      x_tm.row(static_cast<Index>(t * B + b)) = const_matrix_map(&xv[(b * T + t) * D], 1, iD);

  // Activated gates, cell states, tanh(cell) and previous hidden state per step, all time-major.
  row_matrix gates = x_tm * wx.as_matrix();
  gates.rowwise() += bv.as_matrix().row(0);
  row_matrix cells(static_cast<Index>(T * B), iH);
  row_matrix tanh_cells(static_cast<Index>(T * B), iH);
  row_matrix h_prev_all = row_matrix::Zero(static_cast<Index>(T * B), iH);
  Tensor out({B, T, H});

  row_matrix h = row_matrix::Zero(iB, iH);
  row_matrix c = row_matrix::Zero(iB, iH);
  for (std::size_t s = 0; s < T; ++s) {
    const std::size_t t = reverse ? T - 1 - s : s;
    const auto rows = static_cast<Index>(t * B);
    h_prev_all.middleRows(rows, iB) = h;
    auto a = gates.middleRows(rows, iB);
    a.noalias() += h * wh.as_matrix();
    // Vectorised gate activations: sigmoid(x) = 1 / (1 + e^-x), tanh(x) = 1 - 2 / (e^2x + 1).
    a.leftCols(2 * iH).array() = (1.0 + (-a.leftCols(2 * iH).array()).exp()).inverse();
    a.rightCols(iH).array() = (1.0 + (-a.rightCols(iH).array()).exp()).inverse();
    a.middleCols(2 * iH, iH).array() = 1.0 - 2.0 / ((2.0 * a.middleCols(2 * iH, iH).array()).exp() + 1.0);
    c.array() = a.middleCols(iH, iH).array() * c.array() + a.leftCols(iH).array() * a.middleCols(2 * iH, iH).array();
    auto tc = tanh_cells.middleRows(rows, iB);
    tc.array() = 1.0 - 2.0 / ((2.0 * c.array()).exp() + 1.0);
    h.array() = a.rightCols(iH).array() * tc.array();
    cells.middleRows(rows, iB) = c;
    for (std::size_t b = 0; b < B; ++b)
      matrix_map(&out[(b * T + t) * H], 1, iH) = h.row(static_cast<Index>(b));
  }

  struct cache_t {
    row_matrix x_tm, gates, cells, tanh_cells, h_prev_all;
  };
  auto cache = std::make_shared<cache_t>(
      cache_t{std::move(x_tm), std::move(gates), std::move(cells), std::move(tanh_cells), std::move(h_prev_all)});

  return tape.record(std::move(out), {x, input_kernel, recurrent_kernel, bias},
                     [=](GradientTape& tp, const Tensor& g_out) {
                       const auto& k = *cache;
                       const auto& whm = tp.value(recurrent_kernel);
                       row_matrix d_gates(static_cast<Index>(T * B), 4 * iH);
                       row_matrix dh_next = row_matrix::Zero(iB, iH);
                       row_matrix dc_next = row_matrix::Zero(iB, iH);
                       for (std::size_t s = T; s-- > 0;) {
                         const std::size_t t = reverse ? T - 1 - s : s;
                         const auto rows = static_cast<Index>(t * B);
                         const std::size_t prev_t = reverse ? t + 1 : t - 1;
                         const bool first = (s == 0);
                         for (Index r = 0; r < iB; ++r) {
                           const double* a = k.gates.row(rows + r).data();
                           double* da = d_gates.row(rows + r).data();
                           const double* gy = &g_out[(static_cast<std::size_t>(r) * T + t) * H];
                           for (Index j = 0; j < iH; ++j) {
                             const double i_g = a[j], f_g = a[iH + j], c_g = a[2 * iH + j], o_g = a[3 * iH + j];
                             const double tc = k.tanh_cells(rows + r, j);
                             const double c_prev =
                                 first ? 0.0 : k.cells(static_cast<Index>(prev_t * B) + r, j);
                             const double dh = gy[j] + dh_next(r, j);
                             const double dc = dh * o_g * (1.0 - tc * tc) + dc_next(r, j);
                             dc_next(r, j) = dc * f_g;
                             da[j] = dc * c_g * i_g * (1.0 - i_g);
                             da[iH + j] = dc * c_prev * f_g * (1.0 - f_g);
                             da[2 * iH + j] = dc * i_g * (1.0 - c_g * c_g);
                             da[3 * iH + j] = dh * tc * o_g * (1.0 - o_g);
                           }
                         }
                         dh_next.noalias() = d_gates.middleRows(rows, iB) * whm.as_matrix().transpose();
                       }
                       if (tp.needs_grad(recurrent_kernel))
                         tp.grad(recurrent_kernel).as_matrix().noalias() += k.h_prev_all.transpose() * d_gates;
                       if (tp.needs_grad(input_kernel))
                         tp.grad(input_kernel).as_matrix().noalias() += k.x_tm.transpose() * d_gates;
                       if (tp.needs_grad(bias)) tp.grad(bias).as_matrix() += d_gates.colwise().sum();
                       if (tp.needs_grad(x)) {
                         const row_matrix dx_tm = d_gates * tp.value(input_kernel).as_matrix().transpose();
                         Tensor& gx = tp.grad(x);
                         for (std::size_t t = 0; t < T; ++t)
                           for (std::size_t b = 0; b < B; ++b)
                             matrix_map(&gx[(b * T + t) * D], 1, iD) += dx_tm.row(static_cast<Index>(t * B + b));
                       }
                     });
}

}  // namespace ad
}  // namespace skigear
