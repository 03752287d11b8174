#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "handaug/errors.hpp"
#include "handaug/tensor.hpp"

namespace handaug::ad {

/// Handle to a node of a Graph.
struct Var {
  std::size_t id = 0;
};

enum class OpKind {
  leaf,
  add,
  sub,
  mul,
  scale,
  add_bias,
  matmul,
  conv2d,
  conv_transpose2d,
  relu,
  tanh,
  sigmoid,
  log_sigmoid,
  clamp,
  reshape,
  rows,
  sum,
  mean,
  sq_norm,
};

inline std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::add_bias: return "add_bias";
    case OpKind::matmul: return "matmul";
    case OpKind::conv2d: return "conv2d";
    case OpKind::conv_transpose2d: return "conv_transpose2d";
    case OpKind::relu: return "relu";
    case OpKind::tanh: return "tanh";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::log_sigmoid: return "log_sigmoid";
    case OpKind::clamp: return "clamp";
    case OpKind::reshape: return "reshape";
    case OpKind::rows: return "rows";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::sq_norm: return "sq_norm";
  }
  return "?";
}

template <class T>
class Graph;

/// Gradient accumulators handed to each node's adjoint during backward().
template <class T>
class GradContext {
 public:
  GradContext(const Graph<T>& graph, std::vector<Tensor<T>>& grads) : graph_(graph), grads_(grads) {}

  bool needs(Var v) const { return graph_.requires_grad(v); }
  const Tensor<T>& value(Var v) const { return graph_.value(v); }

  // Zero-initialized on first touch.
  Tensor<T>& acc(Var v) {
    Tensor<T>& g = grads_[v.id];
    if (g.empty()) g = Tensor<T>(graph_.value(v).shape());
    return g;
  }

 private:
  const Graph<T>& graph_;
  std::vector<Tensor<T>>& grads_;
};

template <class T>
using Adjoint = std::function<void(GradContext<T>&, const Tensor<T>& grad_out)>;

/// Recorded computation. Nodes are appended in evaluation order, so the
/// node list is already topologically sorted. Values are never mutated after
/// they are recorded.
template <class T>
class Graph {
 public:
  // Leaf that does not receive gradients.
  Var constant(Tensor<T> value, std::string name = {}) {
    return push(OpKind::leaf, {}, std::move(value), false, nullptr, std::move(name));
  }

  // Leaf that receives gradients (a trainable parameter or a probed input).
  Var variable(Tensor<T> value, std::string name = {}) {
    return push(OpKind::leaf, {}, std::move(value), true, nullptr, std::move(name));
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  OpKind kind(Var v) const { return nodes_.at(v.id).kind; }
  const std::string& name(Var v) const { return nodes_.at(v.id).name; }
  const std::vector<std::size_t>& inputs(Var v) const { return nodes_.at(v.id).inputs; }
  std::size_t size() const noexcept { return nodes_.size(); }

  std::string describe(Var v) const {
    const auto& n = nodes_.at(v.id);
    std::string s = "node " + std::to_string(v.id) + " (" + std::string(op_name(n.kind));
    if (!n.name.empty()) s += " '" + n.name + "'";
    return s + ")";
  }

  // Records an op output. requires_grad is inherited from the inputs.
  Var record(OpKind kind, std::vector<Var> inputs, Tensor<T> value, Adjoint<T> adjoint) {
    bool rg = false;
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    for (Var in : inputs) {
      if (in.id >= nodes_.size()) throw ContractError("input node does not belong to this graph");
      rg = rg || nodes_[in.id].requires_grad;
      ids.push_back(in.id);
    }
    return push(kind, std::move(ids), std::move(value), rg, rg ? std::move(adjoint) : nullptr, {});
  }

 private:
  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    Tensor<T> value;
    bool requires_grad;
    Adjoint<T> adjoint;
    std::string name;
  };

  Var push(OpKind kind, std::vector<std::size_t> inputs, Tensor<T> value, bool rg, Adjoint<T> adjoint,
           std::string name) {
    nodes_.push_back(Node{kind, std::move(inputs), std::move(value), rg, std::move(adjoint), std::move(name)});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;

 public:
  const Adjoint<T>& adjoint(std::size_t i) const { return nodes_[i].adjoint; }
};

/// Gradients of a scalar loss with respect to every node requiring grad.
template <class T>
class GradientMap {
 public:
  GradientMap(const Graph<T>& graph, std::vector<Tensor<T>> grads) : graph_(&graph), grads_(std::move(grads)) {}

  // Zero tensor when `v` does not influence the loss, including nodes added
  // after the sweep (lazily bound parameters of unused networks).
  Tensor<T> operator[](Var v) const {
    if (v.id >= grads_.size() || grads_[v.id].empty()) return Tensor<T>(graph_->value(v).shape());
    return grads_[v.id];
  }

 private:
  const Graph<T>* graph_;
  std::vector<Tensor<T>> grads_;
};

/// Reverse-mode sweep from a scalar loss.
template <class T>
GradientMap<T> backward(const Graph<T>& graph, Var loss) {
  const auto& loss_value = graph.value(loss);
  if (loss_value.size() != 1) throw ContractError("backward() needs a scalar loss, got " + shape_string(loss_value.shape()));
  if (!loss_value.all_finite()) throw NumericError("non-finite loss at " + graph.describe(loss));

  std::vector<Tensor<T>> grads(graph.size());
  if (!graph.requires_grad(loss)) return GradientMap<T>(graph, std::move(grads));
  grads[loss.id] = Tensor<T>(loss_value.shape(), T{1});

  GradContext<T> ctx(graph, grads);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    if (grads[i].empty() || !graph.requires_grad(Var{i})) continue;
    if (!grads[i].all_finite()) throw NumericError("non-finite gradient at " + graph.describe(Var{i}));
    // Adjoints write into the grads of their inputs only, never grads[i].
    if (const auto& adjoint = graph.adjoint(i)) adjoint(ctx, grads[i]);
  }
  return GradientMap<T>(graph, std::move(grads));
}

// ---------------------------------------------------------------------------
// Primitive ops. Every op checks its shapes and records an adjoint.

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ContractError(what);
}

template <class T, class F>
Tensor<T> map_values(const Tensor<T>& in, F f) {
  Tensor<T> out(in.shape());
  const T* src = in.data();
  T* dst = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) dst[i] = f(src[i]);
  return out;
}

struct ConvGeometry {
  std::size_t channels, height, width;  // image side
  std::size_t kernel, stride, pad;
  std::size_t out_h, out_w;  // patch grid side
};

// cols[(c*k + ki)*k + kj, oi*out_w + oj] = img[c, oi*s - p + ki, oj*s - p + kj]
template <class T>
void im2col(const T* img, const ConvGeometry& g, T* cols) {
  const std::size_t patch = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ki = 0; ki < g.kernel; ++ki)
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        T* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * patch;
        for (std::size_t oi = 0; oi < g.out_h; ++oi) {
          const long ii = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.pad);
          T* dst = row + oi * g.out_w;
          if (ii < 0 || ii >= static_cast<long>(g.height)) {
            std::fill(dst, dst + g.out_w, T{0});
            continue;
          }
          const T* src = img + (c * g.height + static_cast<std::size_t>(ii)) * g.width;
          for (std::size_t oj = 0; oj < g.out_w; ++oj) {
            const long jj = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.pad);
            dst[oj] = (jj < 0 || jj >= static_cast<long>(g.width)) ? T{0} : src[jj];
          }
        }
      }
}

// Adjoint of im2col: scatters-adds columns back into the image.
template <class T>
void col2im(const T* cols, const ConvGeometry& g, T* img) {
  const std::size_t patch = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ki = 0; ki < g.kernel; ++ki)
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        const T* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * patch;
        for (std::size_t oi = 0; oi < g.out_h; ++oi) {
          const long ii = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.pad);
          if (ii < 0 || ii >= static_cast<long>(g.height)) continue;
          const T* src = row + oi * g.out_w;
          T* dst = img + (c * g.height + static_cast<std::size_t>(ii)) * g.width;
          for (std::size_t oj = 0; oj < g.out_w; ++oj) {
            const long jj = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.pad);
            if (jj >= 0 && jj < static_cast<long>(g.width)) dst[jj] += src[oj];
          }
        }
      }
}

}  // namespace detail

template <class T>
Var add(Graph<T>& g, Var a, Var b) {
  const auto& va = g.value(a);
  va.require_same_shape(g.value(b), "add");
  Tensor<T> out = va;
  out += g.value(b);
  return g.record(OpKind::add, {a, b}, std::move(out), [a, b](GradContext<T>& ctx, const Tensor<T>& go) {
    if (ctx.needs(a)) ctx.acc(a) += go;
    if (ctx.needs(b)) ctx.acc(b) += go;
  });
}

template <class T>
Var sub(Graph<T>& g, Var a, Var b) {
  const auto& va = g.value(a);
  const auto& vb = g.value(b);
  va.require_same_shape(vb, "sub");
  Tensor<T> out(va.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
  return g.record(OpKind::sub, {a, b}, std::move(out), [a, b](GradContext<T>& ctx, const Tensor<T>& go) {
    if (ctx.needs(a)) ctx.acc(a) += go;
    if (ctx.needs(b)) {
      auto& gb = ctx.acc(b);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= go[i];
    }
  });
}

// Elementwise product.
template <class T>
Var mul(Graph<T>& g, Var a, Var b) {
  const auto& va = g.value(a);
  const auto& vb = g.value(b);
  va.require_same_shape(vb, "mul");
  Tensor<T> out(va.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
  return g.record(OpKind::mul, {a, b}, std::move(out), [a, b](GradContext<T>& ctx, const Tensor<T>& go) {
    const auto& va = ctx.value(a);
    const auto& vb = ctx.value(b);
    if (ctx.needs(a)) {
      auto& ga = ctx.acc(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * vb[i];
    }
    if (ctx.needs(b)) {
      auto& gb = ctx.acc(b);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * va[i];
    }
  });
}

// Multiplication by a constant.
template <class T>
Var scale(Graph<T>& g, Var a, double factor) {
  const T f = static_cast<T>(factor);
  Tensor<T> out = detail::map_values(g.value(a), [f](T v) { return v * f; });
  return g.record(OpKind::scale, {a}, std::move(out), [a, f](GradContext<T>& ctx, const Tensor<T>& go) {
    auto& ga = ctx.acc(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * f;
  });
}

/// x[B, C, ...] + bias[C], broadcast over the batch and any trailing dims.
/// This is the only broadcasting op.
template <class T>
Var add_bias(Graph<T>& g, Var x, Var bias) {
  const auto& vx = g.value(x);
  const auto& vb = g.value(bias);
  detail::require(vx.rank() >= 2 && vb.rank() == 1 && vb.dim(0) == vx.dim(1),
                  "add_bias: bias " + shape_string(vb.shape()) + " does not match " + shape_string(vx.shape()));
  const std::size_t batch = vx.dim(0), channels = vx.dim(1);
  const std::size_t inner = vx.size() / (batch * channels);
  Tensor<T> out = vx;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c) {
      T* p = out.data() + (b * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) p[i] += vb[c];
    }
  return g.record(OpKind::add_bias, {x, bias}, std::move(out),
                  [x, bias, batch, channels, inner](GradContext<T>& ctx, const Tensor<T>& go) {
                    if (ctx.needs(x)) ctx.acc(x) += go;
                    if (ctx.needs(bias)) {
                      auto& gb = ctx.acc(bias);
                      for (std::size_t c = 0; c < channels; ++c) {
                        double s = 0.0;
                        for (std::size_t b = 0; b < batch; ++b) {
                          const T* p = go.data() + (b * channels + c) * inner;
                          for (std::size_t i = 0; i < inner; ++i) s += p[i];
                        }
                        gb[c] += static_cast<T>(s);
                      }
                    }
                  });
}

/// a[M, K] x b[K, N].
template <class T>
Var matmul(Graph<T>& g, Var a, Var b) {
  const auto& va = g.value(a);
  const auto& vb = g.value(b);
  detail::require(va.rank() == 2 && vb.rank() == 2 && va.dim(1) == vb.dim(0),
                  "matmul: incompatible shapes " + shape_string(va.shape()) + " x " + shape_string(vb.shape()));
  const std::size_t m = va.dim(0), k = va.dim(1), n = vb.dim(1);
  Tensor<T> out(Shape{m, n});
  using detail::CMapMat;
  using detail::MapMat;
  MapMat<T>(out.data(), m, n).noalias() = CMapMat<T>(va.data(), m, k) * CMapMat<T>(vb.data(), k, n);
  return g.record(OpKind::matmul, {a, b}, std::move(out), [a, b, m, k, n](GradContext<T>& ctx, const Tensor<T>& go) {
    const CMapMat<T> dout(go.data(), m, n);
    if (ctx.needs(a))
      MapMat<T>(ctx.acc(a).data(), m, k).noalias() += dout * CMapMat<T>(ctx.value(b).data(), k, n).transpose();
    if (ctx.needs(b))
      MapMat<T>(ctx.acc(b).data(), k, n).noalias() += CMapMat<T>(ctx.value(a).data(), m, k).transpose() * dout;
  });
}

/// 2D cross-correlation. x[B, Cin, H, W], w[Cout, Cin, k, k] -> [B, Cout, Ho, Wo]
/// with Ho = (H + 2 pad - k) / stride + 1.
template <class T>
Var conv2d(Graph<T>& g, Var x, Var w, std::size_t stride, std::size_t pad) {
  const auto& vx = g.value(x);
  const auto& vw = g.value(w);
  detail::require(vx.rank() == 4 && vw.rank() == 4 && vw.dim(1) == vx.dim(1) && vw.dim(2) == vw.dim(3) && stride >= 1,
                  "conv2d: incompatible shapes " + shape_string(vx.shape()) + " * " + shape_string(vw.shape()));
  const std::size_t batch = vx.dim(0), cin = vx.dim(1), h = vx.dim(2), wd = vx.dim(3);
  const std::size_t cout = vw.dim(0), k = vw.dim(2);
  detail::require(h + 2 * pad >= k && wd + 2 * pad >= k, "conv2d: kernel larger than padded input");
  const detail::ConvGeometry geo{cin, h, wd, k, stride, pad, (h + 2 * pad - k) / stride + 1, (wd + 2 * pad - k) / stride + 1};
  const std::size_t rows = cin * k * k, patch = geo.out_h * geo.out_w;

  Tensor<T> out(Shape{batch, cout, geo.out_h, geo.out_w});
  std::vector<T> cols(rows * patch);
  using detail::CMapMat;
  using detail::MapMat;
  const CMapMat<T> wmat(vw.data(), cout, rows);
  for (std::size_t b = 0; b < batch; ++b) {
    detail::im2col(vx.data() + b * cin * h * wd, geo, cols.data());
    MapMat<T>(out.data() + b * cout * patch, cout, patch).noalias() = wmat * CMapMat<T>(cols.data(), rows, patch);
  }
  return g.record(OpKind::conv2d, {x, w}, std::move(out),
                  [x, w, geo, batch, cout, rows, patch](GradContext<T>& ctx, const Tensor<T>& go) {
                    const auto& vx = ctx.value(x);
                    const auto& vw = ctx.value(w);
                    const std::size_t img = geo.channels * geo.height * geo.width;
                    std::vector<T> cols(rows * patch);
                    const CMapMat<T> wmat(vw.data(), cout, rows);
                    T* gw = ctx.needs(w) ? ctx.acc(w).data() : nullptr;
                    T* gx = ctx.needs(x) ? ctx.acc(x).data() : nullptr;
                    for (std::size_t b = 0; b < batch; ++b) {
                      const CMapMat<T> dout(go.data() + b * cout * patch, cout, patch);
                      if (gw) {
                        detail::im2col(vx.data() + b * img, geo, cols.data());
                        MapMat<T>(gw, cout, rows).noalias() += dout * CMapMat<T>(cols.data(), rows, patch).transpose();
                      }
                      if (gx) {
                        MapMat<T>(cols.data(), rows, patch).noalias() = wmat.transpose() * dout;
                        detail::col2im(cols.data(), geo, gx + b * img);
                      }
                    }
                  });
}

/// Transposed convolution (the adjoint of conv2d in x). x[B, Cin, H, W],
/// w[Cin, Cout, k, k] -> [B, Cout, Ho, Wo] with Ho = (H - 1) stride - 2 pad + k.
template <class T>
Var conv_transpose2d(Graph<T>& g, Var x, Var w, std::size_t stride, std::size_t pad) {
  const auto& vx = g.value(x);
  const auto& vw = g.value(w);
  detail::require(vx.rank() == 4 && vw.rank() == 4 && vw.dim(0) == vx.dim(1) && vw.dim(2) == vw.dim(3) && stride >= 1,
                  "conv_transpose2d: incompatible shapes " + shape_string(vx.shape()) + " * " +
                      shape_string(vw.shape()));
  const std::size_t batch = vx.dim(0), cin = vx.dim(1), h = vx.dim(2), wd = vx.dim(3);
  const std::size_t cout = vw.dim(1), k = vw.dim(2);
  detail::require((h - 1) * stride + k > 2 * pad && (wd - 1) * stride + k > 2 * pad,
                  "conv_transpose2d: padding removes the whole output");
  const std::size_t oh = (h - 1) * stride + k - 2 * pad, ow = (wd - 1) * stride + k - 2 * pad;
  // Geometry of the equivalent forward conv: output image is the conv input.
  const detail::ConvGeometry geo{cout, oh, ow, k, stride, pad, h, wd};
  const std::size_t rows = cout * k * k, patch = h * wd;

  Tensor<T> out(Shape{batch, cout, oh, ow});
  std::vector<T> cols(rows * patch);
  using detail::CMapMat;
  using detail::MapMat;
  const CMapMat<T> wmat(vw.data(), cin, rows);
  for (std::size_t b = 0; b < batch; ++b) {
    MapMat<T>(cols.data(), rows, patch).noalias() = wmat.transpose() * CMapMat<T>(vx.data() + b * cin * patch, cin, patch);
    detail::col2im(cols.data(), geo, out.data() + b * cout * oh * ow);
  }
  return g.record(OpKind::conv_transpose2d, {x, w}, std::move(out),
                  [x, w, geo, batch, cin, rows, patch](GradContext<T>& ctx, const Tensor<T>& go) {
                    const auto& vx = ctx.value(x);
                    const auto& vw = ctx.value(w);
                    const std::size_t img = geo.channels * geo.height * geo.width;
                    std::vector<T> cols(rows * patch);
                    const CMapMat<T> wmat(vw.data(), cin, rows);
                    T* gw = ctx.needs(w) ? ctx.acc(w).data() : nullptr;
                    T* gx = ctx.needs(x) ? ctx.acc(x).data() : nullptr;
                    for (std::size_t b = 0; b < batch; ++b) {
                      detail::im2col(go.data() + b * img, geo, cols.data());
                      const CMapMat<T> dcols(cols.data(), rows, patch);
                      if (gx) MapMat<T>(gx + b * cin * patch, cin, patch).noalias() += wmat * dcols;
                      if (gw)
                        MapMat<T>(gw, cin, rows).noalias() +=
                            CMapMat<T>(vx.data() + b * cin * patch, cin, patch) * dcols.transpose();
                    }
                  });
}

template <class T>
Var relu(Graph<T>& g, Var a) {
  Tensor<T> out = detail::map_values(g.value(a), [](T v) { return v > T{0} ? v : T{0}; });
  return g.record(OpKind::relu, {a}, std::move(out), [a](GradContext<T>& ctx, const Tensor<T>& go) {
    const auto& va = ctx.value(a);
    auto& ga = ctx.acc(a);
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (va[i] > T{0}) ga[i] += go[i];
  });
}

template <class T>
Var tanh(Graph<T>& g, Var a) {
  Tensor<T> out = detail::map_values(g.value(a), [](T v) { return std::tanh(v); });
  const Var self{g.size()};
  return g.record(OpKind::tanh, {a}, std::move(out), [a, self](GradContext<T>& ctx, const Tensor<T>& go) {
    const auto& y = ctx.value(self);
    auto& ga = ctx.acc(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * (T{1} - y[i] * y[i]);
  });
}

template <class T>
T sigmoid_value(T v) {
  if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
  const T e = std::exp(v);
  return e / (T{1} + e);
}

template <class T>
Var sigmoid(Graph<T>& g, Var a) {
  Tensor<T> out = detail::map_values(g.value(a), [](T v) { return sigmoid_value(v); });
  const Var self{g.size()};
  return g.record(OpKind::sigmoid, {a}, std::move(out), [a, self](GradContext<T>& ctx, const Tensor<T>& go) {
    const auto& y = ctx.value(self);
    auto& ga = ctx.acc(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * y[i] * (T{1} - y[i]);
  });
}

// log(sigmoid(a)), evaluated without overflow for large |a|.
template <class T>
Var log_sigmoid(Graph<T>& g, Var a) {
  Tensor<T> out = detail::map_values(g.value(a), [](T v) { return std::min(v, T{0}) - std::log1p(std::exp(-std::abs(v))); });
  return g.record(OpKind::log_sigmoid, {a}, std::move(out), [a](GradContext<T>& ctx, const Tensor<T>& go) {
    const auto& va = ctx.value(a);
    auto& ga = ctx.acc(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * sigmoid_value(-va[i]);
  });
}

// Gradient passes where lo <= a <= hi and is zero outside.
template <class T>
Var clamp(Graph<T>& g, Var a, double lo, double hi) {
  const T l = static_cast<T>(lo), h = static_cast<T>(hi);
  Tensor<T> out = detail::map_values(g.value(a), [l, h](T v) { return std::clamp(v, l, h); });
  return g.record(OpKind::clamp, {a}, std::move(out), [a, l, h](GradContext<T>& ctx, const Tensor<T>& go) {
    const auto& va = ctx.value(a);
    auto& ga = ctx.acc(a);
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (va[i] >= l && va[i] <= h) ga[i] += go[i];
  });
}

template <class T>
Var reshape(Graph<T>& g, Var a, Shape shape) {
  Tensor<T> out = g.value(a).reshaped(std::move(shape));
  return g.record(OpKind::reshape, {a}, std::move(out), [a](GradContext<T>& ctx, const Tensor<T>& go) {
    auto& ga = ctx.acc(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
  });
}

template <class T>
Var flatten(Graph<T>& g, Var a) {
  const auto& va = g.value(a);
  return reshape(g, a, Shape{va.dim(0), va.size() / va.dim(0)});
}

// Rows [begin, begin + count) along dim 0.
template <class T>
Var rows(Graph<T>& g, Var a, std::size_t begin, std::size_t count) {
  const auto& va = g.value(a);
  detail::require(va.rank() >= 1 && begin + count <= va.dim(0), "rows: range out of bounds");
  const std::size_t stride = va.size() / va.dim(0);
  Shape shape = va.shape();
  shape[0] = count;
  Tensor<T> out(shape);
  std::copy_n(va.data() + begin * stride, count * stride, out.data());
  return g.record(OpKind::rows, {a}, std::move(out), [a, begin, stride](GradContext<T>& ctx, const Tensor<T>& go) {
    T* dst = ctx.acc(a).data() + begin * stride;
    for (std::size_t i = 0; i < go.size(); ++i) dst[i] += go[i];
  });
}

// Reductions accumulate in double.

template <class T>
Var sum(Graph<T>& g, Var a) {
  const auto& va = g.value(a);
  double s = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) s += va[i];
  return g.record(OpKind::sum, {a}, Tensor<T>::scalar(static_cast<T>(s)), [a](GradContext<T>& ctx, const Tensor<T>& go) {
    auto& ga = ctx.acc(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[0];
  });
}

template <class T>
Var mean(Graph<T>& g, Var a) {
  const auto& va = g.value(a);
  detail::require(va.size() > 0, "mean of an empty tensor");
  double s = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) s += va[i];
  const double n = static_cast<double>(va.size());
  return g.record(OpKind::mean, {a}, Tensor<T>::scalar(static_cast<T>(s / n)), [a, n](GradContext<T>& ctx, const Tensor<T>& go) {
    auto& ga = ctx.acc(a);
    const T d = static_cast<T>(static_cast<double>(go[0]) / n);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += d;
  });
}

// Sum of squares.
template <class T>
Var sq_norm(Graph<T>& g, Var a) {
  const auto& va = g.value(a);
  double s = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) s += static_cast<double>(va[i]) * va[i];
  return g.record(OpKind::sq_norm, {a}, Tensor<T>::scalar(static_cast<T>(s)), [a](GradContext<T>& ctx, const Tensor<T>& go) {
    const auto& va = ctx.value(a);
    auto& ga = ctx.acc(a);
    const T two_g = T{2} * go[0];
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += two_g * va[i];
  });
}

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
template <class T, class F>
Tensor<T> finite_diff_grad(F&& f, const Tensor<T>& point, double h) {
  if (!(h > 0.0)) throw InvalidArgument("finite_diff_grad needs h > 0");
  Tensor<T> grad(point.shape());
  Tensor<T> probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const T orig = point[i];
    probe[i] = static_cast<T>(orig + h);
    const double up = static_cast<double>(f(probe));
    probe[i] = static_cast<T>(orig - h);
    const double down = static_cast<double>(f(probe));
    probe[i] = orig;
    grad[i] = static_cast<T>((up - down) / (2.0 * h));
  }
  return grad;
}

}  // namespace handaug::ad
