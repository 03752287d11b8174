#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "handaug/autodiff.hpp"
#include "handaug/depth_renderer.hpp"
#include "handaug/errors.hpp"
#include "handaug/hand_model.hpp"
#include "handaug/random.hpp"
#include "handaug/tensor.hpp"

namespace handaug {

using ad::Graph;
using ad::ParameterSet;
using ad::Shape;
using ad::Tensor;
using ad::Var;

/// Maps millimeter skeletons to network coordinates: subtract the crop
/// center, divide by scale_mm.
struct SkeletonFrame {
  Vec3 origin{0.0, 0.0, 300.0};
  double scale_mm = 100.0;

  // Rounded to float so that checkpoints store it exactly.
  static SkeletonFrame for_render(const RenderConfig& rc) {
    auto f = [](double v) { return static_cast<double>(static_cast<float>(v)); };
    return {Vec3(f(rc.center_x), f(rc.center_y), f(0.5 * (rc.near_mm + rc.far_mm))), 100.0};
  }

  template <class T>
  void normalize_into(const Skeleton& s, T* out) const {
    for (std::size_t j = 0; j < kNumJoints; ++j)
      for (std::size_t k = 0; k < 3; ++k) out[3 * j + k] = static_cast<T>((s[j][k] - origin[k]) / scale_mm);
  }

  template <class T>
  Skeleton denormalize(const T* in) const {
    Skeleton s;
    for (std::size_t j = 0; j < kNumJoints; ++j)
      for (std::size_t k = 0; k < 3; ++k) s[j][k] = static_cast<double>(in[3 * j + k]) * scale_mm + origin[k];
    return s;
  }

  friend bool operator==(const SkeletonFrame&, const SkeletonFrame&) = default;
};

enum class Net : std::size_t { hpe = 0, hpg = 1, hpd_x = 2, hpd_y = 3 };
inline constexpr std::array<Net, 4> kAllNets = {Net::hpe, Net::hpg, Net::hpd_x, Net::hpd_y};
inline constexpr std::array<const char*, 4> kNetNames = {"hpe", "hpg", "hpd_x", "hpd_y"};
inline const char* net_name(Net n) { return kNetNames[static_cast<std::size_t>(n)]; }

struct TensorSpec {
  std::string name;
  Shape shape;
};

/// Parameter layout of each network for a given resolution (divisible by 4).
///  hpe:   conv5x5/2 (8) -> relu -> conv3x3/2 (16) -> relu -> fc 256 -> relu -> fc 63
///  hpg:   fc 256 -> relu -> fc 16*(N/4)^2 -> relu -> deconv4x4/2 (8) -> relu -> deconv4x4/2 (1) -> tanh
///  hpd_x: conv4x4/2 (8) -> relu -> conv4x4/2 (16) -> relu -> fc 1 -> sigmoid
///  hpd_y: fc 64 -> relu -> fc 64 -> relu -> fc 1 -> sigmoid
inline std::vector<TensorSpec> architecture(Net net, std::size_t resolution) {
  if (resolution == 0 || resolution % 4 != 0) throw InvalidArgument("network resolution must be a positive multiple of 4");
  const std::size_t q = resolution / 4;
  const std::size_t feat = 16 * q * q;
  const std::string p = std::string(net_name(net)) + "/";
  switch (net) {
    case Net::hpe:
      return {{p + "conv1/weight", {8, 1, 5, 5}}, {p + "conv1/bias", {8}},   {p + "conv2/weight", {16, 8, 3, 3}},
              {p + "conv2/bias", {16}},          {p + "fc1/weight", {feat, 256}}, {p + "fc1/bias", {256}},
              {p + "fc2/weight", {256, kSkeletonDim}}, {p + "fc2/bias", {kSkeletonDim}}};
    case Net::hpg:
      return {{p + "fc1/weight", {kSkeletonDim, 256}}, {p + "fc1/bias", {256}},       {p + "fc2/weight", {256, feat}},
              {p + "fc2/bias", {feat}},               {p + "deconv1/weight", {16, 8, 4, 4}}, {p + "deconv1/bias", {8}},
              {p + "deconv2/weight", {8, 1, 4, 4}},   {p + "deconv2/bias", {1}}};
    case Net::hpd_x:
      return {{p + "conv1/weight", {8, 1, 4, 4}}, {p + "conv1/bias", {8}}, {p + "conv2/weight", {16, 8, 4, 4}},
              {p + "conv2/bias", {16}},          {p + "fc/weight", {feat, 1}}, {p + "fc/bias", {1}}};
    case Net::hpd_y:
      return {{p + "fc1/weight", {kSkeletonDim, 64}}, {p + "fc1/bias", {64}}, {p + "fc2/weight", {64, 64}},
              {p + "fc2/bias", {64}},                {p + "fc3/weight", {64, 1}}, {p + "fc3/bias", {1}}};
  }
  return {};
}

namespace detail {

// Glorot fan sizes. Dense weights are [in, out]; conv weights are
// [out, in, k, k] and transposed-conv weights [in, out, k, k].
inline std::pair<double, double> fans(const std::string& name, const Shape& shape) {
  if (shape.size() == 2) return {static_cast<double>(shape[0]), static_cast<double>(shape[1])};
  const double area = static_cast<double>(shape[2] * shape[3]);
  if (name.find("deconv") != std::string::npos)
    return {static_cast<double>(shape[0]) * area, static_cast<double>(shape[1]) * area};
  return {static_cast<double>(shape[1]) * area, static_cast<double>(shape[0]) * area};
}

}  // namespace detail

/// The four networks plus the coordinate frame they were trained in.
template <class T>
struct ModelBundle {
  std::size_t resolution = 32;
  SkeletonFrame frame;
  std::array<ParameterSet<T>, 4> nets;

  ParameterSet<T>& params(Net n) { return nets[static_cast<std::size_t>(n)]; }
  const ParameterSet<T>& params(Net n) const { return nets[static_cast<std::size_t>(n)]; }

  template <class U>
  ModelBundle<U> cast() const {
    ModelBundle<U> out;
    out.resolution = resolution;
    out.frame = frame;
    for (std::size_t i = 0; i < 4; ++i) out.nets[i] = ad::cast_parameters<U>(nets[i]);
    return out;
  }

  friend bool operator==(const ModelBundle&, const ModelBundle&) = default;
};

/// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero. Each
/// network draws from its own stream of `seed`.
template <class T>
ModelBundle<T> init_bundle(std::size_t resolution, const SkeletonFrame& frame, std::uint64_t seed) {
  ModelBundle<T> b;
  b.resolution = resolution;
  b.frame = frame;
  for (Net net : kAllNets) {
    RandomState rng(derive_seed(seed, 100 + static_cast<std::uint64_t>(net)));
    for (auto& spec : architecture(net, resolution)) {
      Tensor<T> t(spec.shape);
      if (spec.shape.size() > 1) {
        const auto [fan_in, fan_out] = detail::fans(spec.name, spec.shape);
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(-limit, limit));
      }
      b.params(net).push_back({spec.name, std::move(t)});
    }
  }
  return b;
}

/// Checks names and shapes against the declared architecture.
template <class T>
void check_architecture(const ModelBundle<T>& b) {
  for (Net net : kAllNets) {
    const auto specs = architecture(net, b.resolution);
    const auto& params = b.params(net);
    if (params.size() != specs.size())
      throw ContractError(std::string(net_name(net)) + ": expected " + std::to_string(specs.size()) + " tensors, got " +
                          std::to_string(params.size()));
    for (std::size_t i = 0; i < specs.size(); ++i) {
      if (params[i].name != specs[i].name)
        throw ContractError("expected tensor '" + specs[i].name + "', found '" + params[i].name + "'");
      if (params[i].value.shape() != specs[i].shape)
        throw ContractError("tensor '" + specs[i].name + "' has shape " + ad::shape_string(params[i].value.shape()) +
                            ", expected " + ad::shape_string(specs[i].shape));
    }
  }
}

/// The networks of a bundle bound into one graph. Parameters are copied into
/// the graph on first use; only networks flagged trainable get gradients.
template <class T>
class BoundModel {
 public:
  BoundModel(Graph<T>& graph, const ModelBundle<T>& bundle, std::array<bool, 4> trainable = {})
      : graph_(graph), bundle_(bundle), trainable_(trainable) {}

  Graph<T>& graph() { return graph_; }
  std::size_t resolution() const { return bundle_.resolution; }

  const std::vector<Var>& vars(Net net) {
    auto& v = vars_[static_cast<std::size_t>(net)];
    if (v.empty()) {
      const bool rg = trainable_[static_cast<std::size_t>(net)];
      for (const auto& p : bundle_.params(net))
        v.push_back(rg ? graph_.variable(p.value, p.name) : graph_.constant(p.value, p.name));
    }
    return v;
  }

  // [B, 1, N, N] -> [B, 63]
  Var estimate(Var depth) {
    require_depth(depth);
    const auto& p = vars(Net::hpe);
    auto& g = graph_;
    Var h = ad::relu(g, ad::add_bias(g, ad::conv2d(g, depth, p[0], 2, 2), p[1]));
    h = ad::relu(g, ad::add_bias(g, ad::conv2d(g, h, p[2], 2, 1), p[3]));
    h = ad::relu(g, dense(ad::flatten(g, h), p[4], p[5]));
    return dense(h, p[6], p[7]);
  }

  // [B, 63] -> [B, 1, N, N] in (-1, 1)
  Var generate(Var skeleton) {
    require_skeleton(skeleton);
    const auto& p = vars(Net::hpg);
    auto& g = graph_;
    const std::size_t batch = g.value(skeleton).dim(0), q = bundle_.resolution / 4;
    Var h = ad::relu(g, dense(skeleton, p[0], p[1]));
    h = ad::relu(g, dense(h, p[2], p[3]));
    h = ad::reshape(g, h, Shape{batch, 16, q, q});
    h = ad::relu(g, ad::add_bias(g, ad::conv_transpose2d(g, h, p[4], 2, 1), p[5]));
    return ad::tanh(g, ad::add_bias(g, ad::conv_transpose2d(g, h, p[6], 2, 1), p[7]));
  }

  // [B, 1, N, N] -> [B, 1] logits
  Var depth_logit(Var depth) {
    require_depth(depth);
    const auto& p = vars(Net::hpd_x);
    auto& g = graph_;
    Var h = ad::relu(g, ad::add_bias(g, ad::conv2d(g, depth, p[0], 2, 1), p[1]));
    h = ad::relu(g, ad::add_bias(g, ad::conv2d(g, h, p[2], 2, 1), p[3]));
    return dense(ad::flatten(g, h), p[4], p[5]);
  }

  // [B, 63] -> [B, 1] logits
  Var skeleton_logit(Var skeleton) {
    require_skeleton(skeleton);
    const auto& p = vars(Net::hpd_y);
    Var h = ad::relu(graph_, dense(skeleton, p[0], p[1]));
    h = ad::relu(graph_, dense(h, p[2], p[3]));
    return dense(h, p[4], p[5]);
  }

 private:
  Var dense(Var x, Var w, Var b) { return ad::add_bias(graph_, ad::matmul(graph_, x, w), b); }

  void require_depth(Var v) const {
    const auto& s = graph_.value(v).shape();
    const std::size_t n = bundle_.resolution;
    if (s.size() != 4 || s[1] != 1 || s[2] != n || s[3] != n)
      throw ContractError("depth input " + ad::shape_string(s) + " does not match network resolution " +
                          std::to_string(n));
  }

  void require_skeleton(Var v) const {
    const auto& s = graph_.value(v).shape();
    if (s.size() != 2 || s[1] != kSkeletonDim) throw ContractError("skeleton input must be [B, 63], got " + ad::shape_string(s));
  }

  Graph<T>& graph_;
  const ModelBundle<T>& bundle_;
  std::array<bool, 4> trainable_;
  std::array<std::vector<Var>, 4> vars_;
};

// ---------------------------------------------------------------------------
// Batch packing and single-sample inference.

template <class T>
Tensor<T> depth_batch(std::span<const DepthMap* const> maps, std::size_t resolution) {
  Tensor<T> t(Shape{maps.size(), 1, resolution, resolution});
  for (std::size_t b = 0; b < maps.size(); ++b) {
    if (maps[b]->resolution != resolution)
      throw ContractError("depth map resolution " + std::to_string(maps[b]->resolution) +
                          " does not match network resolution " + std::to_string(resolution));
    for (std::size_t i = 0; i < resolution * resolution; ++i)
      t[b * resolution * resolution + i] = static_cast<T>(maps[b]->values[i]);
  }
  return t;
}

template <class T>
Tensor<T> skeleton_batch(std::span<const Skeleton* const> skeletons, const SkeletonFrame& frame) {
  Tensor<T> t(Shape{skeletons.size(), kSkeletonDim});
  for (std::size_t b = 0; b < skeletons.size(); ++b) frame.normalize_into(*skeletons[b], t.data() + b * kSkeletonDim);
  return t;
}

template <class T>
Skeleton hpe_forward(const DepthMap& depth, const ModelBundle<T>& bundle) {
  Graph<T> g;
  BoundModel<T> m(g, bundle);
  const DepthMap* p = &depth;
  Var y = m.estimate(g.constant(depth_batch<T>(std::span(&p, 1), bundle.resolution)));
  return bundle.frame.denormalize(g.value(y).data());
}

// Batched estimator inference, `chunk` frames per graph.
template <class T>
std::vector<Skeleton> hpe_forward_all(std::span<const DepthMap* const> maps, const ModelBundle<T>& bundle,
                                      std::size_t chunk = 64) {
  std::vector<Skeleton> out;
  out.reserve(maps.size());
  for (std::size_t begin = 0; begin < maps.size(); begin += chunk) {
    const std::size_t n = std::min(chunk, maps.size() - begin);
    Graph<T> g;
    BoundModel<T> m(g, bundle);
    Var y = m.estimate(g.constant(depth_batch<T>(maps.subspan(begin, n), bundle.resolution)));
    for (std::size_t b = 0; b < n; ++b) out.push_back(bundle.frame.denormalize(g.value(y).data() + b * kSkeletonDim));
  }
  return out;
}

template <class T>
DepthMap hpg_forward(const Skeleton& skeleton, const ModelBundle<T>& bundle) {
  if (!skeleton.all_finite()) throw NumericError("generator input skeleton is not finite");
  Graph<T> g;
  BoundModel<T> m(g, bundle);
  const Skeleton* p = &skeleton;
  Var x = m.generate(g.constant(skeleton_batch<T>(std::span(&p, 1), bundle.frame)));
  DepthMap out(bundle.resolution);
  const auto& v = g.value(x);
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = static_cast<float>(v[i]);
  return out;
}

template <class T>
double hpd_x_forward(const DepthMap& depth, const ModelBundle<T>& bundle) {
  Graph<T> g;
  BoundModel<T> m(g, bundle);
  const DepthMap* p = &depth;
  Var logit = m.depth_logit(g.constant(depth_batch<T>(std::span(&p, 1), bundle.resolution)));
  return static_cast<double>(ad::sigmoid_value(g.value(logit)[0]));
}

template <class T>
double hpd_y_forward(const Skeleton& skeleton, const ModelBundle<T>& bundle) {
  Graph<T> g;
  BoundModel<T> m(g, bundle);
  const Skeleton* p = &skeleton;
  Var logit = m.skeleton_logit(g.constant(skeleton_batch<T>(std::span(&p, 1), bundle.frame)));
  return static_cast<double>(ad::sigmoid_value(g.value(logit)[0]));
}

}  // namespace handaug
