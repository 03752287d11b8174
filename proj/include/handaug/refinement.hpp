#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <vector>

#include "handaug/autodiff.hpp"
#include "handaug/depth_renderer.hpp"
#include "handaug/errors.hpp"
#include "handaug/hand_model.hpp"
#include "handaug/networks.hpp"
#include "handaug/random.hpp"

namespace handaug {

struct RefineConfig {
  double gamma = 1e-5;
  double lambda_ref = 0.01;
  std::size_t views = 50;
  double view_sigma = std::numbers::pi / 4;
  std::uint64_t seed = 0;

  void check() const {
    if (!(gamma >= 0.0)) throw InvalidArgument("gamma must be >= 0");
    if (!(lambda_ref >= 0.0)) throw InvalidArgument("lambda_ref must be >= 0");
    if (views == 0) throw InvalidArgument("the number of views must be >= 1");
    if (!(view_sigma >= 0.0)) throw InvalidArgument("view_sigma must be >= 0");
  }
};

struct RefineResult {
  Skeleton skeleton;
  std::size_t failed_views = 0;
  bool warning = false;  // some view had a non-finite gradient
  double grad_norm = 0.0;  // single-view only, network coordinates
};

// Plausibility score of skeletons y[1, 63] that the refinement step raises.
// The default is the skeleton discriminator's probability.
template <class T>
using PriorFn = std::function<Var(BoundModel<T>&, Var y)>;

template <class T>
Var discriminator_prior(BoundModel<T>& m, Var y) {
  return ad::sum(m.graph(), ad::sigmoid(m.graph(), m.skeleton_logit(y)));
}

/// Refinement energy -prior(y) + lambda_ref ||G(y) - x||^2, with y in
/// network coordinates. Returns the scalar node.
template <class T>
Var refine_energy(BoundModel<T>& m, Var y, const DepthMap* x, double lambda_ref, const PriorFn<T>& prior) {
  auto& g = m.graph();
  Var e = ad::scale(g, prior ? prior(m, y) : discriminator_prior(m, y), -1.0);
  if (lambda_ref > 0.0) {
    const DepthMap* p = x;
    const Var xt = g.constant(depth_batch<T>(std::span(&p, 1), m.resolution()));
    e = ad::add(g, e, ad::scale(g, ad::sq_norm(g, ad::sub(g, m.generate(y), xt)), lambda_ref));
  }
  return e;
}

template <class T>
double refine_energy_value(const Tensor<T>& y_norm, const DepthMap& x, const ModelBundle<T>& bundle, double lambda_ref,
                           const PriorFn<T>& prior = nullptr) {
  Graph<T> g;
  BoundModel<T> m(g, bundle);
  return static_cast<double>(g.value(refine_energy(m, g.constant(y_norm), &x, lambda_ref, prior)).item());
}

/// One explicit gradient step y* = y - gamma grad E(y), taken in network
/// coordinates and mapped back to mm. A non-finite gradient leaves y as is
/// and sets the warning flag.
template <class T>
RefineResult refine(const Skeleton& y_init, const DepthMap& x_input, const ModelBundle<T>& bundle,
                    const RefineConfig& config, const PriorFn<T>& prior = nullptr) {
  config.check();
  if (!y_init.all_finite()) throw InvalidArgument("initial skeleton is not finite");
  if (x_input.resolution != bundle.resolution) throw ContractError("depth map resolution does not match the model");
  RefineResult out{y_init, 0, false, 0.0};

  Graph<T> g;
  BoundModel<T> m(g, bundle);
  const Skeleton* p = &y_init;
  const Var y = g.variable(skeleton_batch<T>(std::span(&p, 1), bundle.frame), "y");
  Tensor<T> grad;
  try {
    const Var e = refine_energy(m, y, &x_input, config.lambda_ref, prior);
    grad = ad::backward(g, e)[y];
  } catch (const NumericError&) {
    out.failed_views = 1;
    out.warning = true;
    return out;
  }
  double sq = 0.0;
  for (T v : grad.values()) sq += static_cast<double>(v) * v;
  out.grad_norm = std::sqrt(sq);
  if (config.gamma == 0.0) return out;
  const double step = config.gamma * bundle.frame.scale_mm;
  for (std::size_t j = 0; j < kNumJoints; ++j)
    for (std::size_t k = 0; k < 3; ++k) out.skeleton[j][k] = y_init[j][k] - step * static_cast<double>(grad[3 * j + k]);
  return out;
}

/// Refines view 0 (the estimate itself) plus views - 1 rotated copies with
/// lambda_ref = 0, rotates each back and averages the views that succeeded.
template <class T>
RefineResult multiview_refine(const Skeleton& y_init, const DepthMap& x_input, const ModelBundle<T>& bundle,
                              const RefineConfig& config, const PriorFn<T>& prior = nullptr) {
  config.check();
  RefineResult first = refine(y_init, x_input, bundle, config, prior);
  if (config.views == 1) return first;

  RandomState rng(config.seed);
  const Vec3 c0 = y_init.centroid();
  RefineConfig rotated_config = config;
  rotated_config.lambda_ref = 0.0;
  std::vector<Skeleton> results;
  std::size_t failed = 0;
  if (first.warning)
    ++failed;
  else
    results.push_back(first.skeleton);
  for (std::size_t v = 1; v < config.views; ++v) {
    const double t1 = rng.normal(0.0, config.view_sigma);
    const double t2 = rng.normal(0.0, config.view_sigma);
    const Mat3 r = viewpoint_rotation(t1, t2);
    const RefineResult rv = refine(rotate_about(y_init, r, c0), x_input, bundle, rotated_config, prior);
    if (rv.warning) {
      ++failed;
      continue;
    }
    results.push_back(rotate_about(rv.skeleton, r.transpose(), c0));
  }

  RefineResult out{y_init, failed, failed > 0, first.grad_norm};
  if (results.empty()) return out;
  for (std::size_t j = 0; j < kNumJoints; ++j) {
    Vec3 acc = Vec3::Zero();
    for (const auto& s : results) acc += s[j];
    out.skeleton[j] = acc / static_cast<double>(results.size());
  }
  return out;
}

}  // namespace handaug
