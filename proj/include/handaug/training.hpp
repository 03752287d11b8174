#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "handaug/adam.hpp"
#include "handaug/augmentor.hpp"
#include "handaug/autodiff.hpp"
#include "handaug/dataset.hpp"
#include "handaug/depth_renderer.hpp"
#include "handaug/errors.hpp"
#include "handaug/networks.hpp"
#include "handaug/random.hpp"

namespace handaug {

struct TrainConfig {
  double lambda = 1e-4;
  double learning_rate = 1e-4;
  // Learning rate of the two discriminators; unset means learning_rate.
  std::optional<double> discriminator_learning_rate;
  std::size_t batch_size = 16;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  bool use_unpaired = true;
  bool use_inplane_aug = false;
  double inplane_sigma = std::numbers::pi / 4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void check() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidArgument("lambda must be >= 0");
    if (!(learning_rate > 0.0) && learning_rate != 0.0) throw InvalidArgument("learning_rate must be > 0");
    if (discriminator_learning_rate && !(*discriminator_learning_rate >= 0.0))
      throw InvalidArgument("discriminator_learning_rate must be >= 0");
    if (batch_size == 0) throw InvalidArgument("batch_size must be >= 1");
    if (!(inplane_sigma >= 0.0)) throw InvalidArgument("inplane_sigma must be >= 0");
  }

  ad::AdamConfig adam(Net net) const {
    const bool disc = net == Net::hpd_x || net == Net::hpd_y;
    return {disc && discriminator_learning_rate ? *discriminator_learning_rate : learning_rate, beta1, beta2,
            adam_epsilon};
  }
};

struct LossBreakdown {
  double l_g = 0.0;
  double l_e = 0.0;
  double l_p = 0.0;
  double l_u = 0.0;
  double total = 0.0;

  static LossBreakdown compose(double l_g, double l_e, double l_p, double l_u, double lambda) {
    return {l_g, l_e, l_p, l_u, l_g + l_e + lambda * (l_p + l_u)};
  }
};

template <class T>
struct PairedBatch {
  Tensor<T> depth;     // [B, 1, N, N]
  Tensor<T> skeleton;  // [B, 63], network coordinates
};

template <class T>
struct UnpairedBatch {
  Tensor<T> skeleton;  // [B, 63]; B = 0 means no unpaired data
};

// Log-probabilities are taken at logits clamped to +-kLogitClamp, which pins
// the probabilities to [kProbFloor, 1 - kProbFloor].
inline constexpr double kProbFloor = 1e-7;
inline const double kLogitClamp = std::log((1.0 - kProbFloor) / kProbFloor);

/// Builds the terms of the full objective on one graph. Network passes are
/// shared between terms: f^E(x) feeds both L_E and L_P, and so on. `Model`
/// supplies graph(), estimate(), generate(), depth_logit() and
/// skeleton_logit(); BoundModel is the real one.
template <class T, class Model = BoundModel<T>>
class Objective {
 public:
  Objective(Model& model, const PairedBatch<T>& paired, const UnpairedBatch<T>* unpaired = nullptr)
      : m_(model), g_(model.graph()) {
    if (paired.depth.rank() == 0 || paired.depth.dim(0) == 0) throw ContractError("empty paired batch");
    if (paired.skeleton.rank() != 2 || paired.skeleton.dim(0) != paired.depth.dim(0))
      throw ContractError("paired batch depth and skeleton counts differ");
    x_ = g_.constant(paired.depth, "x");
    y_ = g_.constant(paired.skeleton, "y");
    batch_ = paired.depth.dim(0);
    if (unpaired && unpaired->skeleton.rank() == 2 && unpaired->skeleton.dim(0) > 0) {
      z_ = g_.constant(unpaired->skeleton, "z");
      ubatch_ = unpaired->skeleton.dim(0);
    }
  }

  bool has_unpaired() const { return z_.has_value(); }

  // log D_X(x) + log(1 - D_X(G(y))) + ||G(y) - x||^2
  Var loss_g() {
    return sum_of({log_dx(x_), log1m_dx(gy()), l2(gy(), x_, batch_)});
  }

  // log D_Y(y) + log(1 - D_Y(E(x))) + ||E(x) - y||^2
  Var loss_e() {
    return sum_of({log_dy(y_), log1m_dy(ex()), l2(ex(), y_, batch_)});
  }

  Var loss_p() {
    return sum_of({log_dx(x_), l2(egy(), y_, batch_), l2(gex(), x_, batch_), log1m_dx(gex()), log_dy(y_),
                   log1m_dy(egy())});
  }

  // Exactly zero without unpaired data.
  Var loss_u() {
    if (!z_) throw ContractError("empty unpaired batch");
    const Var z = *z_;
    return sum_of({log_dy(z), log1m_dy(egz()), l2(egz(), z, ubatch_), l2(gegz(), gz(), ubatch_), log1m_dx(gz()),
                   log1m_dx(gegz())});
  }

  // L_G + L_E + lambda (L_P + L_U), with L_U dropped when there is no U.
  Var total(double lambda) {
    Var cons = loss_p();
    if (z_) cons = ad::add(g_, cons, loss_u());
    return ad::add(g_, ad::add(g_, loss_g(), loss_e()), ad::scale(g_, cons, lambda));
  }

  // Terms whose value depends on G, for the G-descent sub-update.
  Var g_objective(double lambda) { return descent_objective(lambda, loss_g()); }
  Var e_objective(double lambda) { return descent_objective(lambda, loss_e()); }

  LossBreakdown breakdown(double lambda) {
    const double lg = value(loss_g()), le = value(loss_e()), lp = value(loss_p());
    const double lu = z_ ? value(loss_u()) : 0.0;
    return LossBreakdown::compose(lg, le, lp, lu, lambda);
  }

  double value(Var v) const { return static_cast<double>(g_.value(v).item()); }

 private:
  Var descent_objective(double lambda, Var own) {
    if (lambda == 0.0) return own;
    Var cons = loss_p();
    if (z_) cons = ad::add(g_, cons, loss_u());
    return ad::add(g_, own, ad::scale(g_, cons, lambda));
  }

  Var sum_of(std::initializer_list<Var> terms) {
    auto it = terms.begin();
    Var acc = *it++;
    for (; it != terms.end(); ++it) acc = ad::add(g_, acc, *it);
    return acc;
  }

  // Sum over dimensions, mean over the batch.
  Var l2(Var a, Var b, std::size_t batch) {
    return ad::scale(g_, ad::sq_norm(g_, ad::sub(g_, a, b)), 1.0 / static_cast<double>(batch));
  }

  Var clamped(Var logit) {
    Var c = ad::clamp(g_, logit, -kLogitClamp, kLogitClamp);
    for (T v : g_.value(c).values()) {
      if (!std::isfinite(static_cast<double>(v))) throw NumericError("discriminator logit is not finite");
      const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(v)));
      if (!(p >= kProbFloor * (1 - 1e-6) && p <= 1.0 - kProbFloor * (1 - 1e-6)))
        throw ContractError("discriminator probability escaped its clamp");
    }
    return c;
  }

  Var dx_logit(Var v) {
    auto [it, fresh] = dx_cache_.try_emplace(v.id);
    if (fresh) it->second = clamped(m_.depth_logit(v));
    return it->second;
  }
  Var dy_logit(Var v) {
    auto [it, fresh] = dy_cache_.try_emplace(v.id);
    if (fresh) it->second = clamped(m_.skeleton_logit(v));
    return it->second;
  }

  Var log_dx(Var v) { return ad::mean(g_, ad::log_sigmoid(g_, dx_logit(v))); }
  Var log1m_dx(Var v) { return ad::mean(g_, ad::log_sigmoid(g_, ad::scale(g_, dx_logit(v), -1.0))); }
  Var log_dy(Var v) { return ad::mean(g_, ad::log_sigmoid(g_, dy_logit(v))); }
  Var log1m_dy(Var v) { return ad::mean(g_, ad::log_sigmoid(g_, ad::scale(g_, dy_logit(v), -1.0))); }

  static Var cached(std::optional<Var>& slot, const std::function<Var()>& make) {
    if (!slot) slot = make();
    return *slot;
  }
  Var gy() { return cached(gy_, [&] { return m_.generate(y_); }); }
  Var ex() { return cached(ex_, [&] { return m_.estimate(x_); }); }
  Var egy() { return cached(egy_, [&] { return m_.estimate(gy()); }); }
  Var gex() { return cached(gex_, [&] { return m_.generate(ex()); }); }
  Var gz() { return cached(gz_, [&] { return m_.generate(*z_); }); }
  Var egz() { return cached(egz_, [&] { return m_.estimate(gz()); }); }
  Var gegz() { return cached(gegz_, [&] { return m_.generate(egz()); }); }

  Model& m_;
  Graph<T>& g_;
  Var x_, y_;
  std::optional<Var> z_;
  std::size_t batch_ = 0, ubatch_ = 0;
  std::optional<Var> gy_, ex_, egy_, gex_, gz_, egz_, gegz_;
  std::unordered_map<std::size_t, Var> dx_cache_, dy_cache_;
};

/// Loss values of a bundle on a batch, without any update.
template <class T>
LossBreakdown evaluate_losses(const ModelBundle<T>& bundle, const PairedBatch<T>& paired,
                              const UnpairedBatch<T>* unpaired, double lambda) {
  Graph<T> g;
  BoundModel<T> m(g, bundle);
  Objective<T> obj(m, paired, unpaired);
  return obj.breakdown(lambda);
}

template <class T>
using OptimizerStates = std::array<ad::AdamState<T>, 4>;

template <class T>
OptimizerStates<T> init_optimizers(const ModelBundle<T>& bundle, const TrainConfig& config) {
  OptimizerStates<T> s;
  for (Net n : kAllNets) s[static_cast<std::size_t>(n)] = ad::AdamState<T>::zeros_like(bundle.params(n), config.adam(n));
  return s;
}

enum class SubUpdate { dx_ascent, dy_ascent, g_descent, e_descent };

inline const char* sub_update_name(SubUpdate s) {
  switch (s) {
    case SubUpdate::dx_ascent: return "dx_ascent";
    case SubUpdate::dy_ascent: return "dy_ascent";
    case SubUpdate::g_descent: return "g_descent";
    case SubUpdate::e_descent: return "e_descent";
  }
  return "?";
}

inline Net updated_net(SubUpdate s) {
  switch (s) {
    case SubUpdate::dx_ascent: return Net::hpd_x;
    case SubUpdate::dy_ascent: return Net::hpd_y;
    case SubUpdate::g_descent: return Net::hpg;
    case SubUpdate::e_descent: return Net::hpe;
  }
  return Net::hpe;
}

// Called after each sub-update with the bundle before and after it.
template <class T>
using SubUpdateObserver = std::function<void(SubUpdate, const ModelBundle<T>& before, const ModelBundle<T>& after)>;

namespace detail {

template <class T>
std::vector<Tensor<T>> gradients_of(const Graph<T>& g, const ad::GradientMap<T>& grads, const std::vector<Var>& vars,
                                    bool negate) {
  std::vector<Tensor<T>> out;
  out.reserve(vars.size());
  for (Var v : vars) {
    Tensor<T> t = grads[v];
    if (negate)
      for (auto& e : t.values()) e = -e;
    out.push_back(std::move(t));
  }
  (void)g;
  return out;
}

// Runs one sub-update, prefixing numeric failures (forward or backward) with
// its name.
template <class F>
void named(SubUpdate which, F&& f) {
  try {
    f();
  } catch (const NumericError& e) {
    for (SubUpdate s : {SubUpdate::dx_ascent, SubUpdate::dy_ascent, SubUpdate::g_descent, SubUpdate::e_descent})
      if (std::string_view(e.what()).starts_with(sub_update_name(s))) throw;
    throw NumericError(std::string(sub_update_name(which)) + ": " + e.what());
  }
}

}  // namespace detail

/// One alternating step: D_X ascent, D_Y ascent, G descent with E frozen,
/// E descent with G frozen. Each sub-update is one Adam step on one network,
/// driven by the gradient of the full objective at the current parameters.
/// The returned losses are those of the bundle before the step.
template <class T>
LossBreakdown train_step(const PairedBatch<T>& paired, const UnpairedBatch<T>* unpaired, ModelBundle<T>& bundle,
                         OptimizerStates<T>& opt, const TrainConfig& config,
                         const SubUpdateObserver<T>& observer = nullptr) {
  const double lambda = config.lambda;
  auto apply = [&](SubUpdate which, std::vector<Tensor<T>> grads) {
    const Net n = updated_net(which);
    std::optional<ModelBundle<T>> before;
    if (observer) before = bundle;
    ad::adam_step(bundle.params(n), std::span<const Tensor<T>>(grads), opt[static_cast<std::size_t>(n)]);
    for (const auto& p : bundle.params(n))
      if (!p.value.all_finite()) throw NumericError(std::string(sub_update_name(which)) + ": parameter '" + p.name + "' is not finite");
    if (observer) observer(which, *before, bundle);
  };

  LossBreakdown report;
  // The D_Y gradient does not depend on D_X, so both discriminators read one graph.
  detail::named(SubUpdate::dx_ascent, [&] {
    Graph<T> g;
    BoundModel<T> m(g, bundle, {false, false, true, true});
    Objective<T> obj(m, paired, unpaired);
    const Var total = obj.total(lambda);
    report = obj.breakdown(lambda);
    if (!std::isfinite(report.total)) throw NumericError("loss is not finite");
    const auto grads = ad::backward(g, total);
    auto gdy = detail::gradients_of(g, grads, m.vars(Net::hpd_y), true);
    apply(SubUpdate::dx_ascent, detail::gradients_of(g, grads, m.vars(Net::hpd_x), true));
    apply(SubUpdate::dy_ascent, std::move(gdy));
  });
  detail::named(SubUpdate::g_descent, [&] {
    Graph<T> g;
    BoundModel<T> m(g, bundle, {false, true, false, false});
    Objective<T> obj(m, paired, unpaired);
    const auto grads = ad::backward(g, obj.g_objective(lambda));
    apply(SubUpdate::g_descent, detail::gradients_of(g, grads, m.vars(Net::hpg), false));
  });
  detail::named(SubUpdate::e_descent, [&] {
    Graph<T> g;
    BoundModel<T> m(g, bundle, {true, false, false, false});
    Objective<T> obj(m, paired, unpaired);
    const auto grads = ad::backward(g, obj.e_objective(lambda));
    apply(SubUpdate::e_descent, detail::gradients_of(g, grads, m.vars(Net::hpe), false));
  });
  return report;
}

// ---------------------------------------------------------------------------
// Epoch loop.

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  LossBreakdown losses;   // mean over the epoch's mini-batches
  double heldout_mm = std::numeric_limits<double>::quiet_NaN();
};

template <class T>
struct TrainState {
  ModelBundle<T> bundle;
  OptimizerStates<T> optimizers;
  std::size_t epochs_done = 0;
};

template <class T>
struct TrainHooks {
  // Called after each epoch; used to write checkpoints.
  std::function<void(const EpochLog&, const TrainState<T>&)> on_epoch;
  std::function<void(const LossBreakdown&)> on_step;
  SubUpdateObserver<T> on_sub_update;
};

// Mean over frames of the mean per-joint distance, in mm.
template <class T>
double heldout_mean_error(const ModelBundle<T>& bundle, const PairedDataset& data) {
  if (data.size() == 0) return std::numeric_limits<double>::quiet_NaN();
  std::vector<const DepthMap*> maps;
  for (const auto& r : data.records) maps.push_back(&r.depth);
  const auto preds = hpe_forward_all<T>(maps, bundle);
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    double frame = 0.0;
    for (std::size_t j = 0; j < kNumJoints; ++j) frame += (preds[i][j] - data.records[i].skeleton[j]).norm();
    sum += frame / kNumJoints;
  }
  return sum / static_cast<double>(preds.size());
}

namespace detail {

inline constexpr std::uint64_t kInitStream = 1;
inline constexpr std::uint64_t kShuffleStream = 2;
inline constexpr std::uint64_t kUnpairedStream = 3;
inline constexpr std::uint64_t kInplaneStream = 4;

// Draw n of the unpaired sequence: U is visited in a fresh permutation per
// pass, so the draw is a pure function of n and resuming needs no state.
class UnpairedCursor {
 public:
  UnpairedCursor(std::size_t size, std::uint64_t seed) : size_(size), seed_(seed) {}

  std::size_t at(std::uint64_t n) {
    const std::uint64_t cycle = n / size_;
    if (!perm_cycle_ || *perm_cycle_ != cycle) {
      perm_.resize(size_);
      for (std::size_t i = 0; i < size_; ++i) perm_[i] = i;
      RandomState rng(derive_seed(seed_, cycle));
      rng.shuffle(perm_);
      perm_cycle_ = cycle;
    }
    return perm_[n % size_];
  }

 private:
  std::size_t size_;
  std::uint64_t seed_;
  std::optional<std::uint64_t> perm_cycle_;
  std::vector<std::size_t> perm_;
};

}  // namespace detail

template <class T>
TrainState<T> initial_state(std::size_t resolution, const SkeletonFrame& frame, const TrainConfig& config) {
  TrainState<T> s{init_bundle<T>(resolution, frame, derive_seed(config.seed, detail::kInitStream)), {}, 0};
  s.optimizers = init_optimizers(s.bundle, config);
  return s;
}

/// Runs epochs `state.epochs_done + 1 .. config.epochs`. Every random choice
/// (shuffle, unpaired draw, in-plane angle) is a pure function of the seed and
/// the epoch, so stopping and resuming from a saved state reproduces an
/// uninterrupted run bitwise.
template <class T>
std::vector<EpochLog> train_from(TrainState<T>& state, const PairedDataset& paired, const UnpairedSkeletonSet& unpaired,
                                 const TrainConfig& config, const RenderConfig& render_config,
                                 const PairedDataset* heldout = nullptr, const TrainHooks<T>& hooks = {}) {
  config.check();
  if (paired.size() == 0) throw ContractError("training needs a non-empty paired set");
  if (paired.resolution != state.bundle.resolution)
    throw ContractError("paired set resolution " + std::to_string(paired.resolution) + " does not match the model");
  const bool use_u = config.use_unpaired && unpaired.size() > 0;
  const std::size_t n = paired.size(), bs = config.batch_size, res = state.bundle.resolution;
  detail::UnpairedCursor cursor(std::max<std::size_t>(unpaired.size(), 1), derive_seed(config.seed, detail::kUnpairedStream));

  std::vector<EpochLog> log;
  for (std::size_t epoch = state.epochs_done; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    RandomState shuffle(derive_seed(derive_seed(config.seed, detail::kShuffleStream), epoch));
    shuffle.shuffle(order);
    RandomState inplane(derive_seed(derive_seed(config.seed, detail::kInplaneStream), epoch));

    EpochLog entry;
    entry.epoch = epoch + 1;
    double sg = 0, se = 0, sp = 0, su = 0;
    std::size_t steps = 0;
    for (std::size_t begin = 0; begin < n; begin += bs) {
      const std::size_t b = std::min(bs, n - begin);
      std::vector<DepthMap> depths;
      std::vector<Skeleton> skels;
      depths.reserve(b);
      skels.reserve(b);
      for (std::size_t k = 0; k < b; ++k) {
        const auto& rec = paired.records[order[begin + k]];
        if (config.use_inplane_aug) {
          auto [d, s] = inplane_rotate_pair(rec.depth, rec.skeleton, inplane.normal(0.0, config.inplane_sigma), render_config);
          depths.push_back(std::move(d));
          skels.push_back(s);
        } else {
          depths.push_back(rec.depth);
          skels.push_back(rec.skeleton);
        }
      }
      std::vector<const DepthMap*> dp;
      std::vector<const Skeleton*> sp_;
      for (std::size_t k = 0; k < b; ++k) {
        dp.push_back(&depths[k]);
        sp_.push_back(&skels[k]);
      }
      PairedBatch<T> batch{depth_batch<T>(dp, res), skeleton_batch<T>(sp_, state.bundle.frame)};

      UnpairedBatch<T> ubatch;
      if (use_u) {
        std::vector<const Skeleton*> zp;
        const std::uint64_t first = static_cast<std::uint64_t>(epoch) * n + begin;
        for (std::size_t k = 0; k < b; ++k) zp.push_back(&unpaired.records[cursor.at(first + k)]);
        ubatch.skeleton = skeleton_batch<T>(zp, state.bundle.frame);
      }

      const LossBreakdown lb =
          train_step(batch, use_u ? &ubatch : nullptr, state.bundle, state.optimizers, config, hooks.on_sub_update);
      if (hooks.on_step) hooks.on_step(lb);
      sg += lb.l_g;
      se += lb.l_e;
      sp += lb.l_p;
      su += lb.l_u;
      ++steps;
    }
    const double k = static_cast<double>(steps);
    entry.losses = LossBreakdown::compose(sg / k, se / k, sp / k, su / k, config.lambda);
    if (heldout) entry.heldout_mm = heldout_mean_error(state.bundle, *heldout);
    state.epochs_done = epoch + 1;
    log.push_back(entry);
    if (hooks.on_epoch) hooks.on_epoch(entry, state);
  }
  return log;
}

template <class T>
std::pair<ModelBundle<T>, std::vector<EpochLog>> train(const PairedDataset& paired, const UnpairedSkeletonSet& unpaired,
                                                       const TrainConfig& config, const RenderConfig& render_config,
                                                       const PairedDataset* heldout = nullptr,
                                                       const TrainHooks<T>& hooks = {}) {
  TrainState<T> state = initial_state<T>(paired.resolution, SkeletonFrame::for_render(render_config), config);
  auto log = train_from(state, paired, unpaired, config, render_config, heldout, hooks);
  return {std::move(state.bundle), std::move(log)};
}

/// Plain L2 regression of the estimator alone, with the same initialization,
/// batching and optimizer as train(). Used as a reference for the
/// degenerate configuration of the full objective.
template <class T>
std::pair<ModelBundle<T>, std::vector<double>> train_estimator_l2(const PairedDataset& paired, const TrainConfig& config,
                                                                  const RenderConfig& render_config) {
  config.check();
  TrainState<T> state = initial_state<T>(paired.resolution, SkeletonFrame::for_render(render_config), config);
  const std::size_t n = paired.size(), bs = config.batch_size, res = state.bundle.resolution;
  auto& opt = state.optimizers[static_cast<std::size_t>(Net::hpe)];
  std::vector<double> losses;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    RandomState shuffle(derive_seed(derive_seed(config.seed, detail::kShuffleStream), epoch));
    shuffle.shuffle(order);
    for (std::size_t begin = 0; begin < n; begin += bs) {
      const std::size_t b = std::min(bs, n - begin);
      std::vector<const DepthMap*> dp;
      std::vector<const Skeleton*> sp;
      for (std::size_t k = 0; k < b; ++k) {
        dp.push_back(&paired.records[order[begin + k]].depth);
        sp.push_back(&paired.records[order[begin + k]].skeleton);
      }
      Graph<T> g;
      BoundModel<T> m(g, state.bundle, {true, false, false, false});
      const Var y = g.constant(skeleton_batch<T>(sp, state.bundle.frame));
      const Var loss = ad::scale(g, ad::sq_norm(g, ad::sub(g, m.estimate(g.constant(depth_batch<T>(dp, res))), y)),
                                 1.0 / static_cast<double>(b));
      losses.push_back(static_cast<double>(g.value(loss).item()));
      const auto grads = ad::backward(g, loss);
      const auto gv = detail::gradients_of(g, grads, m.vars(Net::hpe), false);
      ad::adam_step(state.bundle.params(Net::hpe), std::span<const Tensor<T>>(gv), opt);
    }
  }
  return {std::move(state.bundle), std::move(losses)};
}

}  // namespace handaug
