#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "handaug/errors.hpp"
#include "handaug/tensor.hpp"

namespace handaug::ad {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moments per parameter tensor plus the step counter.
template <class T>
struct AdamState {
  AdamConfig config;
  std::uint64_t t = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;

  static AdamState zeros_like(const ParameterSet<T>& params, AdamConfig config) {
    AdamState s;
    s.config = config;
    for (const auto& p : params) {
      s.m.emplace_back(p.value.shape());
      s.v.emplace_back(p.value.shape());
    }
    return s;
  }

  friend bool operator==(const AdamState& a, const AdamState& b) {
    return a.t == b.t && a.m == b.m && a.v == b.v && a.config.learning_rate == b.config.learning_rate &&
           a.config.beta1 == b.config.beta1 && a.config.beta2 == b.config.beta2 && a.config.epsilon == b.config.epsilon;
  }
};

/// One bias-corrected Adam update, in place. The per-element arithmetic runs
/// in double and is rounded once into storage.
template <class T>
void adam_step(ParameterSet<T>& params, std::span<const Tensor<T>> grads, AdamState<T>& state) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw ContractError("adam_step: parameter, gradient and moment counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i].value.require_same_shape(grads[i], "adam_step gradient");
    params[i].value.require_same_shape(state.m[i], "adam_step first moment");
    params[i].value.require_same_shape(state.v[i], "adam_step second moment");
  }
  const auto& c = state.config;
  const std::uint64_t t = state.t + 1;
  const double bias1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bias2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* w = params[i].value.data();
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    const T* g = grads[i].data();
    for (std::size_t k = 0; k < params[i].value.size(); ++k) {
      const double gk = g[k];
      const double mk = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
      const double vk = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double step = c.learning_rate * (mk / bias1) / (std::sqrt(vk / bias2) + c.epsilon);
      w[k] = static_cast<T>(w[k] - step);
    }
  }
  state.t = t;
}

}  // namespace handaug::ad
