#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "handaug/dataset.hpp"
#include "handaug/depth_renderer.hpp"
#include "handaug/errors.hpp"
#include "handaug/hand_model.hpp"
#include "handaug/random.hpp"

namespace handaug {

struct AugmentParams {
  double theta1 = 0.0;  // about x (y-z plane)
  double theta2 = 0.0;  // about y (x-z plane)
  double tau = 1.0;     // finger bone scale
};

struct AugmentConfig {
  std::size_t m = 10;
  double sigma_theta = std::numbers::pi / 4;
  double mean_tau = 1.0;
  double sigma_tau = 0.5;
  // tau draws outside [tau_min, tau_max] are redrawn.
  double tau_min = 0.2;
  double tau_max = 3.0;
  std::uint64_t seed = 0;
  AngleLimits limits;

  void check() const {
    if (!(sigma_theta > 0.0) || !(sigma_tau > 0.0)) throw InvalidArgument("augmentation std-devs must be positive");
    if (!(tau_min > 0.0) || !(tau_min <= mean_tau) || !(mean_tau <= tau_max))
      throw InvalidArgument("augmentation tau bounds are unusable");
  }
};

/// Rotates about the skeleton centroid: first by theta1 about x, then by
/// theta2 about y. All pairwise joint distances are preserved.
inline Skeleton rotate_viewpoint(const Skeleton& s, double theta1, double theta2) {
  if (!std::isfinite(theta1) || !std::isfinite(theta2)) throw InvalidArgument("rotation angle is not finite");
  if (theta1 == 0.0 && theta2 == 0.0) return s;
  return rotate_about(s, viewpoint_rotation(theta1, theta2), s.centroid());
}

/// Multiplies every finger bone (MCP->PIP, PIP->DIP, DIP->TIP) by tau while
/// the wrist and the five MCPs stay where they are.
inline Skeleton scale_shape(const Skeleton& s, double tau) {
  if (!std::isfinite(tau) || !(tau > 0.0)) throw InvalidArgument("shape scale tau must be positive");
  HandPose pose = decompose(s);
  for (std::size_t b = kNumFingers; b < kNumBones; ++b) pose.bone_lengths[b] *= tau;
  return forward_kinematics(pose);
}

inline AugmentParams sample_params(const AugmentConfig& config, RandomState& rng) {
  AugmentParams p;
  p.theta1 = rng.normal(0.0, config.sigma_theta);
  p.theta2 = rng.normal(0.0, config.sigma_theta);
  do {
    p.tau = rng.normal(config.mean_tau, config.sigma_tau);
  } while (p.tau < config.tau_min || p.tau > config.tau_max);
  return p;
}

inline Skeleton apply_augmentation(const Skeleton& s, const AugmentParams& p) {
  return scale_shape(rotate_viewpoint(s, p.theta1, p.theta2), p.tau);
}

/// Builds the unpaired set: `config.m` augmented copies of every source, in
/// source order. Source i uses its own stream derived from one draw of
/// `rng`. Outputs are rounded to float precision and must validate; a slot
/// that fails 100 times is an error.
inline UnpairedSkeletonSet augment_set(std::span<const Skeleton> sources, const AugmentConfig& config,
                                       RandomState& rng) {
  config.check();
  UnpairedSkeletonSet out;
  out.records.reserve(sources.size() * config.m);
  const std::uint64_t base = rng.next_u64();
  for (std::size_t i = 0; i < sources.size(); ++i) {
    RandomState local(derive_seed(base, i));
    for (std::size_t k = 0; k < config.m; ++k) {
      for (int attempt = 0;; ++attempt) {
        const Skeleton s = quantize_to_float(apply_augmentation(sources[i], sample_params(config, local)));
        if (validate(s, config.limits).is_valid) {
          out.records.push_back(s);
          break;
        }
        if (attempt == 99)
          throw std::runtime_error("augmentation of source " + std::to_string(i) + " failed validation 100 times");
      }
    }
  }
  return out;
}

/// Rotates a registered (depth, skeleton) pair by phi about the view axis
/// through the image center. The image is resampled bilinearly with
/// background outside the frame; joint z is left untouched.
inline std::pair<DepthMap, Skeleton> inplane_rotate_pair(const DepthMap& depth, const Skeleton& skeleton, double phi,
                                                         const RenderConfig& config) {
  if (depth.resolution != config.resolution) throw ContractError("depth map resolution does not match render config");
  if (phi == 0.0) return {depth, skeleton};
  const double c = std::cos(phi), s = std::sin(phi);

  Skeleton out_skel = skeleton;
  for (std::size_t j = 0; j < kNumJoints; ++j) {
    const double dx = skeleton[j].x() - config.center_x;
    const double dy = skeleton[j].y() - config.center_y;
    out_skel[j].x() = config.center_x + c * dx - s * dy;
    out_skel[j].y() = config.center_y + s * dx + c * dy;
  }

  const std::size_t n = depth.resolution;
  const double pix = config.pixel_mm();
  const double x_min = config.center_x - 0.5 * config.window_mm;
  const double y_max = config.center_y + 0.5 * config.window_mm;
  auto sample = [&](long row, long col) -> double {
    if (row < 0 || col < 0 || row >= static_cast<long>(n) || col >= static_cast<long>(n)) return kBackground;
    return depth.at(static_cast<std::size_t>(row), static_cast<std::size_t>(col));
  };
  DepthMap out(n, kBackground);
  for (std::size_t row = 0; row < n; ++row)
    for (std::size_t col = 0; col < n; ++col) {
      const auto [x, y] = config.pixel_center(row, col);
      // Inverse rotation finds the source point.
      const double dx = x - config.center_x, dy = y - config.center_y;
      const double sx = config.center_x + c * dx + s * dy;
      const double sy = config.center_y - s * dx + c * dy;
      const double fc = (sx - x_min) / pix - 0.5;
      const double fr = (y_max - sy) / pix - 0.5;
      if (fc < -1.0 || fr < -1.0 || fc > static_cast<double>(n) || fr > static_cast<double>(n)) continue;
      const double c0 = std::floor(fc), r0 = std::floor(fr);
      const double wc = fc - c0, wr = fr - r0;
      const long ic = static_cast<long>(c0), ir = static_cast<long>(r0);
      const double v = (1 - wr) * ((1 - wc) * sample(ir, ic) + wc * sample(ir, ic + 1)) +
                       wr * ((1 - wc) * sample(ir + 1, ic) + wc * sample(ir + 1, ic + 1));
      out.at(row, col) = static_cast<float>(std::clamp(v, -1.0, 1.0));
    }
  return {std::move(out), out_skel};
}

}  // namespace handaug
