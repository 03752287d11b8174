#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "handaug/errors.hpp"
#include "handaug/hand_model.hpp"
#include "handaug/random.hpp"

namespace handaug {

/// Square depth image, row-major, normalized to [-1, 1] with background +1.
/// Row 0 is the top of the view (largest y).
struct DepthMap {
  std::size_t resolution = 0;
  std::vector<float> values;

  DepthMap() = default;
  explicit DepthMap(std::size_t n, float fill = 1.0f) : resolution(n), values(n * n, fill) {}

  float& at(std::size_t row, std::size_t col) { return values[row * resolution + col]; }
  float at(std::size_t row, std::size_t col) const { return values[row * resolution + col]; }

  friend bool operator==(const DepthMap& a, const DepthMap& b) {
    return a.resolution == b.resolution &&
           std::equal(a.values.begin(), a.values.end(), b.values.begin(), b.values.end(),
                      [](float x, float y) { return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y); });
  }
};

inline constexpr float kBackground = 1.0f;

/// Orthographic camera looking along +z; the window is a square of side
/// window_mm centered on (center_x, center_y).
struct RenderConfig {
  std::size_t resolution = 32;
  double near_mm = 200.0;
  double far_mm = 400.0;
  double window_mm = 260.0;
  double center_x = 0.0;
  double center_y = 0.0;
  // Indexed like HandPose::bone_lengths.
  std::array<double, kNumBones> capsule_radii = default_radii();
  double palm_radius = 28.0;

  static constexpr std::array<double, kNumBones> default_radii() {
    std::array<double, kNumBones> r{};
    for (std::size_t f = 0; f < kNumFingers; ++f) {
      r[f] = 9.0;
      r[5 + f] = 9.0;
      r[10 + f] = 8.0;
      r[15 + f] = 7.0;
    }
    return r;
  }

  double pixel_mm() const { return window_mm / static_cast<double>(resolution); }

  // World (x, y) of the center of pixel (row, col).
  std::pair<double, double> pixel_center(std::size_t row, std::size_t col) const {
    const double p = pixel_mm();
    return {center_x - 0.5 * window_mm + (static_cast<double>(col) + 0.5) * p,
            center_y + 0.5 * window_mm - (static_cast<double>(row) + 0.5) * p};
  }

  float normalize(double z) const { return static_cast<float>(2.0 * (z - near_mm) / (far_mm - near_mm) - 1.0); }

  void check() const {
    if (resolution == 0) throw InvalidArgument("render resolution must be positive");
    if (!(near_mm < far_mm)) throw InvalidArgument("render near plane must be in front of the far plane");
    if (!(window_mm > 0.0)) throw InvalidArgument("render window must be positive");
    if (!(palm_radius > 0.0) || std::any_of(capsule_radii.begin(), capsule_radii.end(), [](double r) { return !(r > 0.0); }))
      throw InvalidArgument("capsule radii must be positive");
  }
};

struct Capsule {
  Vec3 a;
  Vec3 b;
  double radius;
};

/// Smallest z at which the ray through (x, y) along +z enters the capsule,
/// or +infinity on a miss. The entry point is the first hit among the two
/// end spheres and the infinite cylinder restricted to the segment span.
inline double capsule_front_depth(const Capsule& c, double x, double y) {
  const double r2 = c.radius * c.radius;
  double best = std::numeric_limits<double>::infinity();
  auto sphere = [&](const Vec3& center) {
    const double dx = x - center.x(), dy = y - center.y();
    const double d2 = dx * dx + dy * dy;
    if (d2 <= r2) best = std::min(best, center.z() - std::sqrt(r2 - d2));
  };
  sphere(c.a);
  sphere(c.b);

  const Vec3 axis = c.b - c.a;
  const double len = axis.norm();
  if (len > 0.0) {
    const Vec3 dir = axis / len;
    const Vec3 w(x - c.a.x(), y - c.a.y(), -c.a.z());
    const Vec3 ez(0.0, 0.0, 1.0);
    const Vec3 pw = w - w.dot(dir) * dir;
    const Vec3 pe = ez - ez.dot(dir) * dir;
    const double qa = pe.squaredNorm();
    if (qa > 1e-12) {
      const double qb = pw.dot(pe);
      const double qc = pw.squaredNorm() - r2;
      const double disc = qb * qb - qa * qc;
      if (disc >= 0.0) {
        const double t = (-qb - std::sqrt(disc)) / qa;
        const double s = (w + t * ez).dot(dir);
        if (s >= 0.0 && s <= len) best = std::min(best, t);
      }
    }
  }
  return best;
}

/// Z-buffer over the given capsules. Surfaces behind the far plane are
/// background; surfaces in front of the near plane clamp to -1.
inline DepthMap render_capsules(std::span<const Capsule> capsules, const RenderConfig& config) {
  config.check();
  DepthMap map(config.resolution, kBackground);
  for (std::size_t row = 0; row < config.resolution; ++row)
    for (std::size_t col = 0; col < config.resolution; ++col) {
      const auto [x, y] = config.pixel_center(row, col);
      double z = std::numeric_limits<double>::infinity();
      for (const auto& c : capsules) z = std::min(z, capsule_front_depth(c, x, y));
      if (z <= config.far_mm) map.at(row, col) = std::max(config.normalize(z), -1.0f);
    }
  return map;
}

// The 20 bone capsules followed by one palm capsule (wrist to middle MCP).
inline std::vector<Capsule> hand_capsules(const Skeleton& s, const RenderConfig& config) {
  std::vector<Capsule> caps;
  caps.reserve(kNumBones + 1);
  for (std::size_t b = 0; b < kNumBones; ++b) {
    const auto [p, c] = bone_joints(b);
    caps.push_back({s[p], s[c], config.capsule_radii[b]});
  }
  caps.push_back({s[kWrist], s[mcp_index(static_cast<std::size_t>(Finger::middle))], config.palm_radius});
  return caps;
}

inline DepthMap render(const Skeleton& skeleton, const RenderConfig& config) {
  const auto caps = hand_capsules(skeleton, config);
  return render_capsules(caps, config);
}

/// Draws random valid skeletons: finger angles uniform inside the limits,
/// finger bones scaled by one factor, then a global rotation about the
/// centroid and a translation putting the centroid at `center`.
struct PoseSampler {
  AngleLimits limits;
  // Std-devs of the global rotation angles about x, y and z (radians).
  double sigma_rot_x = std::numbers::pi / 12;
  double sigma_rot_y = std::numbers::pi / 12;
  double sigma_rot_z = std::numbers::pi / 12;
  // Finger-bone scale factor ~ N(1, sigma_shape^2), clipped to [shape_min, shape_max].
  double sigma_shape = 0.0;
  double shape_min = 0.6;
  double shape_max = 1.6;
  Vec3 center{0.0, 0.0, 300.0};

  Skeleton sample(RandomState& rng) const {
    HandPose pose = rest_pose();
    for (std::size_t a = 0; a < kNumAngles; ++a) {
      const AngleRange& r = limits.range(static_cast<Dof>(a % 5));
      pose.angles[a] = rng.uniform(r.lo, r.hi);
    }
    const double tau = sigma_shape > 0.0 ? std::clamp(rng.normal(1.0, sigma_shape), shape_min, shape_max) : 1.0;
    for (std::size_t b = kNumFingers; b < kNumBones; ++b) pose.bone_lengths[b] *= tau;
    const double rx = rng.normal(0.0, sigma_rot_x);
    const double ry = rng.normal(0.0, sigma_rot_y);
    const double rz = rng.normal(0.0, sigma_rot_z);

    const Skeleton local = forward_kinematics(pose);
    const Vec3 c = local.centroid();
    const Mat3 rot = inplane_rotation(rz) * viewpoint_rotation(rx, ry);
    Skeleton out;
    for (std::size_t j = 0; j < kNumJoints; ++j) out[j] = center + rot * (local[j] - c);
    return out;
  }
};

}  // namespace handaug
