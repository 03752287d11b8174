#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <iterator>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "handaug/errors.hpp"

namespace handaug {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr std::size_t kNumJoints = 21;
inline constexpr std::size_t kNumFingers = 5;
inline constexpr std::size_t kNumBones = 20;
inline constexpr std::size_t kNumAngles = 25;
inline constexpr std::size_t kSkeletonDim = 63;

enum class Finger : std::size_t { thumb = 0, index = 1, middle = 2, ring = 3, pinky = 4 };

// Per finger degrees of freedom, in storage order.
enum class Dof : std::size_t { mcp_twist = 0, mcp_flexion = 1, mcp_abduction = 2, pip_flexion = 3, dip_flexion = 4 };

// Bone segments; bone index = segment * 5 + finger.
enum class Segment : std::size_t { metacarpal = 0, proximal = 1, middle = 2, distal = 3 };

inline constexpr std::array<const char*, kNumFingers> kFingerNames = {"thumb", "index", "middle", "ring", "pinky"};
inline constexpr std::array<const char*, 5> kDofNames = {"mcp_twist", "mcp_flexion", "mcp_abduction", "pip_flexion",
                                                         "dip_flexion"};
inline constexpr std::array<const char*, 4> kSegmentNames = {"metacarpal", "proximal", "middle", "distal"};
inline constexpr std::array<const char*, 4> kChainJointNames = {"mcp", "pip", "dip", "tip"};

// Joint ordering: 0 = wrist, then MCP, PIP, DIP, TIP per finger.
inline constexpr std::size_t kWrist = 0;
constexpr std::size_t joint_index(std::size_t finger, std::size_t chain) { return 1 + 4 * finger + chain; }
constexpr std::size_t mcp_index(std::size_t finger) { return joint_index(finger, 0); }
constexpr std::size_t bone_index(Segment seg, std::size_t finger) { return static_cast<std::size_t>(seg) * 5 + finger; }
constexpr std::size_t angle_index(std::size_t finger, Dof dof) { return finger * 5 + static_cast<std::size_t>(dof); }

// Endpoints (parent, child) of bone `b`.
constexpr std::pair<std::size_t, std::size_t> bone_joints(std::size_t b) {
  const std::size_t seg = b / 5;
  const std::size_t finger = b % 5;
  const std::size_t parent = seg == 0 ? kWrist : joint_index(finger, seg - 1);
  return {parent, joint_index(finger, seg)};
}

inline std::string joint_name(std::size_t j) {
  if (j == kWrist) return "wrist";
  return std::string(kFingerNames[(j - 1) / 4]) + "_" + kChainJointNames[(j - 1) % 4];
}

inline std::string bone_name(std::size_t b) {
  return std::string(kFingerNames[b % 5]) + "_" + kSegmentNames[b / 5];
}

inline std::string angle_name(std::size_t a) {
  return std::string(kFingerNames[a / 5]) + "_" + kDofNames[a % 5];
}

/// 21 joint positions in millimeters, camera coordinates.
struct Skeleton {
  std::array<Vec3, kNumJoints> joints;

  Skeleton() {
    for (auto& j : joints) j.setZero();
  }

  const Vec3& operator[](std::size_t i) const { return joints[i]; }
  Vec3& operator[](std::size_t i) { return joints[i]; }

  std::array<double, kSkeletonDim> flat() const {
    std::array<double, kSkeletonDim> out{};
    for (std::size_t j = 0; j < kNumJoints; ++j)
      for (std::size_t k = 0; k < 3; ++k) out[3 * j + k] = joints[j][k];
    return out;
  }

  template <class Range>
  static Skeleton from_flat(const Range& values) {
    if (std::size(values) != kSkeletonDim) throw ContractError("skeleton vector must have 63 entries");
    Skeleton s;
    auto it = std::begin(values);
    for (std::size_t j = 0; j < kNumJoints; ++j)
      for (std::size_t k = 0; k < 3; ++k) s.joints[j][k] = static_cast<double>(*it++);
    return s;
  }

  Vec3 centroid() const {
    Vec3 c = Vec3::Zero();
    for (const auto& j : joints) c += j;
    return c / static_cast<double>(kNumJoints);
  }

  double bone_length(std::size_t b) const {
    const auto [p, c] = bone_joints(b);
    return (joints[c] - joints[p]).norm();
  }

  bool all_finite() const {
    for (const auto& j : joints)
      if (!j.allFinite()) return false;
    return true;
  }

  friend bool operator==(const Skeleton& a, const Skeleton& b) {
    for (std::size_t j = 0; j < kNumJoints; ++j)
      if (a.joints[j] != b.joints[j]) return false;
    return true;
  }
};

// Rounds every coordinate to the nearest float, so that the skeleton survives
// a float32 file round trip bitwise.
inline Skeleton quantize_to_float(const Skeleton& s) {
  Skeleton out;
  for (std::size_t j = 0; j < kNumJoints; ++j)
    for (std::size_t k = 0; k < 3; ++k) out.joints[j][k] = static_cast<double>(static_cast<float>(s.joints[j][k]));
  return out;
}

/// Parametric pose: the six palm anchors (wrist, then the MCPs thumb to
/// pinky), 25 finger angles in radians and 20 bone lengths in millimeters.
struct HandPose {
  std::array<Vec3, 6> palm;
  std::array<double, kNumAngles> angles{};
  std::array<double, kNumBones> bone_lengths{};

  double angle(std::size_t finger, Dof dof) const { return angles[angle_index(finger, dof)]; }
  double& angle(std::size_t finger, Dof dof) { return angles[angle_index(finger, dof)]; }
  double bone(Segment seg, std::size_t finger) const { return bone_lengths[bone_index(seg, finger)]; }
  double& bone(Segment seg, std::size_t finger) { return bone_lengths[bone_index(seg, finger)]; }
};

struct AngleRange {
  double lo;
  double hi;
};

struct AngleLimits {
  AngleRange twist{-std::numbers::pi / 6, std::numbers::pi / 6};
  AngleRange abduction{-std::numbers::pi / 6, std::numbers::pi / 6};
  AngleRange flexion{-std::numbers::pi / 18, std::numbers::pi / 2};
  // Slack allowed when checking, absorbs float32 storage rounding.
  double tolerance = 1e-6;

  const AngleRange& range(Dof dof) const {
    switch (dof) {
      case Dof::mcp_twist: return twist;
      case Dof::mcp_abduction: return abduction;
      default: return flexion;
    }
  }
};

struct Violation {
  std::string constraint;
  double value;
};

struct ValidityReport {
  bool is_valid = true;
  std::vector<Violation> violations;

  friend bool operator==(const ValidityReport& a, const ValidityReport& b) {
    if (a.is_valid != b.is_valid || a.violations.size() != b.violations.size()) return false;
    for (std::size_t i = 0; i < a.violations.size(); ++i) {
      const auto& x = a.violations[i];
      const auto& y = b.violations[i];
      if (x.constraint != y.constraint) return false;
      if (!(x.value == y.value || (std::isnan(x.value) && std::isnan(y.value)))) return false;
    }
    return true;
  }
};

// ---------------------------------------------------------------------------
// Canonical geometry. The palm lies in the x-y plane with the wrist at the
// origin; the back of the hand faces +z and fingers flex towards -z.

inline constexpr std::array<double, kNumFingers> kCanonicalMcpAngleDeg = {-60.0, -15.0, 0.0, 15.0, 30.0};
inline constexpr std::array<double, kNumFingers> kCanonicalMetacarpalMm = {38.0, 85.0, 85.0, 80.0, 74.0};
// MCP->PIP, PIP->DIP, DIP->TIP per finger.
inline constexpr std::array<std::array<double, 3>, kNumFingers> kCanonicalPhalanxMm = {{
    {34.0, 30.0, 26.0},
    {42.0, 25.0, 20.0},
    {46.0, 29.0, 22.0},
    {43.0, 27.0, 21.0},
    {34.0, 21.0, 19.0},
}};

inline std::array<Vec3, 6> canonical_palm() {
  std::array<Vec3, 6> palm;
  palm[0] = Vec3::Zero();
  for (std::size_t f = 0; f < kNumFingers; ++f) {
    const double a = kCanonicalMcpAngleDeg[f] * std::numbers::pi / 180.0;
    palm[1 + f] = kCanonicalMetacarpalMm[f] * Vec3(std::sin(a), std::cos(a), 0.0);
  }
  return palm;
}

// Pose with the canonical palm, zero angles and the canonical finger bones.
// When `finger_bone_mm` is given every finger bone gets that length instead.
inline HandPose rest_pose(std::optional<double> finger_bone_mm = std::nullopt) {
  HandPose pose;
  pose.palm = canonical_palm();
  for (std::size_t f = 0; f < kNumFingers; ++f) {
    pose.bone(Segment::metacarpal, f) = (pose.palm[1 + f] - pose.palm[0]).norm();
    for (std::size_t s = 0; s < 3; ++s)
      pose.bone(static_cast<Segment>(s + 1), f) = finger_bone_mm.value_or(kCanonicalPhalanxMm[f][s]);
  }
  return pose;
}

namespace detail {

inline Mat3 rot_x(double a) {
  Mat3 r;
  const double c = std::cos(a), s = std::sin(a);
  r << 1, 0, 0, 0, c, -s, 0, s, c;
  return r;
}

inline Mat3 rot_y(double a) {
  Mat3 r;
  const double c = std::cos(a), s = std::sin(a);
  r << c, 0, s, 0, 1, 0, -s, 0, c;
  return r;
}

inline Mat3 rot_z(double a) {
  Mat3 r;
  const double c = std::cos(a), s = std::sin(a);
  r << c, -s, 0, s, c, 0, 0, 0, 1;
  return r;
}

inline constexpr double kSingularEps = 1e-12;

// Back-of-hand normal of the palm anchors.
inline Vec3 palm_normal(const std::array<Vec3, 6>& palm) {
  const Vec3& wrist = palm[0];
  const Vec3 up = palm[1 + 2] - wrist;
  if (up.norm() < kSingularEps) throw DecompositionSingular("palm");
  const Vec3 e_y = up.normalized();
  Vec3 n = (palm[1 + 4] - wrist).cross(palm[1 + 1] - wrist);
  n -= n.dot(e_y) * e_y;
  if (n.norm() < kSingularEps) throw DecompositionSingular("palm");
  return n.normalized();
}

// Columns: finger axis (wrist->MCP), back-of-hand direction, lateral.
inline Mat3 finger_frame(const std::array<Vec3, 6>& palm, const Vec3& normal, std::size_t finger) {
  const Vec3 axis_raw = palm[1 + finger] - palm[0];
  if (axis_raw.norm() < kSingularEps) throw DecompositionSingular(kFingerNames[finger]);
  const Vec3 a = axis_raw.normalized();
  Vec3 b = normal - normal.dot(a) * a;
  if (b.norm() < kSingularEps) throw DecompositionSingular("palm");
  b.normalize();
  Mat3 frame;
  frame.col(0) = a;
  frame.col(1) = b;
  frame.col(2) = a.cross(b);
  return frame;
}

inline double wrap_half_turn(double w) {
  if (w > std::numbers::pi / 2) return w - std::numbers::pi;
  if (w < -std::numbers::pi / 2) return w + std::numbers::pi;
  return w;
}

}  // namespace detail

/// Forward kinematics. The wrist and MCPs are copied from the palm anchors;
/// each finger is then built outwards in its local frame. MCP abduction
/// rotates about the back-of-hand axis, flexion about the lateral axis
/// (positive bends towards the palm side), and twist spins the flexion plane
/// about the MCP->PIP segment.
inline Skeleton forward_kinematics(const HandPose& pose) {
  for (std::size_t b = 0; b < kNumBones; ++b) {
    const double len = pose.bone_lengths[b];
    if (!std::isfinite(len) || len <= 0.0)
      throw InvalidPose("bone " + bone_name(b) + " has non-positive length " + std::to_string(len));
  }
  for (std::size_t a = 0; a < kNumAngles; ++a)
    if (!std::isfinite(pose.angles[a])) throw InvalidPose("angle " + angle_name(a) + " is not finite");
  for (const auto& p : pose.palm)
    if (!p.allFinite()) throw InvalidPose("palm anchor is not finite");
  for (std::size_t f = 0; f < kNumFingers; ++f) {
    const double anchored = (pose.palm[1 + f] - pose.palm[0]).norm();
    const double declared = pose.bone(Segment::metacarpal, f);
    if (std::abs(anchored - declared) > 1e-9 * declared)
      throw InvalidPose(std::string("palm anchors disagree with the ") + kFingerNames[f] + " metacarpal length");
  }

  Skeleton s;
  s[kWrist] = pose.palm[0];
  const Vec3 normal = detail::palm_normal(pose.palm);
  for (std::size_t f = 0; f < kNumFingers; ++f) {
    const Mat3 frame = detail::finger_frame(pose.palm, normal, f);
    const Mat3 m1 = detail::rot_y(pose.angle(f, Dof::mcp_abduction)) * detail::rot_z(-pose.angle(f, Dof::mcp_flexion));
    const Mat3 m2 = m1 * detail::rot_x(pose.angle(f, Dof::mcp_twist)) * detail::rot_z(-pose.angle(f, Dof::pip_flexion));
    const Mat3 m3 = m2 * detail::rot_z(-pose.angle(f, Dof::dip_flexion));

    const Vec3 mcp = pose.palm[1 + f];
    const Vec3 pip = mcp + pose.bone(Segment::proximal, f) * (frame * m1.col(0));
    const Vec3 dip = pip + pose.bone(Segment::middle, f) * (frame * m2.col(0));
    const Vec3 tip = dip + pose.bone(Segment::distal, f) * (frame * m3.col(0));
    s[joint_index(f, 0)] = mcp;
    s[joint_index(f, 1)] = pip;
    s[joint_index(f, 2)] = dip;
    s[joint_index(f, 3)] = tip;
  }
  return s;
}

/// Inverse of forward_kinematics for skeletons produced by the model. For
/// arbitrary skeletons the result is the model pose whose segment directions
/// best follow the input within each finger's flexion plane.
///
/// Sign ambiguity between twist and PIP/DIP flexion is resolved by keeping
/// twist in [-pi/2, pi/2]; a straight finger gets twist 0.
inline HandPose decompose(const Skeleton& skeleton) {
  if (!skeleton.all_finite()) throw InvalidPose("skeleton has non-finite coordinates");
  HandPose pose;
  pose.palm[0] = skeleton[kWrist];
  for (std::size_t f = 0; f < kNumFingers; ++f) pose.palm[1 + f] = skeleton[mcp_index(f)];
  for (std::size_t b = 0; b < kNumBones; ++b) pose.bone_lengths[b] = skeleton.bone_length(b);

  for (std::size_t f = 0; f < kNumFingers; ++f)
    for (std::size_t seg = 0; seg < 4; ++seg)
      if (pose.bone(static_cast<Segment>(seg), f) < detail::kSingularEps) throw DecompositionSingular(kFingerNames[f]);

  const Vec3 normal = detail::palm_normal(pose.palm);
  for (std::size_t f = 0; f < kNumFingers; ++f) {
    const Mat3 frame = detail::finger_frame(pose.palm, normal, f);
    const Vec3 v1 = frame.transpose() * (skeleton[joint_index(f, 1)] - skeleton[joint_index(f, 0)]).normalized();
    const Vec3 v2 = frame.transpose() * (skeleton[joint_index(f, 2)] - skeleton[joint_index(f, 1)]).normalized();
    const Vec3 v3 = frame.transpose() * (skeleton[joint_index(f, 3)] - skeleton[joint_index(f, 2)]).normalized();

    const double planar = std::hypot(v1.x(), v1.z());
    const double flex_mcp = std::atan2(-v1.y(), planar);
    const double abduction = planar < detail::kSingularEps ? 0.0 : std::atan2(-v1.z(), v1.x());
    const Mat3 m1 = detail::rot_y(abduction) * detail::rot_z(-flex_mcp);

    // The flexion plane is read off whichever distal segment bends most.
    const Vec3 w = m1.transpose() * v2;
    const Vec3 u = m1.transpose() * v3;
    const double pw = std::hypot(w.y(), w.z());
    const double pu = std::hypot(u.y(), u.z());
    double twist = 0.0;
    if (std::max(pw, pu) > detail::kSingularEps) {
      const Vec3& q = pw >= pu ? w : u;
      twist = detail::wrap_half_turn(std::atan2(-q.z(), -q.y()));
    }
    const Mat3 m1t = m1 * detail::rot_x(twist);
    const Vec3 w_local = m1t.transpose() * v2;
    const double flex_pip = std::atan2(-w_local.y(), w_local.x());
    const Mat3 m2 = m1t * detail::rot_z(-flex_pip);
    const Vec3 t_local = m2.transpose() * v3;
    const double flex_dip = std::atan2(-t_local.y(), t_local.x());

    pose.angle(f, Dof::mcp_twist) = twist;
    pose.angle(f, Dof::mcp_flexion) = flex_mcp;
    pose.angle(f, Dof::mcp_abduction) = abduction;
    pose.angle(f, Dof::pip_flexion) = flex_pip;
    pose.angle(f, Dof::dip_flexion) = flex_dip;
  }
  return pose;
}

/// Checks a skeleton against the hand model. Never throws; every problem is
/// listed in the report.
inline ValidityReport validate(const Skeleton& skeleton, const AngleLimits& limits = {}) {
  ValidityReport report;
  for (std::size_t j = 0; j < kNumJoints; ++j)
    for (std::size_t k = 0; k < 3; ++k)
      if (!std::isfinite(skeleton[j][k])) report.violations.push_back({"non_finite:" + joint_name(j), skeleton[j][k]});
  if (report.violations.empty()) {
    for (std::size_t b = 0; b < kNumBones; ++b) {
      const double len = skeleton.bone_length(b);
      if (!(len > 0.0)) report.violations.push_back({"bone_length:" + bone_name(b), len});
    }
  }
  if (report.violations.empty()) {
    try {
      const HandPose pose = decompose(skeleton);
      for (std::size_t a = 0; a < kNumAngles; ++a) {
        const AngleRange& range = limits.range(static_cast<Dof>(a % 5));
        const double v = pose.angles[a];
        if (v < range.lo - limits.tolerance || v > range.hi + limits.tolerance)
          report.violations.push_back({"angle:" + angle_name(a), v});
      }
    } catch (const DecompositionSingular& e) {
      report.violations.push_back({"singular:" + e.part(), 0.0});
    }
  }
  report.is_valid = report.violations.empty();
  return report;
}

/// Rotation applied by viewpoint augmentation: about x by theta1 (the y-z
/// plane), then about y by theta2 (the x-z plane).
inline Mat3 viewpoint_rotation(double theta1, double theta2) { return detail::rot_y(theta2) * detail::rot_x(theta1); }

inline Mat3 inplane_rotation(double phi) { return detail::rot_z(phi); }

// Rigid rotation of every joint about `center`.
inline Skeleton rotate_about(const Skeleton& s, const Mat3& rotation, const Vec3& center) {
  Skeleton out;
  for (std::size_t j = 0; j < kNumJoints; ++j) out[j] = center + rotation * (s[j] - center);
  return out;
}

}  // namespace handaug
