// Copyright 2026 The liso Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace liso
{

template <typename Scalar> using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar> using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar> using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar> using Mat4 = Eigen::Matrix<Scalar, 4, 4>;

using Vec2d = Vec2<double>;
using Vec3d = Vec3<double>;
using Point3 = Vec3d;
using FlowVector = Vec3d;

enum class ErrorKind
{
  kInvalidArgument,
  kMissingFile,
  kLengthMismatch,
  kNonFinite,
  kMalformed,
  kMissingChannel,
  kDetector,
  kRuntime,
};

const char *to_string(ErrorKind kind);

/// Every failure in the library surfaces as this exception; `kind()` lets
/// callers (and the CLI exit-code mapping) tell validation from runtime errors.
class Error : public std::runtime_error
{
public:
  Error(ErrorKind kind, const std::string &what)
      : std::runtime_error(what), kind_(kind)
  {
  }
  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

/// Maps an angle into [-pi, pi).
template <typename Scalar> Scalar normalize_heading(Scalar theta)
{
  if (!std::isfinite(theta))
    throw Error(ErrorKind::kNonFinite, "normalize_heading: non-finite angle");
  constexpr Scalar kPi = std::numbers::pi_v<Scalar>;
  constexpr Scalar kTwoPi = 2 * kPi;
  Scalar r = theta - kTwoPi * std::floor((theta + kPi) / kTwoPi);
  // floor() can land one ulp outside the half-open range
  if (r >= kPi)
    r -= kTwoPi;
  if (r < -kPi)
    r += kTwoPi;
  return r;
}

/// Homogeneous 4x4 rigid transform. The rotation block is kept orthonormal and
/// the last row is exactly (0, 0, 0, 1); construction from a raw matrix checks both.
template <typename Scalar> class RigidTransform
{
public:
  using MatrixType = Mat4<Scalar>;

  RigidTransform() : m_(MatrixType::Identity()) {}

  static RigidTransform identity() { return RigidTransform(); }

  static RigidTransform from_matrix(const MatrixType &m, Scalar tol = Scalar(1e-6))
  {
    if (!m.allFinite())
      throw Error(ErrorKind::kNonFinite, "RigidTransform: non-finite entry");
    if (m(3, 0) != 0 || m(3, 1) != 0 || m(3, 2) != 0 || m(3, 3) != 1)
      throw Error(ErrorKind::kInvalidArgument, "RigidTransform: last row must be (0,0,0,1)");
    const Mat3<Scalar> r = m.template topLeftCorner<3, 3>();
    if (((r.transpose() * r) - Mat3<Scalar>::Identity()).cwiseAbs().maxCoeff() > tol)
      throw Error(ErrorKind::kInvalidArgument, "RigidTransform: rotation block not orthonormal");
    if (r.determinant() < 0)
      throw Error(ErrorKind::kInvalidArgument, "RigidTransform: reflection, not a rotation");
    RigidTransform out;
    out.m_ = m;
    return out;
  }

  static RigidTransform from_rotation_translation(const Mat3<Scalar> &r, const Vec3<Scalar> &t)
  {
    RigidTransform out;
    out.m_.template topLeftCorner<3, 3>() = r;
    out.m_.template topRightCorner<3, 1>() = t;
    return out;
  }

  /// Rotation about +z by `yaw`, then translation.
  static RigidTransform from_yaw(Scalar yaw, const Vec3<Scalar> &t = Vec3<Scalar>::Zero())
  {
    return from_rotation_translation(
        Eigen::AngleAxis<Scalar>(yaw, Vec3<Scalar>::UnitZ()).toRotationMatrix(), t);
  }

  const MatrixType &matrix() const { return m_; }
  Mat3<Scalar> rotation() const { return m_.template topLeftCorner<3, 3>(); }
  Vec3<Scalar> translation() const { return m_.template topRightCorner<3, 1>(); }

  /// Heading of the rotated x axis projected onto the ground plane.
  Scalar yaw() const { return std::atan2(m_(1, 0), m_(0, 0)); }

  RigidTransform inverse() const
  {
    const Mat3<Scalar> rt = rotation().transpose();
    return from_rotation_translation(rt, -rt * translation());
  }

  RigidTransform operator*(const RigidTransform &rhs) const
  {
    return from_rotation_translation(rotation() * rhs.rotation(),
                                     rotation() * rhs.translation() + translation());
  }

  Vec3<Scalar> apply(const Vec3<Scalar> &p) const { return rotation() * p + translation(); }

  template <typename Other> RigidTransform<Other> cast() const
  {
    return RigidTransform<Other>::from_rotation_translation(rotation().template cast<Other>(),
                                                            translation().template cast<Other>());
  }

private:
  MatrixType m_;
};

using RigidTransformd = RigidTransform<double>;

template <typename Scalar>
Vec3<Scalar> transform_point(const RigidTransform<Scalar> &transform, const Vec3<Scalar> &p)
{
  return transform.apply(p);
}

/// Oriented 3D box. `size` is (l, w, h) with l measured along `heading`;
/// `center` is the geometric center (not the bottom face).
template <typename Scalar> struct Box
{
  Vec3<Scalar> center = Vec3<Scalar>::Zero();
  Vec3<Scalar> size = Vec3<Scalar>::Ones();
  Scalar heading = 0;
  Scalar confidence = 1;

  Scalar length() const { return size.x(); }
  Scalar width() const { return size.y(); }
  Scalar height() const { return size.z(); }
  Scalar bev_area() const { return size.x() * size.y(); }
  Scalar volume() const { return size.prod(); }

  bool is_valid() const
  {
    return center.allFinite() && size.allFinite() && (size.array() > 0).all() &&
           std::isfinite(heading) && heading >= -std::numbers::pi_v<Scalar> &&
           heading < std::numbers::pi_v<Scalar> && confidence >= 0 && confidence <= 1;
  }

  bool operator==(const Box &) const = default;
};

using Boxd = Box<double>;

template <typename Scalar>
Box<Scalar> make_box(const Vec3<Scalar> &center, const Vec3<Scalar> &size, Scalar heading,
                     Scalar confidence = 1)
{
  Box<Scalar> b{center, size, normalize_heading(heading), confidence};
  if (!b.is_valid())
    throw Error(ErrorKind::kInvalidArgument, "make_box: invalid box");
  return b;
}

template <typename Scalar> void validate(const Box<Scalar> &b)
{
  if (!b.is_valid())
    throw Error(ErrorKind::kInvalidArgument, "invalid box");
}

/// BEV footprint corners in counter-clockwise order, starting at the
/// front-right corner (+l/2, -w/2) in the box frame.
template <typename Scalar> std::array<Vec2<Scalar>, 4> box_corners_bev(const Box<Scalar> &b)
{
  const Scalar c = std::cos(b.heading), s = std::sin(b.heading);
  const Scalar hl = b.size.x() / 2, hw = b.size.y() / 2;
  const std::array<Vec2<Scalar>, 4> local{Vec2<Scalar>(hl, -hw), Vec2<Scalar>(hl, hw),
                                          Vec2<Scalar>(-hl, hw), Vec2<Scalar>(-hl, -hw)};
  std::array<Vec2<Scalar>, 4> out;
  for (std::size_t i = 0; i < 4; ++i)
    out[i] = Vec2<Scalar>(b.center.x() + c * local[i].x() - s * local[i].y(),
                          b.center.y() + s * local[i].x() + c * local[i].y());
  return out;
}

/// Express a point in the box frame (origin at center, x along heading).
template <typename Scalar>
Vec3<Scalar> to_box_frame(const Box<Scalar> &b, const Vec3<Scalar> &p)
{
  const Scalar c = std::cos(b.heading), s = std::sin(b.heading);
  const Vec3<Scalar> d = p - b.center;
  return Vec3<Scalar>(c * d.x() + s * d.y(), -s * d.x() + c * d.y(), d.z());
}

template <typename Scalar>
bool box_contains(const Box<Scalar> &b, const Vec3<Scalar> &p, Scalar margin = 0)
{
  const Vec3<Scalar> q = to_box_frame(b, p);
  return std::abs(q.x()) <= b.size.x() / 2 + margin && std::abs(q.y()) <= b.size.y() / 2 + margin &&
         std::abs(q.z()) <= b.size.z() / 2 + margin;
}

/// Rigidly move a box; only the yaw part of the rotation is applied to the heading.
template <typename Scalar>
Box<Scalar> transform_box(const RigidTransform<Scalar> &t, const Box<Scalar> &b)
{
  Box<Scalar> out = b;
  out.center = t.apply(b.center);
  out.heading = normalize_heading(b.heading + t.yaw());
  return out;
}

/// One timestamped sweep. Optional channels are either absent or exactly
/// as long as `points`.
struct PointFrame
{
  int timestamp_index = 0;
  std::vector<Point3> points;
  std::optional<std::vector<FlowVector>> flow;
  std::optional<std::vector<std::uint8_t>> ground_mask;
  /// Pose of the ego frame at t+1 expressed in the ego frame at t.
  std::optional<RigidTransformd> pose_to_next;

  bool is_ground(std::size_t i) const { return ground_mask && (*ground_mask)[i] != 0; }
};

/// Throws on channel length mismatch or non-finite values.
void validate(const PointFrame &frame);

} // namespace liso
