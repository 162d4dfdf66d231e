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


#include "liso/core.hpp"
#include "test_util.hpp"

#include <doctest.h>

using namespace liso;
using liso::testing::uniform;

namespace
{
constexpr double kPi = std::numbers::pi;

RigidTransformd random_transform(Rng &rng)
{
  const Vec3d axis = Vec3d(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)).normalized();
  const Eigen::Matrix3d r = Eigen::AngleAxisd(uniform(rng, -kPi, kPi), axis).toRotationMatrix();
  return RigidTransformd::from_rotation_translation(r, Vec3d(uniform(rng, -50, 50), uniform(rng, -50, 50),
                                                             uniform(rng, -5, 5)));
}

double shoelace(const std::array<Vec2d, 4> &c)
{
  double a = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto &p = c[i], &q = c[(i + 1) % 4];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return a / 2;
}
} // namespace

TEST_CASE("transform_point basic cases")
{
  CHECK(transform_point(RigidTransformd::identity(), Vec3d(1, 2, 3)) == Vec3d(1, 2, 3));
  const auto shift = RigidTransformd::from_rotation_translation(Eigen::Matrix3d::Identity(), Vec3d(1, 0, 0));
  CHECK(transform_point(shift, Vec3d(0, 0, 0)) == Vec3d(1, 0, 0));
  const auto yaw = RigidTransformd::from_yaw(kPi / 2);
  CHECK((transform_point(yaw, Vec3d(1, 0, 0)) - Vec3d(0, 1, 0)).norm() < 1e-9);
}

TEST_CASE("inverse undoes a transform")
{
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    const auto t = random_transform(rng);
    const Vec3d p(uniform(rng, -100, 100), uniform(rng, -100, 100), uniform(rng, -10, 10));
    CHECK((transform_point(t.inverse(), transform_point(t, p)) - p).norm() < 1e-6);
    CHECK(((t * t.inverse()).matrix() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("from_matrix rejects non-rigid input")
{
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  CHECK_NOTHROW(RigidTransformd::from_matrix(m));
  m(0, 0) = 2;
  CHECK_THROWS_AS(RigidTransformd::from_matrix(m), Error);
  m = Eigen::Matrix4d::Identity();
  m(3, 0) = 0.5;
  CHECK_THROWS_AS(RigidTransformd::from_matrix(m), Error);
  m = Eigen::Matrix4d::Identity();
  m(2, 2) = -1; // reflection
  CHECK_THROWS_AS(RigidTransformd::from_matrix(m), Error);
  m = Eigen::Matrix4d::Identity();
  m(1, 3) = std::numeric_limits<double>::quiet_NaN();
  try {
    RigidTransformd::from_matrix(m);
    FAIL("expected throw");
  } catch (const Error &e) {
    CHECK(e.kind() == ErrorKind::kNonFinite);
  }
}

TEST_CASE("box_corners_bev axis aligned and quarter turn")
{
  Boxd b = make_box(Vec3d(0, 0, 0), Vec3d(2, 1, 1), 0.0);
  auto c = box_corners_bev(b);
  const std::array<Vec2d, 4> want{Vec2d(1, -0.5), Vec2d(1, 0.5), Vec2d(-1, 0.5), Vec2d(-1, -0.5)};
  for (std::size_t i = 0; i < 4; ++i)
    CHECK((c[i] - want[i]).norm() < 1e-12);

  b.heading = kPi / 2;
  c = box_corners_bev(b);
  const std::array<Vec2d, 4> turned{Vec2d(0.5, 1), Vec2d(-0.5, 1), Vec2d(-0.5, -1), Vec2d(0.5, -1)};
  for (std::size_t i = 0; i < 4; ++i)
    CHECK((c[i] - turned[i]).norm() < 1e-12);
}

TEST_CASE("box_corners_bev at 45 degrees matches hand rotation")
{
  const Boxd b = make_box(Vec3d(3, -2, 0), Vec3d(2, 1, 1), kPi / 4);
  const auto c = box_corners_bev(b);
  Eigen::Matrix2d r;
  r << std::cos(kPi / 4), -std::sin(kPi / 4), std::sin(kPi / 4), std::cos(kPi / 4);
  const std::array<Vec2d, 4> base{Vec2d(1, -0.5), Vec2d(1, 0.5), Vec2d(-1, 0.5), Vec2d(-1, -0.5)};
  for (std::size_t i = 0; i < 4; ++i)
    CHECK((c[i] - (r * base[i] + Vec2d(3, -2))).norm() < 1e-12);
}

TEST_CASE("corner polygon is counter-clockwise with area l*w")
{
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const Boxd b = liso::testing::random_box(rng);
    const double a = shoelace(box_corners_bev(b));
    CHECK(a > 0);
    CHECK(std::abs(a - b.size.x() * b.size.y()) < 1e-9);
  }
}

TEST_CASE("normalize_heading")
{
  CHECK(normalize_heading(0.0) == 0.0);
  CHECK(std::abs(normalize_heading(3 * kPi / 2) - (-kPi / 2)) < 1e-12);
  CHECK(normalize_heading(-kPi) == -kPi);
  CHECK(normalize_heading(kPi) == -kPi);
  CHECK_THROWS_AS(normalize_heading(std::numeric_limits<double>::infinity()), Error);
  CHECK_THROWS_AS(normalize_heading(std::numeric_limits<double>::quiet_NaN()), Error);

  Rng rng(3);
  for (int i = 0; i < 10000; ++i) {
    const double t = uniform(rng, -100, 100);
    const double n = normalize_heading(t);
    CHECK(n >= -kPi);
    CHECK(n < kPi);
    CHECK(normalize_heading(n) == n);
    const double k = (t - n) / (2 * kPi);
    CHECK(std::abs(k - std::round(k)) < 1e-9);
  }
}

TEST_CASE("box validity and containment")
{
  CHECK_THROWS_AS(make_box(Vec3d(0, 0, 0), Vec3d(0, 1, 1), 0.0), Error);
  CHECK_THROWS_AS(make_box(Vec3d(0, 0, 0), Vec3d(1, 1, 1), 0.0, 1.5), Error);
  const Boxd b = make_box(Vec3d(1, 1, 1), Vec3d(4, 2, 2), kPi / 2);
  CHECK(b.bev_area() == 8);
  CHECK(box_contains(b, Vec3d(1, 2.9, 1)));
  CHECK_FALSE(box_contains(b, Vec3d(2.9, 1, 1)));
  CHECK(box_contains(b, Vec3d(2.05, 1, 1), 0.1));
  const Vec3d q = to_box_frame(b, Vec3d(1, 3, 1));
  CHECK((q - Vec3d(2, 0, 0)).norm() < 1e-12);
}

TEST_CASE("transform_box moves center and heading")
{
  const Boxd b = make_box(Vec3d(1, 0, 0), Vec3d(4, 2, 1.5), 3.0);
  const auto t = RigidTransformd::from_yaw(1.0, Vec3d(0, 5, 0));
  const Boxd m = transform_box(t, b);
  CHECK((m.center - t.apply(b.center)).norm() < 1e-12);
  CHECK(std::abs(m.heading - normalize_heading(4.0)) < 1e-12);
  CHECK(m.size == b.size);
}

TEST_CASE("PointFrame validation")
{
  PointFrame f;
  f.points.assign(100, Vec3d(1, 2, 3));
  CHECK_NOTHROW(validate(f));
  f.flow = std::vector<FlowVector>(99, Vec3d::Zero());
  try {
    validate(f);
    FAIL("expected throw");
  } catch (const Error &e) {
    CHECK(e.kind() == ErrorKind::kLengthMismatch);
  }
  f.flow->resize(100, Vec3d::Zero());
  (*f.flow)[5].x() = std::numeric_limits<double>::quiet_NaN();
  try {
    validate(f);
    FAIL("expected throw");
  } catch (const Error &e) {
    CHECK(e.kind() == ErrorKind::kNonFinite);
  }
}

TEST_CASE("derive_seed separates streams")
{
  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
  CHECK(derive_seed(1, 2) != derive_seed(1, 3));
  CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
}
