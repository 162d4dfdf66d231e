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

#include "liso/cluster.hpp"

#include "liso/random.hpp"

#include <algorithm>
#include <limits>

namespace liso::cluster
{
namespace
{

// Fitted extents never collapse below this, keeping boxes valid for
// single-plane clusters.
constexpr double kMinExtent = 0.01;

double cross(const Vec2d &o, const Vec2d &a, const Vec2d &b)
{
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

std::vector<Vec2d> convex_hull(std::vector<Vec2d> pts)
{
  std::sort(pts.begin(), pts.end(), [](const Vec2d &a, const Vec2d &b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3)
    return pts;
  std::vector<Vec2d> hull(2 * pts.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0)
      --k;
    hull[k++] = pts[i];
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i > 0; --i) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i - 1]) <= 0)
      --k;
    hull[k++] = pts[i - 1];
  }
  hull.resize(k - 1);
  return hull;
}

} // namespace

void ClusterParams::validate() const
{
  if (!(static_speed_threshold > 0) || !(dbscan_eps > 0) || dbscan_min_pts < 1 || !(max_aspect > 0) ||
      !(min_area > 0) || !(min_volume > 0) || !(flow_feature_scale > 0))
    throw Error(ErrorKind::kInvalidArgument, "cluster parameters must all be positive");
}

std::vector<FlowVector> residual_flow(const PointFrame &frame)
{
  if (!frame.flow)
    throw Error(ErrorKind::kMissingChannel, "residual_flow: frame " + std::to_string(frame.timestamp_index) +
                                                " has no flow");
  if (!frame.pose_to_next)
    throw Error(ErrorKind::kMissingChannel, "residual_flow: frame " + std::to_string(frame.timestamp_index) +
                                                " has no ego pose");
  validate(frame);
  const RigidTransformd inv = frame.pose_to_next->inverse();
  std::vector<FlowVector> out(frame.points.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Point3 &p = frame.points[i];
    const FlowVector f_sta = inv.apply(p) - p;
    out[i] = (*frame.flow)[i] - f_sta;
  }
  return out;
}

std::vector<std::size_t> filter_static(std::span<const Point3> points, std::span<const FlowVector> f_dyn,
                                       std::span<const std::uint8_t> ground_mask, const ClusterParams &params,
                                       double frame_interval_s)
{
  if (points.size() != f_dyn.size() || (!ground_mask.empty() && ground_mask.size() != points.size()))
    throw Error(ErrorKind::kLengthMismatch, "filter_static: channel lengths differ");
  if (!(frame_interval_s > 0))
    throw Error(ErrorKind::kInvalidArgument, "filter_static: frame interval must be positive");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!ground_mask.empty() && ground_mask[i])
      continue;
    if (f_dyn[i].norm() / frame_interval_s > params.static_speed_threshold)
      keep.push_back(i);
  }
  return keep;
}

std::vector<std::vector<std::size_t>> cluster_6d(std::span<const Point3> points, std::span<const FlowVector> f_dyn,
                                                 const ClusterParams &params)
{
  if (points.size() != f_dyn.size())
    throw Error(ErrorKind::kLengthMismatch, "cluster_6d: points and flow differ in length");
  std::vector<Eigen::Matrix<double, 6, 1>> features(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    features[i].head<3>() = points[i];
    features[i].tail<3>() = params.flow_feature_scale * f_dyn[i];
  }
  return dbscan<6>(features, params.dbscan_eps, params.dbscan_min_pts).clusters;
}

Boxd fit_box_with_heading(std::span<const Point3> points, double heading)
{
  if (points.empty())
    throw Error(ErrorKind::kInvalidArgument, "fit_box: empty cluster");
  const double c = std::cos(heading), s = std::sin(heading);
  constexpr double inf = std::numeric_limits<double>::infinity();
  Vec3d lo(inf, inf, inf), hi(-inf, -inf, -inf);
  for (const auto &p : points) {
    const Vec3d q(c * p.x() + s * p.y(), -s * p.x() + c * p.y(), p.z());
    lo = lo.cwiseMin(q);
    hi = hi.cwiseMax(q);
  }
  const Vec3d mid = (lo + hi) / 2;
  Boxd b;
  b.center = Vec3d(c * mid.x() - s * mid.y(), s * mid.x() + c * mid.y(), mid.z());
  b.size = (hi - lo).cwiseMax(Vec3d::Constant(kMinExtent));
  b.heading = normalize_heading(heading);
  b.confidence = 1.0;
  return b;
}

double min_area_heading(std::span<const Point3> points)
{
  std::vector<Vec2d> bev;
  bev.reserve(points.size());
  for (const auto &p : points)
    bev.emplace_back(p.x(), p.y());
  const auto hull = convex_hull(std::move(bev));
  if (hull.size() < 2)
    return 0.0;
  double best_area = std::numeric_limits<double>::infinity();
  double best_heading = 0.0;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const Vec2d e = hull[(i + 1) % hull.size()] - hull[i];
    if (e.norm() < 1e-12)
      continue;
    const double a = std::atan2(e.y(), e.x());
    const double c = std::cos(a), s = std::sin(a);
    double u0 = std::numeric_limits<double>::infinity(), u1 = -u0, v0 = u0, v1 = -u0;
    for (const auto &p : hull) {
      const double u = c * p.x() + s * p.y(), v = -s * p.x() + c * p.y();
      u0 = std::min(u0, u), u1 = std::max(u1, u), v0 = std::min(v0, v), v1 = std::max(v1, v);
    }
    const double area = (u1 - u0) * (v1 - v0);
    if (area < best_area - 1e-12) {
      best_area = area;
      best_heading = (u1 - u0) >= (v1 - v0) ? a : a + std::numbers::pi / 2;
    }
  }
  // the long axis is only defined up to a half turn; fold into (-pi/2, pi/2]
  double h = normalize_heading(best_heading);
  if (h <= -std::numbers::pi / 2)
    h += std::numbers::pi;
  else if (h > std::numbers::pi / 2)
    h -= std::numbers::pi;
  return h;
}

FitResult fit_box(std::span<const Point3> points, std::span<const FlowVector> f_dyn)
{
  if (points.empty() || points.size() != f_dyn.size())
    throw Error(ErrorKind::kInvalidArgument, "fit_box: cluster must be non-empty and aligned with its flow");
  Vec2d mean = Vec2d::Zero();
  for (const auto &f : f_dyn)
    mean += f.head<2>();
  mean /= static_cast<double>(f_dyn.size());
  FitResult out;
  if (mean.norm() > 1e-9) {
    out.box = fit_box_with_heading(points, std::atan2(mean.y(), mean.x()));
  } else {
    out.box = fit_box_with_heading(points, min_area_heading(points));
    out.heading_from_flow = false;
  }
  return out;
}

bool is_degenerate(const Boxd &b, const ClusterParams &params)
{
  const double l = b.size.x(), w = b.size.y(), h = b.size.z();
  return l / w > params.max_aspect || l * w < params.min_area || l * w * h < params.min_volume;
}

std::vector<Boxd> discard_degenerate(const std::vector<Boxd> &boxes, const ClusterParams &params)
{
  std::vector<Boxd> out;
  for (const auto &b : boxes)
    if (!is_degenerate(b, params))
      out.push_back(b);
  return out;
}

std::vector<std::uint8_t> ransac_ground(std::span<const Point3> points, double clearance, int iterations,
                                        std::uint64_t seed)
{
  std::vector<std::uint8_t> mask(points.size(), 0);
  if (points.size() < 3)
    return mask;
  Rng rng(derive_seed(seed, 0x6Du));
  std::uniform_int_distribution<std::size_t> pick(0, points.size() - 1);
  constexpr double kInlier = 0.15;
  Vec3d best_n = Vec3d::UnitZ();
  double best_d = 0;
  std::size_t best_count = 0;
  for (int it = 0; it < iterations; ++it) {
    const Vec3d &a = points[pick(rng)], &b = points[pick(rng)], &c = points[pick(rng)];
    Vec3d n = (b - a).cross(c - a);
    if (n.norm() < 1e-9)
      continue;
    n.normalize();
    if (n.z() < 0)
      n = -n;
    if (n.z() < 0.9)
      continue;
    const double d = -n.dot(a);
    std::size_t count = 0;
    for (const auto &p : points)
      count += std::abs(n.dot(p) + d) < kInlier;
    if (count > best_count) {
      best_count = count;
      best_n = n;
      best_d = d;
    }
  }
  if (best_count == 0) {
    // no plausible plane: treat the lowest points as the ground reference
    double zmin = std::numeric_limits<double>::infinity();
    for (const auto &p : points)
      zmin = std::min(zmin, p.z());
    best_d = -zmin;
  }
  for (std::size_t i = 0; i < points.size(); ++i)
    mask[i] = best_n.dot(points[i]) + best_d <= clearance;
  return mask;
}

std::vector<std::uint8_t> ground_mask_or_fallback(const PointFrame &frame)
{
  if (frame.ground_mask)
    return *frame.ground_mask;
  return ransac_ground(frame.points, 0.25, 200, static_cast<std::uint64_t>(frame.timestamp_index));
}

FrameClusters cluster_frame(const PointFrame &frame, const ClusterParams &params, double frame_interval_s)
{
  params.validate();
  FrameClusters out;
  out.residual = residual_flow(frame);
  const auto ground = ground_mask_or_fallback(frame);
  const auto dynamic = filter_static(frame.points, out.residual, ground, params, frame_interval_s);

  std::vector<Point3> pts;
  std::vector<FlowVector> flw;
  pts.reserve(dynamic.size());
  flw.reserve(dynamic.size());
  for (auto i : dynamic) {
    pts.push_back(frame.points[i]);
    flw.push_back(out.residual[i]);
  }
  for (const auto &cl : cluster_6d(pts, flw, params)) {
    std::vector<Point3> cp;
    std::vector<FlowVector> cf;
    std::vector<std::size_t> members;
    for (auto j : cl) {
      cp.push_back(pts[j]);
      cf.push_back(flw[j]);
      members.push_back(dynamic[j]);
    }
    const auto fit = fit_box(cp, cf);
    if (is_degenerate(fit.box, params))
      continue;
    out.boxes.push_back(fit.box);
    out.members.push_back(std::move(members));
  }
  return out;
}

} // namespace liso::cluster
