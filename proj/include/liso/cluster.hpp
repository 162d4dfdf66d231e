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

// Moving-object proposals from one frame: ego-motion compensated residual
// flow, static-point removal, DBSCAN over position+flow, flow-aligned box
// fitting and geometric sanity filtering.

#pragma once

#include "liso/core.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

namespace liso::cluster
{

struct ClusterParams
{
  /// m/s, compared against |f_dyn| / frame interval
  double static_speed_threshold = 1.0;
  double dbscan_eps = 1.0;
  int dbscan_min_pts = 5;
  double max_aspect = 4.0;
  double min_area = 0.35;
  double min_volume = 0.5;
  /// Weight of the flow components in the 6D feature (meters per m/frame).
  double flow_feature_scale = 1.0;

  void validate() const;
};

/// f_dyn = f - ((T_ego)^-1 - I) p for every point. Needs flow and pose_to_next.
std::vector<FlowVector> residual_flow(const PointFrame &frame);

/// Indices whose residual speed exceeds the threshold. Ground-masked points
/// are dropped first; pass an empty mask when none is available.
std::vector<std::size_t> filter_static(std::span<const Point3> points, std::span<const FlowVector> f_dyn,
                                       std::span<const std::uint8_t> ground_mask, const ClusterParams &params,
                                       double frame_interval_s);

struct DbscanResult
{
  /// Cluster id per input point, -1 for noise.
  std::vector<int> labels;
  /// Member indices per cluster, ascending; clusters in creation order.
  std::vector<std::vector<std::size_t>> clusters;
};

/// Density-based clustering with an inclusive radius; a point is core when at
/// least `min_pts` points (itself included) lie within `eps`. Clusters are
/// seeded in index order and a border point joins the first cluster that
/// reaches it. Neighbor search buckets the first three coordinates on an
/// eps grid, which is exact because those coordinates lower-bound the distance.
template <int Dim>
DbscanResult dbscan(const std::vector<Eigen::Matrix<double, Dim, 1>> &features, double eps, int min_pts);

/// DBSCAN over (x, y, z, s*dx, s*dy, s*dz).
std::vector<std::vector<std::size_t>> cluster_6d(std::span<const Point3> points,
                                                 std::span<const FlowVector> f_dyn,
                                                 const ClusterParams &params);

struct FitResult
{
  Boxd box;
  /// false when the residual flow was zero and the heading came from the
  /// minimum-area rectangle instead
  bool heading_from_flow = true;
};

/// Box extents are the cluster's min/max in the heading-aligned frame; the
/// heading is the direction of the mean BEV residual flow; confidence is 1.
FitResult fit_box(std::span<const Point3> points, std::span<const FlowVector> f_dyn);

/// Heading of the minimum-area BEV rectangle enclosing the points, with l >= w.
double min_area_heading(std::span<const Point3> points);

/// Box enclosing the points with the given heading.
Boxd fit_box_with_heading(std::span<const Point3> points, double heading);

bool is_degenerate(const Boxd &box, const ClusterParams &params);

/// Drops boxes with l/w > max_aspect, l*w < min_area or l*w*h < min_volume; order kept.
std::vector<Boxd> discard_degenerate(const std::vector<Boxd> &boxes, const ClusterParams &params);

/// Ground mask from a RANSAC plane fit: every point within `clearance` of the
/// dominant near-horizontal plane is flagged.
std::vector<std::uint8_t> ransac_ground(std::span<const Point3> points, double clearance = 0.25,
                                        int iterations = 200, std::uint64_t seed = 0);

/// Ground mask from the frame, or the RANSAC fallback when the frame has none.
std::vector<std::uint8_t> ground_mask_or_fallback(const PointFrame &frame);

struct FrameClusters
{
  std::vector<Boxd> boxes;
  std::vector<std::vector<std::size_t>> members;
  std::vector<FlowVector> residual;
};

/// Full proposal stage for one frame: residual flow, static filtering,
/// clustering, fitting and discard rules.
FrameClusters cluster_frame(const PointFrame &frame, const ClusterParams &params, double frame_interval_s);

// ---------------------------------------------------------------------------

template <int Dim>
DbscanResult dbscan(const std::vector<Eigen::Matrix<double, Dim, 1>> &features, double eps, int min_pts)
{
  static_assert(Dim >= 1);
  if (!(eps > 0) || min_pts < 1)
    throw Error(ErrorKind::kInvalidArgument, "dbscan: eps and min_pts must be positive");
  constexpr int kGridDim = Dim < 3 ? Dim : 3;
  const std::size_t n = features.size();
  DbscanResult out;
  out.labels.assign(n, -1);
  if (n == 0)
    return out;

  struct KeyHash
  {
    std::size_t operator()(const std::array<std::int64_t, 3> &k) const
    {
      std::size_t h = 1469598103934665603ull;
      for (auto v : k)
        h = (h ^ static_cast<std::size_t>(v)) * 1099511628211ull;
      return h;
    }
  };
  auto cell_of = [&](const Eigen::Matrix<double, Dim, 1> &f) {
    std::array<std::int64_t, 3> k{0, 0, 0};
    for (int d = 0; d < kGridDim; ++d)
      k[d] = static_cast<std::int64_t>(std::floor(f[d] / eps));
    return k;
  };
  std::unordered_map<std::array<std::int64_t, 3>, std::vector<std::size_t>, KeyHash> grid;
  for (std::size_t i = 0; i < n; ++i)
    grid[cell_of(features[i])].push_back(i);

  const double eps2 = eps * eps;
  std::vector<std::size_t> scratch;
  auto neighbors = [&](std::size_t i, std::vector<std::size_t> &nb) {
    nb.clear();
    const auto k = cell_of(features[i]);
    const int rx = kGridDim > 0 ? 1 : 0, ry = kGridDim > 1 ? 1 : 0, rz = kGridDim > 2 ? 1 : 0;
    for (int dx = -rx; dx <= rx; ++dx)
      for (int dy = -ry; dy <= ry; ++dy)
        for (int dz = -rz; dz <= rz; ++dz) {
          auto it = grid.find({k[0] + dx, k[1] + dy, k[2] + dz});
          if (it == grid.end())
            continue;
          for (std::size_t j : it->second)
            if ((features[j] - features[i]).squaredNorm() <= eps2)
              nb.push_back(j);
        }
  };

  std::vector<char> core(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    neighbors(i, scratch);
    core[i] = static_cast<int>(scratch.size()) >= min_pts;
  }

  std::vector<char> queued(n, 0);
  std::vector<std::size_t> queue;
  for (std::size_t seed = 0; seed < n; ++seed) {
    if (!core[seed] || out.labels[seed] != -1)
      continue;
    const int id = static_cast<int>(out.clusters.size());
    out.clusters.emplace_back();
    queue.assign(1, seed);
    queued[seed] = 1;
    out.labels[seed] = id;
    for (std::size_t qi = 0; qi < queue.size(); ++qi) {
      neighbors(queue[qi], scratch);
      for (std::size_t j : scratch) {
        if (out.labels[j] == -1)
          out.labels[j] = id;
        if (core[j] && !queued[j] && out.labels[j] == id) {
          queued[j] = 1;
          queue.push_back(j);
        }
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    if (out.labels[i] >= 0)
      out.clusters[out.labels[i]].push_back(i);
  return out;
}

} // namespace liso::cluster
