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

// Flow-based greedy tracker. All boxes live in a world-fixed frame (the ego
// frame of frame 0, reached by chaining pose_to_next). Boxes are pushed
// forward (or backward) in time with a rigid motion estimated from the
// residual flow of the points inside them, matched greedily by center
// distance, and tracklets from both directions are joined into tracks.

#pragma once

#include "liso/core.hpp"
#include "liso/io.hpp"

#include <compare>
#include <optional>
#include <span>
#include <vector>

namespace liso::track
{

struct TrackerParams
{
  double match_max_dist = 1.5;
  int coast_steps = 1;
  int min_track_len = 4;
  double min_median_conf = 0.3;
  /// Inflation of a box when collecting the points whose flow moves it.
  double lookup_margin = 0.1;
  /// Points faster than this (m/s) are preferred when estimating box motion.
  double dynamic_speed_threshold = 1.0;

  void validate() const;
};

struct DetectionId
{
  int frame = 0;
  int index = 0;
  auto operator<=>(const DetectionId &) const = default;
};

struct TrackEntry
{
  int frame_index = 0;
  Boxd box;
  /// false for coasted steps
  bool observed = true;
  std::optional<DetectionId> source;
};

struct Track
{
  int track_id = 0;
  std::vector<TrackEntry> entries;

  std::size_t length() const { return entries.size(); }
  std::size_t observed_count() const;
};

enum class Direction
{
  kForward,
  kReverse
};

enum class FilterMode
{
  /// clustering proposals, all confidences are 1
  kInitial,
  /// detector proposals carrying their own confidences
  kRegeneration
};

/// Least-squares yaw + translation taking `src` onto `dst` (2D Kabsch on the
/// ground plane, mean offset in z). Falls back to a pure translation when
/// fewer than three points or no BEV spread is available.
RigidTransformd estimate_rigid_motion(std::span<const Vec3d> src, std::span<const Vec3d> dst);

/// Predict a box one frame ahead, in the ego frame at t (the world-fixed
/// frame of this single step). `member_points` carry residual flow
/// `member_flow`; the flow is rotated by the ego motion so that the
/// displacement is expressed in ego(t) coordinates.
Boxd propagate(const Boxd &box, std::span<const Point3> member_points, std::span<const FlowVector> member_flow,
               const RigidTransformd &pose_to_next);

/// World-frame points and their per-frame residual displacement for a sequence.
class MotionField
{
public:
  MotionField(const std::vector<PointFrame> &frames, double frame_interval_s, double dynamic_speed_threshold);

  int frame_count() const { return static_cast<int>(world_from_ego_.size()); }
  const RigidTransformd &world_from_ego(int t) const { return world_from_ego_.at(t); }

  /// Rigid motion of the content of `world_box` from t to t+1.
  std::optional<RigidTransformd> forward_motion(int t, const Boxd &world_box, double margin) const;
  /// Rigid motion of the content of `world_box` from t to t-1, found through
  /// the points at t-1 whose flow lands inside the box.
  std::optional<RigidTransformd> backward_motion(int t, const Boxd &world_box, double margin) const;

private:
  struct FramePoints
  {
    std::vector<Vec3d> position;
    std::vector<Vec3d> displacement;
    std::vector<char> dynamic;
    bool has_flow = false;
  };
  std::optional<RigidTransformd> motion_from(const std::vector<Vec3d> &src, const std::vector<Vec3d> &dst,
                                             const std::vector<char> &dynamic) const;

  std::vector<RigidTransformd> world_from_ego_;
  std::vector<FramePoints> frames_;
};

/// Chain pose_to_next from frame 0. The last frame's pose is not needed.
std::vector<RigidTransformd> accumulate_poses(const std::vector<PointFrame> &frames);

struct MatchResult
{
  std::vector<std::pair<std::size_t, std::size_t>> pairs; // (predicted, detected)
  std::vector<std::size_t> unmatched_predicted;
  std::vector<std::size_t> unmatched_detected;
};

/// Global greedy assignment: candidate pairs in ascending center distance,
/// ties by (predicted, detected) index; a pair is taken when both sides are
/// free and the distance is at most `max_dist`.
MatchResult match_greedy(std::span<const Boxd> predicted, std::span<const Boxd> detected, double max_dist);

/// One tracking pass over world-frame detections. Tracklets are returned in
/// increasing frame order for either direction.
std::vector<Track> track_sequence(const std::vector<std::vector<Boxd>> &detections, const MotionField &field,
                                  const TrackerParams &params, Direction direction);

/// Merge tracklets that share a source detection. Observed entries win over
/// coasted ones at the same frame; coasted entries take the median observed
/// confidence of their track.
std::vector<Track> join_forward_reverse(const std::vector<Track> &forward, const std::vector<Track> &reverse);

/// Drop tracks shorter than min_track_len frames or whose median observed
/// confidence is below min_median_conf.
std::vector<Track> postfilter(const std::vector<Track> &tracks, const TrackerParams &params, FilterMode mode);

double median(std::vector<double> values);

/// Full pass: ego-frame detections per frame in, world-frame tracks out
/// (forward + reverse, joined, post-filtered).
std::vector<Track> run_tracker(const std::vector<PointFrame> &frames, double frame_interval_s,
                               const std::vector<std::vector<Boxd>> &detections, const TrackerParams &params,
                               FilterMode mode);

std::vector<io::BoxRecord> tracks_to_records(const std::vector<Track> &tracks, bool is_pseudo = true);
std::vector<Track> records_to_tracks(const std::vector<io::BoxRecord> &records);

} // namespace liso::track
