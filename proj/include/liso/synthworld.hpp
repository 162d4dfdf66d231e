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

// Deterministic synthetic lidar sequences with exact ego-motion, exact scene
// flow and ground-truth boxes. Actors are cuboid shells (no bottom face)
// driving piecewise constant-curvature paths.

#pragma once

#include "liso/core.hpp"
#include "liso/io.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace liso::synth
{

/// Planar pose on the ground: position and yaw.
struct Pose2
{
  double x = 0, y = 0, yaw = 0;
};

/// Constant speed and yaw rate for `duration_s` seconds.
struct MotionSegment
{
  double duration_s = 0;
  double speed = 0;
  double yaw_rate = 0;
};

/// Piecewise constant-curvature path. Time past the last segment keeps the
/// last segment's motion; an empty segment list means standing still.
struct Trajectory
{
  Pose2 start;
  std::vector<MotionSegment> segments;

  Pose2 pose_at(double time_s) const;
  double speed_at(double time_s) const;
};

struct ActorSpec
{
  Vec3d size{4.5, 1.9, 1.6};
  Trajectory trajectory;
  int spawn_frame = 0;
  /// Exclusive; -1 means the actor stays until the end.
  int despawn_frame = -1;
  /// Parked actor: the trajectory's motion is ignored.
  bool movable_but_static = false;

  bool is_static() const;
};

struct WorldSpec
{
  std::uint64_t seed = 0;
  std::vector<ActorSpec> actors;
  Trajectory ego;
  /// Static clutter points per m^2 of ground area, placed 0.3-2.5 m above ground.
  double background_density = 0.01;
  /// Ground-plane returns per m^2 (z = 0, flagged in the ground mask).
  double ground_density = 0.2;
  /// Points per m^2 of actor surface.
  double surface_density = 10.0;
  double noise_sigma = 0.0;
  double sensor_range = 50.0;
  /// Sensor height above the ground plane (z = 0 in the ego frame).
  double sensor_height = 1.8;
  /// Only actor faces turned towards the sensor return points.
  bool self_occlusion = true;
  int frame_count = 50;
  double frame_interval_s = 0.1;
  std::string sequence_id = "synth";
};

void validate(const WorldSpec &spec);

struct SynthSequence
{
  std::string sequence_id;
  double frame_interval_s = 0.1;
  std::vector<PointFrame> frames;
  /// Boxes in each frame's ego coordinates; track_id is the actor index.
  std::vector<io::BoxRecord> gt_boxes;
  /// Exact flow per frame (the frames carry the same vectors).
  std::vector<std::vector<FlowVector>> gt_flow;
  /// Per point: actor index, kClutter or kGround.
  std::vector<std::vector<int>> point_owner;
  /// World pose of the ego frame at every frame, plus one extra for t = frame_count.
  std::vector<RigidTransformd> ego_poses;

  static constexpr int kClutter = -1;
  static constexpr int kGround = -2;
};

SynthSequence generate(const WorldSpec &spec);

/// Writes the sequence directory and `boxes_gt.txt` inside it.
io::SequenceManifest write_synth(const std::filesystem::path &seq_dir, const SynthSequence &seq);

/// Adds i.i.d. N(0, sigma^2) to every component.
std::vector<FlowVector> perturb_flow(const std::vector<FlowVector> &flow, double sigma,
                                     std::uint64_t seed);

/// Box of an actor at time t in world coordinates (center at half height).
Boxd actor_box_world(const ActorSpec &actor, double time_s);

struct RandomWorldOptions
{
  int moving_actors = 3;
  int static_actors = 0;
  int frame_count = 50;
  double frame_interval_s = 0.1;
  double ego_max_speed = 8.0;
  double noise_sigma = 0.0;
};

/// Draws a collision-free world: every actor pair keeps at least 1 m of BEV
/// clearance between bounding circles at every frame.
WorldSpec random_world(std::uint64_t seed, const RandomWorldOptions &options);

/// Declarative text format, one key=value per line:
///   seed, frame_count, frame_interval_s, noise_sigma, background_density,
///   ground_density, surface_density, sensor_range, sensor_height,
///   self_occlusion, sequence_id,
///   ego.start=x,y,yaw   ego.motion=duration:speed:yaw_rate;...
///   actor.<i>.size=l,w,h  actor.<i>.start=x,y,yaw  actor.<i>.motion=...
///   actor.<i>.frames=spawn,despawn  actor.<i>.static=0|1
/// Unknown keys are rejected.
WorldSpec parse_world_spec(const std::string &text);
WorldSpec read_world_spec(const std::filesystem::path &path);
std::string format_world_spec(const WorldSpec &spec);

} // namespace liso::synth
