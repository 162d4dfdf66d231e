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

#include "liso/tracker.hpp"

#include "liso/cluster.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <tuple>

namespace liso::track
{

void TrackerParams::validate() const
{
  if (!(match_max_dist > 0) || coast_steps < 0 || min_track_len < 1 || min_median_conf < 0 ||
      lookup_margin < 0 || !(dynamic_speed_threshold > 0))
    throw Error(ErrorKind::kInvalidArgument, "tracker parameters out of range");
}

std::size_t Track::observed_count() const
{
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [](const TrackEntry &e) { return e.observed; }));
}

double median(std::vector<double> values)
{
  if (values.empty())
    return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

RigidTransformd estimate_rigid_motion(std::span<const Vec3d> src, std::span<const Vec3d> dst)
{
  if (src.size() != dst.size() || src.empty())
    throw Error(ErrorKind::kInvalidArgument, "estimate_rigid_motion: need matching non-empty point sets");
  const double n = static_cast<double>(src.size());
  Vec3d cs = Vec3d::Zero(), cd = Vec3d::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    cs += src[i];
    cd += dst[i];
  }
  cs /= n;
  cd /= n;
  double sxx = 0, sxy = 0, spread = 0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Vec2d a = (src[i] - cs).head<2>(), b = (dst[i] - cd).head<2>();
    sxx += a.dot(b);
    sxy += a.x() * b.y() - a.y() * b.x();
    spread += a.squaredNorm();
  }
  double yaw = 0;
  if (src.size() >= 3 && spread / n > 1e-6)
    yaw = std::atan2(sxy, sxx);
  const RigidTransformd rot = RigidTransformd::from_yaw(yaw);
  return RigidTransformd::from_yaw(yaw, cd - rot.apply(cs));
}

Boxd propagate(const Boxd &box, std::span<const Point3> member_points, std::span<const FlowVector> member_flow,
               const RigidTransformd &pose_to_next)
{
  if (member_points.size() != member_flow.size())
    throw Error(ErrorKind::kLengthMismatch, "propagate: points and flow differ in length");
  if (member_points.empty())
    return box;
  const Mat3<double> r = pose_to_next.rotation();
  std::vector<Vec3d> dst(member_points.size());
  for (std::size_t i = 0; i < dst.size(); ++i)
    dst[i] = member_points[i] + r * member_flow[i];
  return transform_box(estimate_rigid_motion(member_points, dst), box);
}

std::vector<RigidTransformd> accumulate_poses(const std::vector<PointFrame> &frames)
{
  std::vector<RigidTransformd> out;
  out.reserve(frames.size());
  RigidTransformd w = RigidTransformd::identity();
  for (std::size_t t = 0; t < frames.size(); ++t) {
    out.push_back(w);
    if (t + 1 < frames.size()) {
      if (!frames[t].pose_to_next)
        throw Error(ErrorKind::kMissingChannel, "frame " + std::to_string(t) + " has no ego pose");
      w = w * *frames[t].pose_to_next;
    }
  }
  return out;
}

MotionField::MotionField(const std::vector<PointFrame> &frames, double frame_interval_s,
                         double dynamic_speed_threshold)
    : world_from_ego_(accumulate_poses(frames))
{
  frames_.resize(frames.size());
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto &f = frames[t];
    auto &fp = frames_[t];
    const auto ground = cluster::ground_mask_or_fallback(f);
    const RigidTransformd &w = world_from_ego_[t];
    fp.has_flow = f.flow && f.pose_to_next;
    std::vector<FlowVector> resid;
    Mat3<double> r_next = Mat3<double>::Identity();
    if (fp.has_flow) {
      resid = cluster::residual_flow(f);
      r_next = (w * *f.pose_to_next).rotation();
    }
    for (std::size_t i = 0; i < f.points.size(); ++i) {
      if (ground[i])
        continue;
      fp.position.push_back(w.apply(f.points[i]));
      if (fp.has_flow) {
        fp.displacement.push_back(r_next * resid[i]);
        fp.dynamic.push_back(resid[i].norm() / frame_interval_s > dynamic_speed_threshold);
      }
    }
  }
}

std::optional<RigidTransformd> MotionField::motion_from(const std::vector<Vec3d> &src,
                                                        const std::vector<Vec3d> &dst,
                                                        const std::vector<char> &dynamic) const
{
  if (src.empty())
    return std::nullopt;
  // moving points define the object's motion; static points caught by the
  // inflated box would otherwise drag it towards zero
  std::vector<Vec3d> s, d;
  for (std::size_t i = 0; i < src.size(); ++i)
    if (dynamic[i]) {
      s.push_back(src[i]);
      d.push_back(dst[i]);
    }
  if (s.empty())
    return estimate_rigid_motion(src, dst);
  return estimate_rigid_motion(s, d);
}

std::optional<RigidTransformd> MotionField::forward_motion(int t, const Boxd &world_box, double margin) const
{
  if (t < 0 || t >= frame_count() || !frames_[t].has_flow)
    return std::nullopt;
  const auto &fp = frames_[t];
  std::vector<Vec3d> src, dst;
  std::vector<char> dyn;
  for (std::size_t i = 0; i < fp.position.size(); ++i)
    if (box_contains(world_box, fp.position[i], margin)) {
      src.push_back(fp.position[i]);
      dst.push_back(fp.position[i] + fp.displacement[i]);
      dyn.push_back(fp.dynamic[i]);
    }
  return motion_from(src, dst, dyn);
}

std::optional<RigidTransformd> MotionField::backward_motion(int t, const Boxd &world_box, double margin) const
{
  if (t <= 0 || t >= frame_count() || !frames_[t - 1].has_flow)
    return std::nullopt;
  const auto &fp = frames_[t - 1];
  std::vector<Vec3d> src, dst;
  std::vector<char> dyn;
  for (std::size_t i = 0; i < fp.position.size(); ++i) {
    const Vec3d landed = fp.position[i] + fp.displacement[i];
    if (box_contains(world_box, landed, margin)) {
      src.push_back(landed);
      dst.push_back(fp.position[i]);
      dyn.push_back(fp.dynamic[i]);
    }
  }
  return motion_from(src, dst, dyn);
}

MatchResult match_greedy(std::span<const Boxd> predicted, std::span<const Boxd> detected, double max_dist)
{
  std::vector<std::tuple<double, std::size_t, std::size_t>> cand;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    for (std::size_t j = 0; j < detected.size(); ++j) {
      const double d = (predicted[i].center - detected[j].center).norm();
      if (d <= max_dist)
        cand.emplace_back(d, i, j);
    }
  std::sort(cand.begin(), cand.end());
  MatchResult out;
  std::vector<char> pu(predicted.size(), 0), du(detected.size(), 0);
  for (const auto &[d, i, j] : cand) {
    if (pu[i] || du[j])
      continue;
    pu[i] = du[j] = 1;
    out.pairs.emplace_back(i, j);
  }
  for (std::size_t i = 0; i < predicted.size(); ++i)
    if (!pu[i])
      out.unmatched_predicted.push_back(i);
  for (std::size_t j = 0; j < detected.size(); ++j)
    if (!du[j])
      out.unmatched_detected.push_back(j);
  return out;
}

namespace
{

struct Tracklet
{
  std::vector<TrackEntry> entries;
  RigidTransformd last_motion;
  bool has_observed_motion = false;
  int misses = 0;
};

Track finish(Tracklet &&tl, Direction direction)
{
  while (!tl.entries.empty() && !tl.entries.back().observed)
    tl.entries.pop_back();
  Track t;
  t.entries = std::move(tl.entries);
  if (direction == Direction::kReverse)
    std::reverse(t.entries.begin(), t.entries.end());
  return t;
}

} // namespace

std::vector<Track> track_sequence(const std::vector<std::vector<Boxd>> &detections, const MotionField &field,
                                  const TrackerParams &params, Direction direction)
{
  params.validate();
  const int n = static_cast<int>(detections.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (direction == Direction::kReverse)
    std::reverse(order.begin(), order.end());

  std::vector<Tracklet> active;
  std::vector<Track> done;
  auto spawn = [&](int t, std::size_t j) {
    Tracklet tl;
    tl.entries.push_back({t, detections[t][j], true, DetectionId{t, static_cast<int>(j)}});
    active.push_back(std::move(tl));
  };

  for (int k = 0; k < n; ++k) {
    const int t = order[k];
    const auto &dets = detections[t];
    if (k == 0) {
      for (std::size_t j = 0; j < dets.size(); ++j)
        spawn(t, j);
      continue;
    }
    const int prev = order[k - 1];
    std::vector<Boxd> predicted;
    std::vector<RigidTransformd> step_motion;
    for (auto &tl : active) {
      const TrackEntry &last = tl.entries.back();
      std::optional<RigidTransformd> m;
      if (last.observed)
        m = direction == Direction::kForward ? field.forward_motion(prev, last.box, params.lookup_margin)
                                             : field.backward_motion(prev, last.box, params.lookup_margin);
      if (!m)
        m = tl.last_motion;
      if (!tl.has_observed_motion && last.observed)
        tl.last_motion = *m;
      step_motion.push_back(*m);
      predicted.push_back(transform_box(*m, last.box));
    }

    const auto match = match_greedy(predicted, dets, params.match_max_dist);
    std::vector<Tracklet> next;
    next.reserve(active.size() + dets.size());
    std::vector<char> alive(active.size(), 0);
    for (const auto &[i, j] : match.pairs) {
      auto &tl = active[i];
      const Boxd &last_obs = std::find_if(tl.entries.rbegin(), tl.entries.rend(), [](const TrackEntry &e) {
                               return e.observed;
                             })->box;
      const int gap = std::abs(t - std::find_if(tl.entries.rbegin(), tl.entries.rend(), [](const TrackEntry &e) {
                                     return e.observed;
                                   })->frame_index);
      Vec3d step = (dets[j].center - last_obs.center) / std::max(gap, 1);
      tl.last_motion = RigidTransformd::from_yaw(0.0, step);
      tl.has_observed_motion = true;
      tl.misses = 0;
      tl.entries.push_back({t, dets[j], true, DetectionId{t, static_cast<int>(j)}});
      alive[i] = 1;
    }
    for (std::size_t i : match.unmatched_predicted) {
      auto &tl = active[i];
      if (++tl.misses > params.coast_steps)
        continue;
      Boxd coasted = transform_box(tl.last_motion, tl.entries.back().box);
      tl.entries.push_back({t, coasted, false, std::nullopt});
      alive[i] = 1;
    }
    for (std::size_t i = 0; i < active.size(); ++i) {
      if (alive[i])
        next.push_back(std::move(active[i]));
      else
        done.push_back(finish(std::move(active[i]), direction));
    }
    active = std::move(next);
    for (std::size_t j : match.unmatched_detected) {
      bool far = true;
      for (const auto &p : predicted)
        if ((p.center - dets[j].center).norm() <= params.match_max_dist)
          far = false;
      if (far)
        spawn(t, j);
    }
  }
  for (auto &tl : active)
    done.push_back(finish(std::move(tl), direction));

  std::erase_if(done, [](const Track &t) { return t.entries.empty(); });
  std::sort(done.begin(), done.end(), [](const Track &a, const Track &b) {
    return std::tie(a.entries.front().frame_index, a.entries.front().source) <
           std::tie(b.entries.front().frame_index, b.entries.front().source);
  });
  for (std::size_t i = 0; i < done.size(); ++i)
    done[i].track_id = static_cast<int>(i);
  return done;
}

std::vector<Track> join_forward_reverse(const std::vector<Track> &forward, const std::vector<Track> &reverse)
{
  std::vector<const Track *> all;
  for (const auto &t : forward)
    all.push_back(&t);
  for (const auto &t : reverse)
    all.push_back(&t);

  std::vector<std::size_t> parent(all.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x)
      x = parent[x] = parent[parent[x]];
    return x;
  };
  std::map<DetectionId, std::size_t> owner;
  for (std::size_t i = 0; i < all.size(); ++i)
    for (const auto &e : all[i]->entries) {
      if (!e.source)
        continue;
      auto [it, inserted] = owner.emplace(*e.source, i);
      if (!inserted) {
        const auto a = find(it->second), b = find(i);
        if (a != b)
          parent[std::max(a, b)] = std::min(a, b);
      }
    }

  std::map<std::size_t, std::map<int, TrackEntry>> merged;
  for (std::size_t i = 0; i < all.size(); ++i) {
    auto &slot = merged[find(i)];
    for (const auto &e : all[i]->entries) {
      auto it = slot.find(e.frame_index);
      if (it == slot.end())
        slot.emplace(e.frame_index, e);
      else if (!it->second.observed && e.observed)
        it->second = e;
    }
  }

  std::vector<Track> out;
  for (auto &[root, entries] : merged) {
    Track t;
    for (auto &[frame, e] : entries)
      t.entries.push_back(e);
    std::vector<double> conf;
    for (const auto &e : t.entries)
      if (e.observed)
        conf.push_back(e.box.confidence);
    const double med = median(conf);
    for (auto &e : t.entries)
      if (!e.observed)
        e.box.confidence = med;
    out.push_back(std::move(t));
  }
  std::sort(out.begin(), out.end(), [](const Track &a, const Track &b) {
    return std::tie(a.entries.front().frame_index, a.entries.front().source) <
           std::tie(b.entries.front().frame_index, b.entries.front().source);
  });
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i].track_id = static_cast<int>(i);
  return out;
}

std::vector<Track> postfilter(const std::vector<Track> &tracks, const TrackerParams &params, FilterMode mode)
{
  std::vector<Track> out;
  for (const auto &t : tracks) {
    if (t.entries.empty())
      continue;
    const int span = t.entries.back().frame_index - t.entries.front().frame_index + 1;
    if (span < params.min_track_len)
      continue;
    if (mode == FilterMode::kRegeneration) {
      std::vector<double> conf;
      for (const auto &e : t.entries)
        if (e.observed)
          conf.push_back(e.box.confidence);
      if (median(conf) < params.min_median_conf)
        continue;
    }
    out.push_back(t);
  }
  return out;
}

std::vector<Track> run_tracker(const std::vector<PointFrame> &frames, double frame_interval_s,
                               const std::vector<std::vector<Boxd>> &detections, const TrackerParams &params,
                               FilterMode mode)
{
  params.validate();
  if (detections.size() != frames.size())
    throw Error(ErrorKind::kInvalidArgument, "run_tracker: one detection list per frame required");
  const MotionField field(frames, frame_interval_s, params.dynamic_speed_threshold);
  std::vector<std::vector<Boxd>> world(detections.size());
  for (std::size_t t = 0; t < detections.size(); ++t)
    for (const auto &b : detections[t])
      world[t].push_back(transform_box(field.world_from_ego(static_cast<int>(t)), b));
  const auto fw = track_sequence(world, field, params, Direction::kForward);
  const auto rv = track_sequence(world, field, params, Direction::kReverse);
  return postfilter(join_forward_reverse(fw, rv), params, mode);
}

std::vector<io::BoxRecord> tracks_to_records(const std::vector<Track> &tracks, bool is_pseudo)
{
  std::vector<io::BoxRecord> out;
  for (const auto &t : tracks)
    for (const auto &e : t.entries) {
      io::BoxRecord r;
      r.frame_index = e.frame_index;
      r.track_id = t.track_id;
      r.box = e.box;
      r.is_pseudo = is_pseudo;
      r.observed = e.observed;
      out.push_back(r);
    }
  io::sort_records(out);
  return out;
}

std::vector<Track> records_to_tracks(const std::vector<io::BoxRecord> &records)
{
  std::map<int, Track> by_id;
  for (const auto &r : records) {
    if (!r.track_id)
      throw Error(ErrorKind::kMalformed, "track file record without track id at frame " +
                                             std::to_string(r.frame_index));
    auto &t = by_id[*r.track_id];
    t.track_id = *r.track_id;
    t.entries.push_back({r.frame_index, r.box, r.observed, std::nullopt});
  }
  std::vector<Track> out;
  for (auto &[id, t] : by_id) {
    std::stable_sort(t.entries.begin(), t.entries.end(),
                     [](const TrackEntry &a, const TrackEntry &b) { return a.frame_index < b.frame_index; });
    out.push_back(std::move(t));
  }
  return out;
}

} // namespace liso::track
