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

#include "liso/synthworld.hpp"

#include "liso/random.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

namespace liso::synth
{
namespace
{

constexpr double kPi = std::numbers::pi;

Pose2 advance(const Pose2 &p, const MotionSegment &seg, double tau)
{
  Pose2 out = p;
  if (std::abs(seg.yaw_rate) < 1e-12) {
    out.x += seg.speed * tau * std::cos(p.yaw);
    out.y += seg.speed * tau * std::sin(p.yaw);
  } else {
    const double r = seg.speed / seg.yaw_rate;
    const double yaw1 = p.yaw + seg.yaw_rate * tau;
    out.x += r * (std::sin(yaw1) - std::sin(p.yaw));
    out.y += r * (std::cos(p.yaw) - std::cos(yaw1));
    out.yaw = yaw1;
  }
  return out;
}

RigidTransformd ego_transform(const Pose2 &p) { return RigidTransformd::from_yaw(p.yaw, Vec3d(p.x, p.y, 0)); }

RigidTransformd actor_transform(const ActorSpec &a, double time_s)
{
  const Boxd b = actor_box_world(a, time_s);
  return RigidTransformd::from_yaw(b.heading, b.center);
}

struct Face
{
  Vec3d origin, u, v; // origin + s*u + r*v, s,r in [0,1]
  Vec3d normal;        // outward
};

/// Five faces of an l x w x h cuboid centered at the origin, bottom omitted.
std::vector<Face> shell_faces(const Vec3d &size)
{
  const double l = size.x(), w = size.y(), h = size.z();
  const Vec3d c000(-l / 2, -w / 2, -h / 2);
  return {
      {Vec3d(-l / 2, -w / 2, h / 2), Vec3d(l, 0, 0), Vec3d(0, w, 0), Vec3d(0, 0, 1)},  // top
      {Vec3d(l / 2, -w / 2, -h / 2), Vec3d(0, w, 0), Vec3d(0, 0, h), Vec3d(1, 0, 0)},  // front
      {c000, Vec3d(0, w, 0), Vec3d(0, 0, h), Vec3d(-1, 0, 0)},                         // back
      {c000, Vec3d(l, 0, 0), Vec3d(0, 0, h), Vec3d(0, -1, 0)},                         // right
      {Vec3d(-l / 2, w / 2, -h / 2), Vec3d(l, 0, 0), Vec3d(0, 0, h), Vec3d(0, 1, 0)},  // left
  };
}

bool in_range(const Vec3d &p, double range) { return p.head<2>().norm() <= range; }

std::vector<double> parse_list(const std::string &s, char sep, const std::string &key)
{
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    auto next = s.find(sep, pos);
    if (next == std::string::npos)
      next = s.size();
    const std::string tok = s.substr(pos, next - pos);
    double v{};
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (tok.empty() || res.ec != std::errc() || res.ptr != tok.data() + tok.size())
      throw Error(ErrorKind::kMalformed, "world spec: bad number '" + tok + "' in " + key);
    out.push_back(v);
    pos = next + 1;
  }
  return out;
}

Pose2 parse_pose(const std::string &s, const std::string &key)
{
  const auto v = parse_list(s, ',', key);
  if (v.size() != 3)
    throw Error(ErrorKind::kMalformed, "world spec: " + key + " needs x,y,yaw");
  return {v[0], v[1], v[2]};
}

std::vector<MotionSegment> parse_motion(const std::string &s, const std::string &key)
{
  std::vector<MotionSegment> out;
  if (s.empty())
    return out;
  std::stringstream ss(s);
  std::string seg;
  while (std::getline(ss, seg, ';')) {
    const auto v = parse_list(seg, ':', key);
    if (v.size() != 3)
      throw Error(ErrorKind::kMalformed, "world spec: " + key + " segments are duration:speed:yaw_rate");
    out.push_back({v[0], v[1], v[2]});
  }
  return out;
}

std::string fmt(double v)
{
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string format_motion(const std::vector<MotionSegment> &segs)
{
  std::string out;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    if (i)
      out += ';';
    out += fmt(segs[i].duration_s) + ":" + fmt(segs[i].speed) + ":" + fmt(segs[i].yaw_rate);
  }
  return out;
}

} // namespace

Pose2 Trajectory::pose_at(double time_s) const
{
  Pose2 p = start;
  double remaining = std::max(0.0, time_s);
  for (std::size_t i = 0; i < segments.size() && remaining > 0; ++i) {
    const bool last = i + 1 == segments.size();
    const double tau = last ? remaining : std::min(remaining, segments[i].duration_s);
    p = advance(p, segments[i], tau);
    remaining -= tau;
  }
  p.yaw = normalize_heading(p.yaw);
  return p;
}

double Trajectory::speed_at(double time_s) const
{
  double elapsed = 0;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    elapsed += segments[i].duration_s;
    if (time_s < elapsed || i + 1 == segments.size())
      return segments[i].speed;
  }
  return 0.0;
}

bool ActorSpec::is_static() const
{
  if (movable_but_static)
    return true;
  return std::all_of(trajectory.segments.begin(), trajectory.segments.end(),
                     [](const MotionSegment &s) { return s.speed == 0; });
}

Boxd actor_box_world(const ActorSpec &actor, double time_s)
{
  const Pose2 p = actor.movable_but_static ? actor.trajectory.start : actor.trajectory.pose_at(time_s);
  return Boxd{Vec3d(p.x, p.y, actor.size.z() / 2), actor.size, normalize_heading(p.yaw), 1.0};
}

void validate(const WorldSpec &spec)
{
  if (spec.frame_count <= 0)
    throw Error(ErrorKind::kInvalidArgument, "world spec: frame_count must be positive");
  if (!(spec.frame_interval_s > 0))
    throw Error(ErrorKind::kInvalidArgument, "world spec: frame_interval_s must be positive");
  if (spec.actors.empty() && spec.background_density <= 0 && spec.ground_density <= 0)
    throw Error(ErrorKind::kInvalidArgument, "world spec: empty world");
  if (spec.noise_sigma < 0 || spec.background_density < 0 || spec.ground_density < 0 ||
      spec.surface_density < 0 || !(spec.sensor_range > 0))
    throw Error(ErrorKind::kInvalidArgument, "world spec: densities, noise and range must be non-negative");
  for (const auto &a : spec.actors) {
    if (!(a.size.array() > 0).all() || !a.size.allFinite())
      throw Error(ErrorKind::kInvalidArgument, "world spec: actor size must be positive");
    for (const auto &s : a.trajectory.segments)
      if (s.speed < 0 || s.duration_s < 0)
        throw Error(ErrorKind::kInvalidArgument, "world spec: speeds and durations must be non-negative");
  }
  for (const auto &s : spec.ego.segments)
    if (s.speed < 0 || s.duration_s < 0)
      throw Error(ErrorKind::kInvalidArgument, "world spec: ego speeds must be non-negative");
}

SynthSequence generate(const WorldSpec &spec)
{
  validate(spec);
  const double dt = spec.frame_interval_s;
  const int n = spec.frame_count;

  SynthSequence out;
  out.sequence_id = spec.sequence_id;
  out.frame_interval_s = dt;
  for (int t = 0; t <= n; ++t)
    out.ego_poses.push_back(ego_transform(spec.ego.pose_at(t * dt)));

  // Static clutter lives in world coordinates over the ego path's bounding region.
  std::vector<Vec3d> clutter;
  {
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto &pose : out.ego_poses) {
      const Vec3d t = pose.translation();
      xmin = std::min(xmin, t.x()), xmax = std::max(xmax, t.x());
      ymin = std::min(ymin, t.y()), ymax = std::max(ymax, t.y());
    }
    xmin -= spec.sensor_range, xmax += spec.sensor_range;
    ymin -= spec.sensor_range, ymax += spec.sensor_range;
    Rng rng(derive_seed(spec.seed, 0xC1u));
    const auto count = static_cast<std::size_t>(std::llround(spec.background_density * (xmax - xmin) * (ymax - ymin)));
    std::uniform_real_distribution<double> ux(xmin, xmax), uy(ymin, ymax), uz(0.3, 2.5);
    clutter.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      const double x = ux(rng), y = uy(rng), z = uz(rng);
      clutter.emplace_back(x, y, z);
    }
  }

  for (int t = 0; t < n; ++t) {
    Rng rng(derive_seed(spec.seed, 0xF0u, static_cast<std::uint64_t>(t)));
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const RigidTransformd ego_inv = out.ego_poses[t].inverse();
    const RigidTransformd ego_next_inv = out.ego_poses[t + 1].inverse();

    PointFrame frame;
    frame.timestamp_index = t;
    frame.pose_to_next = ego_inv * out.ego_poses[t + 1];
    std::vector<FlowVector> flow;
    std::vector<std::uint8_t> ground;
    std::vector<int> owner;

    auto emit = [&](const Vec3d &clean, const Vec3d &next_clean, int who) {
      Vec3d p = clean;
      if (spec.noise_sigma > 0)
        p += spec.noise_sigma * Vec3d(noise(rng), noise(rng), noise(rng));
      frame.points.push_back(p);
      flow.push_back(next_clean - clean);
      ground.push_back(who == SynthSequence::kGround ? 1 : 0);
      owner.push_back(who);
    };

    // ground returns, uniform over the sensor disk
    {
      const auto count =
          static_cast<std::size_t>(std::llround(spec.ground_density * kPi * spec.sensor_range * spec.sensor_range));
      for (std::size_t i = 0; i < count; ++i) {
        const double r = spec.sensor_range * std::sqrt(unit(rng));
        const double a = 2 * kPi * unit(rng);
        const Vec3d local(r * std::cos(a), r * std::sin(a), 0.0);
        const Vec3d world = out.ego_poses[t].apply(local);
        emit(local, ego_next_inv.apply(world), SynthSequence::kGround);
      }
    }

    for (const auto &w : clutter) {
      const Vec3d local = ego_inv.apply(w);
      if (in_range(local, spec.sensor_range))
        emit(local, ego_next_inv.apply(w), SynthSequence::kClutter);
    }

    for (std::size_t ai = 0; ai < spec.actors.size(); ++ai) {
      const auto &actor = spec.actors[ai];
      const int despawn = actor.despawn_frame < 0 ? n : actor.despawn_frame;
      if (t < actor.spawn_frame || t >= despawn)
        continue;
      const RigidTransformd pose_now = actor_transform(actor, t * dt);
      const RigidTransformd pose_next = actor_transform(actor, (t + 1) * dt);
      const std::size_t before = frame.points.size();
      const Vec3d sensor = pose_now.inverse().apply(out.ego_poses[t].apply(Vec3d(0, 0, spec.sensor_height)));
      for (const auto &face : shell_faces(actor.size)) {
        const Vec3d face_center = face.origin + 0.5 * (face.u + face.v);
        if (spec.self_occlusion && face.normal.dot(sensor - face_center) <= 0)
          continue;
        const double area = face.u.norm() * face.v.norm();
        const auto count = static_cast<std::size_t>(std::llround(spec.surface_density * area));
        for (std::size_t i = 0; i < count; ++i) {
          const Vec3d u = face.origin + unit(rng) * face.u + unit(rng) * face.v;
          const Vec3d now = ego_inv.apply(pose_now.apply(u));
          if (!in_range(now, spec.sensor_range))
            continue;
          emit(now, ego_next_inv.apply(pose_next.apply(u)), static_cast<int>(ai));
        }
      }
      if (frame.points.size() - before >= 5) {
        io::BoxRecord rec;
        rec.frame_index = t;
        rec.track_id = static_cast<int>(ai);
        rec.box = transform_box(ego_inv, actor_box_world(actor, t * dt));
        rec.box.confidence = 1.0;
        rec.speed = actor.is_static() ? 0.0 : actor.trajectory.speed_at(t * dt);
        out.gt_boxes.push_back(rec);
      }
    }

    frame.flow = flow;
    frame.ground_mask = std::move(ground);
    out.gt_flow.push_back(std::move(flow));
    out.point_owner.push_back(std::move(owner));
    out.frames.push_back(std::move(frame));
  }
  io::sort_records(out.gt_boxes);
  return out;
}

io::SequenceManifest write_synth(const std::filesystem::path &seq_dir, const SynthSequence &seq)
{
  auto m = io::write_sequence(seq_dir, seq.sequence_id, seq.frame_interval_s, seq.frames);
  io::write_boxes(seq.gt_boxes, seq_dir / "boxes_gt.txt");
  return m;
}

std::vector<FlowVector> perturb_flow(const std::vector<FlowVector> &flow, double sigma, std::uint64_t seed)
{
  if (sigma < 0)
    throw Error(ErrorKind::kInvalidArgument, "perturb_flow: sigma must be non-negative");
  std::vector<FlowVector> out = flow;
  if (sigma == 0)
    return out;
  Rng rng(derive_seed(seed, 0xA3u));
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto &f : out)
    for (int k = 0; k < 3; ++k)
      f[k] += noise(rng);
  return out;
}

namespace
{

double bounding_radius(const Vec3d &size) { return 0.5 * std::hypot(size.x(), size.y()); }

bool keeps_clear(const WorldSpec &spec, const ActorSpec &cand, double max_range)
{
  const double dt = spec.frame_interval_s;
  for (int t = 0; t <= spec.frame_count; ++t) {
    const Vec3d c = actor_box_world(cand, t * dt).center;
    const Pose2 ego = spec.ego.pose_at(t * dt);
    const double to_ego = std::hypot(c.x() - ego.x, c.y() - ego.y);
    if (to_ego > max_range || to_ego < bounding_radius(cand.size) + 2.0)
      return false;
    for (const auto &other : spec.actors) {
      const Vec3d o = actor_box_world(other, t * dt).center;
      if (std::hypot(c.x() - o.x(), c.y() - o.y()) <
          bounding_radius(cand.size) + bounding_radius(other.size) + 1.0)
        return false;
    }
  }
  return true;
}

} // namespace

WorldSpec random_world(std::uint64_t seed, const RandomWorldOptions &options)
{
  WorldSpec spec;
  spec.seed = seed;
  spec.frame_count = options.frame_count;
  spec.frame_interval_s = options.frame_interval_s;
  spec.noise_sigma = options.noise_sigma;
  spec.sequence_id = "synth_" + std::to_string(seed);

  Rng rng(derive_seed(seed, 0x57u));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  const double duration = options.frame_count * options.frame_interval_s;
  spec.ego.start = Pose2{0, 0, 0};
  spec.ego.segments = {{duration, uniform(0.0, options.ego_max_speed), uniform(-0.05, 0.05)}};

  auto draw_size = [&]() -> Vec3d {
    if (unit(rng) < 0.8)
      return {uniform(3.8, 5.0), uniform(1.7, 2.1), uniform(1.4, 1.8)};
    return {uniform(5.5, 7.5), uniform(2.2, 2.6), uniform(2.2, 3.0)};
  };

  const double max_range = spec.sensor_range - 10.0;
  const Pose2 ego_mid = spec.ego.pose_at(duration / 2);
  const int total = options.moving_actors + options.static_actors;
  for (int i = 0; i < total; ++i) {
    const bool moving = i < options.moving_actors;
    for (int attempt = 0; attempt < 500; ++attempt) {
      ActorSpec a;
      a.size = draw_size();
      a.trajectory.start = Pose2{ego_mid.x + uniform(-30, 30), ego_mid.y + uniform(-30, 30), uniform(-kPi, kPi)};
      if (moving) {
        const double speed = uniform(3.0, 10.0);
        const double split = uniform(0.3, 0.7) * duration;
        a.trajectory.segments = {{split, speed, uniform(-0.2, 0.2)},
                                 {duration - split, speed, uniform(-0.2, 0.2)}};
        // shift the start back so the actor is near the middle of the scene mid-sequence
        const Pose2 mid = a.trajectory.pose_at(duration / 2);
        a.trajectory.start.x -= mid.x - a.trajectory.start.x;
        a.trajectory.start.y -= mid.y - a.trajectory.start.y;
      } else {
        a.movable_but_static = true;
      }
      if (keeps_clear(spec, a, max_range)) {
        spec.actors.push_back(a);
        break;
      }
    }
  }
  return spec;
}

WorldSpec parse_world_spec(const std::string &text)
{
  WorldSpec spec;
  std::map<int, ActorSpec> actors;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' '))
      line.pop_back();
    if (line.empty() || line[0] == '#')
      continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorKind::kMalformed, "world spec line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    auto number = [&]() {
      const auto v = parse_list(value, ',', key);
      if (v.size() != 1)
        throw Error(ErrorKind::kMalformed, "world spec: " + key + " takes one number");
      return v[0];
    };
    if (key == "seed")
      spec.seed = static_cast<std::uint64_t>(number());
    else if (key == "frame_count")
      spec.frame_count = static_cast<int>(number());
    else if (key == "frame_interval_s")
      spec.frame_interval_s = number();
    else if (key == "noise_sigma")
      spec.noise_sigma = number();
    else if (key == "background_density")
      spec.background_density = number();
    else if (key == "ground_density")
      spec.ground_density = number();
    else if (key == "surface_density")
      spec.surface_density = number();
    else if (key == "sensor_range")
      spec.sensor_range = number();
    else if (key == "sensor_height")
      spec.sensor_height = number();
    else if (key == "self_occlusion")
      spec.self_occlusion = number() != 0;
    else if (key == "sequence_id")
      spec.sequence_id = value;
    else if (key == "ego.start")
      spec.ego.start = parse_pose(value, key);
    else if (key == "ego.motion")
      spec.ego.segments = parse_motion(value, key);
    else if (key.rfind("actor.", 0) == 0) {
      const auto dot = key.find('.', 6);
      if (dot == std::string::npos)
        throw Error(ErrorKind::kMalformed, "world spec: bad actor key " + key);
      int idx = 0;
      const std::string idx_str = key.substr(6, dot - 6);
      auto res = std::from_chars(idx_str.data(), idx_str.data() + idx_str.size(), idx);
      if (res.ec != std::errc() || res.ptr != idx_str.data() + idx_str.size() || idx < 0)
        throw Error(ErrorKind::kMalformed, "world spec: bad actor index in " + key);
      const std::string field = key.substr(dot + 1);
      ActorSpec &a = actors[idx];
      if (field == "size") {
        const auto v = parse_list(value, ',', key);
        if (v.size() != 3)
          throw Error(ErrorKind::kMalformed, "world spec: " + key + " needs l,w,h");
        a.size = Vec3d(v[0], v[1], v[2]);
      } else if (field == "start")
        a.trajectory.start = parse_pose(value, key);
      else if (field == "motion")
        a.trajectory.segments = parse_motion(value, key);
      else if (field == "frames") {
        const auto v = parse_list(value, ',', key);
        if (v.size() != 2)
          throw Error(ErrorKind::kMalformed, "world spec: " + key + " needs spawn,despawn");
        a.spawn_frame = static_cast<int>(v[0]);
        a.despawn_frame = static_cast<int>(v[1]);
      } else if (field == "static")
        a.movable_but_static = value == "1";
      else
        throw Error(ErrorKind::kMalformed, "world spec: unknown key " + key);
    } else
      throw Error(ErrorKind::kMalformed, "world spec: unknown key " + key);
  }
  int expected = 0;
  for (auto &[idx, a] : actors) {
    if (idx != expected++)
      throw Error(ErrorKind::kMalformed, "world spec: actor indices must be 0..n-1");
    spec.actors.push_back(a);
  }
  validate(spec);
  return spec;
}

WorldSpec read_world_spec(const std::filesystem::path &path)
{
  std::ifstream in(path);
  if (!in)
    throw Error(ErrorKind::kMissingFile, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_world_spec(ss.str());
}

std::string format_world_spec(const WorldSpec &spec)
{
  std::ostringstream out;
  out << "seed=" << spec.seed << "\n"
      << "sequence_id=" << spec.sequence_id << "\n"
      << "frame_count=" << spec.frame_count << "\n"
      << "frame_interval_s=" << fmt(spec.frame_interval_s) << "\n"
      << "noise_sigma=" << fmt(spec.noise_sigma) << "\n"
      << "background_density=" << fmt(spec.background_density) << "\n"
      << "ground_density=" << fmt(spec.ground_density) << "\n"
      << "surface_density=" << fmt(spec.surface_density) << "\n"
      << "sensor_range=" << fmt(spec.sensor_range) << "\n"
      << "sensor_height=" << fmt(spec.sensor_height) << "\n"
      << "self_occlusion=" << (spec.self_occlusion ? 1 : 0) << "\n"
      << "ego.start=" << fmt(spec.ego.start.x) << "," << fmt(spec.ego.start.y) << "," << fmt(spec.ego.start.yaw) << "\n";
  if (!spec.ego.segments.empty())
    out << "ego.motion=" << format_motion(spec.ego.segments) << "\n";
  for (std::size_t i = 0; i < spec.actors.size(); ++i) {
    const auto &a = spec.actors[i];
    const std::string p = "actor." + std::to_string(i) + ".";
    out << p << "size=" << fmt(a.size.x()) << "," << fmt(a.size.y()) << "," << fmt(a.size.z()) << "\n"
        << p << "start=" << fmt(a.trajectory.start.x) << "," << fmt(a.trajectory.start.y) << ","
        << fmt(a.trajectory.start.yaw) << "\n"
        << p << "frames=" << a.spawn_frame << "," << a.despawn_frame << "\n"
        << p << "static=" << (a.movable_but_static ? 1 : 0) << "\n";
    if (!a.trajectory.segments.empty())
      out << p << "motion=" << format_motion(a.trajectory.segments) << "\n";
  }
  return out.str();
}

} // namespace liso::synth
