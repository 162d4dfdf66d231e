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
#include "liso/synthworld.hpp"
#include "liso/tracker.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <set>

using namespace liso;
using namespace liso::testing;

namespace
{
constexpr double kPi = std::numbers::pi;

Boxd box_at(double x, double y, double conf = 1.0)
{
  return make_box(Vec3d(x, y, 0.8), Vec3d(4, 2, 1.6), 0.0, conf);
}

/// Independent greedy oracle: repeatedly take the closest free pair.
std::vector<std::pair<std::size_t, std::size_t>> greedy_oracle(const std::vector<Boxd> &p, const std::vector<Boxd> &d,
                                                               double max_dist)
{
  std::vector<bool> pu(p.size()), du(d.size());
  std::vector<std::pair<std::size_t, std::size_t>> out;
  while (true) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
      for (std::size_t j = 0; j < d.size(); ++j) {
        if (pu[i] || du[j])
          continue;
        const double dist = std::sqrt((p[i].center - d[j].center).squaredNorm());
        if (dist < best) // strict, so the lowest (i, j) wins ties
          best = dist, bi = i, bj = j;
      }
    if (!(best <= max_dist))
      break;
    pu[bi] = du[bj] = true;
    out.emplace_back(bi, bj);
  }
  std::sort(out.begin(), out.end());
  return out;
}

synth::WorldSpec line_world(int frames, double ego_speed)
{
  synth::WorldSpec w;
  w.frame_count = frames;
  w.surface_density = 15;
  synth::ActorSpec a;
  a.trajectory.start = {8, 6, 0};
  a.trajectory.segments = {{100.0, 10.0, 0.0}};
  w.actors.push_back(a);
  if (ego_speed > 0)
    w.ego.segments = {{100.0, ego_speed, 0.0}};
  return w;
}

/// Ground-truth boxes per frame, moved into the world frame.
std::vector<std::vector<Boxd>> world_gt(const synth::SynthSequence &s, const track::MotionField &field,
                                        std::vector<std::vector<int>> *ids = nullptr)
{
  std::vector<std::vector<Boxd>> out(s.frames.size());
  if (ids)
    ids->assign(s.frames.size(), {});
  for (const auto &r : s.gt_boxes) {
    out[r.frame_index].push_back(transform_box(field.world_from_ego(r.frame_index), r.box));
    if (ids)
      (*ids)[r.frame_index].push_back(*r.track_id);
  }
  return out;
}

std::vector<int> frames_of(const track::Track &t)
{
  std::vector<int> f;
  for (const auto &e : t.entries)
    f.push_back(e.frame_index);
  return f;
}

track::Track make_track(int first, int last, double conf, int det_base = 0)
{
  track::Track t;
  for (int f = first; f <= last; ++f)
    t.entries.push_back({f, box_at(f, 0, conf), true, track::DetectionId{f, det_base}});
  return t;
}

} // namespace

TEST_CASE("propagate simple cases")
{
  const Boxd b = box_at(3, 4);
  std::vector<Point3> pts{Vec3d(2, 4, 0.5), Vec3d(4, 4.5, 1), Vec3d(3.5, 3.5, 0.2), Vec3d(2.5, 4.2, 1.2)};
  std::vector<FlowVector> zero(pts.size(), Vec3d(0, 0, 0));
  const Boxd same = track::propagate(b, pts, zero, RigidTransformd::identity());
  CHECK((same.center - b.center).norm() < 1e-12);
  CHECK(std::abs(same.heading - b.heading) < 1e-12);

  std::vector<FlowVector> two(pts.size(), Vec3d(2, 0, 0));
  const Boxd moved = track::propagate(b, pts, two, RigidTransformd::identity());
  CHECK((moved.center - (b.center + Vec3d(2, 0, 0))).norm() < 1e-12);
  CHECK(moved.size == b.size);
  CHECK(std::abs(moved.heading) < 1e-12);
}

TEST_CASE("propagate follows a turning synthetic actor")
{
  synth::WorldSpec w;
  w.frame_count = 20;
  synth::ActorSpec a;
  a.trajectory.start = {10, 5, 0.3};
  a.trajectory.segments = {{100.0, 9.0, 0.6}};
  w.actors.push_back(a);
  w.ego.segments = {{100.0, 5.0, -0.2}};
  const auto s = synth::generate(w);
  std::size_t checked = 0;
  for (std::size_t t = 0; t + 1 < s.frames.size(); ++t) {
    const auto &f = s.frames[t];
    const auto res = cluster::residual_flow(f);
    std::vector<Point3> pts;
    std::vector<FlowVector> fl;
    for (std::size_t i = 0; i < f.points.size(); ++i)
      if (s.point_owner[t][i] == 0)
        pts.push_back(f.points[i]), fl.push_back(res[i]);
    const io::BoxRecord *now = nullptr, *next = nullptr;
    for (const auto &r : s.gt_boxes) {
      if (r.frame_index == static_cast<int>(t))
        now = &r;
      if (r.frame_index == static_cast<int>(t) + 1)
        next = &r;
    }
    if (!now || !next || pts.size() < 3)
      continue;
    const Boxd pred = track::propagate(now->box, pts, fl, *f.pose_to_next);
    const Vec3d want = f.pose_to_next->apply(next->box.center);
    CHECK((pred.center - want).norm() < 0.3);
    ++checked;
  }
  CHECK(checked >= 15);
}

TEST_CASE("estimate_rigid_motion recovers yaw and translation")
{
  Rng rng(1);
  for (int k = 0; k < 50; ++k) {
    const auto m = RigidTransformd::from_yaw(uniform(rng, -1, 1), Vec3d(uniform(rng, -3, 3), uniform(rng, -3, 3), 0.1));
    std::vector<Vec3d> src, dst;
    for (int i = 0; i < 10; ++i) {
      src.emplace_back(uniform(rng, -5, 5), uniform(rng, -5, 5), uniform(rng, 0, 2));
      dst.push_back(m.apply(src.back()));
    }
    const auto e = track::estimate_rigid_motion(src, dst);
    CHECK((e.matrix() - m.matrix()).cwiseAbs().maxCoeff() < 1e-9);
  }
  std::vector<Vec3d> one{Vec3d(1, 1, 1)}, shifted{Vec3d(2, 1, 1)};
  CHECK((track::estimate_rigid_motion(one, shifted).translation() - Vec3d(1, 0, 0)).norm() < 1e-12);
}

TEST_CASE("match_greedy gate")
{
  std::vector<Boxd> p{box_at(0, 0)}, d{box_at(1, 0)};
  auto m = track::match_greedy(p, d, 1.5);
  REQUIRE(m.pairs.size() == 1);
  CHECK(m.unmatched_detected.empty());
  d = {box_at(2, 0)};
  m = track::match_greedy(p, d, 1.5);
  CHECK(m.pairs.empty());
  CHECK(m.unmatched_predicted == std::vector<std::size_t>{0});
  CHECK(m.unmatched_detected == std::vector<std::size_t>{0});
  d = {box_at(1.5, 0)};
  CHECK(track::match_greedy(p, d, 1.5).pairs.size() == 1);
}

TEST_CASE("match_greedy crossing configuration")
{
  // p0 is closest to d1, and p1 is then left with d0
  std::vector<Boxd> p{box_at(0, 0), box_at(1, 0)};
  std::vector<Boxd> d{box_at(1.2, 0.5), box_at(0.4, 0.1)};
  auto m = track::match_greedy(p, d, 1.5);
  std::sort(m.pairs.begin(), m.pairs.end());
  CHECK(m.pairs == greedy_oracle(p, d, 1.5));
  CHECK(m.pairs == std::vector<std::pair<std::size_t, std::size_t>>{{0, 1}, {1, 0}});
}

TEST_CASE("match_greedy equals the exhaustive oracle")
{
  Rng rng(2);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<Boxd> p, d;
    for (int i = uniform_int(rng, 0, 6); i > 0; --i)
      p.push_back(box_at(uniform(rng, 0, 4), uniform(rng, 0, 4)));
    for (int i = uniform_int(rng, 0, 6); i > 0; --i)
      d.push_back(box_at(uniform(rng, 0, 4), uniform(rng, 0, 4)));
    // some exact ties
    if (!p.empty() && trial % 5 == 0)
      d.push_back(p.front());
    auto m = track::match_greedy(p, d, 1.5);
    std::sort(m.pairs.begin(), m.pairs.end());
    CHECK(m.pairs == greedy_oracle(p, d, 1.5));
    CHECK(m.pairs.size() + m.unmatched_predicted.size() == p.size());
    CHECK(m.pairs.size() + m.unmatched_detected.size() == d.size());
  }
}

TEST_CASE("tracklet lifecycle")
{
  const auto s = synth::generate(line_world(10, 4.0));
  const track::MotionField field(s.frames, s.frame_interval_s, 1.0);
  auto det = world_gt(s, field);
  track::TrackerParams p;
  for (auto dir : {track::Direction::kForward, track::Direction::kReverse}) {
    SUBCASE("visible throughout")
    {
      const auto tl = track::track_sequence(det, field, p, dir);
      REQUIRE(tl.size() == 1);
      CHECK(tl[0].length() == 10);
      CHECK(tl[0].observed_count() == 10);
    }
    SUBCASE("one dropout is coasted")
    {
      auto d = det;
      d[5].clear();
      const auto tl = track::track_sequence(d, field, p, dir);
      REQUIRE(tl.size() == 1);
      CHECK(frames_of(tl[0]) == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
      CHECK_FALSE(tl[0].entries[5].observed);
      CHECK((tl[0].entries[5].box.center - det[5][0].center).norm() < 0.2);
    }
    SUBCASE("two dropouts split the tracklet")
    {
      auto d = det;
      d[5].clear();
      d[6].clear();
      const auto tl = track::track_sequence(d, field, p, dir);
      REQUIRE(tl.size() == 2);
      CHECK(frames_of(tl[0]) == std::vector<int>{0, 1, 2, 3, 4});
      CHECK(frames_of(tl[1]) == std::vector<int>{7, 8, 9});
    }
  }
}

TEST_CASE("join_forward_reverse")
{
  // forward covers 0-6, reverse 4-10 of the same actor
  const auto fw = make_track(0, 6, 1.0);
  const auto rv = make_track(4, 10, 1.0);
  auto j = track::join_forward_reverse({fw}, {rv});
  REQUIRE(j.size() == 1);
  CHECK(frames_of(j[0]) == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10});

  // disjoint actors
  const auto other = make_track(2, 8, 1.0, 1);
  j = track::join_forward_reverse({fw}, {other});
  CHECK(j.size() == 2);

  // identical sets
  const std::vector<track::Track> set{make_track(0, 5, 1.0, 0), make_track(3, 9, 1.0, 1)};
  j = track::join_forward_reverse(set, set);
  REQUIRE(j.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(frames_of(j[i]) == frames_of(set[i]));
    for (std::size_t k = 0; k < j[i].entries.size(); ++k)
      CHECK(j[i].entries[k].box == set[i].entries[k].box);
  }

  // observed wins over coasted at the same frame
  auto a = make_track(0, 5, 0.8);
  a.entries.push_back({6, box_at(99, 0), false, std::nullopt});
  auto b = make_track(5, 9, 0.8);
  j = track::join_forward_reverse({a}, {b});
  REQUIRE(j.size() == 1);
  CHECK(j[0].entries[6].observed);
  CHECK(j[0].entries[6].box.center.x() == 6);
}

TEST_CASE("coasted entries take the median observed confidence")
{
  auto a = make_track(0, 4, 0.5);
  a.entries[0].box.confidence = 0.9;
  a.entries.insert(a.entries.begin() + 2, {2, box_at(0, 0, 1.0), false, std::nullopt});
  a.entries.erase(a.entries.begin() + 3); // drop the observed frame 2
  const auto j = track::join_forward_reverse({a}, {});
  REQUIRE(j.size() == 1);
  CHECK_FALSE(j[0].entries[2].observed);
  CHECK(j[0].entries[2].box.confidence == 0.5);
}

TEST_CASE("postfilter")
{
  track::TrackerParams p;
  const auto short_track = make_track(0, 2, 1.0);
  CHECK(track::postfilter({short_track}, p, track::FilterMode::kInitial).empty());
  CHECK(track::postfilter({make_track(0, 3, 1.0)}, p, track::FilterMode::kInitial).size() == 1);

  const auto low = make_track(0, 9, 0.25);
  CHECK(track::postfilter({low}, p, track::FilterMode::kRegeneration).empty());
  CHECK(track::postfilter({low}, p, track::FilterMode::kInitial).size() == 1);

  auto mixed = make_track(0, 9, 0.9);
  for (int i = 0; i < 4; ++i)
    mixed.entries[i].box.confidence = 0.2;
  CHECK(track::median({0.2, 0.2, 0.2, 0.2, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9}) == 0.9);
  CHECK(track::postfilter({mixed}, p, track::FilterMode::kRegeneration).size() == 1);
  CHECK(track::median({1.0, 3.0}) == 2.0);
}

TEST_CASE("each detection is used at most once per direction and sizes come from detections")
{
  synth::RandomWorldOptions o;
  o.moving_actors = 4;
  o.static_actors = 1;
  o.frame_count = 20;
  const auto s = synth::generate(synth::random_world(33, o));
  const track::MotionField field(s.frames, s.frame_interval_s, 1.0);
  const auto det = world_gt(s, field);
  std::set<std::tuple<double, double, double>> sizes;
  for (const auto &f : det)
    for (const auto &b : f)
      sizes.emplace(b.size.x(), b.size.y(), b.size.z());
  track::TrackerParams p;
  for (auto dir : {track::Direction::kForward, track::Direction::kReverse}) {
    std::set<track::DetectionId> seen;
    for (const auto &t : track::track_sequence(det, field, p, dir))
      for (const auto &e : t.entries) {
        CHECK(sizes.count({e.box.size.x(), e.box.size.y(), e.box.size.z()}) == 1);
        if (e.source)
          CHECK(seen.insert(*e.source).second);
        if (e.observed)
          CHECK(e.box == det[e.source->frame][e.source->index]);
      }
  }
}

TEST_CASE("reverse tracking equals forward tracking of the time reversed scene")
{
  const int n = 15;
  const double dt = 0.1, v = 8.0;
  synth::WorldSpec a, b;
  a.frame_count = b.frame_count = n;
  for (int k = 0; k < 3; ++k) {
    synth::ActorSpec fwd;
    fwd.trajectory.start = {5.0 + 3 * k, -8.0 + 8 * k, 0};
    fwd.trajectory.segments = {{100.0, v, 0.0}};
    a.actors.push_back(fwd);
    synth::ActorSpec back = fwd;
    back.trajectory.start = {fwd.trajectory.start.x + v * (n - 1) * dt, fwd.trajectory.start.y, -kPi};
    b.actors.push_back(back);
  }
  const auto sa = synth::generate(a), sb = synth::generate(b);
  const track::MotionField fa(sa.frames, dt, 1.0), fb(sb.frames, dt, 1.0);
  track::TrackerParams p;
  const auto rv = track::track_sequence(world_gt(sa, fa), fa, p, track::Direction::kReverse);
  const auto fw = track::track_sequence(world_gt(sb, fb), fb, p, track::Direction::kForward);
  REQUIRE(rv.size() == fw.size());
  auto key = [&](const track::Track &t, bool flip) {
    std::vector<std::tuple<int, long, long>> k;
    for (const auto &e : t.entries)
      k.emplace_back(flip ? n - 1 - e.frame_index : e.frame_index, std::lround(e.box.center.x() * 1e4),
                     std::lround(e.box.center.y() * 1e4));
    std::sort(k.begin(), k.end());
    return k;
  };
  std::set<std::vector<std::tuple<int, long, long>>> ka, kb;
  for (const auto &t : rv)
    ka.insert(key(t, false));
  for (const auto &t : fw)
    kb.insert(key(t, true));
  CHECK(ka == kb);
}

TEST_CASE("no identity switches on clean synthetic sequences")
{
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    synth::RandomWorldOptions o;
    o.moving_actors = 4;
    o.static_actors = 1;
    o.frame_count = 50;
    const auto s = synth::generate(synth::random_world(200 + seed, o));
    const track::MotionField field(s.frames, s.frame_interval_s, 1.0);
    std::vector<std::vector<int>> ids;
    const auto det = world_gt(s, field, &ids);
    track::TrackerParams p;
    for (auto dir : {track::Direction::kForward, track::Direction::kReverse})
      for (const auto &t : track::track_sequence(det, field, p, dir)) {
        std::set<int> actors;
        for (const auto &e : t.entries)
          if (e.source)
            actors.insert(ids[e.source->frame][e.source->index]);
        CHECK_MESSAGE(actors.size() == 1, "seed " << seed);
      }
  }
}

TEST_CASE("run_tracker on ego-frame detections")
{
  const auto s = synth::generate(line_world(12, 6.0));
  std::vector<std::vector<Boxd>> det(s.frames.size());
  for (const auto &r : s.gt_boxes)
    det[r.frame_index].push_back(r.box);
  det[3].clear();
  track::TrackerParams p;
  const auto tracks = track::run_tracker(s.frames, s.frame_interval_s, det, p, track::FilterMode::kInitial);
  REQUIRE(tracks.size() == 1);
  CHECK(tracks[0].length() == 12);
  CHECK_FALSE(tracks[0].entries[3].observed);
  // world frame: the actor moves 1 m per frame regardless of the ego
  const auto poses = track::accumulate_poses(s.frames);
  for (const auto &e : tracks[0].entries)
    if (e.observed)
      CHECK((e.box.center - transform_box(poses[e.frame_index], det[e.frame_index][0]).center).norm() < 1e-9);

  const auto recs = track::tracks_to_records(tracks);
  const auto back = track::records_to_tracks(recs);
  REQUIRE(back.size() == 1);
  CHECK(frames_of(back[0]) == frames_of(tracks[0]));
  CHECK_FALSE(back[0].entries[3].observed);

  CHECK_THROWS_AS(track::run_tracker(s.frames, s.frame_interval_s, {}, p, track::FilterMode::kInitial), Error);
  p.match_max_dist = 0;
  CHECK_THROWS_AS(p.validate(), Error);
}
