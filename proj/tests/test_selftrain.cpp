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
#include "liso/eval.hpp"
#include "liso/selftrain.hpp"
#include "liso/synthworld.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cstdlib>

using namespace liso;
using namespace liso::testing;
using namespace liso::selftrain;

namespace
{
constexpr double kPi = std::numbers::pi;

Sequence in_memory(const synth::SynthSequence &s)
{
  Sequence q;
  q.sequence_id = s.sequence_id;
  q.frame_interval_s = s.frame_interval_s;
  q.frames = s.frames;
  return q;
}

/// Ground-truth tracks of a synthetic sequence in the world frame.
std::vector<track::Track> gt_tracks(const synth::SynthSequence &s)
{
  const auto poses = track::accumulate_poses(s.frames);
  std::map<int, track::Track> by_id;
  for (const auto &r : s.gt_boxes) {
    auto &t = by_id[*r.track_id];
    t.track_id = *r.track_id;
    t.entries.push_back({r.frame_index, transform_box(poses[r.frame_index], r.box), true, std::nullopt});
  }
  std::vector<track::Track> out;
  for (auto &[id, t] : by_id)
    out.push_back(t);
  return out;
}

/// Initial pseudo ground truth: clustering, tracking, smoothing.
std::vector<track::Track> initial_tracks(const Sequence &seq)
{
  cluster::ClusterParams cp;
  std::vector<std::vector<Boxd>> det;
  for (const auto &f : seq.frames)
    det.push_back(cluster::cluster_frame(f, cp, seq.frame_interval_s).boxes);
  SelfTrainParams p;
  return regularize_detections(seq, det, p, track::FilterMode::kInitial);
}

synth::SynthSequence world(std::uint64_t seed, int moving, int parked, int frames = 30)
{
  synth::RandomWorldOptions o;
  o.moving_actors = moving;
  o.static_actors = parked;
  o.frame_count = frames;
  auto spec = synth::random_world(seed, o);
  spec.sequence_id = "w" + std::to_string(seed);
  return synth::generate(spec);
}

/// Fraction of ground-truth boxes (optionally only parked ones) hit by a label at BEV IoU >= 0.4.
double recall(const PseudoGtDatabase &db, const std::vector<synth::SynthSequence> &seqs, bool parked_only)
{
  int hit = 0, total = 0;
  for (std::size_t s = 0; s < seqs.size(); ++s)
    for (const auto &r : seqs[s].gt_boxes) {
      if (parked_only && *r.speed > 0)
        continue;
      ++total;
      for (const auto &b : db.sequences[s].frames[r.frame_index])
        if (eval::iou_bev(b, r.box) >= 0.4) {
          ++hit;
          break;
        }
    }
  return total ? double(hit) / total : 0.0;
}

/// Test double: records whether each train() call started fresh and replays
/// ground truth boxes as detections.
class ReplayDetector final : public Detector
{
public:
  explicit ReplayDetector(std::vector<std::vector<Boxd>> boxes) : boxes_(std::move(boxes)) {}
  WeightsPtr train(const TrainingSet &, long steps, WeightsPtr init, std::uint64_t seed) override
  {
    fresh.push_back(init == nullptr);
    seeds.push_back(seed);
    step_budget.push_back(steps);
    if (fail_train)
      throw std::runtime_error("out of memory");
    return std::make_shared<MockWeights>();
  }
  std::vector<Boxd> infer(const DetectorWeights &, const PointFrame &frame) const override
  {
    if (frame.flow || frame.pose_to_next)
      throw Error(ErrorKind::kDetector, "motion channels leaked");
    if (bad_box)
      return {Boxd{Vec3d::Zero(), Vec3d(-1, 1, 1), 0, 1}};
    return boxes_.at(frame.timestamp_index);
  }
  std::vector<bool> fresh;
  std::vector<std::uint64_t> seeds;
  std::vector<long> step_budget;
  bool fail_train = false;
  bool bad_box = false;

private:
  std::vector<std::vector<Boxd>> boxes_;
};

std::vector<std::vector<Boxd>> gt_per_frame(const synth::SynthSequence &s, double conf)
{
  std::vector<std::vector<Boxd>> out(s.frames.size());
  for (const auto &r : s.gt_boxes) {
    Boxd b = r.box;
    b.confidence = conf;
    out[r.frame_index].push_back(b);
  }
  return out;
}

} // namespace

TEST_CASE("empty track set gives an empty database")
{
  const auto s = world(1, 1, 0, 5);
  const auto db = build_pseudo_gt({in_memory(s)}, {{}});
  CHECK(db.label_count() == 0);
  CHECK(db.bank.empty());
  REQUIRE(db.sequences.size() == 1);
  CHECK(db.sequences[0].frames.size() == 5);
  CHECK(build_pseudo_gt({}, {}).sequences.empty());
}

TEST_CASE("one 10-frame track gives 10 labels and 10 bank objects")
{
  synth::WorldSpec w;
  w.frame_count = 10;
  synth::ActorSpec a;
  a.trajectory.start = {10, 4, 0.2};
  a.trajectory.segments = {{10.0, 6.0, 0.0}};
  w.actors.push_back(a);
  w.ego.segments = {{10.0, 4.0, 0.05}};
  const auto s = synth::generate(w);
  const auto tracks = gt_tracks(s);
  REQUIRE(tracks.size() == 1);
  REQUIRE(tracks[0].length() == 10);
  const auto db = build_pseudo_gt({in_memory(s)}, {tracks});
  CHECK(db.label_count() == 10);
  CHECK(db.bank.size() == 10);
  // labels come back in each frame's ego coordinates
  for (const auto &r : s.gt_boxes) {
    REQUIRE(db.sequences[0].frames[r.frame_index].size() == 1);
    CHECK((db.sequences[0].frames[r.frame_index][0].center - r.box.center).norm() < 1e-9);
  }
  for (const auto &o : db.bank) {
    CHECK_FALSE(o.local_points.empty());
    for (const auto &p : o.local_points)
      CHECK((p.cwiseAbs() - o.box.size / 2).maxCoeff() < 1e-6);
  }
  const auto recs = db.records(0);
  CHECK(recs.size() == 10);
  CHECK(recs[0].is_pseudo);
}

TEST_CASE("coasted entries are excluded unless requested")
{
  const auto s = world(2, 1, 0, 8);
  auto tracks = gt_tracks(s);
  REQUIRE_FALSE(tracks.empty());
  tracks[0].entries[3].observed = false;
  const auto seq = in_memory(s);
  const auto a = labels_from_tracks(seq, tracks, false);
  const auto b = labels_from_tracks(seq, tracks, true);
  std::size_t na = 0, nb = 0;
  for (std::size_t t = 0; t < a.frames.size(); ++t)
    na += a.frames[t].size(), nb += b.frames[t].size();
  CHECK(nb == na + 1);
}

TEST_CASE("initial pseudo ground truth covers only moving actors")
{
  std::vector<synth::SynthSequence> seqs{world(11, 3, 2)};
  std::vector<Sequence> mem{in_memory(seqs[0])};
  const auto db = build_pseudo_gt(mem, {initial_tracks(mem[0])});
  CHECK(db.label_count() > 0);
  CHECK(recall(db, seqs, true) == 0.0);
  CHECK(recall(db, seqs, false) > 0.3);
}

TEST_CASE("global augmentation draw ranges")
{
  Rng rng(3);
  AugmentParams p;
  for (int i = 0; i < 2000; ++i) {
    const auto d = draw_global(rng, p);
    CHECK(d.rotation >= -kPi);
    CHECK(d.rotation < kPi);
    CHECK(d.scale >= 0.95);
    CHECK(d.scale <= 1.05);
    CHECK(d.translation.norm() <= 5.0);
  }
}

TEST_CASE("identity draw leaves labels unchanged")
{
  const auto s = world(4, 2, 1, 3);
  const auto labels = gt_per_frame(s, 1.0)[0];
  const auto out = apply_global(s.frames[0], labels, GlobalDraw{});
  REQUIRE(out.labels.size() == labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    CHECK(out.labels[i] == labels[i]);
  CHECK(out.frame.points == s.frames[0].points);
  CHECK_FALSE(out.frame.flow);
  CHECK_FALSE(out.frame.pose_to_next);
}

TEST_CASE("augmentation is a similarity transform and keeps labels consistent")
{
  const auto s = world(5, 3, 2, 3);
  const auto &frame = s.frames[0];
  const auto labels = gt_per_frame(s, 1.0)[0];
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const auto d = draw_global(rng, {});
    const auto out = apply_global(frame, labels, d);
    REQUIRE(out.frame.points.size() == frame.points.size());
    for (int k = 0; k < 200; ++k) {
      const auto i = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(frame.points.size()) - 1));
      const auto j = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(frame.points.size()) - 1));
      const double before = (frame.points[i] - frame.points[j]).norm();
      const double after = (out.frame.points[i] - out.frame.points[j]).norm();
      CHECK(std::abs(after - d.scale * before) < 1e-6);
    }
    for (std::size_t l = 0; l < labels.size(); ++l)
      for (std::size_t i = 0; i < frame.points.size(); ++i)
        if (box_contains(labels[l], frame.points[i]))
          CHECK(box_contains(out.labels[l], out.frame.points[i], 1e-9));
  }
}

TEST_CASE("inserted objects never overlap labels")
{
  std::vector<synth::SynthSequence> seqs{world(7, 3, 1)};
  std::vector<Sequence> mem{in_memory(seqs[0])};
  const auto db = build_pseudo_gt(mem, {gt_tracks(seqs[0])});
  REQUIRE_FALSE(db.bank.empty());
  const auto labels = gt_per_frame(seqs[0], 1.0);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const int t = static_cast<int>(seed % seqs[0].frames.size());
    const auto a = augment(seqs[0].frames[t], labels[t], db.bank, seed);
    const auto inserted = a.labels.size() - a.original_labels;
    CHECK(inserted >= 1);
    CHECK(inserted <= 15);
    for (std::size_t i = a.original_labels; i < a.labels.size(); ++i)
      for (std::size_t j = 0; j < a.labels.size(); ++j)
        if (j != i)
          CHECK(eval::iou_bev(a.labels[i], a.labels[j]) == 0.0);
    const auto b = augment(seqs[0].frames[t], labels[t], db.bank, seed);
    CHECK(a.frame.points == b.frame.points);
    CHECK(a.labels == b.labels);
  }
  // empty bank: nothing inserted
  const auto e = augment(seqs[0].frames[0], labels[0], {}, 1);
  CHECK(e.labels.size() == e.original_labels);
}

TEST_CASE("nms_bev")
{
  const Boxd a = make_box(Vec3d(0, 0, 0.8), Vec3d(4, 2, 1.6), 0.0, 0.5);
  Boxd b = a;
  b.center.x() += 0.5;
  b.confidence = 0.9;
  Boxd c = a;
  c.center.x() += 20;
  c.confidence = 0.2;
  const auto kept = nms_bev({a, b, c}, 0.1);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0] == b);
  CHECK(kept[1] == c);
  // equal confidences keep input order
  Boxd a2 = a;
  a2.center.x() += 0.1;
  CHECK(nms_bev({a2, a}, 0.1)[0] == a2);
}

TEST_CASE("mock detector is motion blind and deterministic")
{
  std::vector<synth::SynthSequence> seqs{world(8, 3, 2)};
  std::vector<Sequence> mem{in_memory(seqs[0])};
  const auto db = build_pseudo_gt(mem, {gt_tracks(seqs[0])});
  MockDetector det;
  const auto w = det.train({mem, db}, 100, nullptr, 1);
  REQUIRE(w);
  const auto *mw = dynamic_cast<const MockWeights *>(w.get());
  REQUIRE(mw);
  CHECK_FALSE(mw->memory.empty());
  CHECK_THROWS_AS(det.infer(*w, mem[0].frames[0]), Error);
  const auto view = detector_view(mem[0].frames[0]);
  CHECK_FALSE(view.flow);
  CHECK_FALSE(view.pose_to_next);
  const auto d1 = det.infer(*w, view);
  const auto d2 = det.infer(*w, view);
  CHECK(d1 == d2);
  for (const auto &b : d1) {
    CHECK(b.confidence >= 0);
    CHECK(b.confidence <= 1);
  }
  // finds most actors, including the parked ones
  int hit = 0;
  for (const auto &r : seqs[0].gt_boxes)
    if (r.frame_index == 0)
      for (const auto &b : d1)
        if (eval::iou_bev(b, r.box) >= 0.4) {
          ++hit;
          break;
        }
  CHECK(hit >= 3);
  // same seed, same weights
  const auto w2 = det.train({mem, db}, 100, nullptr, 1);
  CHECK(dynamic_cast<const MockWeights *>(w2.get())->memory.size() == mw->memory.size());
}

TEST_CASE("describe measures the shell fraction")
{
  const Boxd b = make_box(Vec3d(0, 0, 0), Vec3d(4, 2, 2), 0.0);
  std::vector<Point3> shell{Vec3d(2, 0, 0), Vec3d(-2, 0.5, 0), Vec3d(0, 1, 0.3), Vec3d(1, 0, 1)};
  auto e = MockDetector::describe(b, shell, 0.2);
  CHECK(e.shell_fraction == 1.0);
  CHECK(e.size == Vec3d(4, 2, 2));
  shell.emplace_back(0, 0, 0);
  e = MockDetector::describe(b, shell, 0.2);
  CHECK(e.shell_fraction == doctest::Approx(0.8));
}

TEST_CASE("weights are dropped every second round")
{
  const auto s = world(9, 2, 1, 12);
  std::vector<Sequence> mem{in_memory(s)};
  ReplayDetector det(gt_per_frame(s, 0.9));
  SelfTrainParams p;
  p.schedule = {10, 2, 4};
  SelfTrainState st;
  st.database = build_pseudo_gt(mem, {gt_tracks(s)});
  std::vector<RoundReport> reps;
  const auto out = run_selftrain(st, p, det, mem, &reps);
  CHECK(out.round == 4);
  CHECK(det.fresh == std::vector<bool>{true, false, true, false});
  REQUIRE(reps.size() == 4);
  CHECK_FALSE(reps[0].weights_dropped);
  CHECK(reps[1].weights_dropped);
  CHECK_FALSE(reps[2].weights_dropped);
  CHECK(reps[3].weights_dropped);
  CHECK(det.step_budget == std::vector<long>{10, 10, 10, 10});
  CHECK(out.weights == nullptr);
  // replayed ground truth survives regeneration
  CHECK(out.database.label_count() > 0);
  CHECK(std::set<std::uint64_t>(det.seeds.begin(), det.seeds.end()).size() == 4);
}

TEST_CASE("zero rounds return the initial database")
{
  const auto s = world(10, 2, 0, 8);
  std::vector<Sequence> mem{in_memory(s)};
  ReplayDetector det(gt_per_frame(s, 0.9));
  SelfTrainParams p;
  p.schedule.total_rounds = 0;
  SelfTrainState st;
  st.database = build_pseudo_gt(mem, {gt_tracks(s)});
  const auto out = run_selftrain(st, p, det, mem);
  CHECK(out.database == st.database);
  CHECK(out.round == 0);
  CHECK(det.fresh.empty());
}

TEST_CASE("rounds are reproducible")
{
  std::vector<synth::SynthSequence> seqs{world(12, 2, 2, 20)};
  std::vector<Sequence> mem{in_memory(seqs[0])};
  SelfTrainState st;
  st.database = build_pseudo_gt(mem, {initial_tracks(mem[0])});
  SelfTrainParams p;
  p.schedule = {50, 2, 1};
  p.seed = 5;
  MockDetector d1, d2;
  const auto a = run_round(st, p, d1, mem);
  const auto b = run_round(st, p, d2, mem);
  CHECK(a.database == b.database);
  CHECK(a.round == 1);
}

TEST_CASE("detector failures leave the state intact")
{
  const auto s = world(13, 2, 0, 8);
  std::vector<Sequence> mem{in_memory(s)};
  SelfTrainState st;
  st.database = build_pseudo_gt(mem, {gt_tracks(s)});
  const auto copy = st.database;
  SelfTrainParams p;
  ReplayDetector det(gt_per_frame(s, 0.9));
  det.fail_train = true;
  try {
    run_round(st, p, det, mem);
    FAIL("expected throw");
  } catch (const Error &e) {
    CHECK(e.kind() == ErrorKind::kDetector);
  }
  det.fail_train = false;
  det.bad_box = true;
  try {
    run_round(st, p, det, mem);
    FAIL("expected throw");
  } catch (const Error &e) {
    CHECK(e.kind() == ErrorKind::kDetector);
  }
  CHECK(st.database == copy);
  CHECK(st.round == 0);
  det.bad_box = false;
  CHECK(run_round(st, p, det, mem).round == 1);
}

TEST_CASE("schedule validation")
{
  CHECK_NOTHROW((SelfTrainSchedule{1, 1, 0}.validate()));
  CHECK_THROWS_AS((SelfTrainSchedule{0, 2, 1}.validate()), Error);
  CHECK_THROWS_AS((SelfTrainSchedule{10, 0, 1}.validate()), Error);
  CHECK_THROWS_AS((SelfTrainSchedule{10, 2, -1}.validate()), Error);
}

TEST_CASE("subprocess detector contract")
{
  TempDir dir("subproc");
  const auto s = world(14, 2, 1, 10);
  synth::write_synth(dir.path() / "seq", s);
  std::vector<Sequence> seqs{load_sequence(dir.path() / "seq")};
  SelfTrainState st;
  st.database = build_pseudo_gt(seqs, {gt_tracks(s)});
  SelfTrainParams p;
  p.schedule = {7, 2, 2};
  const std::string script = std::string("sh ") + LISO_SHELL_FIXTURE;
  SubprocessDetector det(script, dir.path() / "work");
  std::vector<RoundReport> reps;
  const auto out = run_selftrain(st, p, det, seqs, &reps);
  CHECK(out.round == 2);
  CHECK(out.database.label_count() > 0);
  // round 1 started fresh, round 2 got round 1's weights
  const auto w0 = slurp(dir.path() / "work" / "train_0" / "weights");
  const auto w1 = slurp(dir.path() / "work" / "train_1" / "weights");
  CHECK(w0.find("weights-in fresh") != std::string::npos);
  CHECK(w1.find("train_0/weights") != std::string::npos);
  CHECK(w0.find("_pseudo_gt.txt") != std::string::npos);
  CHECK(std::filesystem::exists(dir.path() / "work" / "train_0" / (s.sequence_id + "_pseudo_gt.txt")));

  for (const char *step : {"train", "infer"}) {
    SubprocessDetector bad(std::string("FAKE_DETECTOR_FAIL=") + step + " " + script, dir.path() / step);
    try {
      run_round(st, p, bad, seqs);
      FAIL("expected throw");
    } catch (const Error &e) {
      CHECK(e.kind() == ErrorKind::kDetector);
    }
  }
  CHECK_THROWS_AS(det.infer(FileWeights{}, seqs[0].frames[0]), Error);
}
