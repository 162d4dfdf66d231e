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

#include "liso/selftrain.hpp"

#include "liso/cluster.hpp"
#include "liso/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <numeric>

namespace liso::selftrain
{

namespace fs = std::filesystem;

Sequence load_sequence(const fs::path &seq_dir)
{
  const auto manifest = io::read_manifest(seq_dir);
  Sequence seq;
  seq.sequence_id = manifest.sequence_id;
  seq.frame_interval_s = manifest.frame_interval_s;
  seq.frames = io::read_sequence(manifest);
  seq.root = seq_dir;
  return seq;
}

std::size_t PseudoGtDatabase::label_count() const
{
  std::size_t n = 0;
  for (const auto &s : sequences)
    for (const auto &f : s.frames)
      n += f.size();
  return n;
}

bool PseudoGtDatabase::operator==(const PseudoGtDatabase &o) const
{
  if (sequences.size() != o.sequences.size() || bank.size() != o.bank.size())
    return false;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const auto &a = sequences[i], &b = o.sequences[i];
    if (a.sequence_id != b.sequence_id || a.frames != b.frames || a.track_ids != b.track_ids)
      return false;
  }
  for (std::size_t i = 0; i < bank.size(); ++i)
    if (!(bank[i].box == o.bank[i].box) || bank[i].local_points != o.bank[i].local_points)
      return false;
  return true;
}

std::vector<io::BoxRecord> PseudoGtDatabase::records(std::size_t sequence) const
{
  const auto &s = sequences.at(sequence);
  std::vector<io::BoxRecord> out;
  for (std::size_t t = 0; t < s.frames.size(); ++t)
    for (std::size_t k = 0; k < s.frames[t].size(); ++k) {
      io::BoxRecord r;
      r.frame_index = static_cast<int>(t);
      r.track_id = s.track_ids[t][k];
      r.box = s.frames[t][k];
      r.is_pseudo = true;
      out.push_back(r);
    }
  return out;
}

SequenceLabels labels_from_tracks(const Sequence &seq, const std::vector<track::Track> &tracks, bool include_coasted)
{
  const auto world_from_ego = track::accumulate_poses(seq.frames);
  SequenceLabels out;
  out.sequence_id = seq.sequence_id;
  out.frames.resize(seq.frames.size());
  out.track_ids.resize(seq.frames.size());
  for (const auto &tr : tracks)
    for (const auto &e : tr.entries) {
      if (!e.observed && !include_coasted)
        continue;
      if (e.frame_index < 0 || e.frame_index >= static_cast<int>(seq.frames.size()))
        throw Error(ErrorKind::kInvalidArgument, "track entry outside the sequence");
      out.frames[e.frame_index].push_back(transform_box(world_from_ego[e.frame_index].inverse(), e.box));
      out.track_ids[e.frame_index].push_back(tr.track_id);
    }
  return out;
}

PseudoGtDatabase build_pseudo_gt(const std::vector<Sequence> &sequences,
                                 const std::vector<std::vector<track::Track>> &tracks, bool include_coasted)
{
  if (sequences.size() != tracks.size())
    throw Error(ErrorKind::kLengthMismatch, "one track list per sequence expected");
  PseudoGtDatabase db;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const auto &seq = sequences[s];
    db.sequences.push_back(labels_from_tracks(seq, tracks[s], include_coasted));
    const auto &labels = db.sequences.back();
    for (std::size_t t = 0; t < seq.frames.size(); ++t) {
      const auto &frame = seq.frames[t];
      for (const auto &box : labels.frames[t]) {
        ObjectSample sample;
        sample.box = box;
        for (std::size_t i = 0; i < frame.points.size(); ++i)
          if (!frame.is_ground(i) && box_contains(box, frame.points[i]))
            sample.local_points.push_back(to_box_frame(box, frame.points[i]));
        if (!sample.local_points.empty())
          db.bank.push_back(std::move(sample));
      }
    }
  }
  return db;
}

// --- augmentation -----------------------------------------------------------

GlobalDraw draw_global(Rng &rng, const AugmentParams &params)
{
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  GlobalDraw d;
  d.rotation = -std::numbers::pi + 2 * std::numbers::pi * u01(rng);
  d.scale = 1 - params.scale_range + 2 * params.scale_range * u01(rng);
  // uniform in a ball by rejection
  for (;;) {
    const Vec3d v(2 * u01(rng) - 1, 2 * u01(rng) - 1, 2 * u01(rng) - 1);
    if (v.squaredNorm() <= 1) {
      d.translation = params.max_translation * v;
      break;
    }
  }
  return d;
}

AugmentedSample apply_global(const PointFrame &frame, const std::vector<Boxd> &labels, const GlobalDraw &draw)
{
  const auto rot = RigidTransformd::from_yaw(draw.rotation, Vec3d::Zero());
  AugmentedSample out;
  out.draw = draw;
  out.original_labels = labels.size();
  out.original_points = frame.points.size();
  out.frame.timestamp_index = frame.timestamp_index;
  out.frame.points.reserve(frame.points.size());
  for (const auto &p : frame.points)
    out.frame.points.push_back(draw.scale * rot.apply(p) + draw.translation);
  out.frame.ground_mask = frame.ground_mask;
  for (const auto &b : labels) {
    Boxd nb = b;
    nb.center = draw.scale * rot.apply(b.center) + draw.translation;
    nb.size = draw.scale * b.size;
    nb.heading = normalize_heading(b.heading + draw.rotation);
    out.labels.push_back(nb);
  }
  return out;
}

void insert_objects(AugmentedSample &sample, std::span<const ObjectSample> bank, Rng &rng,
                    const AugmentParams &params)
{
  if (bank.empty() || params.max_inserted <= 0)
    return;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_int_distribution<int> count(std::max(0, params.min_inserted), params.max_inserted);
  std::uniform_int_distribution<std::size_t> pick(0, bank.size() - 1);
  const int k = count(rng);
  auto &pts = sample.frame.points;
  auto &mask = sample.frame.ground_mask;
  for (int n = 0; n < k; ++n) {
    const ObjectSample &obj = bank[pick(rng)];
    std::optional<Boxd> placed;
    for (int attempt = 0; attempt < params.placement_attempts && !placed; ++attempt) {
      const double r = params.placement_radius * std::sqrt(u01(rng));
      const double phi = 2 * std::numbers::pi * u01(rng);
      Boxd cand = obj.box;
      cand.center = Vec3d(r * std::cos(phi), r * std::sin(phi),
                          sample.draw.scale * obj.box.center.z() + sample.draw.translation.z());
      cand.heading = normalize_heading(-std::numbers::pi + 2 * std::numbers::pi * u01(rng));
      cand.confidence = 1;
      const bool clear = std::none_of(sample.labels.begin(), sample.labels.end(),
                                      [&](const Boxd &l) { return eval::intersection_bev(l, cand) > 0; });
      if (clear)
        placed = cand;
    }
    if (!placed)
      continue;
    // the pasted object occludes whatever was inside its footprint
    std::vector<Point3> kept;
    std::vector<std::uint8_t> kept_mask;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const bool ground = mask && (*mask)[i];
      if (!ground && box_contains(*placed, pts[i]))
        continue;
      kept.push_back(pts[i]);
      if (mask)
        kept_mask.push_back((*mask)[i]);
    }
    const double keep = params.min_retained_fraction + (1 - params.min_retained_fraction) * u01(rng);
    const double c = std::cos(placed->heading), s = std::sin(placed->heading);
    for (const auto &q : obj.local_points) {
      if (u01(rng) >= keep)
        continue;
      kept.emplace_back(placed->center.x() + c * q.x() - s * q.y(), placed->center.y() + s * q.x() + c * q.y(),
                        placed->center.z() + q.z());
      if (mask)
        kept_mask.push_back(0);
    }
    pts = std::move(kept);
    if (mask)
      *mask = std::move(kept_mask);
    sample.labels.push_back(*placed);
  }
}

AugmentedSample augment(const PointFrame &frame, const std::vector<Boxd> &labels, std::span<const ObjectSample> bank,
                        std::uint64_t seed, const AugmentParams &params)
{
  Rng rng(seed);
  AugmentedSample out = apply_global(frame, labels, draw_global(rng, params));
  insert_objects(out, bank, rng, params);
  return out;
}

// --- detectors --------------------------------------------------------------

PointFrame detector_view(const PointFrame &frame)
{
  PointFrame v;
  v.timestamp_index = frame.timestamp_index;
  v.points = frame.points;
  v.ground_mask = frame.ground_mask;
  return v;
}

std::vector<std::vector<Boxd>> Detector::infer_sequence(const DetectorWeights &weights, const Sequence &seq) const
{
  std::vector<std::vector<Boxd>> out;
  out.reserve(seq.frames.size());
  for (const auto &f : seq.frames)
    out.push_back(infer(weights, detector_view(f)));
  return out;
}

Exemplar MockDetector::describe(const Boxd &box, std::span<const Point3> points, double shell_band)
{
  Exemplar e;
  e.size = Vec3d(std::max(box.size.x(), box.size.y()), std::min(box.size.x(), box.size.y()), box.size.z());
  if (points.empty())
    return e;
  const Vec3d half = box.size / 2;
  std::size_t shell = 0;
  for (const auto &p : points) {
    const Vec3d q = to_box_frame(box, p);
    const double d = std::min({half.x() - std::abs(q.x()), half.y() - std::abs(q.y()), half.z() - q.z()});
    if (d <= shell_band)
      ++shell;
  }
  e.shell_fraction = static_cast<double>(shell) / static_cast<double>(points.size());
  return e;
}

WeightsPtr MockDetector::train(const TrainingSet &data, long steps, WeightsPtr init, std::uint64_t seed)
{
  if (steps < 0)
    throw Error(ErrorKind::kInvalidArgument, "negative training steps");
  auto w = std::make_shared<MockWeights>();
  if (init) {
    const auto *prev = dynamic_cast<const MockWeights *>(init.get());
    if (!prev)
      throw Error(ErrorKind::kDetector, "mock detector got foreign weights");
    w->memory = prev->memory;
  }
  if (data.database.sequences.size() != data.sequences.size())
    throw Error(ErrorKind::kLengthMismatch, "database and sequence lists differ");

  std::vector<std::pair<std::size_t, std::size_t>> pool;
  for (std::size_t s = 0; s < data.sequences.size(); ++s) {
    const auto &labels = data.database.sequences[s].frames;
    if (labels.size() != data.sequences[s].frames.size())
      throw Error(ErrorKind::kLengthMismatch, "label frames differ from sequence frames");
    for (std::size_t t = 0; t < labels.size(); ++t)
      if (!labels[t].empty())
        pool.emplace_back(s, t);
  }
  if (pool.empty())
    return w;

  Rng rng(seed);
  const long samples = std::min(steps, params_.max_samples);
  std::size_t seen = w->memory.size();
  for (long i = 0; i < samples; ++i) {
    const auto [s, t] = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
    const auto sample = augment(detector_view(data.sequences[s].frames[t]), data.database.sequences[s].frames[t],
                                data.database.bank, derive_seed(seed, i), params_.augment);
    for (const auto &label : sample.labels) {
      std::vector<Point3> inside;
      for (std::size_t k = 0; k < sample.frame.points.size(); ++k)
        if (!sample.frame.is_ground(k) && box_contains(label, sample.frame.points[k], 0.1))
          inside.push_back(sample.frame.points[k]);
      if (static_cast<int>(inside.size()) < params_.cluster_min_pts)
        continue;
      const Exemplar e = describe(label, inside, params_.shell_band);
      ++seen;
      if (w->memory.size() < params_.max_memory) {
        w->memory.push_back(e);
      } else {
        const auto slot = std::uniform_int_distribution<std::size_t>(0, seen - 1)(rng);
        if (slot < w->memory.size())
          w->memory[slot] = e;
      }
    }
  }
  return w;
}

std::vector<Boxd> MockDetector::infer(const DetectorWeights &weights, const PointFrame &frame) const
{
  if (frame.flow)
    throw Error(ErrorKind::kDetector, "mock detector must not see flow");
  const auto *w = dynamic_cast<const MockWeights *>(&weights);
  if (!w)
    throw Error(ErrorKind::kDetector, "mock detector got foreign weights");
  if (w->memory.empty())
    return {};

  const auto ground = cluster::ground_mask_or_fallback(frame);
  std::vector<Vec3d> pts;
  for (std::size_t i = 0; i < frame.points.size(); ++i)
    if (!ground[i])
      pts.push_back(frame.points[i]);
  const auto db = cluster::dbscan<3>(pts, params_.cluster_eps, params_.cluster_min_pts);

  const cluster::ClusterParams shape;
  std::vector<Boxd> out;
  for (const auto &members : db.clusters) {
    std::vector<Point3> cp;
    cp.reserve(members.size());
    for (auto i : members)
      cp.push_back(pts[i]);
    Boxd box = cluster::fit_box_with_heading(cp, cluster::min_area_heading(cp));
    if (cluster::is_degenerate(box, shape))
      continue;
    const Exemplar e = describe(box, cp, params_.shell_band);
    double best = 0;
    for (const auto &m : w->memory) {
      const double ds = (e.size - m.size).squaredNorm() / (params_.size_sigma * params_.size_sigma);
      const double dq = std::pow((e.shell_fraction - m.shell_fraction) / params_.shell_sigma, 2);
      best = std::max(best, std::exp(-0.5 * (ds + dq)));
    }
    if (best < params_.min_score)
      continue;
    box.confidence = best;
    out.push_back(box);
  }
  return out;
}

namespace
{

std::string quote(const fs::path &p)
{
  std::string s = "'";
  for (char c : p.string()) {
    if (c == '\'')
      s += "'\\''";
    else
      s += c;
  }
  return s + "'";
}

void run_command(const std::string &cmd)
{
  const int status = std::system(cmd.c_str());
  if (status != 0)
    throw Error(ErrorKind::kDetector, "detector command failed (status " + std::to_string(status) + "): " + cmd);
}

} // namespace

SubprocessDetector::SubprocessDetector(std::string command, fs::path workdir)
    : command_(std::move(command)), workdir_(std::move(workdir))
{
  if (command_.empty())
    throw Error(ErrorKind::kInvalidArgument, "empty detector command");
}

WeightsPtr SubprocessDetector::train(const TrainingSet &data, long steps, WeightsPtr init, std::uint64_t seed)
{
  const fs::path dir = workdir_ / ("train_" + std::to_string(train_calls_++));
  fs::create_directories(dir);
  if (data.database.sequences.size() != data.sequences.size())
    throw Error(ErrorKind::kLengthMismatch, "database and sequence lists differ");
  {
    std::ofstream list(dir / "sequences.txt");
    for (std::size_t s = 0; s < data.sequences.size(); ++s) {
      if (data.sequences[s].root.empty())
        throw Error(ErrorKind::kInvalidArgument, "subprocess detector needs on-disk sequences");
      const fs::path gt = dir / (data.sequences[s].sequence_id + "_pseudo_gt.txt");
      io::write_boxes(data.database.records(s), gt);
      list << fs::absolute(data.sequences[s].root).string() << ' ' << fs::absolute(gt).string() << '\n';
    }
  }
  std::string weights_in = "fresh";
  if (init) {
    const auto *fw = dynamic_cast<const FileWeights *>(init.get());
    if (!fw)
      throw Error(ErrorKind::kDetector, "subprocess detector got foreign weights");
    weights_in = quote(fw->path);
  }
  auto out = std::make_shared<FileWeights>();
  out->path = fs::absolute(dir / "weights");
  run_command(command_ + " train --seq-list " + quote(fs::absolute(dir / "sequences.txt")) + " --steps " +
              std::to_string(steps) + " --weights-in " + weights_in + " --weights-out " + quote(out->path) +
              " --seed " + std::to_string(seed));
  if (!fs::exists(out->path))
    throw Error(ErrorKind::kDetector, "detector wrote no weights to " + out->path.string());
  return out;
}

std::vector<Boxd> SubprocessDetector::infer(const DetectorWeights &, const PointFrame &) const
{
  throw Error(ErrorKind::kDetector, "subprocess detector runs on whole sequences only");
}

std::vector<std::vector<Boxd>> SubprocessDetector::infer_sequence(const DetectorWeights &weights,
                                                                  const Sequence &seq) const
{
  const auto *fw = dynamic_cast<const FileWeights *>(&weights);
  if (!fw)
    throw Error(ErrorKind::kDetector, "subprocess detector got foreign weights");
  if (seq.root.empty())
    throw Error(ErrorKind::kInvalidArgument, "subprocess detector needs on-disk sequences");
  const fs::path out = fw->path.parent_path() / (seq.sequence_id + "_detections.txt");
  run_command(command_ + " infer --seq " + quote(fs::absolute(seq.root)) + " --weights " + quote(fw->path) +
              " --out " + quote(out));
  std::vector<io::BoxRecord> recs;
  try {
    recs = io::read_boxes(out);
  } catch (const Error &e) {
    throw Error(ErrorKind::kDetector, std::string("unreadable detector output: ") + e.what());
  }
  std::vector<std::vector<Boxd>> boxes(seq.frames.size());
  for (const auto &r : recs) {
    if (r.frame_index < 0 || r.frame_index >= static_cast<int>(boxes.size()))
      throw Error(ErrorKind::kDetector, "detector output frame out of range");
    boxes[r.frame_index].push_back(r.box);
  }
  return boxes;
}

// --- orchestration ----------------------------------------------------------

std::vector<Boxd> nms_bev(const std::vector<Boxd> &boxes, double iou_threshold)
{
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return boxes[a].confidence > boxes[b].confidence; });
  std::vector<Boxd> kept;
  for (auto i : order) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(),
                                        [&](const Boxd &k) { return eval::iou_bev(k, boxes[i]) > iou_threshold; });
    if (!suppressed)
      kept.push_back(boxes[i]);
  }
  return kept;
}

void SelfTrainSchedule::validate() const
{
  if (steps_per_round < 1 || rounds_per_weight_drop < 1 || total_rounds < 0)
    throw Error(ErrorKind::kInvalidArgument, "self-training schedule out of range");
}

std::vector<track::Track> regularize_detections(const Sequence &seq, const std::vector<std::vector<Boxd>> &detections,
                                                const SelfTrainParams &params, track::FilterMode mode)
{
  auto smooth = params.smooth;
  smooth.frame_interval_s = seq.frame_interval_s;
  const auto tracks = track::run_tracker(seq.frames, seq.frame_interval_s, detections, params.tracker, mode);
  return trackopt::optimize_tracks(tracks, smooth);
}

namespace
{

template <typename F> auto detector_call(F &&fn, const char *what)
{
  try {
    return fn();
  } catch (const Error &e) {
    if (e.kind() == ErrorKind::kDetector)
      throw;
    throw Error(ErrorKind::kDetector, std::string(what) + ": " + e.what());
  } catch (const std::exception &e) {
    throw Error(ErrorKind::kDetector, std::string(what) + ": " + e.what());
  }
}

} // namespace

SelfTrainState run_round(const SelfTrainState &state, const SelfTrainParams &params, Detector &detector,
                         const std::vector<Sequence> &sequences, RoundReport *report)
{
  params.schedule.validate();
  params.tracker.validate();
  params.smooth.validate();
  RoundReport rep;
  rep.round = state.round + 1;

  const TrainingSet data{sequences, state.database};
  const WeightsPtr weights = detector_call(
      [&] {
        return detector.train(data, params.schedule.steps_per_round, state.weights,
                              derive_seed(params.seed, static_cast<std::uint64_t>(rep.round)));
      },
      "training failed");
  if (!weights)
    throw Error(ErrorKind::kDetector, "detector returned no weights");

  std::vector<std::vector<track::Track>> tracks;
  for (const auto &seq : sequences) {
    auto dets = detector_call([&] { return detector.infer_sequence(*weights, seq); }, "inference failed");
    if (dets.size() != seq.frames.size())
      throw Error(ErrorKind::kDetector, "detector returned the wrong number of frames");
    for (auto &d : dets) {
      for (const auto &b : d)
        if (!b.is_valid())
          throw Error(ErrorKind::kDetector, "detector returned an invalid box");
      d = nms_bev(d, params.nms_iou);
      rep.detections += d.size();
    }
    tracks.push_back(regularize_detections(seq, dets, params, track::FilterMode::kRegeneration));
    rep.tracks += tracks.back().size();
  }

  SelfTrainState next;
  next.round = rep.round;
  next.database = build_pseudo_gt(sequences, tracks, params.include_coasted);
  rep.weights_dropped = next.round % params.schedule.rounds_per_weight_drop == 0;
  next.weights = rep.weights_dropped ? nullptr : weights;
  rep.labels = next.database.label_count();
  if (report)
    *report = rep;
  return next;
}

SelfTrainState run_selftrain(SelfTrainState state, const SelfTrainParams &params, Detector &detector,
                             const std::vector<Sequence> &sequences, std::vector<RoundReport> *reports)
{
  params.schedule.validate();
  for (int r = 0; r < params.schedule.total_rounds; ++r) {
    RoundReport rep;
    state = run_round(state, params, detector, sequences, &rep);
    if (reports)
      reports->push_back(rep);
  }
  return state;
}

} // namespace liso::selftrain
