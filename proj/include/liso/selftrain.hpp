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

// Trajectory-regularized self-training. A detector is trained on the current
// pseudo ground truth, run over every training frame, and its detections are
// re-tracked and re-smoothed into the next pseudo ground truth. Every
// `rounds_per_weight_drop` rounds the detector weights are discarded.

#pragma once

#include "liso/core.hpp"
#include "liso/io.hpp"
#include "liso/random.hpp"
#include "liso/tracker.hpp"
#include "liso/trackopt.hpp"

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace liso::selftrain
{

/// A sequence loaded in memory; `root` is its directory when it lives on disk.
struct Sequence
{
  std::string sequence_id;
  double frame_interval_s = 0.1;
  std::vector<PointFrame> frames;
  std::filesystem::path root;
};

Sequence load_sequence(const std::filesystem::path &seq_dir);

/// Object bank entry: a label box and the points it held, in box coordinates.
struct ObjectSample
{
  Boxd box;
  std::vector<Vec3d> local_points;
};

struct SequenceLabels
{
  std::string sequence_id;
  /// Labels per frame in that frame's ego coordinates.
  std::vector<std::vector<Boxd>> frames;
  /// Track id per label, parallel to `frames`.
  std::vector<std::vector<int>> track_ids;
};

struct PseudoGtDatabase
{
  std::vector<SequenceLabels> sequences;
  std::vector<ObjectSample> bank;

  std::size_t label_count() const;
  bool operator==(const PseudoGtDatabase &) const;
  std::vector<io::BoxRecord> records(std::size_t sequence) const;
};

/// World-frame tracks back to per-frame ego labels. Coasted entries are left
/// out unless `include_coasted`.
SequenceLabels labels_from_tracks(const Sequence &seq, const std::vector<track::Track> &tracks,
                                  bool include_coasted = false);

/// Per-frame labels from tracks plus an object bank holding the non-ground
/// points inside every label.
PseudoGtDatabase build_pseudo_gt(const std::vector<Sequence> &sequences,
                                 const std::vector<std::vector<track::Track>> &tracks, bool include_coasted = false);

struct AugmentParams
{
  double max_translation = 5.0;
  /// isotropic scale drawn from [1 - s, 1 + s]
  double scale_range = 0.05;
  int min_inserted = 1;
  int max_inserted = 15;
  double min_retained_fraction = 0.3;
  int placement_attempts = 20;
  /// inserted objects are centered within this BEV radius
  double placement_radius = 40.0;
};

struct GlobalDraw
{
  double rotation = 0;
  double scale = 1;
  Vec3d translation = Vec3d::Zero();
};

struct AugmentedSample
{
  /// points and ground mask only; flow and pose are not carried over
  PointFrame frame;
  std::vector<Boxd> labels;
  std::size_t original_labels = 0;
  std::size_t original_points = 0;
  GlobalDraw draw;
};

GlobalDraw draw_global(Rng &rng, const AugmentParams &params);

/// Similarity transform x -> s * R_z(rotation) * x + translation applied to points and labels.
AugmentedSample apply_global(const PointFrame &frame, const std::vector<Boxd> &labels, const GlobalDraw &draw);

/// Insert k ~ U{min..max} bank objects at poses whose BEV footprint does not
/// touch any existing label (up to `placement_attempts` tries each), keeping a
/// random subset of their points.
void insert_objects(AugmentedSample &sample, std::span<const ObjectSample> bank, Rng &rng,
                    const AugmentParams &params);

/// draw_global -> apply_global -> insert_objects, seeded.
AugmentedSample augment(const PointFrame &frame, const std::vector<Boxd> &labels, std::span<const ObjectSample> bank,
                        std::uint64_t seed, const AugmentParams &params = {});

/// Opaque trained state of a detector.
struct DetectorWeights
{
  virtual ~DetectorWeights() = default;
};
using WeightsPtr = std::shared_ptr<const DetectorWeights>;

struct TrainingSet
{
  const std::vector<Sequence> &sequences;
  const PseudoGtDatabase &database;
};

/// Anything that learns boxes from single frames. infer() must be
/// deterministic for fixed weights and never sees flow.
class Detector
{
public:
  virtual ~Detector() = default;
  /// `init == nullptr` means fresh weights.
  virtual WeightsPtr train(const TrainingSet &data, long steps, WeightsPtr init, std::uint64_t seed) = 0;
  virtual std::vector<Boxd> infer(const DetectorWeights &weights, const PointFrame &frame) const = 0;
  /// Defaults to infer() per frame with flow and pose stripped.
  virtual std::vector<std::vector<Boxd>> infer_sequence(const DetectorWeights &weights, const Sequence &seq) const;
};

/// Copy of the frame with only points, ground mask and index.
PointFrame detector_view(const PointFrame &frame);

struct MockDetectorParams
{
  double cluster_eps = 1.0;
  int cluster_min_pts = 5;
  /// similarity bandwidths for (l, w, h) and for the shell statistic
  double size_sigma = 0.75;
  double shell_sigma = 0.2;
  double min_score = 0.1;
  /// points closer than this to a box face count towards the shell statistic
  double shell_band = 0.2;
  std::size_t max_memory = 4096;
  /// cap on augmented frames consumed per train() call
  long max_samples = 200;
  AugmentParams augment;
};

/// Appearance memory: box size and the fraction of points lying on the box
/// shell, for every training label.
struct Exemplar
{
  Vec3d size;
  double shell_fraction = 0;
};

struct MockWeights final : DetectorWeights
{
  std::vector<Exemplar> memory;
};

/// Motion-blind stand-in for a neural detector: clusters non-ground points,
/// fits minimum-area boxes and scores them by similarity to remembered
/// label appearances.
class MockDetector final : public Detector
{
public:
  explicit MockDetector(MockDetectorParams params = {}) : params_(params) {}
  WeightsPtr train(const TrainingSet &data, long steps, WeightsPtr init, std::uint64_t seed) override;
  std::vector<Boxd> infer(const DetectorWeights &weights, const PointFrame &frame) const override;

  static Exemplar describe(const Boxd &box, std::span<const Point3> points, double shell_band);

private:
  MockDetectorParams params_;
};

/// Detector behind an external command, exchanging the io formats:
///   <cmd> train --seq-list <file> --steps N --weights-in <path|fresh> --weights-out <path> --seed S
///     (seq-list lines: "<sequence dir> <pseudo_gt.txt>")
///   <cmd> infer --seq <dir> --weights <path> --out <detections.txt>
/// A nonzero exit status is a detector failure.
class SubprocessDetector final : public Detector
{
public:
  SubprocessDetector(std::string command, std::filesystem::path workdir);
  WeightsPtr train(const TrainingSet &data, long steps, WeightsPtr init, std::uint64_t seed) override;
  std::vector<Boxd> infer(const DetectorWeights &weights, const PointFrame &frame) const override;
  std::vector<std::vector<Boxd>> infer_sequence(const DetectorWeights &weights, const Sequence &seq) const override;

private:
  std::string command_;
  std::filesystem::path workdir_;
  int train_calls_ = 0;
};

struct FileWeights final : DetectorWeights
{
  std::filesystem::path path;
};

/// Greedy BEV non-maximum suppression by descending confidence (stable).
std::vector<Boxd> nms_bev(const std::vector<Boxd> &boxes, double iou_threshold);

struct SelfTrainSchedule
{
  long steps_per_round = 30000;
  int rounds_per_weight_drop = 2;
  int total_rounds = 0;

  void validate() const;
};

struct SelfTrainParams
{
  SelfTrainSchedule schedule;
  track::TrackerParams tracker;
  trackopt::SmoothParams smooth;
  double nms_iou = 0.1;
  bool include_coasted = false;
  std::uint64_t seed = 0;
};

struct SelfTrainState
{
  int round = 0;
  PseudoGtDatabase database;
  WeightsPtr weights;
};

struct RoundReport
{
  int round = 0;
  bool weights_dropped = false;
  std::size_t detections = 0;
  std::size_t tracks = 0;
  std::size_t labels = 0;
};

/// Detections -> tracks -> smoothed tracks for one sequence, as in the
/// regeneration step.
std::vector<track::Track> regularize_detections(const Sequence &seq, const std::vector<std::vector<Boxd>> &detections,
                                                const SelfTrainParams &params, track::FilterMode mode);

/// One train / infer / regenerate round. Throws Error(kDetector) if the
/// detector fails; the input state is never modified.
SelfTrainState run_round(const SelfTrainState &state, const SelfTrainParams &params, Detector &detector,
                         const std::vector<Sequence> &sequences, RoundReport *report = nullptr);

SelfTrainState run_selftrain(SelfTrainState state, const SelfTrainParams &params, Detector &detector,
                             const std::vector<Sequence> &sequences, std::vector<RoundReport> *reports = nullptr);

} // namespace liso::selftrain
