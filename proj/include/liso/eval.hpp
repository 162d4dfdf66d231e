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

#pragma once

#include "liso/core.hpp"
#include "liso/io.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace liso::eval
{

enum class IouSpace
{
  kBev,
  k3d
};

struct EvalRegion
{
  /// Full extents of an ego-centered axis-aligned rectangle.
  double size_x = 100.0;
  double size_y = 100.0;

  bool contains(const Boxd &b) const;
};

struct EvalConfig
{
  std::vector<double> iou_thresholds{0.3, 0.5};
  IouSpace iou_space = IouSpace::kBev;
  std::optional<EvalRegion> region = EvalRegion{};
  /// Crop only predictions, leaving ground truth untouched.
  bool crop_predictions_only = false;
  std::optional<double> min_pr_clip;
  double moving_speed_threshold = 1.0;
  /// Also report moving/still ground truth separately when speeds are known.
  bool split_motion = true;

  void validate() const;
};

/// Convex polygon clipping (Sutherland-Hodgman); both inputs counter-clockwise.
std::vector<Vec2d> clip_convex(const std::vector<Vec2d> &subject, const std::vector<Vec2d> &clip);
double polygon_area(std::span<const Vec2d> poly);

double intersection_bev(const Boxd &a, const Boxd &b);
double iou_bev(const Boxd &a, const Boxd &b);
double iou_3d(const Boxd &a, const Boxd &b);
double iou(const Boxd &a, const Boxd &b, IouSpace space);

/// Absolute yaw difference, 2pi-periodic, in [0, pi].
double heading_error(double a, double b);
/// Absolute yaw difference, pi-periodic (front/back agnostic), in [0, pi/2].
double heading_error_pi(double a, double b);

struct PrPoint
{
  double confidence = 0;
  double recall = 0;
  double precision = 0;
  int tp = 0;
  int fp = 0;
};

struct ApResult
{
  /// "all", "moving" or "still"
  std::string category = "all";
  double threshold = 0;
  double ap = 0;
  /// mean 2pi-periodic heading error over true positives (NaN without TPs)
  double aoe = 0;
  /// pi-periodic variant
  double aoe_pi = 0;
  int num_gt = 0;
  int num_pred = 0;
  int num_tp = 0;
  /// one operating point per distinct confidence, descending confidence
  std::vector<PrPoint> curve;
};

/// Predictions are ranked by descending confidence (ties keep input order:
/// frame by frame, then index). Each takes the free ground truth box of its
/// frame with the highest IoU at or above the threshold. The curve has one
/// point per distinct confidence and AP is its trapezoidal area over recall,
/// anchored at (0, first precision). With a clip value c, only recall >= c
/// counts and precision below c is zeroed.
ApResult average_precision(const std::vector<std::vector<Boxd>> &predictions,
                           const std::vector<std::vector<Boxd>> &ground_truth, double threshold, IouSpace space,
                           std::optional<double> min_pr_clip = std::nullopt);

/// Area under a recall-sorted curve as described for average_precision().
double integrate_pr(const std::vector<PrPoint> &curve, std::optional<double> min_pr_clip);

struct MotionSplit
{
  std::vector<io::BoxRecord> moving;
  std::vector<io::BoxRecord> still;
  /// set when some record had no speed; then everything lands in `still`
  /// (the single movable pool) and `warning` explains why
  bool missing_velocity = false;
  std::string warning;
};

/// Moving iff speed > threshold (strict).
MotionSplit split_moving_still(const std::vector<io::BoxRecord> &gts, double threshold = 1.0);

struct EvalReport
{
  std::vector<ApResult> results;
  /// set when the motion split was requested but ground truth had no speeds
  std::string warning;
  std::string to_text() const;
  std::string pr_csv() const;
};

/// Per-frame crop then average_precision() for each configured threshold.
/// With split_motion, each motion subset is scored too; a prediction that
/// overlaps a ground truth box of the other subset better than any box of its
/// own subset (at or above the threshold) is ignored rather than counted false.
EvalReport evaluate(const std::vector<io::BoxRecord> &predictions, const std::vector<io::BoxRecord> &ground_truth,
                    const EvalConfig &config);

struct PrecisionRecall
{
  double precision = 0;
  double recall = 0;
  int tp = 0;
  int num_pred = 0;
  int num_gt = 0;
};

/// Confidence-agnostic counts at one IoU threshold, using the same matching
/// as average_precision().
PrecisionRecall precision_recall(const std::vector<std::vector<Boxd>> &predictions,
                                 const std::vector<std::vector<Boxd>> &ground_truth, double threshold,
                                 IouSpace space = IouSpace::kBev);

} // namespace liso::eval
