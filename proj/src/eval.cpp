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

#include "liso/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

namespace liso::eval
{
namespace
{

double cross2(const Vec2d &a, const Vec2d &b) { return a.x() * b.y() - a.y() * b.x(); }

std::string fmt(double v)
{
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

struct Ranked
{
  double confidence;
  std::size_t frame;
  std::size_t index;
};

std::vector<Ranked> rank_predictions(const std::vector<std::vector<Boxd>> &predictions)
{
  std::vector<Ranked> order;
  for (std::size_t f = 0; f < predictions.size(); ++f)
    for (std::size_t i = 0; i < predictions[f].size(); ++i)
      order.push_back({predictions[f][i].confidence, f, i});
  std::stable_sort(order.begin(), order.end(),
                   [](const Ranked &a, const Ranked &b) { return a.confidence > b.confidence; });
  return order;
}

/// Greedy matching; returns the matched GT index (or -1) per ranked prediction.
std::vector<int> greedy_match(const std::vector<Ranked> &order, const std::vector<std::vector<Boxd>> &predictions,
                              const std::vector<std::vector<Boxd>> &ground_truth, double threshold, IouSpace space)
{
  std::vector<std::vector<char>> taken(ground_truth.size());
  for (std::size_t f = 0; f < ground_truth.size(); ++f)
    taken[f].assign(ground_truth[f].size(), 0);
  std::vector<int> out;
  out.reserve(order.size());
  for (const auto &r : order) {
    int best = -1;
    double best_iou = -1;
    if (r.frame < ground_truth.size()) {
      const auto &gts = ground_truth[r.frame];
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (taken[r.frame][g])
          continue;
        const double v = iou(predictions[r.frame][r.index], gts[g], space);
        if (v >= threshold && v > best_iou) {
          best_iou = v;
          best = static_cast<int>(g);
        }
      }
      if (best >= 0)
        taken[r.frame][best] = 1;
    }
    out.push_back(best);
  }
  return out;
}

} // namespace

bool EvalRegion::contains(const Boxd &b) const
{
  return std::abs(b.center.x()) <= size_x / 2 && std::abs(b.center.y()) <= size_y / 2;
}

void EvalConfig::validate() const
{
  if (iou_thresholds.empty())
    throw Error(ErrorKind::kInvalidArgument, "eval: no IoU thresholds");
  for (double t : iou_thresholds)
    if (!(t > 0 && t < 1))
      throw Error(ErrorKind::kInvalidArgument, "eval: IoU thresholds must lie in (0, 1)");
  if (region && !(region->size_x > 0 && region->size_y > 0))
    throw Error(ErrorKind::kInvalidArgument, "eval: degenerate region");
  if (min_pr_clip && !(*min_pr_clip >= 0 && *min_pr_clip < 1))
    throw Error(ErrorKind::kInvalidArgument, "eval: min_pr_clip must lie in [0, 1)");
}

double polygon_area(std::span<const Vec2d> poly)
{
  double a = 0;
  for (std::size_t i = 0; i < poly.size(); ++i)
    a += cross2(poly[i], poly[(i + 1) % poly.size()]);
  return 0.5 * a;
}

std::vector<Vec2d> clip_convex(const std::vector<Vec2d> &subject, const std::vector<Vec2d> &clip)
{
  std::vector<Vec2d> out = subject;
  for (std::size_t e = 0; e < clip.size() && !out.empty(); ++e) {
    const Vec2d a = clip[e], b = clip[(e + 1) % clip.size()];
    const Vec2d edge = b - a;
    auto side = [&](const Vec2d &p) { return cross2(edge, p - a); };
    std::vector<Vec2d> in = std::move(out);
    out.clear();
    for (std::size_t i = 0; i < in.size(); ++i) {
      const Vec2d &p = in[i], &q = in[(i + 1) % in.size()];
      const double sp = side(p), sq = side(q);
      if (sp >= 0)
        out.push_back(p);
      if ((sp >= 0) != (sq >= 0)) {
        const double t = sp / (sp - sq);
        out.push_back(p + t * (q - p));
      }
    }
  }
  return out;
}

double intersection_bev(const Boxd &a, const Boxd &b)
{
  // cheap rejection on bounding circles
  const double ra = 0.5 * a.size.head<2>().norm(), rb = 0.5 * b.size.head<2>().norm();
  if ((a.center.head<2>() - b.center.head<2>()).norm() > ra + rb)
    return 0.0;
  const auto ca = box_corners_bev(a), cb = box_corners_bev(b);
  const std::vector<Vec2d> pa(ca.begin(), ca.end()), pb(cb.begin(), cb.end());
  const auto inter = clip_convex(pa, pb);
  if (inter.size() < 3)
    return 0.0;
  return std::max(0.0, polygon_area(inter));
}

double iou_bev(const Boxd &a, const Boxd &b)
{
  const double inter = intersection_bev(a, b);
  const double uni = a.bev_area() + b.bev_area() - inter;
  return uni > 0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

double iou_3d(const Boxd &a, const Boxd &b)
{
  const double lo = std::max(a.center.z() - a.size.z() / 2, b.center.z() - b.size.z() / 2);
  const double hi = std::min(a.center.z() + a.size.z() / 2, b.center.z() + b.size.z() / 2);
  if (hi <= lo)
    return 0.0;
  const double inter = intersection_bev(a, b) * (hi - lo);
  const double uni = a.volume() + b.volume() - inter;
  return uni > 0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

double iou(const Boxd &a, const Boxd &b, IouSpace space)
{
  return space == IouSpace::kBev ? iou_bev(a, b) : iou_3d(a, b);
}

double heading_error(double a, double b) { return std::abs(normalize_heading(a - b)); }

double heading_error_pi(double a, double b)
{
  const double e = heading_error(a, b);
  return std::min(e, std::numbers::pi - e);
}

double integrate_pr(const std::vector<PrPoint> &curve, std::optional<double> min_pr_clip)
{
  if (curve.empty())
    return 0.0;
  const double clip = min_pr_clip.value_or(0.0);
  auto clipped = [&](double p) { return min_pr_clip && p < clip ? 0.0 : p; };
  double area = 0;
  double r0 = 0, p0 = curve.front().precision;
  for (const auto &pt : curve) {
    const double r1 = pt.recall, p1 = pt.precision;
    if (r1 > r0) {
      double a = r0, pa = p0;
      if (a < clip) {
        if (r1 <= clip) {
          r0 = r1, p0 = p1;
          continue;
        }
        pa = p0 + (p1 - p0) * (clip - r0) / (r1 - r0);
        a = clip;
      }
      area += 0.5 * (r1 - a) * (clipped(pa) + clipped(p1));
    }
    r0 = r1;
    p0 = p1;
  }
  return area;
}

ApResult average_precision(const std::vector<std::vector<Boxd>> &predictions,
                           const std::vector<std::vector<Boxd>> &ground_truth, double threshold, IouSpace space,
                           std::optional<double> min_pr_clip)
{
  ApResult out;
  out.threshold = threshold;
  for (const auto &g : ground_truth)
    out.num_gt += static_cast<int>(g.size());
  const auto order = rank_predictions(predictions);
  out.num_pred = static_cast<int>(order.size());
  const auto match = greedy_match(order, predictions, ground_truth, threshold, space);

  int tp = 0, fp = 0;
  double err = 0, err_pi = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto &r = order[k];
    if (match[k] >= 0) {
      ++tp;
      const Boxd &p = predictions[r.frame][r.index];
      const Boxd &g = ground_truth[r.frame][match[k]];
      err += heading_error(p.heading, g.heading);
      err_pi += heading_error_pi(p.heading, g.heading);
    } else {
      ++fp;
    }
    const bool last_of_level = k + 1 == order.size() || order[k + 1].confidence != r.confidence;
    if (last_of_level) {
      PrPoint pt;
      pt.confidence = r.confidence;
      pt.tp = tp;
      pt.fp = fp;
      pt.precision = static_cast<double>(tp) / (tp + fp);
      pt.recall = out.num_gt > 0 ? static_cast<double>(tp) / out.num_gt : 0.0;
      out.curve.push_back(pt);
    }
  }
  out.num_tp = tp;
  out.aoe = tp > 0 ? err / tp : std::numeric_limits<double>::quiet_NaN();
  out.aoe_pi = tp > 0 ? err_pi / tp : std::numeric_limits<double>::quiet_NaN();
  out.ap = out.num_gt > 0 ? integrate_pr(out.curve, min_pr_clip) : 0.0;
  return out;
}

MotionSplit split_moving_still(const std::vector<io::BoxRecord> &gts, double threshold)
{
  MotionSplit out;
  for (const auto &g : gts)
    if (!g.speed) {
      out.missing_velocity = true;
      out.warning = "ground truth without velocity; all boxes pooled as movable";
      out.still = gts;
      return out;
    }
  for (const auto &g : gts)
    (*g.speed > threshold ? out.moving : out.still).push_back(g);
  return out;
}

std::string EvalReport::to_text() const
{
  std::ostringstream out;
  out << "# aoe: mean |yaw error| wrapped 2pi-periodic into [0,pi]; aoe_pi: pi-periodic into [0,pi/2]\n";
  if (!warning.empty())
    out << "# warning: " << warning << "\n";
  for (const auto &r : results)
    out << "category=" << r.category << " threshold=" << fmt(r.threshold) << " ap=" << fmt(r.ap) << " aoe=" << fmt(r.aoe)
        << " aoe_pi=" << fmt(r.aoe_pi) << " num_gt=" << r.num_gt << " num_pred=" << r.num_pred
        << " num_tp=" << r.num_tp << "\n";
  return out.str();
}

std::string EvalReport::pr_csv() const
{
  std::ostringstream out;
  out << "category,threshold,confidence,recall,precision,tp,fp\n";
  for (const auto &r : results)
    for (const auto &p : r.curve)
      out << r.category << ',' << fmt(r.threshold) << ',' << fmt(p.confidence) << ',' << fmt(p.recall) << ',' << fmt(p.precision) << ','
          << p.tp << ',' << p.fp << "\n";
  return out.str();
}

namespace
{

std::vector<std::vector<Boxd>> to_frames(const std::vector<io::BoxRecord> &records, int frames,
                                         const EvalConfig &config, bool is_gt)
{
  std::vector<std::vector<Boxd>> out(frames);
  for (const auto &r : records) {
    const bool crop = config.region && !(is_gt && config.crop_predictions_only);
    if (!crop || config.region->contains(r.box))
      out[r.frame_index].push_back(r.box);
  }
  return out;
}

std::vector<std::vector<Boxd>> drop_matched_elsewhere(const std::vector<std::vector<Boxd>> &pred,
                                                      const std::vector<std::vector<Boxd>> &own,
                                                      const std::vector<std::vector<Boxd>> &other, double threshold,
                                                      IouSpace space)
{
  std::vector<std::vector<Boxd>> out(pred.size());
  for (std::size_t t = 0; t < pred.size(); ++t)
    for (const auto &p : pred[t]) {
      double best_own = 0, best_other = 0;
      for (const auto &g : own[t])
        best_own = std::max(best_own, iou(p, g, space));
      for (const auto &g : other[t])
        best_other = std::max(best_other, iou(p, g, space));
      if (best_other >= threshold && best_other > best_own)
        continue;
      out[t].push_back(p);
    }
  return out;
}

} // namespace

EvalReport evaluate(const std::vector<io::BoxRecord> &predictions, const std::vector<io::BoxRecord> &ground_truth,
                    const EvalConfig &config)
{
  config.validate();
  int frames = 0;
  for (const auto &r : predictions)
    frames = std::max(frames, r.frame_index + 1);
  for (const auto &r : ground_truth)
    frames = std::max(frames, r.frame_index + 1);
  const auto pred = to_frames(predictions, frames, config, false);
  const auto gt = to_frames(ground_truth, frames, config, true);
  EvalReport rep;
  for (double t : config.iou_thresholds)
    rep.results.push_back(average_precision(pred, gt, t, config.iou_space, config.min_pr_clip));
  if (!config.split_motion || ground_truth.empty())
    return rep;
  const auto split = split_moving_still(ground_truth, config.moving_speed_threshold);
  if (split.missing_velocity) {
    rep.warning = split.warning;
    return rep;
  }
  const auto moving = to_frames(split.moving, frames, config, true);
  const auto still = to_frames(split.still, frames, config, true);
  for (double t : config.iou_thresholds) {
    auto m = average_precision(drop_matched_elsewhere(pred, moving, still, t, config.iou_space), moving, t,
                               config.iou_space, config.min_pr_clip);
    m.category = "moving";
    rep.results.push_back(std::move(m));
    auto s = average_precision(drop_matched_elsewhere(pred, still, moving, t, config.iou_space), still, t,
                               config.iou_space, config.min_pr_clip);
    s.category = "still";
    rep.results.push_back(std::move(s));
  }
  return rep;
}

PrecisionRecall precision_recall(const std::vector<std::vector<Boxd>> &predictions,
                                 const std::vector<std::vector<Boxd>> &ground_truth, double threshold,
                                 IouSpace space)
{
  PrecisionRecall out;
  const auto order = rank_predictions(predictions);
  const auto match = greedy_match(order, predictions, ground_truth, threshold, space);
  for (const auto &g : ground_truth)
    out.num_gt += static_cast<int>(g.size());
  out.num_pred = static_cast<int>(order.size());
  out.tp = static_cast<int>(std::count_if(match.begin(), match.end(), [](int m) { return m >= 0; }));
  out.precision = out.num_pred ? static_cast<double>(out.tp) / out.num_pred : 1.0;
  out.recall = out.num_gt ? static_cast<double>(out.tp) / out.num_gt : 1.0;
  return out;
}

} // namespace liso::eval
