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

#include "liso/trackopt.hpp"

#include <algorithm>
#include <cmath>

namespace liso::trackopt
{

void SmoothParams::validate() const
{
  if (!(beta > 0) || steps < 1 || !(step_size > 0) || !(frame_interval_s > 0) || min_track_length_m < 0 ||
      stationary_eps < 0 || size_percentile < 0 || size_percentile > 100)
    throw Error(ErrorKind::kInvalidArgument, "smoothing parameters out of range");
}

Positionsd minimize_jerk(const Positionsd &observed, const SmoothParams &params, SmoothDiagnostics *diag)
{
  params.validate();
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  Positionsd x = observed;
  Positionsd m = Positionsd::Zero(x.rows(), 3), v = Positionsd::Zero(x.rows(), 3);
  Positionsd best = x;
  SmoothDiagnostics d;
  d.optimized = true;

  auto lg = jerk_loss<double>(x, observed, params.beta, params.frame_interval_s);
  d.initial_loss = d.final_loss = lg.loss;
  double best_loss = lg.loss;
  double b1t = 1, b2t = 1;
  for (int step = 1; step <= params.steps; ++step) {
    if (!std::isfinite(lg.loss) || !lg.gradient.allFinite()) {
      d.aborted = true;
      d.message = "non-finite loss at step " + std::to_string(step - 1);
      d.final_loss = d.initial_loss;
      if (diag)
        *diag = d;
      return observed;
    }
    b1t *= kBeta1;
    b2t *= kBeta2;
    m = kBeta1 * m + (1 - kBeta1) * lg.gradient;
    v = kBeta2 * v + (1 - kBeta2) * lg.gradient.cwiseAbs2();
    const Positionsd mhat = m / (1 - b1t);
    const Positionsd vhat = v / (1 - b2t);
    x.array() -= params.step_size * mhat.array() / (vhat.array().sqrt() + kEps);
    lg = jerk_loss<double>(x, observed, params.beta, params.frame_interval_s);
    if (std::isfinite(lg.loss) && lg.loss < best_loss) {
      best_loss = lg.loss;
      best = x;
      d.best_step = step;
    }
  }
  d.final_loss = best_loss;
  if (diag)
    *diag = d;
  return best;
}

double path_length(const track::Track &track)
{
  double len = 0;
  for (std::size_t i = 1; i < track.entries.size(); ++i)
    len += (track.entries[i].box.center - track.entries[i - 1].box.center).norm();
  return len;
}

track::Track smooth_track(const track::Track &track, const SmoothParams &params, SmoothDiagnostics *diag)
{
  params.validate();
  if (path_length(track) <= params.min_track_length_m) {
    if (diag)
      *diag = SmoothDiagnostics{};
    return track;
  }
  Positionsd obs(static_cast<Eigen::Index>(track.entries.size()), 3);
  for (std::size_t i = 0; i < track.entries.size(); ++i)
    obs.row(static_cast<Eigen::Index>(i)) = track.entries[i].box.center.transpose();
  SmoothDiagnostics d;
  const Positionsd x = minimize_jerk(obs, params, &d);
  if (diag)
    *diag = d;
  track::Track out = track;
  if (d.aborted)
    return out;
  for (std::size_t i = 0; i < out.entries.size(); ++i)
    out.entries[i].box.center = x.row(static_cast<Eigen::Index>(i)).transpose();
  return out;
}

track::Track align_headings(const track::Track &track, double stationary_eps)
{
  track::Track out = track;
  const std::size_t n = out.entries.size();
  if (n < 2)
    return out;
  for (std::size_t i = 0; i < n; ++i) {
    Vec3d tangent;
    if (i == 0)
      tangent = track.entries[1].box.center - track.entries[0].box.center;
    else if (i + 1 == n)
      tangent = track.entries[n - 1].box.center - track.entries[n - 2].box.center;
    else
      tangent = 0.5 * (track.entries[i + 1].box.center - track.entries[i - 1].box.center);
    const double frames = i == 0 || i + 1 == n
                              ? std::max(1, std::abs(track.entries[i == 0 ? 1 : n - 1].frame_index -
                                                     track.entries[i == 0 ? 0 : n - 2].frame_index))
                              : std::max(1, std::abs(track.entries[i + 1].frame_index -
                                                     track.entries[i - 1].frame_index)) /
                                    2.0;
    const Vec2d t = tangent.head<2>() / frames;
    if (t.norm() < stationary_eps)
      continue;
    out.entries[i].box.heading = normalize_heading(std::atan2(t.y(), t.x()));
  }
  return out;
}

double percentile(std::vector<double> values, double p)
{
  if (values.empty())
    throw Error(ErrorKind::kInvalidArgument, "percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double rank = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (rank - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

track::Track vote_size(const track::Track &track, double p)
{
  std::vector<double> l, w, h;
  for (const auto &e : track.entries)
    if (e.observed) {
      l.push_back(e.box.size.x());
      w.push_back(e.box.size.y());
      h.push_back(e.box.size.z());
    }
  if (l.empty())
    return track;
  const Vec3d voted(percentile(l, p), percentile(w, p), percentile(h, p));
  track::Track out = track;
  for (auto &e : out.entries)
    e.box.size = voted;
  return out;
}

std::vector<track::Track> optimize_tracks(const std::vector<track::Track> &tracks, const SmoothParams &params)
{
  std::vector<track::Track> out;
  out.reserve(tracks.size());
  for (const auto &t : tracks)
    out.push_back(vote_size(align_headings(smooth_track(t, params), params.stationary_eps), params.size_percentile));
  return out;
}

} // namespace liso::trackopt
