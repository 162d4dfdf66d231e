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

// Track regularization: jerk-minimizing center smoothing, heading alignment
// to the smoothed path and percentile size voting.

#pragma once

#include "liso/core.hpp"
#include "liso/tracker.hpp"

#include <Eigen/Core>

#include <string>
#include <vector>

namespace liso::trackopt
{

/// T x 3 center positions, one row per time step.
template <typename Scalar> using Positions = Eigen::Matrix<Scalar, Eigen::Dynamic, 3>;
using Positionsd = Positions<double>;

struct SmoothParams
{
  double beta = 3.0;
  /// Tracks with a shorter center path are left untouched.
  double min_track_length_m = 3.0;
  double step_size = 0.1;
  int steps = 2000;
  double frame_interval_s = 0.1;
  /// Below this tangent norm (m/frame) a box keeps its previous heading.
  double stationary_eps = 0.05;
  double size_percentile = 90.0;

  void validate() const;
};

template <typename Scalar> struct LossAndGradient
{
  Scalar loss = 0;
  Positions<Scalar> gradient;
};

/// Fourth-order forward difference coefficients.
inline constexpr std::array<int, 5> kFourthDifference{1, -4, 6, -4, 1};

/// sum_i |d^4 x_i / dt^4|^2 + beta * sum_i |x_i - x_obs,i|^2 with d^4 taken
/// as four repeated forward differences (valid for i < T - 4), together with
/// its exact gradient with respect to `smooth`. Fewer than five samples leave
/// only the regularizer.
template <typename Scalar>
LossAndGradient<Scalar> jerk_loss(const Positions<Scalar> &smooth, const Positions<Scalar> &observed, Scalar beta,
                                  Scalar dt)
{
  if (smooth.rows() != observed.rows())
    throw Error(ErrorKind::kLengthMismatch, "jerk_loss: smooth and observed differ in length");
  if (!(dt > 0))
    throw Error(ErrorKind::kInvalidArgument, "jerk_loss: dt must be positive");
  const Eigen::Index n = smooth.rows();
  const Scalar inv = Scalar(1) / (dt * dt * dt * dt);
  LossAndGradient<Scalar> out;
  out.gradient = Positions<Scalar>::Zero(n, 3);
  for (Eigen::Index i = 0; i + 4 < n; ++i) {
    Eigen::Matrix<Scalar, 1, 3> r = Eigen::Matrix<Scalar, 1, 3>::Zero();
    for (int k = 0; k < 5; ++k)
      r += Scalar(kFourthDifference[k]) * smooth.row(i + k);
    r *= inv;
    out.loss += r.squaredNorm();
    for (int k = 0; k < 5; ++k)
      out.gradient.row(i + k) += Scalar(2) * inv * Scalar(kFourthDifference[k]) * r;
  }
  const Positions<Scalar> diff = smooth - observed;
  out.loss += beta * diff.squaredNorm();
  out.gradient += Scalar(2) * beta * diff;
  return out;
}

struct SmoothDiagnostics
{
  bool optimized = false;
  bool aborted = false;
  double initial_loss = 0;
  double final_loss = 0;
  int best_step = 0;
  std::string message;
};

/// Adam from `observed`; returns the best iterate seen (never worse than the start).
Positionsd minimize_jerk(const Positionsd &observed, const SmoothParams &params, SmoothDiagnostics *diag = nullptr);

/// Total center path length.
double path_length(const track::Track &track);

/// Centers replaced by minimize_jerk() when the path is longer than
/// min_track_length_m; otherwise the track is returned unchanged.
track::Track smooth_track(const track::Track &track, const SmoothParams &params, SmoothDiagnostics *diag = nullptr);

/// Headings follow the central-difference tangent of the centers (one-sided at
/// the ends); near-stationary entries keep their heading.
track::Track align_headings(const track::Track &track, double stationary_eps = 0.05);

/// Percentile with linear interpolation between closest ranks (rank p/100*(n-1)).
double percentile(std::vector<double> values, double p);

/// l, w, h each set to their percentile over observed entries, for every entry.
track::Track vote_size(const track::Track &track, double p = 90.0);

/// smooth -> align -> vote for every track. Each track is handled
/// independently; the batch form exists for convenience.
std::vector<track::Track> optimize_tracks(const std::vector<track::Track> &tracks, const SmoothParams &params);

} // namespace liso::trackopt
