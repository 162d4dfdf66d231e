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

// File-level stages and the end-to-end pipeline. Every stage reads and
// writes the io formats, so running `pipeline` is the same as running the
// stages one after another by hand.
//
// Output layout under output_root, per sequence id:
//   <id>/boxes_init.txt        clustering proposals (ego frame)
//   <id>/tracks.txt            tracks (world frame = ego frame of frame 0)
//   <id>/tracks_smooth.txt     smoothed tracks (world frame)
//   <id>/pseudo_gt_r<k>.txt    pseudo ground truth after round k (ego frame)
//   <id>/pseudo_gt.txt         last round
//   <id>/eval_r<k>.txt         when <seq>/boxes_gt.txt exists (pr_r<k>.csv alongside)
//   config.txt
//   summary.txt

#pragma once

#include "liso/cluster.hpp"
#include "liso/eval.hpp"
#include "liso/selftrain.hpp"
#include "liso/tracker.hpp"
#include "liso/trackopt.hpp"

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace liso::pipeline
{

namespace fs = std::filesystem;

struct PipelineConfig
{
  std::uint64_t seed = 0;
  fs::path input_root;
  fs::path output_root;
  int workers = 1;
  cluster::ClusterParams cluster;
  track::TrackerParams tracker;
  /// frame_interval_s here is only a fallback; sequences carry their own
  trackopt::SmoothParams smooth;
  selftrain::SelfTrainSchedule schedule{30000, 2, 2};
  double nms_iou = 0.1;
  bool include_coasted = false;
  /// "mock" or "subprocess:<command>"
  std::string detector = "mock";
  eval::EvalConfig eval;

  /// Throws Error(kInvalidArgument) on the first bad value.
  void validate() const;
};

/// key=value lines; '#' starts a comment; keys not listed by config_keys() are rejected.
PipelineConfig parse_config(const std::string &text, PipelineConfig base = {});
PipelineConfig read_config(const fs::path &path, PipelineConfig base = {});
std::string format_config(const PipelineConfig &config);
std::vector<std::string> config_keys();
/// Apply one key=value override.
void set_config_value(PipelineConfig &config, const std::string &key, const std::string &value);

selftrain::SelfTrainParams selftrain_params(const PipelineConfig &config);

std::unique_ptr<selftrain::Detector> make_detector(const std::string &spec, const fs::path &workdir);

/// Line printed to the log stream after each stage.
struct StageMetrics
{
  std::string stage;
  std::string sequence;
  std::vector<std::pair<std::string, double>> values;
  double seconds = 0;

  std::string to_line() const;
};

// --- stages -----------------------------------------------------------------

/// Proposals for every frame of the sequence.
StageMetrics run_cluster(const fs::path &seq_dir, const fs::path &out, const cluster::ClusterParams &params);

/// Ego-frame proposals in, world-frame tracks out (initial filter mode).
StageMetrics run_track(const fs::path &seq_dir, const fs::path &boxes, const fs::path &out,
                       const track::TrackerParams &params);

/// Smoothing, heading alignment and size voting.
StageMetrics run_smooth(const fs::path &tracks, const fs::path &out, const trackopt::SmoothParams &params);

struct SelfTrainStageOptions
{
  /// per sequence: <work_root>/<id>/<tracks_name> holds the initial tracks
  fs::path work_root;
  std::string tracks_name = "tracks_smooth.txt";
  selftrain::SelfTrainParams params;
};

/// Writes pseudo_gt_r0 .. pseudo_gt_r<rounds> and pseudo_gt.txt per sequence.
std::vector<StageMetrics> run_selftrain_stage(const std::vector<fs::path> &seq_dirs,
                                              const SelfTrainStageOptions &options, selftrain::Detector &detector);

/// Report text and PR csv; either path may be empty.
StageMetrics run_eval(const fs::path &gt, const fs::path &pred, const eval::EvalConfig &config,
                      const fs::path &report, const fs::path &pr_csv, eval::EvalReport *report_out = nullptr);

/// cluster -> track -> smooth -> selftrain -> eval over every sequence under
/// input_root. Validates the config before touching anything. Metrics lines
/// go to `log` when given. A failing stage throws with the stage name in the
/// message; outputs already written stay on disk.
void run_pipeline(const PipelineConfig &config, std::ostream *log = nullptr);

} // namespace liso::pipeline
