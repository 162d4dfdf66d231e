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

// liso <subcommand> [flags]
//
// Exit status: 0 success, 1 invalid arguments or config, 2 runtime failure.
// Stage metrics go to stderr so that stdout and output files stay
// reproducible.

#include "liso/pipeline.hpp"
#include "liso/synthworld.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace liso;

namespace
{

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct Common
{
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

template <typename T> void override_with(const std::optional<T> &flag, T &target)
{
  if (flag)
    target = *flag;
}

pipeline::PipelineConfig load_config(const Common &c)
{
  pipeline::PipelineConfig cfg;
  if (c.config)
    cfg = pipeline::read_config(*c.config);
  for (const auto &kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorKind::kInvalidArgument, "--set expects key=value, got '" + kv + "'");
    pipeline::set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed)
    cfg.seed = *c.seed;
  return cfg;
}

void log(const pipeline::StageMetrics &m) { std::cerr << m.to_line() << '\n'; }

} // namespace

int main(int argc, char **argv)
{
  CLI::App app{"Pseudo ground truth mining from lidar sequences with motion cues"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--config", common.config, "key=value config file overriding the defaults");
  app.add_option("--seed", common.seed, "global seed");
  app.add_option("--set", common.overrides, "config override key=value (repeatable)");

  // synth
  auto *synth = app.add_subcommand("synth", "generate a synthetic sequence");
  std::optional<fs::path> synth_spec;
  fs::path synth_out;
  std::optional<std::uint64_t> synth_random;
  synth::RandomWorldOptions rw;
  synth->add_option("--spec", synth_spec, "world spec file");
  synth->add_option("--random", synth_random, "draw a random world with this seed instead of --spec");
  synth->add_option("--moving", rw.moving_actors, "random world: moving actors");
  synth->add_option("--static", rw.static_actors, "random world: parked actors");
  synth->add_option("--frames", rw.frame_count, "random world: frame count");
  synth->add_option("--noise", rw.noise_sigma, "random world: point noise sigma (m)");
  std::optional<std::string> synth_id;
  synth->add_option("--id", synth_id, "sequence id (overrides the spec)");
  synth->add_option("--out", synth_out, "output sequence directory")->required();

  // cluster
  auto *clu = app.add_subcommand("cluster", "moving-object proposals for one sequence");
  fs::path clu_seq, clu_out;
  std::optional<double> clu_eps, clu_speed, clu_aspect, clu_area, clu_volume, clu_scale;
  std::optional<int> clu_min_pts;
  clu->add_option("--seq", clu_seq)->required();
  clu->add_option("--out", clu_out)->required();
  clu->add_option("--eps", clu_eps);
  clu->add_option("--min-pts", clu_min_pts);
  clu->add_option("--static-speed", clu_speed, "m/s");
  clu->add_option("--max-aspect", clu_aspect);
  clu->add_option("--min-area", clu_area);
  clu->add_option("--min-volume", clu_volume);
  clu->add_option("--flow-scale", clu_scale);

  // track
  auto *trk = app.add_subcommand("track", "track proposals through a sequence (world-frame output)");
  fs::path trk_seq, trk_boxes, trk_out;
  std::optional<double> trk_dist, trk_conf, trk_margin;
  std::optional<int> trk_coast, trk_len;
  trk->add_option("--seq", trk_seq)->required();
  trk->add_option("--boxes", trk_boxes)->required();
  trk->add_option("--out", trk_out)->required();
  trk->add_option("--match-max-dist", trk_dist);
  trk->add_option("--coast-steps", trk_coast);
  trk->add_option("--min-track-len", trk_len);
  trk->add_option("--min-median-conf", trk_conf);
  trk->add_option("--lookup-margin", trk_margin);

  // smooth
  auto *smo = app.add_subcommand("smooth", "jerk smoothing, heading alignment and size voting");
  fs::path smo_tracks, smo_out;
  std::optional<double> smo_beta, smo_len, smo_lr, smo_dt, smo_eps, smo_pct;
  std::optional<int> smo_steps;
  smo->add_option("--tracks", smo_tracks)->required();
  smo->add_option("--out", smo_out)->required();
  smo->add_option("--beta", smo_beta);
  smo->add_option("--min-length", smo_len, "m");
  smo->add_option("--step-size", smo_lr);
  smo->add_option("--steps", smo_steps);
  smo->add_option("--dt", smo_dt, "frame interval (s)");
  smo->add_option("--stationary-eps", smo_eps, "m/frame");
  smo->add_option("--percentile", smo_pct);

  // selftrain
  auto *st = app.add_subcommand("selftrain", "self-training rounds over all sequences under --seqs");
  fs::path st_seqs, st_work;
  std::string st_tracks = "tracks_smooth.txt";
  std::optional<int> st_rounds, st_drop;
  std::optional<long> st_steps;
  std::optional<std::string> st_detector;
  st->add_option("--seqs", st_seqs, "sequence directory or a directory of sequences")->required();
  st->add_option("--work", st_work, "per-sequence outputs; <work>/<id>/<tracks-name> must exist")->required();
  st->add_option("--tracks-name", st_tracks, "initial smoothed tracks file name");
  st->add_option("--rounds", st_rounds);
  st->add_option("--steps-per-round", st_steps);
  st->add_option("--weight-drop-every", st_drop);
  st->add_option("--detector", st_detector, "mock | subprocess:<cmd>");

  // eval
  auto *ev = app.add_subcommand("eval", "AP / AOE of predictions against ground truth");
  fs::path ev_gt, ev_pred, ev_report, ev_pr;
  std::optional<std::string> ev_space, ev_thr, ev_clip, ev_region;
  bool ev_crop_pred = false;
  ev->add_option("--gt", ev_gt)->required();
  ev->add_option("--pred", ev_pred)->required();
  ev->add_option("--iou-space", ev_space, "bev | 3d");
  ev->add_option("--thresholds", ev_thr, "comma separated IoU thresholds");
  ev->add_option("--min-pr-clip", ev_clip, "value or none");
  ev->add_option("--region", ev_region, "<x>x<y> meters or none");
  ev->add_flag("--crop-predictions-only", ev_crop_pred);
  ev->add_option("--report", ev_report);
  ev->add_option("--pr-curve", ev_pr);

  // pipeline
  auto *pl = app.add_subcommand("pipeline", "cluster, track, smooth, selftrain and eval end to end");
  std::optional<fs::path> pl_in, pl_out;
  bool pl_dump = false;
  pl->add_option("--input", pl_in, "overrides input_root");
  pl->add_option("--output", pl_out, "overrides output_root");
  pl->add_flag("--print-config", pl_dump, "print the effective config and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    auto cfg = load_config(common);
    if (*synth) {
      synth::WorldSpec spec;
      if (synth_spec && synth_random)
        throw Error(ErrorKind::kInvalidArgument, "use either --spec or --random");
      if (synth_spec)
        spec = synth::read_world_spec(*synth_spec);
      else if (synth_random)
        spec = synth::random_world(*synth_random, rw);
      else
        throw Error(ErrorKind::kInvalidArgument, "synth needs --spec or --random");
      override_with(synth_id, spec.sequence_id);
      synth::write_synth(synth_out, synth::generate(spec));
    } else if (*clu) {
      auto p = cfg.cluster;
      override_with(clu_eps, p.dbscan_eps);
      override_with(clu_min_pts, p.dbscan_min_pts);
      override_with(clu_speed, p.static_speed_threshold);
      override_with(clu_aspect, p.max_aspect);
      override_with(clu_area, p.min_area);
      override_with(clu_volume, p.min_volume);
      override_with(clu_scale, p.flow_feature_scale);
      p.validate();
      log(pipeline::run_cluster(clu_seq, clu_out, p));
    } else if (*trk) {
      auto p = cfg.tracker;
      override_with(trk_dist, p.match_max_dist);
      override_with(trk_coast, p.coast_steps);
      override_with(trk_len, p.min_track_len);
      override_with(trk_conf, p.min_median_conf);
      override_with(trk_margin, p.lookup_margin);
      p.validate();
      log(pipeline::run_track(trk_seq, trk_boxes, trk_out, p));
    } else if (*smo) {
      auto p = cfg.smooth;
      override_with(smo_beta, p.beta);
      override_with(smo_len, p.min_track_length_m);
      override_with(smo_lr, p.step_size);
      override_with(smo_steps, p.steps);
      override_with(smo_dt, p.frame_interval_s);
      override_with(smo_eps, p.stationary_eps);
      override_with(smo_pct, p.size_percentile);
      p.validate();
      log(pipeline::run_smooth(smo_tracks, smo_out, p));
    } else if (*st) {
      override_with(st_rounds, cfg.schedule.total_rounds);
      override_with(st_steps, cfg.schedule.steps_per_round);
      override_with(st_drop, cfg.schedule.rounds_per_weight_drop);
      override_with(st_detector, cfg.detector);
      cfg.validate();
      const auto dirs = io::find_sequences(st_seqs);
      if (dirs.empty())
        throw Error(ErrorKind::kMissingFile, "no sequences under " + st_seqs.string());
      pipeline::SelfTrainStageOptions opts;
      opts.work_root = st_work;
      opts.tracks_name = st_tracks;
      opts.params = pipeline::selftrain_params(cfg);
      auto detector = pipeline::make_detector(cfg.detector, st_work / "detector");
      for (const auto &m : pipeline::run_selftrain_stage(dirs, opts, *detector))
        log(m);
    } else if (*ev) {
      if (ev_space)
        pipeline::set_config_value(cfg, "eval.iou_space", *ev_space);
      if (ev_thr)
        pipeline::set_config_value(cfg, "eval.thresholds", *ev_thr);
      if (ev_clip)
        pipeline::set_config_value(cfg, "eval.min_pr_clip", *ev_clip);
      if (ev_region)
        pipeline::set_config_value(cfg, "eval.region", *ev_region);
      if (ev_crop_pred)
        cfg.eval.crop_predictions_only = true;
      cfg.eval.validate();
      eval::EvalReport rep;
      log(pipeline::run_eval(ev_gt, ev_pred, cfg.eval, ev_report, ev_pr, &rep));
      if (ev_report.empty())
        std::cout << rep.to_text();
    } else if (*pl) {
      if (pl_in)
        cfg.input_root = *pl_in;
      if (pl_out)
        cfg.output_root = *pl_out;
      if (pl_dump) {
        std::cout << pipeline::format_config(cfg);
        return 0;
      }
      pipeline::run_pipeline(cfg, &std::cerr);
    }
  } catch (const Error &e) {
    std::cerr << "liso: " << to_string(e.kind()) << ": " << e.what() << '\n';
    return e.kind() == ErrorKind::kInvalidArgument ? kExitValidation : kExitRuntime;
  } catch (const std::exception &e) {
    std::cerr << "liso: runtime: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
