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

#include "liso/pipeline.hpp"

#include "liso/io.hpp"

#include <atomic>
#include <charconv>
#include <chrono>
#include <exception>
#include <fstream>
#include <functional>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

namespace liso::pipeline
{

namespace
{

std::string fmt(double v)
{
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string trim(const std::string &s)
{
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos)
    return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string &key, const std::string &value)
{
  throw Error(ErrorKind::kInvalidArgument, "config: bad value for " + key + ": '" + value + "'");
}

double parse_double(const std::string &key, const std::string &value)
{
  double v = 0;
  const auto *end = value.data() + value.size();
  auto res = std::from_chars(value.data(), end, v);
  if (res.ec != std::errc{} || res.ptr != end)
    bad_value(key, value);
  return v;
}

template <typename Int> Int parse_int(const std::string &key, const std::string &value)
{
  Int v = 0;
  const auto *end = value.data() + value.size();
  auto res = std::from_chars(value.data(), end, v);
  if (res.ec != std::errc{} || res.ptr != end)
    bad_value(key, value);
  return v;
}

bool parse_bool(const std::string &key, const std::string &value)
{
  if (value == "true" || value == "1")
    return true;
  if (value == "false" || value == "0")
    return false;
  bad_value(key, value);
}

struct Field
{
  std::string key;
  std::function<void(PipelineConfig &, const std::string &)> set;
  std::function<std::string(const PipelineConfig &)> get;
};

template <typename Proj> Field real(std::string key, Proj proj)
{
  return {key, [proj, key](PipelineConfig &c, const std::string &v) { proj(c) = parse_double(key, v); },
          [proj](const PipelineConfig &c) { return fmt(proj(const_cast<PipelineConfig &>(c))); }};
}

template <typename Proj> Field integer(std::string key, Proj proj)
{
  using T = std::remove_reference_t<decltype(proj(std::declval<PipelineConfig &>()))>;
  return {key, [proj, key](PipelineConfig &c, const std::string &v) { proj(c) = parse_int<T>(key, v); },
          [proj](const PipelineConfig &c) { return std::to_string(proj(const_cast<PipelineConfig &>(c))); }};
}

template <typename Proj> Field boolean(std::string key, Proj proj)
{
  return {key, [proj, key](PipelineConfig &c, const std::string &v) { proj(c) = parse_bool(key, v); },
          [proj](const PipelineConfig &c) {
            return std::string(proj(const_cast<PipelineConfig &>(c)) ? "true" : "false");
          }};
}

const std::vector<Field> &fields()
{
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    f.push_back(integer("seed", [](PipelineConfig &c) -> std::uint64_t & { return c.seed; }));
    f.push_back({"input_root", [](PipelineConfig &c, const std::string &v) { c.input_root = v; },
                 [](const PipelineConfig &c) { return c.input_root.string(); }});
    f.push_back({"output_root", [](PipelineConfig &c, const std::string &v) { c.output_root = v; },
                 [](const PipelineConfig &c) { return c.output_root.string(); }});
    f.push_back(integer("workers", [](PipelineConfig &c) -> int & { return c.workers; }));

    f.push_back(real("cluster.static_speed_threshold",
                     [](PipelineConfig &c) -> double & { return c.cluster.static_speed_threshold; }));
    f.push_back(real("cluster.eps", [](PipelineConfig &c) -> double & { return c.cluster.dbscan_eps; }));
    f.push_back(integer("cluster.min_pts", [](PipelineConfig &c) -> int & { return c.cluster.dbscan_min_pts; }));
    f.push_back(real("cluster.max_aspect", [](PipelineConfig &c) -> double & { return c.cluster.max_aspect; }));
    f.push_back(real("cluster.min_area", [](PipelineConfig &c) -> double & { return c.cluster.min_area; }));
    f.push_back(real("cluster.min_volume", [](PipelineConfig &c) -> double & { return c.cluster.min_volume; }));
    f.push_back(real("cluster.flow_feature_scale",
                     [](PipelineConfig &c) -> double & { return c.cluster.flow_feature_scale; }));

    f.push_back(real("tracker.match_max_dist", [](PipelineConfig &c) -> double & { return c.tracker.match_max_dist; }));
    f.push_back(integer("tracker.coast_steps", [](PipelineConfig &c) -> int & { return c.tracker.coast_steps; }));
    f.push_back(integer("tracker.min_track_len", [](PipelineConfig &c) -> int & { return c.tracker.min_track_len; }));
    f.push_back(
        real("tracker.min_median_conf", [](PipelineConfig &c) -> double & { return c.tracker.min_median_conf; }));
    f.push_back(real("tracker.lookup_margin", [](PipelineConfig &c) -> double & { return c.tracker.lookup_margin; }));
    f.push_back(real("tracker.dynamic_speed_threshold",
                     [](PipelineConfig &c) -> double & { return c.tracker.dynamic_speed_threshold; }));

    f.push_back(real("smooth.beta", [](PipelineConfig &c) -> double & { return c.smooth.beta; }));
    f.push_back(
        real("smooth.min_track_length_m", [](PipelineConfig &c) -> double & { return c.smooth.min_track_length_m; }));
    f.push_back(real("smooth.step_size", [](PipelineConfig &c) -> double & { return c.smooth.step_size; }));
    f.push_back(integer("smooth.steps", [](PipelineConfig &c) -> int & { return c.smooth.steps; }));
    f.push_back(real("smooth.frame_interval_s", [](PipelineConfig &c) -> double & { return c.smooth.frame_interval_s; }));
    f.push_back(real("smooth.stationary_eps", [](PipelineConfig &c) -> double & { return c.smooth.stationary_eps; }));
    f.push_back(real("smooth.size_percentile", [](PipelineConfig &c) -> double & { return c.smooth.size_percentile; }));

    f.push_back(
        integer("selftrain.steps_per_round", [](PipelineConfig &c) -> long & { return c.schedule.steps_per_round; }));
    f.push_back(integer("selftrain.weight_drop_every",
                        [](PipelineConfig &c) -> int & { return c.schedule.rounds_per_weight_drop; }));
    f.push_back(integer("selftrain.rounds", [](PipelineConfig &c) -> int & { return c.schedule.total_rounds; }));
    f.push_back(real("selftrain.nms_iou", [](PipelineConfig &c) -> double & { return c.nms_iou; }));
    f.push_back(boolean("selftrain.include_coasted", [](PipelineConfig &c) -> bool & { return c.include_coasted; }));
    f.push_back({"selftrain.detector", [](PipelineConfig &c, const std::string &v) { c.detector = v; },
                 [](const PipelineConfig &c) { return c.detector; }});

    f.push_back({"eval.thresholds",
                 [](PipelineConfig &c, const std::string &v) {
                   std::vector<double> t;
                   std::stringstream ss(v);
                   std::string item;
                   while (std::getline(ss, item, ','))
                     t.push_back(parse_double("eval.thresholds", trim(item)));
                   c.eval.iou_thresholds = t;
                 },
                 [](const PipelineConfig &c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.eval.iou_thresholds.size(); ++i)
                     s += (i ? "," : "") + fmt(c.eval.iou_thresholds[i]);
                   return s;
                 }});
    f.push_back({"eval.iou_space",
                 [](PipelineConfig &c, const std::string &v) {
                   if (v == "bev")
                     c.eval.iou_space = eval::IouSpace::kBev;
                   else if (v == "3d")
                     c.eval.iou_space = eval::IouSpace::k3d;
                   else
                     bad_value("eval.iou_space", v);
                 },
                 [](const PipelineConfig &c) {
                   return std::string(c.eval.iou_space == eval::IouSpace::kBev ? "bev" : "3d");
                 }});
    f.push_back({"eval.region",
                 [](PipelineConfig &c, const std::string &v) {
                   if (v == "none") {
                     c.eval.region.reset();
                     return;
                   }
                   const auto x = v.find('x');
                   if (x == std::string::npos)
                     bad_value("eval.region", v);
                   c.eval.region = eval::EvalRegion{parse_double("eval.region", v.substr(0, x)),
                                                    parse_double("eval.region", v.substr(x + 1))};
                 },
                 [](const PipelineConfig &c) {
                   return c.eval.region ? fmt(c.eval.region->size_x) + "x" + fmt(c.eval.region->size_y)
                                        : std::string("none");
                 }});
    f.push_back(boolean("eval.crop_predictions_only",
                        [](PipelineConfig &c) -> bool & { return c.eval.crop_predictions_only; }));
    f.push_back({"eval.min_pr_clip",
                 [](PipelineConfig &c, const std::string &v) {
                   if (v == "none")
                     c.eval.min_pr_clip.reset();
                   else
                     c.eval.min_pr_clip = parse_double("eval.min_pr_clip", v);
                 },
                 [](const PipelineConfig &c) {
                   return c.eval.min_pr_clip ? fmt(*c.eval.min_pr_clip) : std::string("none");
                 }});
    f.push_back(real("eval.moving_speed_threshold",
                     [](PipelineConfig &c) -> double & { return c.eval.moving_speed_threshold; }));
    f.push_back(boolean("eval.split_motion", [](PipelineConfig &c) -> bool & { return c.eval.split_motion; }));
    return f;
  }();
  return all;
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads; rethrows the
/// exception of the lowest failing index.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)> &fn)
{
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto threads = static_cast<std::size_t>(std::max(1, workers));
  if (threads == 1 || n <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < std::min(threads, n); ++t)
      pool.emplace_back(worker);
  }
  for (auto &e : errors)
    if (e)
      std::rethrow_exception(e);
}

void write_text(const fs::path &path, const std::string &text)
{
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error(ErrorKind::kRuntime, "cannot write " + path.string());
  out << text;
}

class Stopwatch
{
public:
  double seconds() const
  {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

} // namespace

// --- config -----------------------------------------------------------------

void PipelineConfig::validate() const
{
  if (workers < 1)
    throw Error(ErrorKind::kInvalidArgument, "config: workers must be at least 1");
  cluster.validate();
  tracker.validate();
  smooth.validate();
  schedule.validate();
  eval.validate();
  if (!(nms_iou >= 0 && nms_iou <= 1))
    throw Error(ErrorKind::kInvalidArgument, "config: selftrain.nms_iou must lie in [0, 1]");
  if (detector != "mock" && detector.rfind("subprocess:", 0) != 0)
    throw Error(ErrorKind::kInvalidArgument, "config: detector must be mock or subprocess:<cmd>");
  if (detector.rfind("subprocess:", 0) == 0 && detector.size() == std::string("subprocess:").size())
    throw Error(ErrorKind::kInvalidArgument, "config: empty detector command");
}

std::vector<std::string> config_keys()
{
  std::vector<std::string> out;
  for (const auto &f : fields())
    out.push_back(f.key);
  return out;
}

void set_config_value(PipelineConfig &config, const std::string &key, const std::string &value)
{
  for (const auto &f : fields())
    if (f.key == key) {
      f.set(config, value);
      return;
    }
  throw Error(ErrorKind::kInvalidArgument, "config: unknown key '" + key + "'");
}

PipelineConfig parse_config(const std::string &text, PipelineConfig base)
{
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos)
      line.resize(hash);
    line = trim(line);
    if (line.empty())
      continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorKind::kInvalidArgument, "config line " + std::to_string(lineno) + ": expected key=value");
    set_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

PipelineConfig read_config(const fs::path &path, PipelineConfig base)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error(ErrorKind::kMissingFile, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string format_config(const PipelineConfig &config)
{
  std::string out;
  for (const auto &f : fields())
    out += f.key + "=" + f.get(config) + "\n";
  return out;
}

selftrain::SelfTrainParams selftrain_params(const PipelineConfig &config)
{
  selftrain::SelfTrainParams p;
  p.schedule = config.schedule;
  p.tracker = config.tracker;
  p.smooth = config.smooth;
  p.nms_iou = config.nms_iou;
  p.include_coasted = config.include_coasted;
  p.seed = config.seed;
  return p;
}

std::unique_ptr<selftrain::Detector> make_detector(const std::string &spec, const fs::path &workdir)
{
  if (spec == "mock")
    return std::make_unique<selftrain::MockDetector>();
  const std::string prefix = "subprocess:";
  if (spec.rfind(prefix, 0) == 0 && spec.size() > prefix.size())
    return std::make_unique<selftrain::SubprocessDetector>(spec.substr(prefix.size()), workdir);
  throw Error(ErrorKind::kInvalidArgument, "unknown detector '" + spec + "'");
}

std::string StageMetrics::to_line() const
{
  std::string s = "metrics stage=" + stage;
  if (!sequence.empty())
    s += " seq=" + sequence;
  for (const auto &[k, v] : values)
    s += " " + k + "=" + fmt(v);
  s += " seconds=" + fmt(seconds);
  return s;
}

// --- stages -----------------------------------------------------------------

StageMetrics run_cluster(const fs::path &seq_dir, const fs::path &out, const cluster::ClusterParams &params)
{
  params.validate();
  Stopwatch sw;
  const auto manifest = io::read_manifest(seq_dir);
  std::vector<io::BoxRecord> records;
  for (int t = 0; t < manifest.frame_count; ++t) {
    const auto frame = io::read_frame(manifest, t);
    for (const auto &b : cluster::cluster_frame(frame, params, manifest.frame_interval_s).boxes) {
      io::BoxRecord r;
      r.frame_index = t;
      r.box = b;
      r.is_pseudo = true;
      records.push_back(r);
    }
  }
  const auto n = records.size();
  io::write_boxes(std::move(records), out);
  return {"cluster", manifest.sequence_id, {{"frames", manifest.frame_count}, {"proposals", double(n)}}, sw.seconds()};
}

StageMetrics run_track(const fs::path &seq_dir, const fs::path &boxes, const fs::path &out,
                       const track::TrackerParams &params)
{
  params.validate();
  Stopwatch sw;
  const auto seq = selftrain::load_sequence(seq_dir);
  std::vector<std::vector<Boxd>> dets(seq.frames.size());
  for (const auto &r : io::read_boxes(boxes)) {
    if (r.frame_index < 0 || r.frame_index >= static_cast<int>(dets.size()))
      throw Error(ErrorKind::kMalformed, "box record outside the sequence: frame " + std::to_string(r.frame_index));
    dets[r.frame_index].push_back(r.box);
  }
  const auto tracks =
      track::run_tracker(seq.frames, seq.frame_interval_s, dets, params, track::FilterMode::kInitial);
  auto records = track::tracks_to_records(tracks);
  const auto n = records.size();
  io::write_boxes(std::move(records), out);
  return {"track", seq.sequence_id, {{"tracks", double(tracks.size())}, {"entries", double(n)}}, sw.seconds()};
}

StageMetrics run_smooth(const fs::path &tracks_path, const fs::path &out, const trackopt::SmoothParams &params)
{
  params.validate();
  Stopwatch sw;
  const auto tracks = track::records_to_tracks(io::read_boxes(tracks_path));
  const auto smoothed = trackopt::optimize_tracks(tracks, params);
  std::size_t optimized = 0;
  for (const auto &t : tracks)
    optimized += trackopt::path_length(t) > params.min_track_length_m;
  io::write_boxes(track::tracks_to_records(smoothed), out);
  return {"smooth", "", {{"tracks", double(tracks.size())}, {"optimized", double(optimized)}}, sw.seconds()};
}

std::vector<StageMetrics> run_selftrain_stage(const std::vector<fs::path> &seq_dirs,
                                              const SelfTrainStageOptions &options, selftrain::Detector &detector)
{
  Stopwatch sw;
  std::vector<selftrain::Sequence> seqs;
  std::vector<std::vector<track::Track>> tracks;
  for (const auto &dir : seq_dirs) {
    seqs.push_back(selftrain::load_sequence(dir));
    tracks.push_back(track::records_to_tracks(
        io::read_boxes(options.work_root / seqs.back().sequence_id / options.tracks_name)));
  }
  auto write_round = [&](const selftrain::PseudoGtDatabase &db, const std::string &name) {
    for (std::size_t s = 0; s < seqs.size(); ++s)
      io::write_boxes(db.records(s), options.work_root / seqs[s].sequence_id / name);
  };
  auto round_name = [](int k) { return "pseudo_gt_r" + std::to_string(k) + ".txt"; };

  std::vector<StageMetrics> metrics;
  selftrain::SelfTrainState state;
  state.database = selftrain::build_pseudo_gt(seqs, tracks, options.params.include_coasted);
  write_round(state.database, round_name(0));
  metrics.push_back({"selftrain", "",
                     {{"round", 0}, {"labels", double(state.database.label_count())},
                      {"bank", double(state.database.bank.size())}},
                     sw.seconds()});
  for (int r = 0; r < options.params.schedule.total_rounds; ++r) {
    Stopwatch rsw;
    selftrain::RoundReport rep;
    state = selftrain::run_round(state, options.params, detector, seqs, &rep);
    write_round(state.database, round_name(state.round));
    metrics.push_back({"selftrain", "",
                       {{"round", rep.round}, {"detections", double(rep.detections)},
                        {"tracks", double(rep.tracks)}, {"labels", double(rep.labels)},
                        {"weights_dropped", rep.weights_dropped ? 1.0 : 0.0}},
                       rsw.seconds()});
  }
  write_round(state.database, "pseudo_gt.txt");
  return metrics;
}

StageMetrics run_eval(const fs::path &gt, const fs::path &pred, const eval::EvalConfig &config,
                      const fs::path &report, const fs::path &pr_csv, eval::EvalReport *report_out)
{
  config.validate();
  Stopwatch sw;
  const auto rep = eval::evaluate(io::read_boxes(pred), io::read_boxes(gt), config);
  if (report_out)
    *report_out = rep;
  if (!report.empty())
    write_text(report, rep.to_text());
  if (!pr_csv.empty())
    write_text(pr_csv, rep.pr_csv());
  StageMetrics m{"eval", "", {}, 0};
  for (const auto &r : rep.results)
    if (r.category == "all")
      m.values.emplace_back("ap@" + fmt(r.threshold), r.ap);
  m.seconds = sw.seconds();
  return m;
}

// --- pipeline ---------------------------------------------------------------

void run_pipeline(const PipelineConfig &config, std::ostream *log)
{
  config.validate();
  if (config.input_root.empty() || config.output_root.empty())
    throw Error(ErrorKind::kInvalidArgument, "config: input_root and output_root are required");
  const auto seq_dirs = io::find_sequences(config.input_root);
  if (seq_dirs.empty())
    throw Error(ErrorKind::kMissingFile, "no sequences under " + config.input_root.string());
  std::vector<io::SequenceManifest> manifests;
  for (const auto &d : seq_dirs)
    manifests.push_back(io::read_manifest(d));
  for (std::size_t i = 0; i < manifests.size(); ++i)
    for (std::size_t j = i + 1; j < manifests.size(); ++j)
      if (manifests[i].sequence_id == manifests[j].sequence_id)
        throw Error(ErrorKind::kInvalidArgument, "duplicate sequence id " + manifests[i].sequence_id);

  std::mutex log_mutex;
  auto emit = [&](StageMetrics m, const std::string &seq) {
    if (m.sequence.empty())
      m.sequence = seq;
    if (log) {
      std::lock_guard lock(log_mutex);
      *log << m.to_line() << '\n';
    }
  };
  auto stage = [&](const std::string &name, const std::function<void()> &fn) {
    try {
      fn();
    } catch (const Error &e) {
      throw Error(e.kind(), "stage " + name + ": " + e.what());
    } catch (const std::exception &e) {
      throw Error(ErrorKind::kRuntime, "stage " + name + ": " + e.what());
    }
  };

  const auto &out = config.output_root;
  fs::create_directories(out);
  write_text(out / "config.txt", format_config(config));
  auto seq_out = [&](std::size_t i) { return out / manifests[i].sequence_id; };

  stage("cluster", [&] {
    parallel_for(seq_dirs.size(), config.workers, [&](std::size_t i) {
      emit(run_cluster(seq_dirs[i], seq_out(i) / "boxes_init.txt", config.cluster), manifests[i].sequence_id);
    });
  });
  stage("track", [&] {
    parallel_for(seq_dirs.size(), config.workers, [&](std::size_t i) {
      emit(run_track(seq_dirs[i], seq_out(i) / "boxes_init.txt", seq_out(i) / "tracks.txt", config.tracker),
           manifests[i].sequence_id);
    });
  });
  stage("smooth", [&] {
    parallel_for(seq_dirs.size(), config.workers, [&](std::size_t i) {
      auto sp = config.smooth;
      sp.frame_interval_s = manifests[i].frame_interval_s;
      emit(run_smooth(seq_out(i) / "tracks.txt", seq_out(i) / "tracks_smooth.txt", sp), manifests[i].sequence_id);
    });
  });
  stage("selftrain", [&] {
    SelfTrainStageOptions opts;
    opts.work_root = out;
    opts.params = selftrain_params(config);
    auto detector = make_detector(config.detector, out / "detector");
    for (const auto &m : run_selftrain_stage(seq_dirs, opts, *detector))
      emit(m, "");
  });

  std::string summary = "# per sequence and round; see eval_r<k>.txt for the full reports\n";
  stage("eval", [&] {
    for (std::size_t i = 0; i < seq_dirs.size(); ++i) {
      const auto gt = seq_dirs[i] / "boxes_gt.txt";
      if (!fs::exists(gt))
        continue;
      for (int k = 0; k <= config.schedule.total_rounds; ++k) {
        const auto pred = seq_out(i) / ("pseudo_gt_r" + std::to_string(k) + ".txt");
        const auto report = seq_out(i) / ("eval_r" + std::to_string(k) + ".txt");
        eval::EvalReport rep;
        auto m = run_eval(gt, pred, config.eval, report, seq_out(i) / ("pr_r" + std::to_string(k) + ".csv"), &rep);
        m.values.insert(m.values.begin(), {"round", k});
        emit(m, manifests[i].sequence_id);
        for (const auto &r : rep.results)
          summary += "seq=" + manifests[i].sequence_id + " round=" + std::to_string(k) + " category=" + r.category +
                     " threshold=" + fmt(r.threshold) + " ap=" + fmt(r.ap) + " num_gt=" + std::to_string(r.num_gt) +
                     " num_pred=" + std::to_string(r.num_pred) + " num_tp=" + std::to_string(r.num_tp) + "\n";
      }
    }
  });
  write_text(out / "summary.txt", summary);
}

} // namespace liso::pipeline
