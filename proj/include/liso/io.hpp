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

// On-disk layout of a sequence directory:
//
//   <seq>/manifest            key=value text (sequence_id, frame_count, frame_interval_s)
//   <seq>/points/%06d.bin     little-endian float32 (x, y, z) triplets
//   <seq>/flow/%06d.bin       little-endian float32 (dx, dy, dz), meters per frame interval
//   <seq>/ground/%06d.bin     one byte per point, nonzero = ground
//   <seq>/poses/%06d.txt      16 decimals, row-major, pose of ego(t+1) in ego(t)
//
// Flow, ground and pose files are optional per frame. Box files are line
// records with a fixed header, see write_boxes().

#pragma once

#include "liso/core.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace liso::io
{

namespace fs = std::filesystem;

struct SequenceManifest
{
  std::string sequence_id;
  int frame_count = 0;
  double frame_interval_s = 0.1;
  fs::path root;

  fs::path points_path(int t) const;
  fs::path flow_path(int t) const;
  fs::path ground_path(int t) const;
  fs::path pose_path(int t) const;
};

struct BoxRecord
{
  int frame_index = 0;
  std::optional<int> track_id;
  Boxd box;
  bool is_pseudo = false;
  /// false for coasted track entries
  bool observed = true;
  /// Ground-truth world speed in m/s, when known.
  std::optional<double> speed;

  bool operator==(const BoxRecord &) const = default;
};

/// Canonical record order: (frame_index, track_id) with untracked records first; stable.
void sort_records(std::vector<BoxRecord> &records);

SequenceManifest read_manifest(const fs::path &seq_dir);
void write_manifest(const fs::path &seq_dir, const SequenceManifest &manifest);

PointFrame read_frame(const SequenceManifest &manifest, int t);
void write_frame(const SequenceManifest &manifest, const PointFrame &frame);

/// Writes manifest and every frame; frame i gets timestamp_index i.
SequenceManifest write_sequence(const fs::path &seq_dir, const std::string &sequence_id,
                                double frame_interval_s, const std::vector<PointFrame> &frames);
std::vector<PointFrame> read_sequence(const SequenceManifest &manifest);

/// Sorts then writes. Doubles are printed in shortest round-trip form, so
/// read_boxes(write_boxes(x)) is bit-identical.
void write_boxes(std::vector<BoxRecord> records, const fs::path &path);
std::vector<BoxRecord> read_boxes(const fs::path &path);

/// Group records by frame index into `frame_count` buckets.
std::vector<std::vector<BoxRecord>> by_frame(const std::vector<BoxRecord> &records,
                                             int frame_count);

/// Sequence directories (those holding a manifest) directly under `root`,
/// or `root` itself when it is a sequence. Sorted by name.
std::vector<fs::path> find_sequences(const fs::path &root);

} // namespace liso::io
