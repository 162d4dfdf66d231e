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

#include "liso/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

namespace liso::io
{
namespace
{

static_assert(std::endian::native == std::endian::little,
              "frame files are little-endian float32; add byte swapping for this target");

constexpr const char *kBoxHeader =
    "frame track x y z l w h heading confidence pseudo observed speed";

std::string frame_name(int t, const char *ext)
{
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06d.%s", t, ext);
  return buf;
}

std::string format_double(double v)
{
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<char> read_bytes(const fs::path &path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error(ErrorKind::kMissingFile, "cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

void write_bytes(const fs::path &path, const void *data, std::size_t n)
{
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw Error(ErrorKind::kRuntime, "cannot write " + path.string());
  out.write(static_cast<const char *>(data), static_cast<std::streamsize>(n));
}

std::vector<Vec3d> read_triplets(const fs::path &path)
{
  const auto bytes = read_bytes(path);
  if (bytes.size() % (3 * sizeof(float)) != 0)
    throw Error(ErrorKind::kMalformed,
                path.string() + ": size " + std::to_string(bytes.size()) + " is not a multiple of 12");
  const std::size_t n = bytes.size() / (3 * sizeof(float));
  std::vector<float> raw(3 * n);
  std::memcpy(raw.data(), bytes.data(), bytes.size());
  std::vector<Vec3d> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = Vec3d(raw[3 * i], raw[3 * i + 1], raw[3 * i + 2]);
    if (!out[i].allFinite())
      throw Error(ErrorKind::kNonFinite, path.string() + ": non-finite value at row " + std::to_string(i));
  }
  return out;
}

void write_triplets(const fs::path &path, const std::vector<Vec3d> &v)
{
  std::vector<float> raw(3 * v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    for (int k = 0; k < 3; ++k)
      raw[3 * i + k] = static_cast<float>(v[i][k]);
  write_bytes(path, raw.data(), raw.size() * sizeof(float));
}

std::map<std::string, std::string> read_key_values(const fs::path &path)
{
  std::ifstream in(path);
  if (!in)
    throw Error(ErrorKind::kMissingFile, "cannot open " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#')
      continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorKind::kMalformed, path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

template <typename T> T parse_number(const std::string &s, const std::string &where)
{
  T v{};
  const auto *end = s.data() + s.size();
  auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end)
    throw Error(ErrorKind::kMalformed, where + ": cannot parse '" + s + "'");
  return v;
}

} // namespace

fs::path SequenceManifest::points_path(int t) const { return root / "points" / frame_name(t, "bin"); }
fs::path SequenceManifest::flow_path(int t) const { return root / "flow" / frame_name(t, "bin"); }
fs::path SequenceManifest::ground_path(int t) const { return root / "ground" / frame_name(t, "bin"); }
fs::path SequenceManifest::pose_path(int t) const { return root / "poses" / frame_name(t, "txt"); }

void sort_records(std::vector<BoxRecord> &records)
{
  std::stable_sort(records.begin(), records.end(), [](const BoxRecord &a, const BoxRecord &b) {
    if (a.frame_index != b.frame_index)
      return a.frame_index < b.frame_index;
    return a.track_id.value_or(-1) < b.track_id.value_or(-1);
  });
}

SequenceManifest read_manifest(const fs::path &seq_dir)
{
  const auto path = seq_dir / "manifest";
  const auto kv = read_key_values(path);
  SequenceManifest m;
  m.root = seq_dir;
  for (const char *key : {"sequence_id", "frame_count", "frame_interval_s"})
    if (!kv.count(key))
      throw Error(ErrorKind::kMalformed, path.string() + ": missing key " + key);
  m.sequence_id = kv.at("sequence_id");
  m.frame_count = parse_number<int>(kv.at("frame_count"), path.string());
  m.frame_interval_s = parse_number<double>(kv.at("frame_interval_s"), path.string());
  if (m.frame_count <= 0)
    throw Error(ErrorKind::kMalformed, path.string() + ": frame_count must be positive");
  if (!(m.frame_interval_s > 0))
    throw Error(ErrorKind::kMalformed, path.string() + ": frame_interval_s must be positive");
  for (int t = 0; t < m.frame_count; ++t)
    if (!fs::exists(m.points_path(t)))
      throw Error(ErrorKind::kMissingFile, "missing " + m.points_path(t).string());
  return m;
}

void write_manifest(const fs::path &seq_dir, const SequenceManifest &manifest)
{
  fs::create_directories(seq_dir);
  std::ofstream out(seq_dir / "manifest", std::ios::trunc);
  out << "sequence_id=" << manifest.sequence_id << "\n"
      << "frame_count=" << manifest.frame_count << "\n"
      << "frame_interval_s=" << format_double(manifest.frame_interval_s) << "\n";
}

PointFrame read_frame(const SequenceManifest &manifest, int t)
{
  if (t < 0 || t >= manifest.frame_count)
    throw Error(ErrorKind::kInvalidArgument, "frame index " + std::to_string(t) + " out of range");
  PointFrame frame;
  frame.timestamp_index = t;
  frame.points = read_triplets(manifest.points_path(t));
  const auto n = frame.points.size();

  if (fs::exists(manifest.flow_path(t))) {
    frame.flow = read_triplets(manifest.flow_path(t));
    if (frame.flow->size() != n)
      throw Error(ErrorKind::kLengthMismatch,
                  manifest.flow_path(t).string() + ": " + std::to_string(frame.flow->size()) +
                      " flow rows for " + std::to_string(n) + " points");
  }
  if (fs::exists(manifest.ground_path(t))) {
    const auto bytes = read_bytes(manifest.ground_path(t));
    if (bytes.size() != n)
      throw Error(ErrorKind::kLengthMismatch,
                  manifest.ground_path(t).string() + ": " + std::to_string(bytes.size()) +
                      " mask entries for " + std::to_string(n) + " points");
    frame.ground_mask = std::vector<std::uint8_t>(bytes.begin(), bytes.end());
  }
  if (fs::exists(manifest.pose_path(t))) {
    std::ifstream in(manifest.pose_path(t));
    std::vector<std::string> tokens{std::istream_iterator<std::string>(in), {}};
    if (tokens.size() != 16)
      throw Error(ErrorKind::kMalformed, manifest.pose_path(t).string() + ": expected 16 values, got " +
                                             std::to_string(tokens.size()));
    Mat4<double> m;
    for (int i = 0; i < 16; ++i)
      m(i / 4, i % 4) = parse_number<double>(tokens[i], manifest.pose_path(t).string());
    if (!m.allFinite())
      throw Error(ErrorKind::kNonFinite, manifest.pose_path(t).string() + ": non-finite pose");
    frame.pose_to_next = RigidTransformd::from_matrix(m);
  }
  return frame;
}

void write_frame(const SequenceManifest &manifest, const PointFrame &frame)
{
  validate(frame);
  const int t = frame.timestamp_index;
  write_triplets(manifest.points_path(t), frame.points);
  if (frame.flow)
    write_triplets(manifest.flow_path(t), *frame.flow);
  if (frame.ground_mask)
    write_bytes(manifest.ground_path(t), frame.ground_mask->data(), frame.ground_mask->size());
  if (frame.pose_to_next) {
    fs::create_directories(manifest.pose_path(t).parent_path());
    std::ofstream out(manifest.pose_path(t), std::ios::trunc);
    const auto &m = frame.pose_to_next->matrix();
    for (int i = 0; i < 16; ++i)
      out << format_double(m(i / 4, i % 4)) << (i % 4 == 3 ? "\n" : " ");
  }
}

SequenceManifest write_sequence(const fs::path &seq_dir, const std::string &sequence_id,
                                double frame_interval_s, const std::vector<PointFrame> &frames)
{
  SequenceManifest m;
  m.sequence_id = sequence_id;
  m.frame_count = static_cast<int>(frames.size());
  m.frame_interval_s = frame_interval_s;
  m.root = seq_dir;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    PointFrame f = frames[t];
    f.timestamp_index = static_cast<int>(t);
    write_frame(m, f);
  }
  write_manifest(seq_dir, m);
  return m;
}

std::vector<PointFrame> read_sequence(const SequenceManifest &manifest)
{
  std::vector<PointFrame> frames;
  frames.reserve(manifest.frame_count);
  for (int t = 0; t < manifest.frame_count; ++t)
    frames.push_back(read_frame(manifest, t));
  return frames;
}

void write_boxes(std::vector<BoxRecord> records, const fs::path &path)
{
  sort_records(records);
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out)
    throw Error(ErrorKind::kRuntime, "cannot write " + path.string());
  out << kBoxHeader << "\n";
  for (const auto &r : records) {
    validate(r.box);
    out << r.frame_index << ' ' << (r.track_id ? std::to_string(*r.track_id) : "-");
    for (double v : {r.box.center.x(), r.box.center.y(), r.box.center.z(), r.box.size.x(),
                     r.box.size.y(), r.box.size.z(), r.box.heading, r.box.confidence})
      out << ' ' << format_double(v);
    out << ' ' << (r.is_pseudo ? 1 : 0) << ' ' << (r.observed ? 1 : 0) << ' '
        << (r.speed ? format_double(*r.speed) : "-") << "\n";
  }
}

std::vector<BoxRecord> read_boxes(const fs::path &path)
{
  std::ifstream in(path);
  if (!in)
    throw Error(ErrorKind::kMissingFile, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kBoxHeader)
    throw Error(ErrorKind::kMalformed, path.string() + ":1: missing or unexpected header");
  std::vector<BoxRecord> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    std::istringstream ss(line);
    std::vector<std::string> tok{std::istream_iterator<std::string>(ss), {}};
    if (tok.size() != 13)
      throw Error(ErrorKind::kMalformed, where + ": expected 13 fields, got " + std::to_string(tok.size()));
    BoxRecord r;
    r.frame_index = parse_number<int>(tok[0], where);
    if (tok[1] != "-")
      r.track_id = parse_number<int>(tok[1], where);
    double v[8];
    for (int k = 0; k < 8; ++k)
      v[k] = parse_number<double>(tok[2 + k], where);
    r.box = Boxd{Vec3d(v[0], v[1], v[2]), Vec3d(v[3], v[4], v[5]), v[6], v[7]};
    if (!r.box.is_valid())
      throw Error(ErrorKind::kMalformed, where + ": box violates invariants");
    if ((tok[10] != "0" && tok[10] != "1") || (tok[11] != "0" && tok[11] != "1"))
      throw Error(ErrorKind::kMalformed, where + ": flags must be 0 or 1");
    r.is_pseudo = tok[10] == "1";
    r.observed = tok[11] == "1";
    if (tok[12] != "-")
      r.speed = parse_number<double>(tok[12], where);
    if (r.frame_index < 0)
      throw Error(ErrorKind::kMalformed, where + ": negative frame index");
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<std::vector<BoxRecord>> by_frame(const std::vector<BoxRecord> &records, int frame_count)
{
  std::vector<std::vector<BoxRecord>> out(frame_count);
  for (const auto &r : records) {
    if (r.frame_index < 0 || r.frame_index >= frame_count)
      throw Error(ErrorKind::kInvalidArgument,
                  "box record frame " + std::to_string(r.frame_index) + " outside sequence");
    out[r.frame_index].push_back(r);
  }
  return out;
}

std::vector<fs::path> find_sequences(const fs::path &root)
{
  if (fs::exists(root / "manifest"))
    return {root};
  std::vector<fs::path> out;
  if (!fs::is_directory(root))
    throw Error(ErrorKind::kMissingFile, "no such directory " + root.string());
  for (const auto &entry : fs::directory_iterator(root))
    if (entry.is_directory() && fs::exists(entry.path() / "manifest"))
      out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

} // namespace liso::io
