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

#include "liso/core.hpp"

namespace liso
{

const char *to_string(ErrorKind kind)
{
  switch (kind) {
  case ErrorKind::kInvalidArgument: return "invalid-argument";
  case ErrorKind::kMissingFile: return "missing-file";
  case ErrorKind::kLengthMismatch: return "length-mismatch";
  case ErrorKind::kNonFinite: return "non-finite";
  case ErrorKind::kMalformed: return "malformed";
  case ErrorKind::kMissingChannel: return "missing-channel";
  case ErrorKind::kDetector: return "detector";
  case ErrorKind::kRuntime: return "runtime";
  }
  return "unknown";
}

void validate(const PointFrame &frame)
{
  const auto n = frame.points.size();
  if (frame.flow && frame.flow->size() != n)
    throw Error(ErrorKind::kLengthMismatch, "frame " + std::to_string(frame.timestamp_index) +
                                                ": flow has " + std::to_string(frame.flow->size()) +
                                                " entries for " + std::to_string(n) + " points");
  if (frame.ground_mask && frame.ground_mask->size() != n)
    throw Error(ErrorKind::kLengthMismatch,
                "frame " + std::to_string(frame.timestamp_index) + ": ground mask length mismatch");
  for (const auto &p : frame.points)
    if (!p.allFinite())
      throw Error(ErrorKind::kNonFinite, "frame " + std::to_string(frame.timestamp_index) +
                                             ": non-finite point");
  if (frame.flow)
    for (const auto &f : *frame.flow)
      if (!f.allFinite())
        throw Error(ErrorKind::kNonFinite, "frame " + std::to_string(frame.timestamp_index) +
                                               ": non-finite flow");
}

} // namespace liso
