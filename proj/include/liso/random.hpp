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

#include <cstdint>
#include <initializer_list>
#include <random>

namespace liso
{

using Rng = std::mt19937_64;

/// splitmix64 finalizer; mixes a base seed with stream/frame indices so that
/// every consumer of randomness gets an independent, reproducible stream.
inline std::uint64_t mix64(std::uint64_t z)
{
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

template <typename... Ts> std::uint64_t derive_seed(std::uint64_t base, Ts... parts)
{
  std::uint64_t h = mix64(base);
  for (std::uint64_t p : {static_cast<std::uint64_t>(parts)...})
    h = mix64(h ^ p);
  return h;
}

} // namespace liso
