// Copyright (c) the UQDM Codec Project
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef UQDM_RNG_HPP_
#define UQDM_RNG_HPP_

#include <cmath>
#include <cstdint>

#include "uqdm/math.hpp"

namespace uqdm {

// The 64-bit finalizer used for all counter-based randomness. Part of the
// bitstream compatibility contract (FORMAT.md): both coder sides must derive
// bit-identical values from (seed, t, i).
inline uint64_t mix64(uint64_t h) {
  h ^= h >> 30;
  h *= 0xbf58476d1ce4e5b9ULL;
  h ^= h >> 27;
  h *= 0x94d049bb133111ebULL;
  h ^= h >> 31;
  return h;
}

inline uint64_t mix_tuple(uint64_t seed, uint64_t t, uint64_t i) {
  uint64_t h = seed;
  h = mix64(h ^ mix64(t));
  h = mix64(h ^ mix64(i));
  return h;
}

// Uniform in [0, 1): top 53 bits of the mixed tuple.
inline double u01(uint64_t seed, uint64_t t, uint64_t i) {
  return static_cast<double>(mix_tuple(seed, t, i) >> 11) * 0x1.0p-53;
}

// Uniform dither in [-1/2, 1/2).
inline double dither(uint64_t seed, uint64_t t, uint64_t i) {
  return u01(seed, t, i) - 0.5;
}

// Uniform on the open interval (0, 1); safe under logit/log transforms.
inline double u01_open(uint64_t seed, uint64_t t, uint64_t i) {
  return (static_cast<double>(mix_tuple(seed, t, i) >> 11) + 0.5) * 0x1.0p-53;
}

// Domain-separation tags for independent streams sharing one seed.
inline constexpr uint64_t kStreamPriorLatent = 0x7a5400005a3d0001ULL;   // z_T draw
inline constexpr uint64_t kStreamForwardNoise = 0x7a5400005a3d0002ULL;  // training eps
inline constexpr uint64_t kStreamAncestral = 0x7a5400005a3d0003ULL;
inline constexpr uint64_t kStreamSwirl = 0x7a5400005a3d0004ULL;
inline constexpr uint64_t kStreamProjection = 0x7a5400005a3d0005ULL;
inline constexpr uint64_t kStreamInit = 0x7a5400005a3d0006ULL;
inline constexpr uint64_t kStreamBatch = 0x7a5400005a3d0007ULL;

inline uint64_t derive_stream(uint64_t seed, uint64_t tag) {
  return mix64(seed ^ mix64(tag));
}

// Standard normal via a Box-Muller pair on dither slots (2i, 2i+1).
// 1 - u01 lies in (0, 1], keeping the log argument positive.
inline double gaussian(uint64_t stream_seed, uint64_t t, uint64_t i) {
  double a = u01(stream_seed, t, 2 * i);
  double b = u01(stream_seed, t, 2 * i + 1);
  double r = std::sqrt(-2.0 * std::log(1.0 - a));
  return r * std::cos(2.0 * kPi * b);
}

}  // namespace uqdm

#endif  // UQDM_RNG_HPP_
