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

#ifndef UQDM_COMMON_HPP_
#define UQDM_COMMON_HPP_

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace uqdm {

using Vec = Eigen::ArrayXd;
using Mat = Eigen::MatrixXd;
using IndexMat = Eigen::Matrix<int32_t, Eigen::Dynamic, Eigen::Dynamic>;

// Error hierarchy. Every category maps to a distinct CLI exit code; see
// tools/uqdm.cpp.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Precondition violation (argument out of its declared domain).
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& msg) : Error(msg) {}
};

// Noise schedule fails a validity requirement (e.g. non-decreasing SNR).
class ScheduleError : public Error {
 public:
  explicit ScheduleError(const std::string& msg) : Error(msg) {}
};

// Non-finite value produced where a finite one is required.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Entropy-coding support would exceed the representable table size.
class CodingRangeError : public Error {
 public:
  explicit CodingRangeError(const std::string& msg) : Error(msg) {}
};

// Bitstream cannot be decoded (corruption, truncation inside the header,
// coder state desync).
class DecodeError : public Error {
 public:
  explicit DecodeError(const std::string& msg) : Error(msg) {}
};

// Malformed file contents (images, checkpoints, point sets, headers).
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& msg) : Error(msg) {}
};

// Bitstream was produced under different denoiser weights.
class DigestMismatchError : public Error {
 public:
  explicit DigestMismatchError(const std::string& msg) : Error(msg) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// Runs fn(begin, end) over disjoint ranges covering [0, n). Results must be
// written to disjoint slots, so the output is identical for any thread count.
inline void parallel_for(std::size_t n, int threads,
                         const std::function<void(std::size_t, std::size_t)>& fn) {
  if (threads <= 1 || n < 2) {
    fn(0, n);
    return;
  }
  std::size_t nt = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::vector<std::thread> pool;
  pool.reserve(nt);
  std::size_t chunk = (n + nt - 1) / nt;
  for (std::size_t w = 0; w < nt; ++w) {
    std::size_t lo = w * chunk;
    std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace uqdm

#endif  // UQDM_COMMON_HPP_
