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

#ifndef UQDM_RANS_HPP_
#define UQDM_RANS_HPP_

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <queue>
#include <vector>

#include "uqdm/common.hpp"
#include "uqdm/math.hpp"

namespace uqdm {

// Entropy coder constants (normative, FORMAT.md). The state is a 64-bit
// integer renormalized a byte at a time against the lower bound kRansLow;
// the final state is flushed as 4 little-endian-ordered bytes. This keeps
// the per-stream flush overhead at most 32 bits, which the rate-bound tests
// rely on.
inline constexpr int kProbBits = 16;
inline constexpr uint32_t kProbScale = 1u << kProbBits;
inline constexpr uint64_t kRansLow = 1ull << 24;

// Discretized coding distribution over lattice indices k in [k_min, k_max]
// plus a final escape slot. Frequencies are 16-bit with a floor of 1; the
// cumulative table ends at exactly 2^16.
struct QuantizedCdf {
  int64_t k_min = 0;
  int64_t k_max = -1;
  std::vector<uint32_t> cum;  // size = bins + 1, cum[0] = 0, cum.back() = 2^16

  int bins() const { return static_cast<int>(cum.size()) - 1; }
  int escape_index() const { return bins() - 1; }
  bool contains(int64_t k) const { return k >= k_min && k <= k_max; }
  uint32_t freq(int idx) const { return cum[idx + 1] - cum[idx]; }
};

namespace detail {

// Largest-remainder quantization of masses to a total of kProbScale with a
// frequency floor of 1. Deterministic: remainder ties break on lower index,
// floor compensation always takes from the currently largest bin.
inline std::vector<uint32_t> quantize_masses(const std::vector<double>& mass) {
  const size_t n = mass.size();
  std::vector<uint32_t> freq(n, 0);
  std::vector<double> rem(n, 0.0);
  int64_t total = 0;
  for (size_t i = 0; i < n; ++i) {
    double raw = std::max(0.0, mass[i]) * kProbScale;
    double fl = std::floor(raw);
    freq[i] = static_cast<uint32_t>(std::min(fl, double(kProbScale)));
    rem[i] = raw - fl;
    total += freq[i];
  }
  int64_t deficit = int64_t(kProbScale) - total;
  if (deficit > 0) {
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return rem[a] > rem[b]; });
    for (size_t i = 0; deficit > 0; i = (i + 1) % n) {
      ++freq[order[i]];
      --deficit;
    }
  }
  // Max-heap over (freq, index); also used to settle any negative deficit.
  std::priority_queue<std::pair<uint32_t, size_t>> heap;
  for (size_t i = 0; i < n; ++i) heap.emplace(freq[i], i);
  while (deficit < 0) {
    auto [f, i] = heap.top();
    heap.pop();
    freq[i] = f - 1;
    heap.emplace(freq[i], i);
    ++deficit;
  }
  for (size_t i = 0; i < n; ++i) {
    while (freq[i] == 0) {
      auto [f, j] = heap.top();
      heap.pop();
      if (freq[j] != f) continue;  // stale entry
      freq[i] = 1;
      freq[j] = f - 1;
      heap.emplace(freq[j], j);
    }
  }
  return freq;
}

inline QuantizedCdf cdf_from_masses(int64_t k_min, int64_t k_max,
                                    const std::vector<double>& mass) {
  QuantizedCdf cdf;
  cdf.k_min = k_min;
  cdf.k_max = k_max;
  auto freq = quantize_masses(mass);
  cdf.cum.assign(freq.size() + 1, 0);
  for (size_t i = 0; i < freq.size(); ++i) cdf.cum[i + 1] = cdf.cum[i] + freq[i];
  return cdf;
}

}  // namespace detail

// Coding distribution for one coordinate: the logistic g with (mu, scale),
// convolved with U(-delta/2, delta/2) and discretized on the dithered lattice
// {delta * (k - u)}. The mass of symbol k is the g-mass of the width-delta
// bin centered on its reconstruction point,
//   P(k) = G(delta*(k-u) + delta/2) - G(delta*(k-u) - delta/2),
// which telescopes to 1 across k and makes the expected code length equal the
// per-step NELBO term. Support covers all bins with tail mass >= 2^-20.
inline QuantizedCdf build_cdf(double mu, double scale, double delta, double u,
                              int precision = kProbBits) {
  if (!(scale > 0.0) || !(delta > 0.0)) {
    throw DomainError("build_cdf: requires scale > 0 and delta > 0");
  }
  if (!std::isfinite(mu)) throw NumericError("build_cdf: non-finite mean");
  if (precision != kProbBits) {
    throw DomainError("build_cdf: only 16-bit precision is supported");
  }
  // Tail threshold: sigmoid(-13.8629...) ~= 2^-20.
  const double tail_logit = std::log(std::exp2(20.0) - 1.0);
  double reach = scale * tail_logit;
  double center = mu / delta + u;
  int64_t k_lo = static_cast<int64_t>(std::floor((mu - reach + delta / 2) / delta + u));
  int64_t k_hi = static_cast<int64_t>(std::ceil((mu + reach - delta / 2) / delta + u));
  int64_t k_center = static_cast<int64_t>(std::nearbyint(center));
  k_lo = std::min(k_lo, k_center);
  k_hi = std::max(k_hi, k_center);
  int64_t span = k_hi - k_lo + 1;
  if (span > (int64_t(1) << 20) || span + 1 > int64_t(kProbScale)) {
    throw CodingRangeError("build_cdf: support of " + std::to_string(span) +
                           " symbols exceeds the coding range");
  }
  std::vector<double> mass(static_cast<size_t>(span) + 1, 0.0);
  double inv_scale = 1.0 / scale;
  double total = 0.0;
  double prev = sigmoid((delta * (static_cast<double>(k_lo) - u) - delta / 2 - mu) * inv_scale);
  for (int64_t k = k_lo; k <= k_hi; ++k) {
    double hi = sigmoid((delta * (static_cast<double>(k) - u) + delta / 2 - mu) * inv_scale);
    double m = std::max(0.0, hi - prev);
    mass[static_cast<size_t>(k - k_lo)] = m;
    total += m;
    prev = hi;
  }
  mass.back() = std::max(0.0, 1.0 - total);  // escape carries the tails
  return detail::cdf_from_masses(k_lo, k_hi, mass);
}

// Coding distribution for the lossless tail: an explicit categorical over
// grid levels 0..V-1 (escape slot present but structurally unreachable).
inline QuantizedCdf build_categorical_cdf(const std::vector<double>& probs) {
  if (probs.empty()) throw DomainError("build_categorical_cdf: empty support");
  std::vector<double> mass(probs.size() + 1, 0.0);
  for (size_t i = 0; i < probs.size(); ++i) mass[i] = probs[i];
  mass.back() = 0.0;
  return detail::cdf_from_masses(0, static_cast<int64_t>(probs.size()) - 1, mass);
}

// rANS encoder. Symbols are queued in decoder order and the queue is played
// backwards in finish(), so arbitrarily interleaved symbol/bypass sequences
// stay in sync with the decoder.
class RansEncoder {
 public:
  void put_symbol(const QuantizedCdf& cdf, int64_t k) {
    if (cdf.contains(k)) {
      int idx = static_cast<int>(k - cdf.k_min);
      push(cdf.cum[idx], cdf.freq(idx));
      return;
    }
    int esc = cdf.escape_index();
    push(cdf.cum[esc], cdf.freq(esc));
    int64_t e = k < cdf.k_min ? k - cdf.k_min : k - cdf.k_max;
    uint64_t zig = e > 0 ? 2ull * static_cast<uint64_t>(e)
                         : 2ull * static_cast<uint64_t>(-e) - 1ull;
    put_gamma(zig);
  }

  void put_bit(int b) {
    push(static_cast<uint32_t>(b) << 15, 1u << 15);
  }

  // Elias-gamma of m >= 1 in decoder read order: (L zeros, 1, L low bits).
  void put_gamma(uint64_t m) {
    int width = std::bit_width(m);
    for (int i = 0; i < width - 1; ++i) put_bit(0);
    put_bit(1);
    for (int i = width - 2; i >= 0; --i) put_bit(static_cast<int>((m >> i) & 1));
  }

  // Cross-entropy of everything queued so far under the quantized tables,
  // in bits. Bypass bits cost exactly 1 bit each.
  double queued_bits() const { return queued_bits_; }
  size_t queued_ops() const { return ops_.size(); }

  std::vector<uint8_t> finish() {
    std::vector<uint8_t> out;
    out.reserve(ops_.size() / 2 + 8);
    uint64_t x = kRansLow;
    for (size_t i = ops_.size(); i-- > 0;) {
      const Op& op = ops_[i];
      uint64_t x_max = (uint64_t(op.freq) << 16);
      while (x >= x_max) {
        out.push_back(static_cast<uint8_t>(x & 0xff));
        x >>= 8;
      }
      x = ((x / op.freq) << kProbBits) + (x % op.freq) + op.cum;
    }
    out.push_back(static_cast<uint8_t>(x & 0xff));
    out.push_back(static_cast<uint8_t>((x >> 8) & 0xff));
    out.push_back(static_cast<uint8_t>((x >> 16) & 0xff));
    out.push_back(static_cast<uint8_t>((x >> 24) & 0xff));
    std::reverse(out.begin(), out.end());
    ops_.clear();
    return out;
  }

 private:
  struct Op {
    uint32_t cum;
    uint32_t freq;
  };

  void push(uint32_t cum, uint32_t freq) {
    ops_.push_back({cum, freq});
    queued_bits_ += kProbBits - std::log2(static_cast<double>(freq));
  }

  std::vector<Op> ops_;
  double queued_bits_ = 0.0;
};

class RansDecoder {
 public:
  explicit RansDecoder(const uint8_t* data, size_t size) : data_(data), size_(size) {
    if (size_ < 4) throw DecodeError("rans: stream shorter than the state flush");
    x_ = 0;
    for (int i = 0; i < 4; ++i) x_ = (x_ << 8) | data_[pos_++];
  }
  explicit RansDecoder(const std::vector<uint8_t>& buf) : RansDecoder(buf.data(), buf.size()) {}

  int64_t decode_symbol(const QuantizedCdf& cdf) {
    int idx = pop(cdf.cum);
    if (idx != cdf.escape_index()) return cdf.k_min + idx;
    uint64_t zig = get_gamma();
    int64_t e = (zig & 1) ? -static_cast<int64_t>((zig + 1) / 2)
                          : static_cast<int64_t>(zig / 2);
    return e < 0 ? cdf.k_min + e : cdf.k_max + e;
  }

  int get_bit() {
    uint32_t v = static_cast<uint32_t>(x_ & (kProbScale - 1));
    int bit = v >> 15;
    x_ = (uint64_t(1) << 15) * (x_ >> kProbBits) + v - (uint32_t(bit) << 15);
    renorm();
    return bit;
  }

  uint64_t get_gamma() {
    int zeros = 0;
    while (get_bit() == 0) {
      if (++zeros > 63) throw DecodeError("rans: malformed gamma code");
    }
    uint64_t m = 1;
    for (int i = 0; i < zeros; ++i) m = (m << 1) | static_cast<uint64_t>(get_bit());
    return m;
  }

  // Stream-end sentinel: every byte consumed and the state returned to its
  // initial value. Any desync surfaces here at the latest.
  void finish() const {
    if (pos_ != size_ || x_ != kRansLow) {
      throw DecodeError("rans: state desync (corrupt or truncated stream)");
    }
  }

 private:
  int pop(const std::vector<uint32_t>& cum) {
    uint32_t v = static_cast<uint32_t>(x_ & (kProbScale - 1));
    auto it = std::upper_bound(cum.begin(), cum.end(), v);
    int idx = static_cast<int>(it - cum.begin()) - 1;
    uint32_t lo = cum[idx];
    uint32_t freq = cum[idx + 1] - lo;
    x_ = uint64_t(freq) * (x_ >> kProbBits) + v - lo;
    renorm();
    return idx;
  }

  void renorm() {
    while (x_ < kRansLow) {
      if (pos_ >= size_) throw DecodeError("rans: stream underrun");
      x_ = (x_ << 8) | data_[pos_++];
    }
  }

  const uint8_t* data_;
  size_t size_;
  size_t pos_ = 0;
  uint64_t x_ = 0;
};

}  // namespace uqdm

#endif  // UQDM_RANS_HPP_
