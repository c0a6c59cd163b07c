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

#include "uqdm/rans.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <cstdint>
#include <vector>

#include "uqdm/math.hpp"
#include "uqdm/rng.hpp"

using namespace uqdm;

namespace {

QuantizedCdf random_cdf(uint64_t seed) {
  double mu = 40.0 * (u01(seed, 0, 0) - 0.5);
  double scale = std::exp(-4.0 + 6.0 * u01(seed, 0, 1));
  double delta = std::exp(-1.5 + 2.5 * u01(seed, 0, 2));
  double u = dither(seed, 0, 3);
  return build_cdf(mu, scale, delta, u);
}

}  // namespace

TEST_CASE("cdf tables are monotone, floored and complete") {
  for (uint64_t s = 0; s < 300; ++s) {
    QuantizedCdf cdf = random_cdf(mix64(s + 1));
    REQUIRE(cdf.cum.front() == 0);
    REQUIRE(cdf.cum.back() == kProbScale);
    for (int i = 0; i < cdf.bins(); ++i) REQUIRE(cdf.freq(i) >= 1);
    REQUIRE(cdf.bins() == cdf.k_max - cdf.k_min + 2);  // span + escape
  }
}

TEST_CASE("real bin masses telescope to within 2^-19 of one") {
  double mu = 1.234, scale = 0.5, delta = 0.8, u = 0.21;
  QuantizedCdf cdf = build_cdf(mu, scale, delta, u);
  // Enlarged support: extend 8 symbols past each bound and sum exact masses.
  double total = 0.0;
  for (int64_t k = cdf.k_min - 8; k <= cdf.k_max + 8; ++k) {
    double hi = sigmoid((delta * (k - u) + delta / 2 - mu) / scale);
    double lo = sigmoid((delta * (k - u) - delta / 2 - mu) / scale);
    total += hi - lo;
  }
  CHECK(std::abs(total - 1.0) < std::exp2(-19.0));
}

TEST_CASE("tiny scale concentrates mass on the bins overlapping the mean") {
  double delta = 1.0, u = 0.13, mu = 5.0 * delta * 0.7;
  QuantizedCdf cdf = build_cdf(mu, 1e-6, delta, u);
  // Locate the bin holding mu and check it carries essentially all mass.
  int64_t k_star = static_cast<int64_t>(std::nearbyint(mu / delta + u));
  REQUIRE(cdf.contains(k_star));
  double top = cdf.freq(static_cast<int>(k_star - cdf.k_min)) / double(kProbScale);
  CHECK(top > 0.99);
}

TEST_CASE("grid-centered mean gives a symmetric table") {
  double delta = 0.6, u = -0.27;
  int64_t k_c = 3;
  double mu = delta * (k_c - u);  // exactly on a reconstruction point
  QuantizedCdf cdf = build_cdf(mu, 0.4, delta, u);
  int c = static_cast<int>(k_c - cdf.k_min);
  for (int j = 1; j <= 3; ++j) {
    REQUIRE(c - j >= 0);
    REQUIRE(c + j < cdf.bins() - 1);
    // Quantization can shift a count by one unit either way.
    CHECK(std::abs(int(cdf.freq(c - j)) - int(cdf.freq(c + j))) <= 1);
  }
}

TEST_CASE("coding range error on absurdly small delta") {
  CHECK_THROWS_AS(build_cdf(0.0, 1.0, 1e-7, 0.0), CodingRangeError);
  CHECK_THROWS_AS(build_cdf(0.0, 1.0, 0.0, 0.0), DomainError);
}

TEST_CASE("encode/decode round-trips on randomized workloads") {
  for (uint64_t trial = 0; trial < 200; ++trial) {
    uint64_t seed = mix64(0xabc + trial);
    size_t n = 1 + static_cast<size_t>(u01(seed, 1, 0) * 500);
    std::vector<QuantizedCdf> cdfs;
    std::vector<int64_t> syms;
    RansEncoder enc;
    for (size_t i = 0; i < n; ++i) {
      QuantizedCdf cdf = random_cdf(mix64(seed + i));
      // Mostly in-support symbols, occasionally far outside (escape path).
      int64_t k;
      double r = u01(seed, 2, i);
      if (r < 0.9) {
        int64_t span = cdf.k_max - cdf.k_min + 1;
        k = cdf.k_min + static_cast<int64_t>(u01(seed, 3, i) * span);
      } else {
        k = (r < 0.95 ? cdf.k_min - 1 : cdf.k_max + 1) +
            static_cast<int64_t>((u01(seed, 4, i) - 0.5) * 2e6);
      }
      enc.put_symbol(cdf, k);
      cdfs.push_back(std::move(cdf));
      syms.push_back(k);
    }
    std::vector<uint8_t> buf = enc.finish();
    RansDecoder dec(buf);
    for (size_t i = 0; i < n; ++i) {
      REQUIRE(dec.decode_symbol(cdfs[i]) == syms[i]);
    }
    dec.finish();
  }
}

TEST_CASE("total invertibility over many random symbol/cdf pairs") {
  // 100k pairs spread over independent streams.
  size_t total = 0;
  for (uint64_t trial = 0; trial < 100; ++trial) {
    uint64_t seed = mix64(0x100000 + trial);
    const size_t n = 1000;
    QuantizedCdf cdf = random_cdf(seed);
    std::vector<int64_t> syms(n);
    RansEncoder enc;
    for (size_t i = 0; i < n; ++i) {
      int64_t span = cdf.k_max - cdf.k_min + 1;
      syms[i] = cdf.k_min + static_cast<int64_t>(u01(seed, 5, i) * (span + 6)) - 3;
      enc.put_symbol(cdf, syms[i]);
    }
    std::vector<uint8_t> buf = enc.finish();
    RansDecoder dec(buf);
    for (size_t i = 0; i < n; ++i) REQUIRE(dec.decode_symbol(cdf) == syms[i]);
    dec.finish();
    total += n;
  }
  CHECK(total == 100000);
}

TEST_CASE("uniform 256-symbol source codes at 8 bits/symbol") {
  std::vector<double> probs(256, 1.0 / 256.0);
  QuantizedCdf cdf = build_categorical_cdf(probs);
  RansEncoder enc;
  const size_t n = 4096;
  std::vector<int64_t> syms(n);
  for (size_t i = 0; i < n; ++i) {
    syms[i] = static_cast<int64_t>(u01(4242, 0, i) * 256.0);
    enc.put_symbol(cdf, syms[i]);
  }
  std::vector<uint8_t> buf = enc.finish();
  CHECK(std::abs(static_cast<double>(buf.size()) - 4096.0) <= 8.0);
  RansDecoder dec(buf);
  for (size_t i = 0; i < n; ++i) REQUIRE(dec.decode_symbol(cdf) == syms[i]);
  dec.finish();
}

TEST_CASE("far out-of-support symbols round-trip through the escape path") {
  QuantizedCdf cdf = build_cdf(0.0, 0.5, 1.0, 0.0);
  std::vector<int64_t> syms = {cdf.k_min - 1,        cdf.k_max + 1,
                               cdf.k_min - 4000000,  cdf.k_max + 123456789,
                               int64_t(1) << 40,     -(int64_t(1) << 40)};
  RansEncoder enc;
  for (int64_t k : syms) enc.put_symbol(cdf, k);
  std::vector<uint8_t> buf = enc.finish();
  RansDecoder dec(buf);
  for (int64_t k : syms) REQUIRE(dec.decode_symbol(cdf) == k);
  dec.finish();
}

TEST_CASE("realized bits stay within the quantized cross-entropy bound") {
  for (uint64_t trial = 0; trial < 50; ++trial) {
    uint64_t seed = mix64(0x515 + trial);
    QuantizedCdf cdf = random_cdf(seed);
    RansEncoder enc;
    size_t n = 200 + static_cast<size_t>(u01(seed, 6, 0) * 5000);
    for (size_t i = 0; i < n; ++i) {
      int64_t span = cdf.k_max - cdf.k_min + 1;
      enc.put_symbol(cdf, cdf.k_min + static_cast<int64_t>(u01(seed, 7, i) * span));
    }
    double entropy_bits = enc.queued_bits();
    std::vector<uint8_t> buf = enc.finish();
    REQUIRE(8.0 * static_cast<double>(buf.size()) <=
            std::ceil(entropy_bits) + 32.0);
  }
}

TEST_CASE("corrupted or truncated buffers raise decode errors") {
  QuantizedCdf cdf = build_cdf(0.0, 0.7, 1.0, 0.1);
  RansEncoder enc;
  const size_t n = 300;
  for (size_t i = 0; i < n; ++i) {
    enc.put_symbol(cdf, cdf.k_min + static_cast<int64_t>(u01(5, 8, i) * (cdf.k_max - cdf.k_min)));
  }
  std::vector<uint8_t> buf = enc.finish();

  // Truncation: the state sentinel or an underrun must fire.
  std::vector<uint8_t> cut(buf.begin(), buf.end() - 3);
  bool threw = false;
  try {
    RansDecoder dec(cut);
    for (size_t i = 0; i < n; ++i) dec.decode_symbol(cdf);
    dec.finish();
  } catch (const DecodeError&) {
    threw = true;
  }
  CHECK(threw);

  CHECK_THROWS_AS(RansDecoder(std::vector<uint8_t>{1, 2}), DecodeError);

  // Byte flips: every single-byte corruption must be detected (the decoded
  // symbols cannot all match AND the sentinel hold, for this payload).
  size_t detected = 0, flips = 0;
  for (size_t pos = 0; pos < buf.size(); pos += 7) {
    std::vector<uint8_t> bad = buf;
    bad[pos] ^= 0x2d;
    ++flips;
    try {
      RansDecoder dec(bad);
      std::vector<int64_t> out(n);
      for (size_t i = 0; i < n; ++i) out[i] = dec.decode_symbol(cdf);
      dec.finish();
    } catch (const DecodeError&) {
      ++detected;
    }
  }
  CHECK(detected == flips);
}
