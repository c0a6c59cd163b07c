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

#include "uqdm/uq.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "uqdm/math.hpp"
#include "uqdm/rng.hpp"

using namespace uqdm;

namespace {

// One-sample Kolmogorov-Smirnov statistic against a CDF given as a callable.
template <typename Cdf>
double ks_statistic(std::vector<double> xs, Cdf cdf) {
  std::sort(xs.begin(), xs.end());
  double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    double f = cdf(xs[i]);
    d = std::max(d, std::abs(f - (i + 1) / n));
    d = std::max(d, std::abs(f - i / n));
  }
  return d;
}

}  // namespace

TEST_CASE("dither is deterministic and in range") {
  for (uint64_t i = 0; i < 1000; ++i) {
    double a = dither(42, 3, i);
    double b = dither(42, 3, i);
    REQUIRE(a == b);
    REQUIRE(a >= -0.5);
    REQUIRE(a < 0.5);
  }
  // Round-trip the seed through raw bytes: identical values afterwards.
  uint64_t seed = 0x0123456789abcdefULL;
  uint8_t raw[8];
  std::memcpy(raw, &seed, 8);
  uint64_t seed2;
  std::memcpy(&seed2, raw, 8);
  CHECK(dither(seed, 7, 99) == dither(seed2, 7, 99));
}

TEST_CASE("dither stream passes a KS uniformity test at alpha = 0.01") {
  const size_t n = 100000;
  std::vector<double> xs(n);
  for (size_t i = 0; i < n; ++i) xs[i] = dither(7, 2, i);
  double d = ks_statistic(std::move(xs), [](double x) { return x + 0.5; });
  CHECK(d < 1.63 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("dither values at distinct steps are uncorrelated") {
  const size_t n = 100000;
  double sxy = 0.0, sx = 0.0, sy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double x = dither(11, 1, i);
    double y = dither(11, 2, i);
    sx += x; sy += y; sxy += x * y; sxx += x * x; syy += y * y;
  }
  double cov = sxy / n - (sx / n) * (sy / n);
  double corr = cov / std::sqrt((sxx / n - sx / n * sx / n) * (syy / n - sy / n * sy / n));
  CHECK(std::abs(corr) < 0.01);
}

TEST_CASE("gaussian stream matches the standard normal CDF") {
  const size_t n = 20000;
  std::vector<double> xs(n);
  for (size_t i = 0; i < n; ++i) xs[i] = gaussian(derive_stream(5, kStreamPriorLatent), 0, i);
  double d = ks_statistic(std::move(xs), [](double x) { return standard_normal_cdf(x); });
  CHECK(d < 1.63 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("uq_quantize worked examples and tie-breaking") {
  CHECK(uq_quantize(1.7, 1.0, 0.25) == 2);  // round(1.95) = 2
  CHECK(uq_quantize(0.0, 1.0, 0.0) == 0);
  CHECK(uq_quantize(0.5, 1.0, 0.0) == 0);   // tie 0.5 -> even
  CHECK(uq_quantize(1.5, 1.0, 0.0) == 2);   // tie 1.5 -> even
  CHECK(uq_quantize(2.5, 1.0, 0.0) == 2);
  CHECK_THROWS_AS(uq_quantize(std::nan(""), 1.0, 0.0), NumericError);
  CHECK_THROWS_AS(uq_quantize(1.0, 0.0, 0.0), DomainError);
}

TEST_CASE("uq_reconstruct inverts within half a cell") {
  CHECK(uq_reconstruct(2, 1.0, 0.25) == Catch::Approx(1.75));
  CHECK(std::abs(uq_reconstruct(2, 1.0, 0.25) - 1.7) <= 0.5);
  CHECK(uq_reconstruct(5, 0.25, 0.0) == Catch::Approx(1.25));

  for (uint64_t i = 0; i < 20000; ++i) {
    double mu = 200.0 * (u01(90, 0, i) - 0.5);
    double delta = 1e-3 + 3.0 * u01(90, 1, i);
    double u = dither(90, 2, i);
    int64_t k = uq_quantize(mu, delta, u);
    double err = std::abs(uq_reconstruct(k, delta, u) - mu);
    REQUIRE(err <= delta / 2 * (1.0 + 1e-12) + 1e-12);
  }
}

TEST_CASE("reconstruction error is uniform on [-delta/2, delta/2]") {
  // Fixed mu, dither marginalized: the universal quantization property.
  const size_t n = 100000;
  const double mu = 0.731, delta = 0.37;
  std::vector<double> errs(n);
  for (size_t i = 0; i < n; ++i) {
    double u = dither(123, 9, i);
    int64_t k = uq_quantize(mu, delta, u);
    errs[i] = uq_reconstruct(k, delta, u) - mu;
  }
  double d = ks_statistic(std::move(errs),
                          [&](double x) { return (x + delta / 2) / delta; });
  CHECK(d < 1.63 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("shared prior latent draw is reproducible and standard normal") {
  Mat a = draw_prior_latent(77, 16, 8);
  Mat b = draw_prior_latent(77, 16, 8);
  REQUIRE(a == b);
  Mat c = draw_prior_latent(78, 16, 8);
  REQUIRE(a != c);

  Mat big = draw_prior_latent(1234, 64, 512);
  double mean = big.mean();
  double var = (big.array() - mean).square().mean();
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.03);
}
