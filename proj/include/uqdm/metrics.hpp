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

#ifndef UQDM_METRICS_HPP_
#define UQDM_METRICS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "uqdm/common.hpp"
#include "uqdm/rng.hpp"

namespace uqdm {

// 10 log10(peak^2 / MSE); +inf sentinel on an exact match.
inline double psnr(const Mat& x, const Mat& x_hat, double peak) {
  if (x.rows() != x_hat.rows() || x.cols() != x_hat.cols()) {
    throw DomainError("psnr: shape mismatch");
  }
  double mse = (x - x_hat).squaredNorm() / static_cast<double>(x.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

// Sliced 2-Wasserstein distance: mean over random unit directions of the 1-D
// W2 between the projected empirical distributions (sorted-sample L2).
// Requires equally sized sample sets (columns are samples).
inline double sliced_wasserstein(const Mat& a, const Mat& b, int n_projections,
                                 uint64_t seed) {
  if (a.cols() == 0 || b.cols() == 0) throw DomainError("sliced_wasserstein: empty sample set");
  if (a.rows() != b.rows()) throw DomainError("sliced_wasserstein: dimension mismatch");
  if (a.cols() != b.cols()) throw DomainError("sliced_wasserstein: sample counts must match");
  if (n_projections < 1) throw DomainError("sliced_wasserstein: n_projections must be >= 1");
  uint64_t stream = derive_stream(seed, kStreamProjection);
  const Eigen::Index d = a.rows(), n = a.cols();
  std::vector<double> pa(n), pb(n);
  Eigen::VectorXd dir(d);
  double total = 0.0;
  for (int p = 0; p < n_projections; ++p) {
    double norm = 0.0;
    do {
      for (Eigen::Index i = 0; i < d; ++i) {
        dir(i) = gaussian(stream, static_cast<uint64_t>(p), static_cast<uint64_t>(i));
      }
      norm = dir.norm();
    } while (norm == 0.0);
    dir /= norm;
    for (Eigen::Index i = 0; i < n; ++i) {
      pa[i] = dir.dot(a.col(i));
      pb[i] = dir.dot(b.col(i));
    }
    std::sort(pa.begin(), pa.end());
    std::sort(pb.begin(), pb.end());
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double diff = pa[i] - pb[i];
      acc += diff * diff;
    }
    total += std::sqrt(acc / static_cast<double>(n));
  }
  return total / n_projections;
}

}  // namespace uqdm

#endif  // UQDM_METRICS_HPP_
