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

#ifndef UQDM_UQ_HPP_
#define UQDM_UQ_HPP_

#include <cfenv>
#include <cmath>
#include <cstdint>

#include "uqdm/common.hpp"
#include "uqdm/rng.hpp"

namespace uqdm {

// Dithered lattice quantizer: k = round(mu_q / delta + u), ties to even.
// std::nearbyint under the default rounding mode implements the tie-break.
inline int64_t uq_quantize(double mu_q, double delta, double u) {
  if (!std::isfinite(mu_q)) throw NumericError("uq_quantize: non-finite input");
  if (!(delta > 0.0)) throw DomainError("uq_quantize: delta must be > 0");
  return static_cast<int64_t>(std::nearbyint(mu_q / delta + u));
}

// Reconstruction delta * (k - u); lies within delta/2 of the quantized value.
inline double uq_reconstruct(int64_t k, double delta, double u) {
  return delta * (static_cast<double>(k) - u);
}

// The shared z_T ~ N(0, I) draw, identical on encoder and decoder. One
// Box-Muller value per coordinate from the prior-latent stream.
inline Mat draw_prior_latent(uint64_t seed, Eigen::Index dim, Eigen::Index cols) {
  uint64_t stream = derive_stream(seed, kStreamPriorLatent);
  Mat z(dim, cols);
  for (Eigen::Index n = 0; n < cols; ++n) {
    for (Eigen::Index d = 0; d < dim; ++d) {
      z(d, n) = gaussian(stream, 0, static_cast<uint64_t>(n) * dim + d);
    }
  }
  return z;
}

}  // namespace uqdm

#endif  // UQDM_UQ_HPP_
