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

#ifndef UQDM_RECONSTRUCT_HPP_
#define UQDM_RECONSTRUCT_HPP_

#include <cmath>
#include <cstdint>

#include "uqdm/common.hpp"
#include "uqdm/diffusion.hpp"
#include "uqdm/grid.hpp"

namespace uqdm {

enum class ReconMode : uint8_t { kDenoise = 0, kAncestral = 1, kFlow = 2 };

// Nearest grid value under the categorical p(x | z_0): the level closest to
// z_0 / alpha_0 (the categorical argmax).
inline Mat categorical_argmax(const Model& m, const Mat& z0, const GridSpec& grid) {
  double alpha0 = m.schedule.alpha_sigma(0).alpha;
  Mat out(z0.rows(), z0.cols());
  for (Eigen::Index c = 0; c < z0.cols(); ++c) {
    for (Eigen::Index r = 0; r < z0.rows(); ++r) {
      double v = std::clamp(z0(r, c) / alpha0, -1.0, 1.0);
      out(r, c) = grid.value(grid.index_of(v));
    }
  }
  return out;
}

// Inverse-CDF sample of the categorical p(x | z_0).
inline Mat categorical_sample(const Model& m, const Mat& z0, const GridSpec& grid,
                              uint64_t seed) {
  auto as0 = m.schedule.alpha_sigma(0);
  uint64_t stream = derive_stream(seed, kStreamAncestral);
  const int V = grid.V;
  Mat out(z0.rows(), z0.cols());
  std::vector<double> p(V);
  for (Eigen::Index c = 0; c < z0.cols(); ++c) {
    for (Eigen::Index r = 0; r < z0.rows(); ++r) {
      double z = z0(r, c);
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < V; ++j) {
        double d = z - as0.alpha * grid.value(j);
        p[j] = -d * d / (2.0 * as0.sigma2);
        mx = std::max(mx, p[j]);
      }
      double norm = 0.0;
      for (int j = 0; j < V; ++j) norm += (p[j] = std::exp(p[j] - mx));
      double target = u01(stream, 0, flat_index(z0.rows(), r, c)) * norm;
      double acc = 0.0;
      int pick = V - 1;
      for (int j = 0; j < V; ++j) {
        acc += p[j];
        if (acc >= target) { pick = j; break; }
      }
      out(r, c) = grid.value(pick);
    }
  }
  return out;
}

// Denoised prediction, clamped to the data range.
inline Mat reconstruct_denoise(const Model& m, const Mat& z_t, int t) {
  if (t == 0) return z_t.array().min(1.0).max(-1.0).matrix() /
                      std::max(m.schedule.alpha_sigma(0).alpha, 1e-12);
  Prediction p = denoiser_predict(m, z_t, t);
  return p.x_hat.array().min(1.0).max(-1.0).matrix();
}

// Ancestral sampling: draw z_{s-1} from the logistic g convolved with the
// width-delta uniform (the exact structure of the reverse density), then
// resolve p(x | z_0) by argmax (default) or sampling.
inline Mat reconstruct_ancestral(const Model& m, Mat z, int t, uint64_t seed,
                                 const GridSpec& grid, bool sample_tail = false) {
  uint64_t stream = derive_stream(seed, kStreamAncestral);
  const Eigen::Index D = z.rows();
  for (int s = t; s >= 1; --s) {
    ReverseDensity den = reverse_density(m, z, s);
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      for (Eigen::Index r = 0; r < D; ++r) {
        uint64_t fi = flat_index(D, r, c);
        double ul = u01_open(stream, 2 * s, fi);
        double logistic = den.mean(r, c) + den.scale(r, c) * std::log(ul / (1.0 - ul));
        double box = den.delta * dither(stream, 2 * s + 1, fi);
        z(r, c) = logistic + box;
      }
    }
  }
  Mat x = sample_tail ? categorical_sample(m, z, grid, mix64(seed ^ 0x1717))
                      : categorical_argmax(m, z, grid);
  return x;
}

// Probability-flow iteration
//   z_{s-1} = (sigma_{s-1}/sigma_s) z_s + (alpha_{s-1} - (sigma_{s-1}/sigma_s) alpha_s) x_hat,
// deterministic, finished by the categorical argmax.
inline Mat reconstruct_flow(const Model& m, Mat z, int t, const GridSpec& grid) {
  for (int s = t; s >= 1; --s) {
    auto prev = m.schedule.alpha_sigma(s - 1);
    auto cur = m.schedule.alpha_sigma(s);
    Prediction p = denoiser_predict(m, z, s);
    double ratio = prev.sigma / cur.sigma;
    z = ratio * z + (prev.alpha - ratio * cur.alpha) * p.x_hat;
  }
  return categorical_argmax(m, z, grid);
}

inline Mat reconstruct(const Model& m, const Mat& z_t, int t, ReconMode mode,
                       const GridSpec& grid, uint64_t seed) {
  switch (mode) {
    case ReconMode::kDenoise:
      return reconstruct_denoise(m, z_t, t);
    case ReconMode::kAncestral:
      return reconstruct_ancestral(m, z_t, t, seed, grid);
    case ReconMode::kFlow:
      return reconstruct_flow(m, z_t, t, grid);
  }
  throw DomainError("reconstruct: unknown mode");
}

}  // namespace uqdm

#endif  // UQDM_RECONSTRUCT_HPP_
