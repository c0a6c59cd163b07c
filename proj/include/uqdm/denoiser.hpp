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

#ifndef UQDM_DENOISER_HPP_
#define UQDM_DENOISER_HPP_

#include <cmath>
#include <cstdint>
#include <vector>

#include "uqdm/common.hpp"
#include "uqdm/math.hpp"
#include "uqdm/nn.hpp"
#include "uqdm/schedule.hpp"

namespace uqdm {

// Noise-prediction network configuration. Input features per sample:
// the latent itself, sin/cos Fourier features for each configured band
// (sin(2^k pi z), cos(2^k pi z)), and a sinusoidal embedding of gamma(t).
struct DenoiserConfig {
  int data_dim = 2;
  std::vector<int> hidden = {512, 512};
  std::vector<int> fourier_bands = {7, 8};
  int time_embed_dim = 64;
  bool learned_variance = true;
  double var_logit_clamp = 8.0;

  int feature_dim() const {
    return data_dim * (1 + 2 * static_cast<int>(fourier_bands.size())) + time_embed_dim;
  }
  int output_dim() const { return learned_variance ? 2 * data_dim : data_dim; }

  std::vector<int> layer_dims() const {
    std::vector<int> dims;
    dims.push_back(feature_dim());
    for (int h : hidden) dims.push_back(h);
    dims.push_back(output_dim());
    return dims;
  }
};

namespace detail {

// Geometric frequency ladder for the time embedding; gamma spans roughly
// [-15, 6] for the schedules used here.
inline std::vector<double> time_embed_freqs(int embed_dim) {
  int half = embed_dim / 2;
  std::vector<double> w(half);
  double lo = std::log(0.1), hi = std::log(50.0);
  for (int j = 0; j < half; ++j) {
    double f = half > 1 ? static_cast<double>(j) / (half - 1) : 0.0;
    w[j] = std::exp(lo + f * (hi - lo));
  }
  return w;
}

}  // namespace detail

// Assembles the network input for a batch of latents sharing one gamma.
inline Mat denoiser_features(const DenoiserConfig& cfg, const Mat& z, double gamma) {
  const Eigen::Index d = cfg.data_dim, n = z.cols();
  Mat f(cfg.feature_dim(), n);
  f.topRows(d) = z;
  Eigen::Index row = d;
  for (int k : cfg.fourier_bands) {
    double w = std::ldexp(kPi, k);  // 2^k * pi
    f.middleRows(row, d) = (z.array() * w).sin().matrix();
    f.middleRows(row + d, d) = (z.array() * w).cos().matrix();
    row += 2 * d;
  }
  auto freqs = detail::time_embed_freqs(cfg.time_embed_dim);
  for (size_t j = 0; j < freqs.size(); ++j) {
    f.row(row + 2 * j).setConstant(std::sin(freqs[j] * gamma));
    f.row(row + 2 * j + 1).setConstant(std::cos(freqs[j] * gamma));
  }
  return f;
}

// Tangent of the features w.r.t. a joint perturbation (dz, dgamma).
inline Mat denoiser_features_tangent(const DenoiserConfig& cfg, const Mat& z,
                                     double gamma, const Mat& dz, double dgamma) {
  const Eigen::Index d = cfg.data_dim, n = z.cols();
  Mat f(cfg.feature_dim(), n);
  f.topRows(d) = dz;
  Eigen::Index row = d;
  for (int k : cfg.fourier_bands) {
    double w = std::ldexp(kPi, k);
    f.middleRows(row, d) = (w * (z.array() * w).cos() * dz.array()).matrix();
    f.middleRows(row + d, d) = (-w * (z.array() * w).sin() * dz.array()).matrix();
    row += 2 * d;
  }
  auto freqs = detail::time_embed_freqs(cfg.time_embed_dim);
  for (size_t j = 0; j < freqs.size(); ++j) {
    f.row(row + 2 * j).setConstant(freqs[j] * std::cos(freqs[j] * gamma) * dgamma);
    f.row(row + 2 * j + 1).setConstant(-freqs[j] * std::sin(freqs[j] * gamma) * dgamma);
  }
  return f;
}

struct Prediction {
  Mat x_hat;   // denoised estimate, data units
  Mat s;       // variance scaling s_theta (empty in fixed-variance mode)
  Mat raw_s;   // pre-clamp logits, kept for the backward pass
  MlpCache cache;
  Mat eps_hat;
};

// The trainable model: schedule + network. Serialized as one checkpoint.
struct Model {
  NoiseSchedule schedule;
  DenoiserConfig config;
  MlpParams params;
};

// x-hat parameterization: the network predicts the noise eps, and
// x_hat = (z_t - sigma_t * eps_hat) / alpha_t. The variance head emits
// logits clamped to +-var_logit_clamp before exponentiation.
inline Prediction denoiser_predict(const Model& m, const Mat& z_t, int t,
                                   bool want_cache = false) {
  if (t < 1 || t > m.schedule.T()) throw DomainError("predict: step index out of range");
  auto as = m.schedule.alpha_sigma(t);
  if (as.alpha < 1e-12) {
    throw NumericError("predict: alpha. too small for x-hat parameterization at t=" +
                       std::to_string(t));
  }
  double gamma = m.schedule.gamma(t);
  Mat features = denoiser_features(m.config, z_t, gamma);
  Prediction out;
  Mat net = mlp_forward(m.params, features, want_cache ? &out.cache : nullptr);
  const Eigen::Index d = m.config.data_dim;
  out.eps_hat = net.topRows(d);
  out.x_hat = (z_t - as.sigma * out.eps_hat) / as.alpha;
  if (m.config.learned_variance) {
    out.raw_s = net.bottomRows(d);
    double c = m.config.var_logit_clamp;
    out.s = out.raw_s.array().min(c).max(-c).exp().matrix();
  }
  if (!out.x_hat.allFinite()) {
    throw NumericError("predict: non-finite network output at t=" + std::to_string(t));
  }
  return out;
}

}  // namespace uqdm

#endif  // UQDM_DENOISER_HPP_
