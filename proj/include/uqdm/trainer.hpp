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

#ifndef UQDM_TRAINER_HPP_
#define UQDM_TRAINER_HPP_

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "uqdm/common.hpp"
#include "uqdm/data.hpp"
#include "uqdm/diffusion.hpp"
#include "uqdm/nn.hpp"

namespace uqdm {

// Batch source for training: fills (values, indices) with `count` samples
// drawn deterministically from `draw_seed`.
struct Dataset {
  int dim = 2;
  GridSpec grid{256};
  std::function<void(uint64_t draw_seed, int count, Mat* values, IndexMat* indices)> sample;
};

inline Dataset make_swirl_dataset(int V = 256) {
  Dataset ds;
  ds.dim = 2;
  ds.grid = GridSpec{V};
  ds.sample = [V](uint64_t draw_seed, int count, Mat* values, IndexMat* indices) {
    GridSpec grid{V};
    Mat raw = swirl(count, draw_seed);
    *indices = grid.indices_of(raw);
    *values = grid.values_of(*indices);
  };
  return ds;
}

// Fixed pool sampled with replacement (used for image training sets).
inline Dataset make_pool_dataset(const IndexMat& pool, int V) {
  Dataset ds;
  ds.dim = static_cast<int>(pool.rows());
  ds.grid = GridSpec{V};
  ds.sample = [pool, V](uint64_t draw_seed, int count, Mat* values, IndexMat* indices) {
    GridSpec grid{V};
    indices->resize(pool.rows(), count);
    for (int i = 0; i < count; ++i) {
      auto col = static_cast<Eigen::Index>(u01(draw_seed, 0, i) * pool.cols());
      indices->col(i) = pool.col(col);
    }
    *values = grid.values_of(*indices);
  };
  return ds;
}

// Gradient of the single-trajectory NELBO (in bits, summed over the batch)
// with respect to the network weights and, optionally, the raw schedule
// endpoints. The trajectory itself does not depend on the weights, so the
// network needs only one backward pass; endpoint derivatives ride along as
// two forward tangents (through the trajectory, the gamma conditioning, the
// coefficients and the densities).
struct BatchGrads {
  double loss_bits = 0.0;
  size_t coords = 0;
  MlpGrads net;
  double d_gamma_min = 0.0;
  double d_raw_span = 0.0;

  explicit BatchGrads(const MlpParams& p) : net(p) {}
};

inline BatchGrads nelbo_batch_grad(const Model& m, const Mat& x, const IndexMat& x_idx,
                                   const GridSpec& grid, uint64_t traj_seed,
                                   bool want_endpoint_grads) {
  const NoiseSchedule& sched = m.schedule;
  const DenoiserConfig& cfg = m.config;
  const int T = sched.T();
  const Eigen::Index D = x.rows(), B = x.cols();
  BatchGrads out(m.params);
  out.coords = static_cast<size_t>(D) * B;

  TrajectoryTangents tan;
  Trajectory traj = want_endpoint_grads
                        ? sample_forward_with_tangents(sched, x, traj_seed, &tan)
                        : sample_forward(sched, x, traj_seed);
  auto dual = sched.dual_params();

  // L_T in closed form (depends only on the endpoints and the data).
  {
    auto as = dual.alpha_sigma(T);
    Dual2 a2 = as.alpha * as.alpha;
    Dual2 lt = (a2 * x.squaredNorm() + (as.sigma2 - Dual2(1.0) - log(as.sigma2)) *
                                           static_cast<double>(out.coords)) *
               Dual2(0.5 * kInvLn2);
    out.loss_bits += lt.v;
    out.d_gamma_min += lt.d0;
    out.d_raw_span += lt.d1;
  }

  // One stacked network pass over all T steps: column block (T - t) holds the
  // batch at step t.
  Mat feat(cfg.feature_dim(), T * B);
  std::vector<double> gammas(T + 1);
  for (int t = 1; t <= T; ++t) gammas[t] = sched.gamma(t);
  for (int t = T; t >= 1; --t) {
    feat.middleCols(static_cast<Eigen::Index>(T - t) * B, B) =
        denoiser_features(cfg, traj.z[t], gammas[t]);
  }
  MlpCache cache;
  Mat net_out = mlp_forward(m.params, feat, &cache);

  Mat d_out = Mat::Zero(net_out.rows(), net_out.cols());
  Mat jvp0, jvp1;
  if (want_endpoint_grads) {
    Mat tfeat0(cfg.feature_dim(), T * B), tfeat1(cfg.feature_dim(), T * B);
    for (int t = T; t >= 1; --t) {
      Dual2 g = dual.gamma(t);
      Eigen::Index off = static_cast<Eigen::Index>(T - t) * B;
      tfeat0.middleCols(off, B) =
          denoiser_features_tangent(cfg, traj.z[t], g.v, tan.dz0[t], g.d0);
      tfeat1.middleCols(off, B) =
          denoiser_features_tangent(cfg, traj.z[t], g.v, tan.dz1[t], g.d1);
    }
    jvp0 = mlp_jvp(m.params, cache, tfeat0);
    jvp1 = mlp_jvp(m.params, cache, tfeat1);
  }

  const double kappa = kLogisticScalePerStd;
  for (int t = T; t >= 1; --t) {
    Eigen::Index off = static_cast<Eigen::Index>(T - t) * B;
    auto as = dual.alpha_sigma(t);
    auto co = dual.transition(t);
    if (!(co.sigma_q2.v > 0.0)) {
      throw ScheduleError("training: sigma^2_{t|t-1} <= 0 at t=" + std::to_string(t));
    }
    if (as.alpha.v < 1e-12) {
      throw NumericError("training: alpha too small at t=" + std::to_string(t));
    }
    double sigma_q = std::sqrt(co.sigma_q2.v);
    double log2_delta = std::log2(co.delta.v);
    const Mat& z_t = traj.z[t];
    const Mat& z_prev = traj.z[t - 1];

    for (Eigen::Index n = 0; n < B; ++n) {
      for (Eigen::Index r = 0; r < D; ++r) {
        double eps_hat = net_out(r, off + n);
        double x_hat = (z_t(r, n) - as.sigma.v * eps_hat) / as.alpha.v;
        double mu = co.b.v * z_t(r, n) + co.c.v * x_hat;
        double raw = cfg.learned_variance ? net_out(D + r, off + n) : 0.0;
        bool clamped = raw > cfg.var_logit_clamp || raw < -cfg.var_logit_clamp;
        double s = cfg.learned_variance
                       ? std::exp(std::clamp(raw, -cfg.var_logit_clamp, cfg.var_logit_clamp))
                       : 1.0;
        double scale = kappa * sigma_q * std::sqrt(s);
        bool floored = scale < kScaleFloor;
        if (floored) scale = kScaleFloor;
        if (!std::isfinite(mu) || !std::isfinite(scale)) {
          throw NumericError("training: non-finite density at t=" + std::to_string(t));
        }

        LogDensityGrad g = log_density_f_grad(z_prev(r, n), mu, scale, co.delta.v);
        out.loss_bits += -log2_delta - g.log2f;

        // Network gradients.
        double dL_dmu = -g.d_mean;
        double dL_dscale = -g.d_scale;
        double dL_dxhat = co.c.v * dL_dmu;
        d_out(r, off + n) = dL_dxhat * (-as.sigma.v / as.alpha.v);
        if (cfg.learned_variance && !clamped && !floored) {
          // scale = kappa sqrt(sigma_q2 s), s = e^raw: d(scale)/d(raw) = scale/2.
          d_out(D + r, off + n) = dL_dscale * 0.5 * scale;
        }

        if (want_endpoint_grads) {
          double deps0 = jvp0(r, off + n), deps1 = jvp1(r, off + n);
          double dz0 = tan.dz0[t](r, n), dz1 = tan.dz1[t](r, n);
          double dxh0 = (dz0 - as.sigma.d0 * eps_hat - as.sigma.v * deps0) / as.alpha.v -
                        x_hat * (as.alpha.d0 / as.alpha.v);
          double dxh1 = (dz1 - as.sigma.d1 * eps_hat - as.sigma.v * deps1) / as.alpha.v -
                        x_hat * (as.alpha.d1 / as.alpha.v);
          double dmu0 = co.b.d0 * z_t(r, n) + co.b.v * dz0 + co.c.d0 * x_hat + co.c.v * dxh0;
          double dmu1 = co.b.d1 * z_t(r, n) + co.b.v * dz1 + co.c.d1 * x_hat + co.c.v * dxh1;
          double ds0 = 0.0, ds1 = 0.0;
          if (cfg.learned_variance && !clamped) {
            ds0 = s * jvp0(D + r, off + n);
            ds1 = s * jvp1(D + r, off + n);
          }
          // scale = kappa sqrt(sigma_q2 * s)
          double dscale0 = 0.0, dscale1 = 0.0;
          if (!floored) {
            double inv2 = 0.5 / (sigma_q * std::sqrt(s));
            dscale0 = kappa * inv2 * (co.sigma_q2.d0 * s + co.sigma_q2.v * ds0);
            dscale1 = kappa * inv2 * (co.sigma_q2.d1 * s + co.sigma_q2.v * ds1);
          }
          double dld = -co.delta.d0 / (co.delta.v * kLn2);
          out.d_gamma_min += dld - (g.d_z * tan.dz0[t - 1](r, n) + g.d_mean * dmu0 +
                                    g.d_scale * dscale0 + g.d_delta * co.delta.d0);
          dld = -co.delta.d1 / (co.delta.v * kLn2);
          out.d_raw_span += dld - (g.d_z * tan.dz1[t - 1](r, n) + g.d_mean * dmu1 +
                                   g.d_scale * dscale1 + g.d_delta * co.delta.d1);
        }
      }
    }
  }
  mlp_backward(m.params, cache, d_out, &out.net);

  // Lossless tail under the categorical likelihood at z_0.
  {
    auto as0 = dual.alpha_sigma(0);
    ReconGrad rg = recon_bits_grad(traj.z[0], x_idx, grid, as0.alpha.v, as0.sigma2.v);
    out.loss_bits += rg.bits;
    if (want_endpoint_grads) {
      double acc0 = rg.d_alpha0 * as0.alpha.d0 + rg.d_sigma0_sq * as0.sigma2.d0;
      double acc1 = rg.d_alpha0 * as0.alpha.d1 + rg.d_sigma0_sq * as0.sigma2.d1;
      acc0 += (rg.d_z0.array() * tan.dz0[0].array()).sum();
      acc1 += (rg.d_z0.array() * tan.dz1[0].array()).sum();
      out.d_gamma_min += acc0;
      out.d_raw_span += acc1;
    }
  }
  return out;
}

struct TrainConfig {
  int T = 5;
  int steps = 50000;
  int batch = 32;
  double lr = 3e-4;
  double clip_norm = 1.0;
  uint64_t seed = 1;
  bool learned_variance = true;
  bool train_endpoints = true;
  double gamma_min = -13.3;
  double gamma_max = 5.0;
  std::vector<int> hidden = {512, 512};
  std::vector<int> fourier_bands = {7, 8};
  int time_embed_dim = 64;
  int eval_every = 2500;
  int val_count = 1024;
  int threads = 1;
};

struct TrainLogEntry {
  int step;
  double train_bpd;
  double val_bpd;
};

struct TrainResult {
  Model model;
  std::vector<TrainLogEntry> log;
  double final_val_bpd = 0.0;
  bool aborted = false;
};

// Mean validation bpd under the quadrature NELBO with a fixed trajectory
// seed; used for progress logging and the sweep tables.
inline double validation_bpd(const Model& m, const Mat& values, const IndexMat& indices,
                             const GridSpec& grid, uint64_t seed) {
  const Eigen::Index chunk = 512;
  double bits = 0.0;
  for (Eigen::Index c0 = 0; c0 < values.cols(); c0 += chunk) {
    Eigen::Index n = std::min(chunk, values.cols() - c0);
    NelboReport rep = nelbo(m, values.middleCols(c0, n), indices.middleCols(c0, n), grid,
                            mix_tuple(seed, 40, static_cast<uint64_t>(c0)),
                            NelboMode::kQuadrature);
    bits += rep.total_bits();
  }
  return bits / static_cast<double>(values.size());
}

inline TrainResult train(const Dataset& ds, const TrainConfig& cfg,
                         const std::function<void(const TrainLogEntry&)>& on_log = nullptr) {
  DenoiserConfig dcfg;
  dcfg.data_dim = ds.dim;
  dcfg.hidden = cfg.hidden;
  dcfg.fourier_bands = cfg.fourier_bands;
  dcfg.time_embed_dim = cfg.time_embed_dim;
  dcfg.learned_variance = cfg.learned_variance;
  Model model{NoiseSchedule(cfg.gamma_min, cfg.gamma_max, cfg.T, cfg.train_endpoints), dcfg,
              mlp_init(dcfg.layer_dims(), cfg.seed)};

  Eigen::Index n_net = static_cast<Eigen::Index>(model.params.param_count());
  Eigen::Index n_all = n_net + (cfg.train_endpoints ? 2 : 0);
  Eigen::VectorXd flat(n_all);
  mlp_flatten(model.params, &flat);
  flat.conservativeResize(n_all);
  if (cfg.train_endpoints) {
    flat(n_net) = model.schedule.gamma_min();
    flat(n_net + 1) = model.schedule.raw_span();
  }
  AdamOptimizer adam(n_all, cfg.lr);

  Mat val_values;
  IndexMat val_indices;
  ds.sample(mix_tuple(cfg.seed, 3, 0), cfg.val_count, &val_values, &val_indices);

  TrainResult result{model, {}, 0.0, false};
  Eigen::VectorXd snapshot = flat;

  Mat bx;
  IndexMat bidx;
  Eigen::VectorXd grad(n_all);
  for (int step = 0; step < cfg.steps; ++step) {
    ds.sample(mix_tuple(cfg.seed, 1, static_cast<uint64_t>(step)), cfg.batch, &bx, &bidx);
    uint64_t traj_seed = mix_tuple(cfg.seed, 2, static_cast<uint64_t>(step));

    BatchGrads bg(model.params);
    if (cfg.threads <= 1) {
      bg = nelbo_batch_grad(model, bx, bidx, ds.grid, traj_seed, cfg.train_endpoints);
    } else {
      // Shard the batch, combine partial sums in fixed shard order.
      int shards = std::min<int>(cfg.threads, static_cast<int>(bx.cols()));
      std::vector<BatchGrads> parts;
      parts.reserve(shards);
      for (int w = 0; w < shards; ++w) parts.emplace_back(model.params);
      Eigen::Index per = (bx.cols() + shards - 1) / shards;
      parallel_for(static_cast<size_t>(shards), shards, [&](size_t lo, size_t hi) {
        for (size_t w = lo; w < hi; ++w) {
          Eigen::Index c0 = static_cast<Eigen::Index>(w) * per;
          Eigen::Index n = std::min(per, bx.cols() - c0);
          if (n <= 0) continue;
          parts[w] = nelbo_batch_grad(model, bx.middleCols(c0, n), bidx.middleCols(c0, n),
                                      ds.grid, mix_tuple(traj_seed, 7, w), cfg.train_endpoints);
        }
      });
      for (int w = 0; w < shards; ++w) {
        bg.loss_bits += parts[w].loss_bits;
        bg.coords += parts[w].coords;
        bg.d_gamma_min += parts[w].d_gamma_min;
        bg.d_raw_span += parts[w].d_raw_span;
        for (size_t l = 0; l < bg.net.dW.size(); ++l) {
          bg.net.dW[l] += parts[w].net.dW[l];
          bg.net.db[l] += parts[w].net.db[l];
        }
      }
    }

    double inv = 1.0 / static_cast<double>(bg.coords);
    double train_bpd = bg.loss_bits * inv;
    if (!std::isfinite(train_bpd)) {
      // Divergence: restore the last good checkpoint and stop.
      flat = snapshot;
      result.aborted = true;
      break;
    }
    grads_flatten(bg.net, &grad, cfg.train_endpoints ? 2 : 0);
    grad *= inv;
    if (cfg.train_endpoints) {
      grad(n_net) = bg.d_gamma_min * inv;
      grad(n_net + 1) = bg.d_raw_span * inv;
    }
    clip_global_norm(&grad, cfg.clip_norm);
    adam.step(grad, &flat);

    Eigen::VectorXd net_part = flat.head(n_net);
    mlp_unflatten(net_part, &model.params);
    if (cfg.train_endpoints) model.schedule.set_raw(flat(n_net), flat(n_net + 1));

    if ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps) {
      double val = validation_bpd(model, val_values, val_indices, ds.grid, cfg.seed);
      TrainLogEntry entry{step + 1, train_bpd, val};
      result.log.push_back(entry);
      if (on_log) on_log(entry);
      if (std::isfinite(val)) snapshot = flat;
    }
  }

  Eigen::VectorXd net_part = flat.head(n_net);
  mlp_unflatten(net_part, &model.params);
  if (cfg.train_endpoints) model.schedule.set_raw(flat(n_net), flat(n_net + 1));
  result.model = model;
  result.final_val_bpd = validation_bpd(model, val_values, val_indices, ds.grid, cfg.seed);
  return result;
}

}  // namespace uqdm

#endif  // UQDM_TRAINER_HPP_
