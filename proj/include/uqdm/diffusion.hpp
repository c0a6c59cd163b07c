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

#ifndef UQDM_DIFFUSION_HPP_
#define UQDM_DIFFUSION_HPP_

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "uqdm/common.hpp"
#include "uqdm/denoiser.hpp"
#include "uqdm/grid.hpp"
#include "uqdm/math.hpp"
#include "uqdm/rng.hpp"
#include "uqdm/schedule.hpp"
#include "uqdm/uq.hpp"

namespace uqdm {

// Reverse-density scale never collapses below this, keeping log-densities
// finite even for degenerate schedules.
inline constexpr double kScaleFloor = 1e-12;
// Per-coordinate log2-density floor; keeps training losses finite on
// outliers while coding handles tails through the escape path.
inline constexpr double kLogDensityFloor = -64.0;

// One realization of the uniform forward process: z[t] for t = 0..T and the
// unit dithers u[t] for t = 1..T. Reconstructs exactly from (x, seed):
// z_{t-1} = b(t) z_t + c(t) x + delta(t) u_t.
struct Trajectory {
  std::vector<Mat> z;
  std::vector<Mat> u;
};

// Flat coordinate index shared by the dither stream and the codec:
// column-major over (dim, element).
inline uint64_t flat_index(Eigen::Index dim_count, Eigen::Index d, Eigen::Index n) {
  return static_cast<uint64_t>(n) * static_cast<uint64_t>(dim_count) +
         static_cast<uint64_t>(d);
}

inline Trajectory sample_forward(const NoiseSchedule& sched, const Mat& x, uint64_t seed) {
  if (!x.allFinite()) throw NumericError("sample_forward: non-finite data");
  const Eigen::Index d = x.rows(), n = x.cols();
  const int T = sched.T();
  Trajectory traj;
  traj.z.resize(T + 1);
  traj.u.resize(T + 1);
  auto as_T = sched.alpha_sigma(T);
  uint64_t eps_stream = derive_stream(seed, kStreamForwardNoise);
  Mat eps(d, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    for (Eigen::Index r = 0; r < d; ++r) {
      eps(r, c) = gaussian(eps_stream, 0, flat_index(d, r, c));
    }
  }
  traj.z[T] = as_T.alpha * x + as_T.sigma * eps;
  for (int t = T; t >= 1; --t) {
    auto coeff = sched.transition(t);
    Mat& u = traj.u[t];
    u.resize(d, n);
    for (Eigen::Index c = 0; c < n; ++c) {
      for (Eigen::Index r = 0; r < d; ++r) {
        u(r, c) = dither(seed, static_cast<uint64_t>(t), flat_index(d, r, c));
      }
    }
    traj.z[t - 1] = coeff.b * traj.z[t] + coeff.c * x + coeff.delta * u;
  }
  return traj;
}

// Trajectory plus its tangents w.r.t. the two raw schedule parameters
// (gamma_min, raw_span), sharing the same noise realization. Used when the
// schedule endpoints are trained.
struct TrajectoryTangents {
  std::vector<Mat> dz0;
  std::vector<Mat> dz1;
};

inline Trajectory sample_forward_with_tangents(const NoiseSchedule& sched, const Mat& x,
                                               uint64_t seed, TrajectoryTangents* tan) {
  Trajectory traj = sample_forward(sched, x, seed);
  const int T = sched.T();
  auto dual = sched.dual_params();
  tan->dz0.resize(T + 1);
  tan->dz1.resize(T + 1);
  auto as_T = dual.alpha_sigma(T);
  // eps = (z_T - alpha_T x) / sigma_T recovers the stored realization.
  Mat eps = (traj.z[T] - as_T.alpha.v * x) / as_T.sigma.v;
  tan->dz0[T] = as_T.alpha.d0 * x + as_T.sigma.d0 * eps;
  tan->dz1[T] = as_T.alpha.d1 * x + as_T.sigma.d1 * eps;
  for (int t = T; t >= 1; --t) {
    auto c = dual.transition(t);
    tan->dz0[t - 1] =
        c.b.d0 * traj.z[t] + c.b.v * tan->dz0[t] + c.c.d0 * x + c.delta.d0 * traj.u[t];
    tan->dz1[t - 1] =
        c.b.d1 * traj.z[t] + c.b.v * tan->dz1[t] + c.c.d1 * x + c.delta.d1 * traj.u[t];
  }
  return traj;
}

// Per-coordinate parameters of the coding density
// p(z_{t-1} | z_t) = Logistic(mean, scale) * U(-delta/2, delta/2).
// mu_q (present on the encoder side only) is the forward-posterior mean
// b z_t + c x that gets quantized; the decoder never needs it.
struct ReverseDensity {
  Mat mean;
  Mat scale;
  double delta = 0.0;
  Mat mu_q;
  TransitionCoefficients coeff;
  Prediction pred;
};

inline ReverseDensity reverse_density(const Model& m, const Mat& z_t, int t,
                                      const Mat* target_x = nullptr,
                                      bool want_cache = false) {
  ReverseDensity out;
  out.coeff = m.schedule.transition(t);
  out.delta = out.coeff.delta;
  out.pred = denoiser_predict(m, z_t, t, want_cache);
  out.mean = out.coeff.b * z_t + out.coeff.c * out.pred.x_hat;
  double sigma_q = std::sqrt(out.coeff.sigma_q2);
  if (m.config.learned_variance) {
    out.scale = (out.pred.s.array().sqrt() * (sigma_q * kLogisticScalePerStd))
                    .max(kScaleFloor)
                    .matrix();
  } else {
    out.scale = Mat::Constant(z_t.rows(), z_t.cols(),
                              std::max(sigma_q * kLogisticScalePerStd, kScaleFloor));
  }
  if (!out.mean.allFinite() || !out.scale.allFinite()) {
    throw NumericError("reverse_density: non-finite parameters at t=" + std::to_string(t));
  }
  if (target_x != nullptr) {
    out.mu_q = out.coeff.b * z_t + out.coeff.c * (*target_x);
  }
  return out;
}

// log2 of the logistic-uniform convolution density at z, never below the
// configured floor. G is the logistic CDF with (mean, scale):
//   f(z) = (G(z + delta/2) - G(z - delta/2)) / delta.
inline double log_density_f(double z, double mean, double scale, double delta) {
  double hi = (z + delta / 2 - mean) / scale;
  double lo = (z - delta / 2 - mean) / scale;
  double ln_f = log_diff_sigmoid(hi, lo) - std::log(delta);
  double v = ln_f * kInvLn2;
  return v < kLogDensityFloor ? kLogDensityFloor : v;
}

// log_density_f together with its partial derivatives, for the training
// backward pass. Gradients vanish where the floor clamps.
struct LogDensityGrad {
  double log2f;
  double d_z;
  double d_mean;
  double d_scale;
  double d_delta;
};

inline LogDensityGrad log_density_f_grad(double z, double mean, double scale, double delta) {
  double hi = (z + delta / 2 - mean) / scale;
  double lo = (z - delta / 2 - mean) / scale;
  double ln_diff = log_diff_sigmoid(hi, lo);
  double ln_f = ln_diff - std::log(delta);
  LogDensityGrad g;
  g.log2f = ln_f * kInvLn2;
  if (g.log2f < kLogDensityFloor) {
    return {kLogDensityFloor, 0.0, 0.0, 0.0, 0.0};
  }
  // d/dx ln(sig(hi) - sig(lo)) via density ratios, computed in log space.
  double gu = std::exp(log_sigmoid(hi) + log_sigmoid(-hi) - ln_diff);
  double gl = std::exp(log_sigmoid(lo) + log_sigmoid(-lo) - ln_diff);
  double inv_s = 1.0 / scale;
  g.d_z = (gu - gl) * inv_s * kInvLn2;
  g.d_mean = -g.d_z;
  g.d_scale = -(hi * gu - lo * gl) * inv_s * kInvLn2;
  g.d_delta = ((gu + gl) * 0.5 * inv_s - 1.0 / delta) * kInvLn2;
  return g;
}

struct NelboReport {
  double l_T = 0.0;
  std::vector<double> l_steps;  // index t-1 holds L_{t-1}, t = 1..T
  double l_recon = 0.0;
  double total_bpd = 0.0;

  double total_bits() const {
    double s = l_T + l_recon;
    for (double v : l_steps) s += v;
    return s;
  }
};

enum class NelboMode { kMc, kQuadrature };

// KL(N(alpha_T x, sigma_T^2) || N(0, 1)) summed over coordinates, in bits.
inline double prior_kl_bits(const NoiseSchedule& sched, const Mat& x) {
  auto as = sched.alpha_sigma(sched.T());
  double a2 = as.alpha * as.alpha, s2 = as.sigma2;
  double sum_sq = x.squaredNorm();
  double per_coord = 0.5 * (s2 - 1.0 - std::log(s2));
  return (0.5 * a2 * sum_sq + per_coord * static_cast<double>(x.size())) * kInvLn2;
}

// Negative log2 likelihood of the grid indices under the categorical
// p(x | z_0): a softmax over grid levels with logits -(z - alpha_0 v_j)^2 /
// (2 sigma_0^2).
inline double recon_bits(const Mat& z0, const IndexMat& x_idx, const GridSpec& grid,
                         double alpha0, double sigma0_sq) {
  const int V = grid.V;
  double bits = 0.0;
  std::vector<double> logits(V);
  for (Eigen::Index c = 0; c < z0.cols(); ++c) {
    for (Eigen::Index r = 0; r < z0.rows(); ++r) {
      double z = z0(r, c);
      double max_logit = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < V; ++j) {
        double dlt = z - alpha0 * grid.value(j);
        logits[j] = -dlt * dlt / (2.0 * sigma0_sq);
        if (logits[j] > max_logit) max_logit = logits[j];
      }
      double lse = 0.0;
      for (int j = 0; j < V; ++j) lse += std::exp(logits[j] - max_logit);
      lse = max_logit + std::log(lse);
      int j = x_idx(r, c);
      if (j < 0 || j >= V) throw DomainError("recon_bits: index off the declared grid");
      bits += (lse - logits[j]) * kInvLn2;
    }
  }
  return bits;
}

// recon_bits plus partial derivatives for training: d(bits)/d(z0) per
// coordinate and accumulated d(bits)/d(alpha_0), d(bits)/d(sigma_0^2).
struct ReconGrad {
  double bits = 0.0;
  Mat d_z0;
  double d_alpha0 = 0.0;
  double d_sigma0_sq = 0.0;
};

inline ReconGrad recon_bits_grad(const Mat& z0, const IndexMat& x_idx, const GridSpec& grid,
                                 double alpha0, double sigma0_sq) {
  const int V = grid.V;
  ReconGrad out;
  out.d_z0 = Mat::Zero(z0.rows(), z0.cols());
  std::vector<double> logits(V), prob(V);
  double inv_s2 = 1.0 / sigma0_sq;
  for (Eigen::Index c = 0; c < z0.cols(); ++c) {
    for (Eigen::Index r = 0; r < z0.rows(); ++r) {
      double z = z0(r, c);
      double max_logit = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < V; ++j) {
        double dlt = z - alpha0 * grid.value(j);
        logits[j] = -dlt * dlt * 0.5 * inv_s2;
        if (logits[j] > max_logit) max_logit = logits[j];
      }
      double norm = 0.0;
      for (int j = 0; j < V; ++j) {
        prob[j] = std::exp(logits[j] - max_logit);
        norm += prob[j];
      }
      for (int j = 0; j < V; ++j) prob[j] /= norm;
      int jx = x_idx(r, c);
      if (jx < 0 || jx >= V) throw DomainError("recon_bits: index off the declared grid");
      double lse = max_logit + std::log(norm);
      out.bits += (lse - logits[jx]) * kInvLn2;
      // d(bits)/dtheta = -(da_jx - sum_j p_j da_j) / ln 2
      double da_z_jx = 0.0, da_a_jx = 0.0, da_s_jx = 0.0;
      double ez = 0.0, ea = 0.0, es = 0.0;
      for (int j = 0; j < V; ++j) {
        double dlt = z - alpha0 * grid.value(j);
        double da_z = -dlt * inv_s2;
        double da_a = grid.value(j) * dlt * inv_s2;
        double da_s = dlt * dlt * 0.5 * inv_s2 * inv_s2;
        if (j == jx) { da_z_jx = da_z; da_a_jx = da_a; da_s_jx = da_s; }
        ez += prob[j] * da_z;
        ea += prob[j] * da_a;
        es += prob[j] * da_s;
      }
      out.d_z0(r, c) = -(da_z_jx - ez) * kInvLn2;
      out.d_alpha0 += -(da_a_jx - ea) * kInvLn2;
      out.d_sigma0_sq += -(da_s_jx - es) * kInvLn2;
    }
  }
  return out;
}

// Full-trajectory NELBO in bits, per Alg. 1's accounting: L_T in closed form,
// each per-step term as -log2(delta) - E[log2 f], the tail under the
// categorical likelihood. mc evaluates log2 f at the trajectory's own
// z_{t-1}; quadrature integrates over the forward-posterior box with
// 8-point Gauss-Legendre.
inline NelboReport nelbo(const Model& m, const Mat& x_values, const IndexMat& x_idx,
                         const GridSpec& grid, uint64_t seed,
                         NelboMode mode = NelboMode::kQuadrature) {
  const NoiseSchedule& sched = m.schedule;
  const int T = sched.T();
  Trajectory traj = sample_forward(sched, x_values, seed);
  NelboReport rep;
  rep.l_T = prior_kl_bits(sched, x_values);
  rep.l_steps.assign(T, 0.0);
  const auto& quad = gauss_legendre_cached(8);
  for (int t = T; t >= 1; --t) {
    ReverseDensity den = reverse_density(m, traj.z[t], t, &x_values);
    double log2_delta = std::log2(den.delta);
    double acc = 0.0;
    const Eigen::Index rows = x_values.rows(), cols = x_values.cols();
    for (Eigen::Index c = 0; c < cols; ++c) {
      for (Eigen::Index r = 0; r < rows; ++r) {
        if (mode == NelboMode::kMc) {
          acc += -log2_delta -
                 log_density_f(traj.z[t - 1](r, c), den.mean(r, c), den.scale(r, c), den.delta);
        } else {
          double mu_q = den.mu_q(r, c);
          double e = 0.0;
          for (size_t k = 0; k < quad.nodes.size(); ++k) {
            e += quad.weights[k] *
                 log_density_f(mu_q + 0.5 * den.delta * quad.nodes[k], den.mean(r, c),
                               den.scale(r, c), den.delta);
          }
          acc += -log2_delta - 0.5 * e;
        }
      }
    }
    rep.l_steps[t - 1] = acc;
  }
  auto as0 = sched.alpha_sigma(0);
  rep.l_recon = recon_bits(traj.z[0], x_idx, grid, as0.alpha, as0.sigma2);
  rep.total_bpd = rep.total_bits() / static_cast<double>(x_values.size());
  return rep;
}

// App. B-style per-coordinate rate estimates: the three-point quadratic
// approximation of L_{t-1} next to a 64-point quadrature reference, both in
// bits. h(z) = log2(G(mu_q + z + delta/2) - G(mu_q + z - delta/2)).
struct RateDiagnostic {
  double quadratic_bits;
  double quadrature_bits;
};

inline RateDiagnostic rate_diagnostic(double mean, double scale, double delta, double mu_q) {
  auto h = [&](double z) {
    double hi = (mu_q + z + delta / 2 - mean) / scale;
    double lo = (mu_q + z - delta / 2 - mean) / scale;
    return log_diff_sigmoid(hi, lo) * kInvLn2;
  };
  RateDiagnostic out;
  out.quadratic_bits = -(4.0 * h(0.0) + h(-delta / 2) + h(delta / 2)) / 6.0;
  const auto& quad = gauss_legendre_cached(64);
  double acc = 0.0;
  for (size_t k = 0; k < quad.nodes.size(); ++k) {
    acc += quad.weights[k] * h(0.5 * delta * quad.nodes[k]);
  }
  out.quadrature_bits = -0.5 * acc;
  return out;
}

}  // namespace uqdm

#endif  // UQDM_DIFFUSION_HPP_
