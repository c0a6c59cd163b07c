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

#ifndef UQDM_SCHEDULE_HPP_
#define UQDM_SCHEDULE_HPP_

#include <cmath>
#include <string>

#include "uqdm/common.hpp"
#include "uqdm/dual.hpp"
#include "uqdm/math.hpp"

namespace uqdm {

// Per-step coefficients of the uniform forward posterior
//   q(z_{t-1} | z_t, x) = U(b z_t + c x - delta/2, b z_t + c x + delta/2)
// and the matching reverse-density width. delta^2 = 12 sigma_q2 always.
template <typename S>
struct TransitionCoefficientsT {
  S b;
  S c;
  S delta;
  S sigma_q2;
};
using TransitionCoefficients = TransitionCoefficientsT<double>;

template <typename S>
struct LongRangeCoefficientsT {
  S b_ts;
  S c_ts;
  S beta2_ts;
};
using LongRangeCoefficients = LongRangeCoefficientsT<double>;

template <typename S>
struct AlphaSigmaT {
  S alpha;
  S sigma;
  S sigma2;
};

namespace detail {

// log-SNR endpoints as trainable raw scalars: gamma_max = gamma_min +
// exp(raw_span) keeps the endpoints strictly ordered under gradient steps.
template <typename S>
struct ScheduleParamsT {
  S gamma_min;
  S raw_span;
  int T;

  S gamma(int t) const {
    S frac(static_cast<double>(t) / static_cast<double>(T));
    return gamma_min + frac * exp(raw_span);
  }

  AlphaSigmaT<S> alpha_sigma(int t) const {
    S g = gamma(t);
    S s2 = sigmoid(g);
    AlphaSigmaT<S> out;
    out.sigma2 = s2;
    out.sigma = sqrt(s2);
    out.alpha = sqrt(sigmoid(-g));
    return out;
  }

  // sigma^2_{t|s} = sigma_t^2 (1 - SNR(t)/SNR(s)) = sigma_t^2 (-expm1(g_s - g_t)).
  S sigma2_cond(int s, int t) const {
    S gs = gamma(s), gt = gamma(t);
    return sigmoid(gt) * (-expm1(gs - gt));
  }

  TransitionCoefficientsT<S> transition(int t) const {
    auto prev = alpha_sigma(t - 1);
    auto cur = alpha_sigma(t);
    S s2c = sigma2_cond(t - 1, t);
    TransitionCoefficientsT<S> out;
    out.b = (cur.alpha / prev.alpha) * (prev.sigma2 / cur.sigma2);
    out.c = s2c * prev.alpha / cur.sigma2;
    out.sigma_q2 = s2c * prev.sigma2 / cur.sigma2;
    out.delta = sqrt(S(12.0) * out.sigma_q2);
    return out;
  }

  LongRangeCoefficientsT<S> long_range(int s, int t) const {
    auto as = alpha_sigma(s);
    auto at = alpha_sigma(t);
    S s2c = sigma2_cond(s, t);
    LongRangeCoefficientsT<S> out;
    out.b_ts = (at.alpha / as.alpha) * (as.sigma2 / at.sigma2);
    out.c_ts = s2c * as.alpha / at.sigma2;
    out.beta2_ts = s2c * as.sigma2 / at.sigma2;
    return out;
  }

  // delta_{v|t} = (sigma_t^2 / alpha_t) sqrt(SNR(v-1) - SNR(v)).
  S delta_v_given_t(int v, int t) const {
    auto at = alpha_sigma(t);
    S snr_prev = exp(-gamma(v - 1));
    S snr_cur = exp(-gamma(v));
    return (at.sigma2 / at.alpha) * sqrt(snr_prev - snr_cur);
  }
};

}  // namespace detail

// Linear log-SNR noise schedule with endpoints (gamma_min, gamma_max) over T
// diffusion steps. All derived quantities are evaluated in closed form and in
// double precision.
class NoiseSchedule {
 public:
  NoiseSchedule(double gamma_min, double gamma_max, int T, bool learnable = false)
      : gamma_min_(gamma_min), gamma_max_(gamma_max), T_(T), learnable_(learnable) {
    if (T < 1) throw DomainError("NoiseSchedule: T must be >= 1");
    if (!(gamma_min < gamma_max)) {
      throw ScheduleError("NoiseSchedule: gamma_min must be < gamma_max (SNR must decrease)");
    }
    if (!std::isfinite(gamma_min) || !std::isfinite(gamma_max)) {
      throw NumericError("NoiseSchedule: non-finite endpoint");
    }
  }

  double gamma_min() const { return gamma_min_; }
  double gamma_max() const { return gamma_max_; }
  int T() const { return T_; }
  bool learnable() const { return learnable_; }

  // Raw trainable parameterization (gamma_min, raw_span).
  double raw_span() const { return std::log(gamma_max_ - gamma_min_); }
  void set_raw(double gamma_min, double raw_span) {
    gamma_min_ = gamma_min;
    gamma_max_ = gamma_min + std::exp(raw_span);
  }

  double gamma(int t) const {
    check_t(t, 0);
    return params().gamma(t);
  }

  // sigma_t^2 = sigmoid(gamma(t)), alpha_t^2 = 1 - sigma_t^2.
  AlphaSigmaT<double> alpha_sigma(int t) const {
    check_t(t, 0);
    return params().alpha_sigma(t);
  }

  double snr(int t) const {
    check_t(t, 0);
    return std::exp(-gamma(t));
  }

  TransitionCoefficients transition(int t) const {
    check_t(t, 1);
    auto out = params().transition(t);
    if (!(out.sigma_q2 > 0.0)) {
      throw ScheduleError("transition(t=" + std::to_string(t) +
                          "): sigma^2_{t|t-1} <= 0 (SNR not strictly decreasing)");
    }
    return out;
  }

  LongRangeCoefficients long_range(int s, int t) const {
    if (s >= t) throw DomainError("long_range: requires s < t");
    check_t(s, 0);
    check_t(t, 0);
    return params().long_range(s, t);
  }

  double delta_v_given_t(int v, int t) const {
    if (!(t < v)) throw DomainError("delta_v_given_t: requires t < v");
    check_t(v, 0);
    return params().delta_v_given_t(v, t);
  }

  detail::ScheduleParamsT<double> params() const {
    return {gamma_min_, raw_span(), T_};
  }

  // Dual view seeded with tangents d/d(gamma_min) and d/d(raw_span).
  detail::ScheduleParamsT<Dual2> dual_params() const {
    return {Dual2(gamma_min_, 1.0, 0.0), Dual2(raw_span(), 0.0, 1.0), T_};
  }

 private:
  void check_t(int t, int lo) const {
    if (t < lo || t > T_) {
      throw DomainError("step index " + std::to_string(t) + " outside [" +
                        std::to_string(lo) + ", " + std::to_string(T_) + "]");
    }
  }

  double gamma_min_;
  double gamma_max_;
  int T_;
  bool learnable_;
};

// Transition coefficients from raw per-step moments, without assuming the
// sigmoid parameterization. Throws when the implied conditional variance is
// not positive (SNR not strictly decreasing between the two steps).
inline TransitionCoefficients transition_from_moments(double alpha_prev, double sigma_prev,
                                                      double alpha_cur, double sigma_cur) {
  double sigma2_prev = sigma_prev * sigma_prev;
  double sigma2_cur = sigma_cur * sigma_cur;
  double ratio = alpha_cur / alpha_prev;
  double sigma2_cond = sigma2_cur - ratio * ratio * sigma2_prev;
  if (!(sigma2_cond > 0.0)) {
    throw ScheduleError("transition_from_moments: sigma^2_{t|t-1} <= 0");
  }
  TransitionCoefficients out;
  out.b = ratio * (sigma2_prev / sigma2_cur);
  out.c = sigma2_cond * alpha_prev / sigma2_cur;
  out.sigma_q2 = sigma2_cond * sigma2_prev / sigma2_cur;
  out.delta = std::sqrt(12.0 * out.sigma_q2);
  return out;
}

}  // namespace uqdm

#endif  // UQDM_SCHEDULE_HPP_
