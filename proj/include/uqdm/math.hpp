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

#ifndef UQDM_MATH_HPP_
#define UQDM_MATH_HPP_

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

namespace uqdm {

inline constexpr double kLn2 = 0.6931471805599453094172321214581766;
inline constexpr double kInvLn2 = 1.4426950408889634073599246810018921;
inline constexpr double kPi = 3.1415926535897932384626433832795029;
// Converts a logistic scale parameter to the standard deviation and back:
// Var(Logistic(mu, s)) = s^2 pi^2 / 3.
inline constexpr double kLogisticScalePerStd = 0.5513288954217920495543047751428998;  // sqrt(3)/pi

inline double sigmoid(double x) {
  if (x >= 0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

// ln(1 + e^x) without overflow for large |x|.
inline double softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

inline double log_sigmoid(double x) { return -softplus(-x); }

// ln(1 - e^a) for a < 0.
inline double log1mexp(double a) {
  if (a >= 0) return -std::numeric_limits<double>::infinity();
  if (a > -kLn2) return std::log(-std::expm1(a));
  return std::log1p(-std::exp(a));
}

// ln(sigmoid(hi) - sigmoid(lo)) for hi > lo, stable for any magnitudes.
// Uses sigmoid(hi) - sigmoid(lo) = sigmoid(hi) sigmoid(-lo) (1 - e^{lo-hi}).
inline double log_diff_sigmoid(double hi, double lo) {
  return log_sigmoid(hi) + log_sigmoid(-lo) + log1mexp(lo - hi);
}

inline double standard_normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

// Gauss-Legendre nodes and weights on [-1, 1], computed by Newton iteration
// on the Legendre recurrence. Exact to double precision for the orders used
// here (8 and 64).
inline void gauss_legendre(int n, std::vector<double>* nodes,
                           std::vector<double>* weights) {
  nodes->assign(n, 0.0);
  weights->assign(n, 0.0);
  int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    double x = std::cos(kPi * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * x * p1 - j * p2) / (j + 1.0);
      }
      pp = n * (x * p0 - p1) / (x * x - 1.0);
      double dx = p0 / pp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    (*nodes)[i] = -x;
    (*nodes)[n - 1 - i] = x;
    double w = 2.0 / ((1.0 - x * x) * pp * pp);
    (*weights)[i] = w;
    (*weights)[n - 1 - i] = w;
  }
}

struct Quadrature {
  std::vector<double> nodes;
  std::vector<double> weights;
};

inline const Quadrature& gauss_legendre_cached(int n) {
  static thread_local std::vector<std::pair<int, Quadrature>> cache;
  for (auto& e : cache) {
    if (e.first == n) return e.second;
  }
  Quadrature q;
  gauss_legendre(n, &q.nodes, &q.weights);
  cache.emplace_back(n, std::move(q));
  return cache.back().second;
}

}  // namespace uqdm

#endif  // UQDM_MATH_HPP_
