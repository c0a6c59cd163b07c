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

#ifndef UQDM_DUAL_HPP_
#define UQDM_DUAL_HPP_

#include <cmath>

#include "uqdm/math.hpp"

namespace uqdm {

// Make the std overloads visible so that templated schedule math picks the
// plain-double versions when instantiated with S = double.
using std::exp;
using std::expm1;
using std::log;
using std::sqrt;

// Forward-mode scalar carrying two tangent directions, used to push schedule
// endpoint derivatives through the closed-form coefficient algebra.
struct Dual2 {
  double v = 0.0;
  double d0 = 0.0;
  double d1 = 0.0;

  Dual2() = default;
  Dual2(double value) : v(value) {}  // NOLINT: implicit by design
  Dual2(double value, double t0, double t1) : v(value), d0(t0), d1(t1) {}
};

inline Dual2 operator+(const Dual2& a, const Dual2& b) {
  return {a.v + b.v, a.d0 + b.d0, a.d1 + b.d1};
}
inline Dual2 operator-(const Dual2& a, const Dual2& b) {
  return {a.v - b.v, a.d0 - b.d0, a.d1 - b.d1};
}
inline Dual2 operator-(const Dual2& a) { return {-a.v, -a.d0, -a.d1}; }
inline Dual2 operator*(const Dual2& a, const Dual2& b) {
  return {a.v * b.v, a.d0 * b.v + a.v * b.d0, a.d1 * b.v + a.v * b.d1};
}
inline Dual2 operator/(const Dual2& a, const Dual2& b) {
  double inv = 1.0 / b.v;
  double q = a.v * inv;
  return {q, (a.d0 - q * b.d0) * inv, (a.d1 - q * b.d1) * inv};
}

inline Dual2 sqrt(const Dual2& a) {
  double r = std::sqrt(a.v);
  double g = 0.5 / r;
  return {r, a.d0 * g, a.d1 * g};
}
inline Dual2 exp(const Dual2& a) {
  double e = std::exp(a.v);
  return {e, a.d0 * e, a.d1 * e};
}
inline Dual2 log(const Dual2& a) {
  double g = 1.0 / a.v;
  return {std::log(a.v), a.d0 * g, a.d1 * g};
}
inline Dual2 expm1(const Dual2& a) {
  double e = std::exp(a.v);
  return {std::expm1(a.v), a.d0 * e, a.d1 * e};
}
inline Dual2 sigmoid(const Dual2& a) {
  double s = sigmoid(a.v);
  double g = s * (1.0 - s);
  return {s, a.d0 * g, a.d1 * g};
}

inline double value(const Dual2& a) { return a.v; }
inline double value(double a) { return a; }

}  // namespace uqdm

#endif  // UQDM_DUAL_HPP_
