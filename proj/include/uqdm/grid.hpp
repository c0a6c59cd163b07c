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

#ifndef UQDM_GRID_HPP_
#define UQDM_GRID_HPP_

#include <cmath>

#include "uqdm/common.hpp"

namespace uqdm {

// Uniform mid-rise grid of V levels over [-1, 1]: v_j = -1 + (2j + 1) / V.
// 8-bit image samples map bijectively onto the V = 256 grid, and continuous
// data is snapped to the nearest level before coding so that the categorical
// likelihood (and hence bits-per-dimension) is well defined.
struct GridSpec {
  int V = 256;

  double value(int j) const { return -1.0 + (2.0 * j + 1.0) / V; }

  // Nearest level for x in [-1, 1]; out-of-range input is a domain error.
  int index_of(double x) const {
    if (!(x >= -1.0 && x <= 1.0)) {
      throw DomainError("grid: value outside [-1, 1]");
    }
    int j = static_cast<int>(std::floor((x + 1.0) * V / 2.0));
    return j < 0 ? 0 : (j >= V ? V - 1 : j);
  }

  bool on_grid(double x) const {
    if (!(x >= -1.0 && x <= 1.0)) return false;
    return x == value(index_of(x));
  }

  Mat values_of(const IndexMat& idx) const {
    Mat out(idx.rows(), idx.cols());
    for (Eigen::Index c = 0; c < idx.cols(); ++c) {
      for (Eigen::Index r = 0; r < idx.rows(); ++r) out(r, c) = value(idx(r, c));
    }
    return out;
  }

  IndexMat indices_of(const Mat& x) const {
    IndexMat out(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      for (Eigen::Index r = 0; r < x.rows(); ++r) out(r, c) = index_of(x(r, c));
    }
    return out;
  }
};

}  // namespace uqdm

#endif  // UQDM_GRID_HPP_
