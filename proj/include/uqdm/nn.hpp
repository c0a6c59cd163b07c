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

#ifndef UQDM_NN_HPP_
#define UQDM_NN_HPP_

#include <cmath>
#include <cstdint>
#include <vector>

#include "uqdm/common.hpp"
#include "uqdm/rng.hpp"

namespace uqdm {

// Dense multi-layer perceptron with SiLU hidden activations and a linear
// output layer. Batches are column-major: one sample per column.
struct MlpParams {
  std::vector<Mat> W;
  std::vector<Eigen::VectorXd> b;

  int layers() const { return static_cast<int>(W.size()); }
  Eigen::Index input_dim() const { return W.front().cols(); }
  Eigen::Index output_dim() const { return W.back().rows(); }

  size_t param_count() const {
    size_t n = 0;
    for (int l = 0; l < layers(); ++l) n += W[l].size() + b[l].size();
    return n;
  }
};

inline Mat silu(const Mat& x) {
  return (x.array() / (1.0 + (-x.array()).exp())).matrix();
}

inline Mat silu_grad(const Mat& x) {
  Eigen::ArrayXXd s = 1.0 / (1.0 + (-x.array()).exp());
  return (s * (1.0 + x.array() * (1.0 - s))).matrix();
}

// He-scaled Gaussian init with a zeroed output layer, so a fresh network
// predicts eps = 0 and unit variance scaling.
inline MlpParams mlp_init(const std::vector<int>& dims, uint64_t seed) {
  MlpParams p;
  uint64_t stream = derive_stream(seed, kStreamInit);
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    Mat w(dims[l + 1], dims[l]);
    bool last = (l + 2 == dims.size());
    double std = last ? 0.0 : std::sqrt(2.0 / dims[l]);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) {
        w(i, j) = std * gaussian(stream, l, static_cast<uint64_t>(j) * w.rows() + i);
      }
    }
    p.W.push_back(std::move(w));
    p.b.emplace_back(Eigen::VectorXd::Zero(dims[l + 1]));
  }
  return p;
}

struct MlpCache {
  std::vector<Mat> pre;  // pre-activation per layer
  std::vector<Mat> act;  // act[0] = input, act[l+1] = output of layer l
};

inline Mat mlp_forward(const MlpParams& p, const Mat& x, MlpCache* cache = nullptr) {
  Mat h = x;
  if (cache) {
    cache->pre.clear();
    cache->act.clear();
    cache->act.push_back(h);
  }
  for (int l = 0; l < p.layers(); ++l) {
    Mat pre = (p.W[l] * h).colwise() + p.b[l];
    if (cache) cache->pre.push_back(pre);
    h = (l + 1 < p.layers()) ? silu(pre) : std::move(pre);
    if (cache) cache->act.push_back(h);
  }
  return h;
}

struct MlpGrads {
  std::vector<Mat> dW;
  std::vector<Eigen::VectorXd> db;

  explicit MlpGrads(const MlpParams& p) {
    for (int l = 0; l < p.layers(); ++l) {
      dW.emplace_back(Mat::Zero(p.W[l].rows(), p.W[l].cols()));
      db.emplace_back(Eigen::VectorXd::Zero(p.b[l].size()));
    }
  }
};

// Accumulates parameter gradients for the batch; input gradients are not
// needed anywhere (the trajectory does not depend on the weights).
inline void mlp_backward(const MlpParams& p, const MlpCache& cache, const Mat& d_out,
                         MlpGrads* grads) {
  Mat delta = d_out;
  for (int l = p.layers() - 1; l >= 0; --l) {
    grads->dW[l].noalias() += delta * cache.act[l].transpose();
    grads->db[l] += delta.rowwise().sum();
    if (l > 0) {
      Mat back = p.W[l].transpose() * delta;
      delta = back.cwiseProduct(silu_grad(cache.pre[l - 1]));
    }
  }
}

// Forward-mode tangent through the cached forward pass: given d(input), the
// matching d(output) in the same tangent direction.
inline Mat mlp_jvp(const MlpParams& p, const MlpCache& cache, const Mat& dx) {
  Mat t = dx;
  for (int l = 0; l < p.layers(); ++l) {
    Mat pre_t = p.W[l] * t;
    t = (l + 1 < p.layers()) ? Mat(pre_t.cwiseProduct(silu_grad(cache.pre[l]))) : std::move(pre_t);
  }
  return t;
}

inline void mlp_flatten(const MlpParams& p, Eigen::VectorXd* out) {
  out->resize(static_cast<Eigen::Index>(p.param_count()));
  Eigen::Index off = 0;
  for (int l = 0; l < p.layers(); ++l) {
    Eigen::Map<const Eigen::VectorXd> w(p.W[l].data(), p.W[l].size());
    out->segment(off, w.size()) = w;
    off += w.size();
    out->segment(off, p.b[l].size()) = p.b[l];
    off += p.b[l].size();
  }
}

inline void mlp_unflatten(const Eigen::VectorXd& v, MlpParams* p) {
  Eigen::Index off = 0;
  for (int l = 0; l < p->layers(); ++l) {
    Eigen::Map<Eigen::VectorXd> w(p->W[l].data(), p->W[l].size());
    w = v.segment(off, w.size());
    off += w.size();
    p->b[l] = v.segment(off, p->b[l].size());
    off += p->b[l].size();
  }
}

inline void grads_flatten(const MlpGrads& g, Eigen::VectorXd* out, Eigen::Index extra = 0) {
  Eigen::Index n = extra;
  for (size_t l = 0; l < g.dW.size(); ++l) n += g.dW[l].size() + g.db[l].size();
  out->resize(n);
  Eigen::Index off = 0;
  for (size_t l = 0; l < g.dW.size(); ++l) {
    Eigen::Map<const Eigen::VectorXd> w(g.dW[l].data(), g.dW[l].size());
    out->segment(off, w.size()) = w;
    off += w.size();
    out->segment(off, g.db[l].size()) = g.db[l];
    off += g.db[l].size();
  }
}

// Adam with optional global-norm clipping applied by the caller.
class AdamOptimizer {
 public:
  AdamOptimizer(Eigen::Index n, double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
        m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n)) {}

  void step(const Eigen::VectorXd& grad, Eigen::VectorXd* params) {
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_.array().matrix() + (1.0 - beta2_) * grad.cwiseProduct(grad);
    double c1 = 1.0 - std::pow(beta1_, t_);
    double c2 = 1.0 - std::pow(beta2_, t_);
    params->array() -=
        lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  Eigen::VectorXd m_, v_;
};

inline void clip_global_norm(Eigen::VectorXd* grad, double max_norm) {
  double n = grad->norm();
  if (n > max_norm && n > 0.0) *grad *= max_norm / n;
}

}  // namespace uqdm

#endif  // UQDM_NN_HPP_
