// Copyright 2026 The FSMOD Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fsmod/neighborhood_attention.hpp"

#include <algorithm>
#include <cmath>

namespace fsmod {

void validate(const NAConfig& cfg, std::size_t H, std::size_t W) {
  if (cfg.window % 2 == 0) throw PreconditionError("neighborhood window must be odd");
  if (cfg.window > std::min(H, W)) {
    throw PreconditionError("neighborhood window " + std::to_string(cfg.window) +
                            " exceeds map size " + std::to_string(H) + "x" + std::to_string(W));
  }
}

std::size_t window_start(std::size_t center, std::size_t extent, std::size_t k) {
  const std::size_t half = k / 2;
  const std::size_t lo = center >= half ? center - half : 0;
  return std::min(lo, extent - k);
}

std::vector<PixelCoord> neighborhood(std::size_t i, std::size_t j, std::size_t H, std::size_t W,
                                     std::size_t k) {
  if (k % 2 == 0) throw PreconditionError("neighborhood: k must be odd");
  if (k > std::min(H, W)) {
    throw PreconditionError("neighborhood: k=" + std::to_string(k) + " exceeds map " +
                            std::to_string(H) + "x" + std::to_string(W));
  }
  if (i >= H || j >= W) throw PreconditionError("neighborhood: position outside map");
  const std::size_t r0 = window_start(i, H, k), c0 = window_start(j, W, k);
  std::vector<PixelCoord> out;
  out.reserve(k * k);
  for (std::size_t r = r0; r < r0 + k; ++r)
    for (std::size_t c = c0; c < c0 + k; ++c) out.emplace_back(r, c);
  return out;
}

namespace {

struct Window {
  std::size_t r0, c0;
};

Window window_at(std::size_t i, std::size_t j, std::size_t H, std::size_t W, std::size_t k) {
  return {window_start(i, H, k), window_start(j, W, k)};
}

// Softmax-normalized scores for pixel (i,j); `out` has k*k entries.
void attention_row(const FeatureMap& q, const FeatureMap& key, std::size_t i, std::size_t j,
                   std::size_t k, double* out) {
  const std::size_t D = q.dim(0), H = q.dim(1), W = q.dim(2);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(D));
  const Window w = window_at(i, j, H, W, k);
  double mx = -INFINITY;
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b) {
      double s = 0.0;
      for (std::size_t d = 0; d < D; ++d) s += q.at(d, i, j) * key.at(d, w.r0 + a, w.c0 + b);
      out[a * k + b] = s * inv_sqrt_d;
      mx = std::max(mx, out[a * k + b]);
    }
  double total = 0.0;
  for (std::size_t n = 0; n < k * k; ++n) {
    out[n] = std::exp(out[n] - mx);
    total += out[n];
  }
  for (std::size_t n = 0; n < k * k; ++n) out[n] /= total;
}

}  // namespace

Matrix neighborhood_attention_weights(const FeatureMap& q, const FeatureMap& k,
                                      std::size_t window) {
  require_same_shape(q, k, "neighborhood attention q/k");
  const std::size_t H = q.dim(1), W = q.dim(2);
  validate(NAConfig{window, q.dim(0), ""}, H, W);
  Matrix out = Tensor::matrix(H * W, window * window);
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) attention_row(q, k, i, j, window, out.raw() + (i * W + j) * window * window);
  return out;
}

ad::Var neighborhood_attend(const ad::Var& q, const ad::Var& k, const ad::Var& v,
                            std::size_t window) {
  require_rank(q.value(), 3, "neighborhood_attend");
  require_same_shape(q.value(), k.value(), "neighborhood_attend q/k");
  require_same_shape(q.value(), v.value(), "neighborhood_attend q/v");
  const std::size_t D = q.dim(0), H = q.dim(1), W = q.dim(2), kk = window * window;
  Matrix weights = neighborhood_attention_weights(q.value(), k.value(), window);
  FeatureMap out(q.shape());
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      const Window w = window_at(i, j, H, W, window);
      const double* a = weights.raw() + (i * W + j) * kk;
      for (std::size_t n = 0; n < kk; ++n) {
        const std::size_t u = w.r0 + n / window, vv = w.c0 + n % window;
        for (std::size_t d = 0; d < D; ++d) out.at(d, i, j) += a[n] * v.value().at(d, u, vv);
      }
    }
  return ad::make_op(std::move(out), {q, k, v},
                     [weights = std::move(weights), window](ad::Node& self) {
    const Tensor& qv = self.parents[0]->value;
    const Tensor& kv = self.parents[1]->value;
    const Tensor& vv = self.parents[2]->value;
    const std::size_t D = qv.dim(0), H = qv.dim(1), W = qv.dim(2), kk = window * window;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(D));
    Tensor* gq = self.parents[0]->requires_grad ? &self.parents[0]->grad_buffer() : nullptr;
    Tensor* gk = self.parents[1]->requires_grad ? &self.parents[1]->grad_buffer() : nullptr;
    Tensor* gv = self.parents[2]->requires_grad ? &self.parents[2]->grad_buffer() : nullptr;
    std::vector<double> dscore(kk);
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const Window w = window_at(i, j, H, W, window);
        const double* a = weights.raw() + (i * W + j) * kk;
        double dot = 0.0;
        for (std::size_t n = 0; n < kk; ++n) {
          const std::size_t u = w.r0 + n / window, c = w.c0 + n % window;
          double da = 0.0;
          for (std::size_t d = 0; d < D; ++d) {
            const double g = self.grad.at(d, i, j);
            da += g * vv.at(d, u, c);
            if (gv) gv->at(d, u, c) += a[n] * g;
          }
          dscore[n] = da;
          dot += a[n] * da;
        }
        for (std::size_t n = 0; n < kk; ++n) {
          const double ds = a[n] * (dscore[n] - dot) * inv_sqrt_d;
          const std::size_t u = w.r0 + n / window, c = w.c0 + n % window;
          for (std::size_t d = 0; d < D; ++d) {
            if (gq) gq->at(d, i, j) += ds * kv.at(d, u, c);
            if (gk) gk->at(d, u, c) += ds * qv.at(d, i, j);
          }
        }
      }
  });
}

ad::Var na_forward(const ad::Var& features, const NAConfig& cfg, ad::ParamBinding& params) {
  require_rank(features.value(), 3, "na_forward input");
  validate(cfg, features.dim(1), features.dim(2));
  const ad::Var q = ad::conv1x1(features, params(cfg.wq()));
  const ad::Var k = ad::conv1x1(features, params(cfg.wk()));
  const ad::Var v = ad::conv1x1(features, params(cfg.wv()));
  return neighborhood_attend(q, k, v, cfg.window);
}

FeatureMap na_forward(const FeatureMap& features, const NAConfig& cfg, const ParamStore& params) {
  ad::ParamBinding binding(params, false);
  return na_forward(ad::constant(features), cfg, binding).value();
}

}  // namespace fsmod
