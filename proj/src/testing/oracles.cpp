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

#include "fsmod/testing/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace fsmod::oracle {

namespace {

double& px(FeatureMap& m, std::size_t d, std::size_t i, std::size_t j) {
  return m.raw()[(d * m.dim(1) + i) * m.dim(2) + j];
}
double px(const FeatureMap& m, std::size_t d, std::size_t i, std::size_t j) {
  return m.raw()[(d * m.dim(1) + i) * m.dim(2) + j];
}
double& el(Matrix& m, std::size_t r, std::size_t c) { return m.raw()[r * m.dim(1) + c]; }
double el(const Matrix& m, std::size_t r, std::size_t c) { return m.raw()[r * m.dim(1) + c]; }

Tensor zeros(const Shape& s) { return Tensor(s, 0.0); }

// [D,H,W] -> [D,HW] view copy
Matrix flatten(const FeatureMap& x) { return x.reshaped({x.dim(0), x.dim(1) * x.dim(2)}); }

double relu(double v) { return v > 0.0 ? v : 0.0; }
double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape, 0.0);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

FeatureMap conv1x1(const FeatureMap& x, const Matrix& w, const Tensor& b) {
  const std::size_t Din = x.dim(0), H = x.dim(1), W = x.dim(2), Dout = w.dim(0);
  FeatureMap out = zeros({Dout, H, W});
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t d = 0; d < Dout; ++d) {
        double acc = b.empty() ? 0.0 : b.raw()[d];
        for (std::size_t c = 0; c < Din; ++c) acc += el(w, d, c) * px(x, c, i, j);
        px(out, d, i, j) = acc;
      }
  return out;
}

FeatureMap depthwise_conv(const FeatureMap& x, const FeatureMap& kernels, std::size_t stride) {
  const std::size_t D = x.dim(0), H = x.dim(1), W = x.dim(2), k = kernels.dim(1);
  const long pad = static_cast<long>(k / 2);
  const std::size_t Ho = H / stride, Wo = W / stride;
  FeatureMap out = zeros({D, Ho, Wo});
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t oi = 0; oi < Ho; ++oi)
      for (std::size_t oj = 0; oj < Wo; ++oj) {
        double acc = 0.0;
        for (std::size_t a = 0; a < k; ++a)
          for (std::size_t b = 0; b < k; ++b) {
            const long i = static_cast<long>(oi * stride) - pad + static_cast<long>(a);
            const long j = static_cast<long>(oj * stride) - pad + static_cast<long>(b);
            if (i < 0 || j < 0 || i >= static_cast<long>(H) || j >= static_cast<long>(W)) continue;
            acc += px(kernels, d, a, b) * px(x, d, static_cast<std::size_t>(i), static_cast<std::size_t>(j));
          }
        px(out, d, oi, oj) = acc;
      }
  return out;
}

FeatureMap layer_norm(const FeatureMap& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t D = x.dim(0), H = x.dim(1), W = x.dim(2);
  FeatureMap out = zeros(x.shape());
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      double mean = 0.0;
      for (std::size_t d = 0; d < D; ++d) mean += px(x, d, i, j);
      mean /= static_cast<double>(D);
      double var = 0.0;
      for (std::size_t d = 0; d < D; ++d) var += (px(x, d, i, j) - mean) * (px(x, d, i, j) - mean);
      var /= static_cast<double>(D);
      for (std::size_t d = 0; d < D; ++d) {
        px(out, d, i, j) = gamma.raw()[d] * (px(x, d, i, j) - mean) / std::sqrt(var + eps) + beta.raw()[d];
      }
    }
  return out;
}

double gelu(double x) {
  const long double v = x;
  return static_cast<double>(0.5L * v * (1.0L + std::erf(v / std::sqrt(2.0L))));
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Matrix out = zeros({n, m});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += el(a, r, t) * el(b, t, c);
      el(out, r, c) = acc;
    }
  return out;
}

Matrix softmax_rows(const Matrix& x) {
  Matrix out = x;
  const std::size_t R = x.dim(0), C = x.dim(1);
  for (std::size_t r = 0; r < R; ++r) {
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c) hi = std::max(hi, el(x, r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(el(x, r, c) - hi);
    for (std::size_t c = 0; c < C; ++c) el(out, r, c) = std::exp(el(x, r, c) - hi) / z;
  }
  return out;
}

std::vector<double> sample_pixel(const FeatureMap& x, double sx, double sy) {
  const std::size_t D = x.dim(0);
  const long H = static_cast<long>(x.dim(1)), W = static_cast<long>(x.dim(2));
  std::vector<double> out(D, 0.0);
  const double fx = std::floor(sx), fy = std::floor(sy);
  const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
  const double tx = sx - fx, ty = sy - fy;
  const long cx[2] = {x0, x0 + 1}, cy[2] = {y0, y0 + 1};
  const double wx[2] = {1.0 - tx, tx}, wy[2] = {1.0 - ty, ty};
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      if (cy[a] < 0 || cy[a] >= H || cx[b] < 0 || cx[b] >= W) continue;
      const double w = wy[a] * wx[b];
      for (std::size_t d = 0; d < D; ++d) {
        out[d] += w * px(x, d, static_cast<std::size_t>(cy[a]), static_cast<std::size_t>(cx[b]));
      }
    }
  return out;
}

Matrix sample_normalized(const FeatureMap& x, const Matrix& coords) {
  const std::size_t D = x.dim(0), N = coords.dim(1);
  const double H = static_cast<double>(x.dim(1)), W = static_cast<double>(x.dim(2));
  Matrix out = zeros({D, N});
  for (std::size_t n = 0; n < N; ++n) {
    const double sx = (el(coords, 0, n) + 1.0) * 0.5 * (W - 1.0);
    const double sy = (el(coords, 1, n) + 1.0) * 0.5 * (H - 1.0);
    const auto v = oracle::sample_pixel(x, sx, sy);
    for (std::size_t d = 0; d < D; ++d) el(out, d, n) = v[d];
  }
  return out;
}

FeatureMap masked_attention(const FeatureMap& q, const FeatureMap& k, const FeatureMap& v,
                            std::size_t window) {
  const std::size_t D = q.dim(0), H = q.dim(1), W = q.dim(2), N = H * W;
  const long half = static_cast<long>(window / 2), kk = static_cast<long>(window);
  auto inside = [&](long center, long other, long extent) {
    long lo = center - half;
    if (lo < 0) lo = 0;
    if (lo + kk > extent) lo = extent - kk;
    return other >= lo && other < lo + kk;
  };
  Matrix scores = zeros({N, N});
  const double scale = 1.0 / std::sqrt(static_cast<double>(D));
  for (std::size_t p = 0; p < N; ++p)
    for (std::size_t t = 0; t < N; ++t) {
      const long pi = static_cast<long>(p / W), pj = static_cast<long>(p % W);
      const long ti = static_cast<long>(t / W), tj = static_cast<long>(t % W);
      if (!inside(pi, ti, static_cast<long>(H)) || !inside(pj, tj, static_cast<long>(W))) {
        el(scores, p, t) = -std::numeric_limits<double>::infinity();
        continue;
      }
      double dot = 0.0;
      for (std::size_t d = 0; d < D; ++d) dot += q.raw()[d * N + p] * k.raw()[d * N + t];
      el(scores, p, t) = dot * scale;
    }
  const Matrix attn = oracle::softmax_rows(scores);
  FeatureMap out = zeros({D, H, W});
  for (std::size_t p = 0; p < N; ++p)
    for (std::size_t d = 0; d < D; ++d) {
      double acc = 0.0;
      for (std::size_t t = 0; t < N; ++t) acc += el(attn, p, t) * v.raw()[d * N + t];
      out.raw()[d * N + p] = acc;
    }
  return out;
}

FeatureMap neighborhood_attention(const FeatureMap& x, const NAConfig& cfg, const ParamStore& params) {
  return oracle::masked_attention(oracle::conv1x1(x, params.value(cfg.wq())), oracle::conv1x1(x, params.value(cfg.wk())),
                          oracle::conv1x1(x, params.value(cfg.wv())), cfg.window);
}

Matrix reference_grid(std::size_t H, std::size_t W, std::size_t stride) {
  const std::size_t hg = H / stride, wg = W / stride;
  Matrix g = zeros({2, hg * wg});
  for (std::size_t a = 0; a < hg; ++a)
    for (std::size_t b = 0; b < wg; ++b) {
      const double row_pix = (static_cast<double>(a) + 0.5) * static_cast<double>(stride) - 0.5;
      const double col_pix = (static_cast<double>(b) + 0.5) * static_cast<double>(stride) - 0.5;
      el(g, 0, a * wg + b) = W > 1 ? 2.0 * col_pix / static_cast<double>(W - 1) - 1.0 : 0.0;
      el(g, 1, a * wg + b) = H > 1 ? 2.0 * row_pix / static_cast<double>(H - 1) - 1.0 : 0.0;
    }
  return g;
}

Matrix offsets(const FeatureMap& kv_source, const CDAConfig& cfg, const ParamStore& params) {
  const FeatureMap u = oracle::conv1x1(kv_source, params.value(cfg.key("wu")));
  const FeatureMap down = oracle::depthwise_conv(u, params.value(cfg.key("off_dw")), cfg.stride);
  FeatureMap act = oracle::layer_norm(down, params.value(cfg.key("off_ln_g")), params.value(cfg.key("off_ln_b")));
  for (auto& v : act.data()) v = oracle::gelu(v);
  FeatureMap raw = oracle::conv1x1(act, params.value(cfg.key("off_w")), params.value(cfg.key("off_b")));
  for (auto& v : raw.data()) v = cfg.offset_scale * std::tanh(v);
  return flatten(raw);
}

namespace {

// Shared tail of both attention oracles: q from the query map, keys/values
// from samples [D,N], then the ConvFFN residual.
FeatureMap attend_and_refine(const FeatureMap& residual, const FeatureMap& query_source,
                             const Matrix& samples, const CDAConfig& cfg, const ParamStore& params) {
  const std::size_t D = residual.dim(0), H = residual.dim(1), W = residual.dim(2), HW = H * W;
  const std::size_t N = samples.dim(1);
  const Matrix keys = oracle::matmul(params.value(cfg.key("wk")), samples);
  const Matrix values = oracle::matmul(params.value(cfg.key("wv")), samples);
  const Matrix q = flatten(oracle::conv1x1(query_source, params.value(cfg.key("wq"))));
  Matrix scores = zeros({HW, N});
  for (std::size_t p = 0; p < HW; ++p)
    for (std::size_t n = 0; n < N; ++n) {
      double dot = 0.0;
      for (std::size_t d = 0; d < D; ++d) dot += el(q, d, p) * el(keys, d, n);
      el(scores, p, n) = dot / std::sqrt(static_cast<double>(D));
    }
  const Matrix attn = oracle::softmax_rows(scores);
  FeatureMap mixed = query_source;
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t p = 0; p < HW; ++p) {
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) acc += el(attn, p, n) * el(values, d, n);
      mixed.raw()[d * HW + p] += acc;
    }
  FeatureMap hidden = oracle::conv1x1(mixed, params.value(cfg.key("ffn_w1")), params.value(cfg.key("ffn_b1")));
  for (auto& v : hidden.data()) v = relu(v);
  const FeatureMap refined = oracle::conv1x1(hidden, params.value(cfg.key("ffn_w2")), params.value(cfg.key("ffn_b2")));
  FeatureMap out = residual;
  for (std::size_t i = 0; i < out.size(); ++i) out.raw()[i] += refined.raw()[i];
  return out;
}

}  // namespace

FeatureMap cross_deformable(const FeatureMap& residual, const FeatureMap& query_source,
                            const FeatureMap& kv_source, const CDAConfig& cfg,
                            const ParamStore& params) {
  Matrix points = oracle::reference_grid(residual.dim(1), residual.dim(2), cfg.stride);
  const Matrix delta = oracle::offsets(kv_source, cfg, params);
  for (std::size_t i = 0; i < points.size(); ++i) points.raw()[i] += delta.raw()[i];
  return attend_and_refine(residual, query_source, oracle::sample_normalized(kv_source, points), cfg, params);
}

FeatureMap dense_cross_attention(const FeatureMap& residual, const FeatureMap& query_source,
                                 const FeatureMap& kv_source, const CDAConfig& cfg,
                                 const ParamStore& params) {
  return attend_and_refine(residual, query_source, flatten(kv_source), cfg, params);
}

FeatureMap fusion(const FeatureMap& rgb, const FeatureMap& ir, const FusionConfig& cfg,
                  const ParamStore& params) {
  const FeatureMap rgb1 = oracle::neighborhood_attention(rgb, cfg.na(Modality::kRgb), params);
  const FeatureMap ir1 = oracle::neighborhood_attention(ir, cfg.na(Modality::kIr), params);
  const FeatureMap rgb2 = oracle::cross_deformable(rgb, rgb1, ir1, cfg.cda(Modality::kRgb), params);
  const FeatureMap ir2 = oracle::cross_deformable(ir, ir1, rgb1, cfg.cda(Modality::kIr), params);
  const std::size_t D = rgb.dim(0), H = rgb.dim(1), W = rgb.dim(2);
  FeatureMap stacked = zeros({2 * D, H, W});
  for (std::size_t i = 0; i < D * H * W; ++i) {
    stacked.raw()[i] = ir2.raw()[i];
    stacked.raw()[D * H * W + i] = rgb2.raw()[i];
  }
  return oracle::conv1x1(stacked, params.value("fuse.w"), params.value("fuse.b"));
}

FeatureMap roi_align(const FeatureMap& x, const Box& box, std::size_t output, std::size_t sampling) {
  const std::size_t D = x.dim(0);
  FeatureMap out = zeros({D, output, output});
  const double bw = (box.x2 - box.x1) / static_cast<double>(output);
  const double bh = (box.y2 - box.y1) / static_cast<double>(output);
  for (std::size_t by = 0; by < output; ++by)
    for (std::size_t bx = 0; bx < output; ++bx) {
      std::vector<double> acc(D, 0.0);
      for (std::size_t sy = 0; sy < sampling; ++sy)
        for (std::size_t sx = 0; sx < sampling; ++sx) {
          // continuous location inside the bin, then to pixel-index space
          const double cx = box.x1 + bw * (static_cast<double>(bx) +
                                           (static_cast<double>(sx) + 0.5) / static_cast<double>(sampling));
          const double cy = box.y1 + bh * (static_cast<double>(by) +
                                           (static_cast<double>(sy) + 0.5) / static_cast<double>(sampling));
          const auto v = oracle::sample_pixel(x, cx - 0.5, cy - 0.5);
          for (std::size_t d = 0; d < D; ++d) acc[d] += v[d];
        }
      for (std::size_t d = 0; d < D; ++d) {
        px(out, d, by, bx) = acc[d] / static_cast<double>(sampling * sampling);
      }
    }
  return out;
}

Matrix prototypes(const std::vector<std::pair<FeatureMap, std::vector<SupportBox>>>& supports,
                  const std::vector<int>& classes, std::size_t output, std::size_t sampling) {
  const std::size_t D = supports.front().first.dim(0);
  Matrix S = zeros({classes.size(), D});
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::size_t count = 0;
    for (const auto& [map, boxes] : supports)
      for (const auto& b : boxes) {
        if (b.class_id != classes[c]) continue;
        const FeatureMap r = oracle::roi_align(map, b.box, output, sampling);
        for (std::size_t d = 0; d < D; ++d) {
          double s = 0.0;
          for (std::size_t t = 0; t < output * output; ++t) s += r.raw()[d * output * output + t];
          el(S, c, d) += s / static_cast<double>(output * output);
        }
        ++count;
      }
    for (std::size_t d = 0; d < D; ++d) el(S, c, d) /= static_cast<double>(count);
  }
  return S;
}

Matrix task_encodings(std::size_t classes, std::size_t channels) {
  Matrix T = zeros({classes, channels});
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t col = 0; col < channels; ++col) {
      const std::size_t m = col / 2;
      const double angle = static_cast<double>(c) /
                           std::pow(10000.0, static_cast<double>(2 * m) / static_cast<double>(channels));
      el(T, c, col) = col % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  return T;
}

FeatureMap cam(const FeatureMap& query, const Matrix& prototypes, const Matrix& encodings,
               GateMode gate, const ParamStore& params) {
  const std::size_t D = query.dim(0), H = query.dim(1), W = query.dim(2), HW = H * W;
  const std::size_t C = prototypes.dim(0);
  Matrix tokens = zeros({HW, D});
  for (std::size_t p = 0; p < HW; ++p)
    for (std::size_t d = 0; d < D; ++d) el(tokens, p, d) = query.raw()[d * HW + p];
  const Matrix& Wp = params.value("cam.w");
  const Matrix qp = oracle::matmul(tokens, Wp), sp = oracle::matmul(prototypes, Wp);
  Matrix scores = zeros({HW, C});
  for (std::size_t p = 0; p < HW; ++p)
    for (std::size_t c = 0; c < C; ++c) {
      double dot = 0.0;
      for (std::size_t d = 0; d < D; ++d) dot += el(qp, p, d) * el(sp, c, d);
      el(scores, p, c) = dot / std::sqrt(static_cast<double>(D));
    }
  const Matrix A = oracle::softmax_rows(scores);
  Matrix mixed = zeros({HW, D});
  for (std::size_t p = 0; p < HW; ++p)
    for (std::size_t d = 0; d < D; ++d) {
      double gated = 0.0, enc = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        gated += el(A, p, c) * sigmoid(el(prototypes, c, d));
        enc += el(A, p, c) * el(encodings, c, d);
      }
      el(mixed, p, d) = (gate == GateMode::kFilter ? el(tokens, p, d) * gated : gated) + enc;
    }
  const Matrix& w1 = params.value("cam.ffn_w1");
  const Tensor& b1 = params.value("cam.ffn_b1");
  const Matrix& w2 = params.value("cam.ffn_w2");
  const Tensor& b2 = params.value("cam.ffn_b2");
  const std::size_t Hd = w1.dim(0);
  FeatureMap out = zeros({D, H, W});
  for (std::size_t p = 0; p < HW; ++p) {
    std::vector<double> hidden(Hd);
    for (std::size_t h = 0; h < Hd; ++h) {
      double acc = b1.raw()[h];
      for (std::size_t d = 0; d < D; ++d) acc += el(w1, h, d) * el(mixed, p, d);
      hidden[h] = relu(acc);
    }
    for (std::size_t d = 0; d < D; ++d) {
      double acc = b2.raw()[d];
      for (std::size_t h = 0; h < Hd; ++h) acc += el(w2, d, h) * hidden[h];
      out.raw()[d * HW + p] = acc;
    }
  }
  return out;
}

double cosine_ce(const Matrix& prototypes, const Matrix& weights,
                 const std::vector<std::size_t>& labels, double alpha) {
  const std::size_t C = prototypes.dim(0), K = weights.dim(0), D = prototypes.dim(1);
  auto norm = [&](const Matrix& m, std::size_t r) {
    double s = 0.0;
    for (std::size_t d = 0; d < D; ++d) s += el(m, r, d) * el(m, r, d);
    return std::sqrt(s);
  };
  double total = 0.0;
  for (std::size_t i = 0; i < C; ++i) {
    std::vector<double> logits(K);
    for (std::size_t j = 0; j < K; ++j) {
      double dot = 0.0;
      for (std::size_t d = 0; d < D; ++d) dot += el(prototypes, i, d) * el(weights, j, d);
      logits[j] = alpha * dot / (norm(prototypes, i) * norm(weights, j));
    }
    double z = 0.0;
    for (double l : logits) z += std::exp(l);
    total += -(logits[labels[i]] - std::log(z));
  }
  return total / static_cast<double>(C);
}

std::vector<bool> match(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                        double threshold) {
  auto overlap = [](const Box& a, const Box& b) {
    const double w = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double h = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = w * h;
    const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
    return uni > 0.0 ? inter / uni : 0.0;
  };
  std::vector<bool> tp(dets.size(), false), taken(gts.size(), false), done(dets.size(), false);
  for (std::size_t round = 0; round < dets.size(); ++round) {
    // highest remaining score, earliest index on ties
    std::size_t pick = dets.size();
    for (std::size_t i = 0; i < dets.size(); ++i)
      if (!done[i] && (pick == dets.size() || dets[i].score > dets[pick].score)) pick = i;
    done[pick] = true;
    double best = -1.0;
    std::size_t best_gt = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g] || gts[g].image_id != dets[pick].image_id || gts[g].class_id != dets[pick].class_id) continue;
      const double o = overlap(dets[pick].box, gts[g].box);
      if (o >= threshold && o > best) {
        best = o;
        best_gt = g;
      }
    }
    if (best_gt < gts.size()) {
      taken[best_gt] = true;
      tp[pick] = true;
    }
  }
  return tp;
}

double average_precision(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                         int class_id, double threshold) {
  std::vector<Detection> d;
  std::vector<GroundTruth> g;
  for (const auto& x : dets)
    if (x.class_id == class_id) d.push_back(x);
  for (const auto& x : gts)
    if (x.class_id == class_id) g.push_back(x);
  if (g.empty() || d.empty()) return 0.0;
  const auto tp = oracle::match(d, g, threshold);
  std::vector<std::size_t> order(d.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d[a].score > d[b].score; });
  std::vector<double> recall, precision;
  double hits = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    hits += tp[order[k]] ? 1.0 : 0.0;
    recall.push_back(hits / static_cast<double>(g.size()));
    precision.push_back(hits / static_cast<double>(k + 1));
  }
  // integrate the envelope over each distinct recall step
  double ap = 0.0, prev = 0.0;
  for (std::size_t k = 0; k < recall.size(); ++k) {
    if (recall[k] <= prev) continue;
    double best = 0.0;
    for (std::size_t t = k; t < recall.size(); ++t) best = std::max(best, precision[t]);
    ap += (recall[k] - prev) * best;
    prev = recall[k];
  }
  return ap;
}

ApCase hand_walked_case() {
  ApCase c;
  c.gts = {{{0, 0, 10, 10}, 0, 1}, {{20, 20, 30, 30}, 0, 1}};
  c.dets = {{{0, 0, 10, 10}, 0.9, 0, 1}, {{50, 50, 60, 60}, 0.8, 0, 1}, {{20, 20, 30, 30}, 0.7, 0, 1}};
  c.expected = 5.0 / 6.0;
  return c;
}

double nearest_centroid_accuracy(const std::vector<std::vector<double>>& train,
                                 const std::vector<int>& train_labels,
                                 const std::vector<std::vector<double>>& test,
                                 const std::vector<int>& test_labels) {
  std::map<int, std::vector<double>> centroid;
  std::map<int, double> count;
  for (std::size_t i = 0; i < train.size(); ++i) {
    auto& c = centroid[train_labels[i]];
    c.resize(train[i].size(), 0.0);
    for (std::size_t d = 0; d < c.size(); ++d) c[d] += train[i][d];
    count[train_labels[i]] += 1.0;
  }
  for (auto& [label, c] : centroid)
    for (auto& v : c) v /= count[label];
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    int best = -1;
    double best_dist = std::numeric_limits<double>::infinity();
    for (const auto& [label, c] : centroid) {
      double dist = 0.0;
      for (std::size_t d = 0; d < c.size(); ++d) dist += (test[i][d] - c[d]) * (test[i][d] - c[d]);
      if (dist < best_dist) {
        best_dist = dist;
        best = label;
      }
    }
    correct += best == test_labels[i] ? 1 : 0;
  }
  return test.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace fsmod::oracle
