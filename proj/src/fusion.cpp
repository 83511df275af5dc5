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

#include "fsmod/fusion.hpp"

#include <cmath>

namespace fsmod {

void validate(const CDAConfig& cfg, std::size_t H, std::size_t W) {
  if (cfg.stride == 0) throw PreconditionError("cda: stride must be >= 1");
  if (!(cfg.offset_scale > 0.0)) throw PreconditionError("cda: offset scale must be > 0");
  if (cfg.offset_kernel % 2 == 0 || cfg.offset_kernel <= cfg.stride) {
    throw PreconditionError("cda: offset kernel must be odd and larger than the stride (k=" +
                            std::to_string(cfg.offset_kernel) +
                            ", r=" + std::to_string(cfg.stride) + ")");
  }
  if (H % cfg.stride != 0 || W % cfg.stride != 0) {
    throw PreconditionError("cda: map " + std::to_string(H) + "x" + std::to_string(W) +
                            " not divisible by stride " + std::to_string(cfg.stride));
  }
}

Matrix reference_grid(std::size_t H, std::size_t W, std::size_t stride) {
  if (stride == 0 || H % stride != 0 || W % stride != 0) {
    throw PreconditionError("reference_grid: " + std::to_string(H) + "x" + std::to_string(W) +
                            " not divisible by " + std::to_string(stride));
  }
  const std::size_t hg = H / stride, wg = W / stride;
  const double r = static_cast<double>(stride);
  Matrix grid = Tensor::matrix(2, hg * wg);
  for (std::size_t a = 0; a < hg; ++a)
    for (std::size_t b = 0; b < wg; ++b) {
      const double row = (static_cast<double>(a) + 0.5) * r - 0.5;
      const double col = (static_cast<double>(b) + 0.5) * r - 0.5;
      grid.at(0, a * wg + b) = pixel_to_normalized(col, W);
      grid.at(1, a * wg + b) = pixel_to_normalized(row, H);
    }
  return grid;
}

ad::Var offset_net(const ad::Var& kv_source, const CDAConfig& cfg, ad::ParamBinding& params) {
  require_rank(kv_source.value(), 3, "offset_net input");
  const std::size_t H = kv_source.dim(1), W = kv_source.dim(2);
  validate(cfg, H, W);
  const ad::Var u = ad::conv1x1(kv_source, params(cfg.key("wu")));
  const ad::Var down = ad::depthwise_conv(u, params(cfg.key("off_dw")), cfg.stride);
  const ad::Var normed =
      ad::layer_norm(down, params(cfg.key("off_ln_g")), params(cfg.key("off_ln_b")));
  const ad::Var raw =
      ad::conv1x1(ad::gelu(normed), params(cfg.key("off_w")), params(cfg.key("off_b")));
  const ad::Var bounded = ad::scale(ad::tanh(raw), cfg.offset_scale);
  return ad::reshape(bounded, {2, (H / cfg.stride) * (W / cfg.stride)});
}

Matrix offset_net(const FeatureMap& kv_source, const CDAConfig& cfg, const ParamStore& params) {
  ad::ParamBinding binding(params, false);
  return offset_net(ad::constant(kv_source), cfg, binding).value();
}

CDAResult cda_forward_traced(const ad::Var& residual, const ad::Var& query_source,
                             const ad::Var& kv_source, const CDAConfig& cfg,
                             ad::ParamBinding& params) {
  require_same_shape(residual.value(), query_source.value(), "cda residual/query");
  require_same_shape(residual.value(), kv_source.value(), "cda residual/kv");
  const std::size_t D = residual.dim(0), H = residual.dim(1), W = residual.dim(2);
  validate(cfg, H, W);

  CDAResult result;
  result.offsets = offset_net(kv_source, cfg, params);
  const ad::Var points =
      ad::add_constant(result.offsets, reference_grid(H, W, cfg.stride));
  const ad::Var samples = ad::bilinear_sample(kv_source, points);  // [D,N]
  const ad::Var keys = ad::matmul(params(cfg.key("wk")), samples);
  const ad::Var values = ad::matmul(params(cfg.key("wv")), samples);

  const ad::Var q = ad::reshape(ad::conv1x1(query_source, params(cfg.key("wq"))), {D, H * W});
  const ad::Var scores =
      ad::scale(ad::matmul(ad::transpose(q), keys), 1.0 / std::sqrt(static_cast<double>(D)));
  result.attention = ad::softmax_rows(scores);  // [HW,N]
  const ad::Var attended =
      ad::reshape(ad::matmul(values, ad::transpose(result.attention)), {D, H, W});

  const ad::Var hidden = ad::relu(ad::conv1x1(ad::add(query_source, attended),
                                              params(cfg.key("ffn_w1")), params(cfg.key("ffn_b1"))));
  const ad::Var refined = ad::conv1x1(hidden, params(cfg.key("ffn_w2")), params(cfg.key("ffn_b2")));
  result.output = ad::add(residual, refined);
  return result;
}

ad::Var cda_forward(const ad::Var& residual, const ad::Var& query_source, const ad::Var& kv_source,
                    const CDAConfig& cfg, ad::ParamBinding& params) {
  return cda_forward_traced(residual, query_source, kv_source, cfg, params).output;
}

FeatureMap cda_forward(const FeatureMap& residual, const FeatureMap& query_source,
                       const FeatureMap& kv_source, const CDAConfig& cfg,
                       const ParamStore& params) {
  ad::ParamBinding binding(params, false);
  return cda_forward(ad::constant(residual), ad::constant(query_source), ad::constant(kv_source),
                     cfg, binding)
      .value();
}

FusionMode parse_fusion_mode(const std::string& name) {
  if (name == "cda") return FusionMode::kCda;
  if (name == "concat") return FusionMode::kConcat;
  if (name == "add") return FusionMode::kAdd;
  if (name == "cmi-stub") return FusionMode::kCmiStub;
  throw PreconditionError("unknown fusion mode '" + name + "'");
}

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::kCda: return "cda";
    case FusionMode::kConcat: return "concat";
    case FusionMode::kAdd: return "add";
    case FusionMode::kCmiStub: return "cmi-stub";
  }
  return "?";
}

namespace {
const char* tag(Modality m) { return m == Modality::kRgb ? "rgb" : "ir"; }
}  // namespace

NAConfig FusionConfig::na(Modality m) const {
  return NAConfig{na_window, channels, std::string("na.") + tag(m)};
}

CDAConfig FusionConfig::cda(Modality updated) const {
  return CDAConfig{stride, offset_scale, offset_kernel, channels, std::string("cda.") + tag(updated)};
}

ad::Var concat_fuse(const ad::Var& a, const ad::Var& b, ad::ParamBinding& params) {
  require_same_shape(a.value(), b.value(), "fuse");
  return ad::conv1x1(ad::concat_channels(a, b), params("fuse.w"), params("fuse.b"));
}

FusionOutputs fusion_forward(const ad::Var& rgb, const ad::Var& ir, const FusionConfig& cfg,
                             ad::ParamBinding& params) {
  require_same_shape(rgb.value(), ir.value(), "fusion_forward");
  FusionOutputs out;
  out.rgb_refined = na_forward(rgb, cfg.na(Modality::kRgb), params);
  out.ir_refined = na_forward(ir, cfg.na(Modality::kIr), params);
  out.rgb_updated =
      cda_forward(rgb, out.rgb_refined, out.ir_refined, cfg.cda(Modality::kRgb), params);
  out.ir_updated =
      cda_forward(ir, out.ir_refined, out.rgb_refined, cfg.cda(Modality::kIr), params);
  out.fused = concat_fuse(out.ir_updated, out.rgb_updated, params);
  return out;
}

FeatureMap fusion_forward(const FeatureMap& rgb, const FeatureMap& ir, const FusionConfig& cfg,
                          const ParamStore& params) {
  ad::ParamBinding binding(params, false);
  return fusion_forward(ad::constant(rgb), ad::constant(ir), cfg, binding).fused.value();
}

ad::Var fuse(const ad::Var& a, const ad::Var& b, FusionMode mode, const FusionConfig& cfg,
             ad::ParamBinding& params) {
  require_same_shape(a.value(), b.value(), "fuse");
  switch (mode) {
    case FusionMode::kCda:
      return fusion_forward(a, b, cfg, params).fused;
    case FusionMode::kConcat:
      return concat_fuse(a, b, params);
    case FusionMode::kAdd:
      return ad::add(a, b);
    case FusionMode::kCmiStub:
      break;
  }
  throw NotImplementedError("fusion mode cmi-stub is not implemented");
}

FeatureMap fuse(const FeatureMap& a, const FeatureMap& b, FusionMode mode, const FusionConfig& cfg,
                const ParamStore& params) {
  ad::ParamBinding binding(params, false);
  return fuse(ad::constant(a), ad::constant(b), mode, cfg, binding).value();
}

void add_na_params(ParamStore& store, const NAConfig& cfg, std::uint64_t seed) {
  const std::size_t D = cfg.channels;
  for (const auto& key : {cfg.wq(), cfg.wk(), cfg.wv()}) {
    store.add(key, glorot_uniform({D, D}, D, D, seed, key));
  }
}

void add_cda_params(ParamStore& store, const CDAConfig& cfg, std::uint64_t seed) {
  const std::size_t D = cfg.channels, k = cfg.offset_kernel;
  auto glorot = [&](const char* name, Shape shape, std::size_t fin, std::size_t fout) {
    store.add(cfg.key(name), glorot_uniform(shape, fin, fout, seed, cfg.key(name)));
  };
  glorot("wu", {D, D}, D, D);
  glorot("off_dw", {D, k, k}, k * k, k * k);
  store.add(cfg.key("off_ln_g"), Tensor::vector(D, 1.0));
  store.add(cfg.key("off_ln_b"), Tensor::vector(D));
  store.add(cfg.key("off_w"), Tensor::matrix(2, D));
  store.add(cfg.key("off_b"), Tensor::vector(2));
  glorot("wq", {D, D}, D, D);
  glorot("wk", {D, D}, D, D);
  glorot("wv", {D, D}, D, D);
  glorot("ffn_w1", {2 * D, D}, D, 2 * D);
  store.add(cfg.key("ffn_b1"), Tensor::vector(2 * D));
  glorot("ffn_w2", {D, 2 * D}, 2 * D, D);
  store.add(cfg.key("ffn_b2"), Tensor::vector(D));
}

void add_fusion_params(ParamStore& store, const FusionConfig& cfg, std::uint64_t seed) {
  const std::size_t D = cfg.channels;
  for (Modality m : {Modality::kRgb, Modality::kIr}) {
    add_na_params(store, cfg.na(m), seed);
    add_cda_params(store, cfg.cda(m), seed);
  }
  store.add("fuse.w", glorot_uniform({D, 2 * D}, 2 * D, D, seed, "fuse.w"));
  store.add("fuse.b", Tensor::vector(D));
}

}  // namespace fsmod
