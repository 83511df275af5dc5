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

// Multispectral fusion: per-modality neighborhood attention, bidirectional
// cross-deformable attention and a pointwise-convolution merge.

#pragma once

#include <cstdint>
#include <string>

#include "fsmod/autodiff.hpp"
#include "fsmod/neighborhood_attention.hpp"

namespace fsmod {

// Parameter keys, relative to `prefix`:
//   wu                 input projection of the offset network
//   off_dw             depthwise kernels [D,k_off,k_off]
//   off_ln_g off_ln_b  LayerNorm affine
//   off_w off_b        final 1x1 conv to two offset channels
//   wq wk wv           query/key/value projections
//   ffn_w1 .. ffn_b2   ConvFFN (hidden width 2D)
struct CDAConfig {
  std::size_t stride = 2;  // r
  double offset_scale = 0.5;  // s, normalized-coordinate units
  std::size_t offset_kernel = 5;  // k_off, odd and > stride
  std::size_t channels = 0;
  std::string prefix;

  std::string key(const char* name) const { return prefix + "." + name; }
};

void validate(const CDAConfig& cfg, std::size_t H, std::size_t W);

// Uniform lattice of H/r x W/r reference points at cell centers, in
// normalized coordinates. Row 0 is horizontal, row 1 vertical; points are
// ordered row-major over the lattice.
Matrix reference_grid(std::size_t H, std::size_t W, std::size_t stride);

// Offsets [2, H/r * W/r] predicted from the key/value modality map.
ad::Var offset_net(const ad::Var& kv_source, const CDAConfig& cfg, ad::ParamBinding& params);
Matrix offset_net(const FeatureMap& kv_source, const CDAConfig& cfg, const ParamStore& params);

struct CDAResult {
  ad::Var output;     // [D,H,W]
  ad::Var offsets;    // [2,N]
  ad::Var attention;  // [H*W, N]
};

// residual + ConvFFN(query_source + attention over samples of kv_source).
CDAResult cda_forward_traced(const ad::Var& residual, const ad::Var& query_source,
                             const ad::Var& kv_source, const CDAConfig& cfg,
                             ad::ParamBinding& params);
ad::Var cda_forward(const ad::Var& residual, const ad::Var& query_source, const ad::Var& kv_source,
                    const CDAConfig& cfg, ad::ParamBinding& params);
FeatureMap cda_forward(const FeatureMap& residual, const FeatureMap& query_source,
                       const FeatureMap& kv_source, const CDAConfig& cfg,
                       const ParamStore& params);

enum class FusionMode { kCda, kConcat, kAdd, kCmiStub };

FusionMode parse_fusion_mode(const std::string& name);
std::string to_string(FusionMode mode);

enum class Modality { kRgb, kIr };

struct FusionConfig {
  std::size_t channels = 8;
  std::size_t na_window = 3;
  std::size_t stride = 2;
  double offset_scale = 0.5;
  std::size_t offset_kernel = 5;
  FusionMode mode = FusionMode::kCda;

  // Keys "na.rgb" / "na.ir" and "cda.rgb" / "cda.ir" (the direction that
  // updates the named modality); the merge conv lives under "fuse".
  NAConfig na(Modality m) const;
  CDAConfig cda(Modality updated) const;
};

struct FusionOutputs {
  ad::Var rgb_refined;  // after neighborhood attention
  ad::Var ir_refined;
  ad::Var rgb_updated;  // after cross-deformable attention
  ad::Var ir_updated;
  ad::Var fused;
};

FusionOutputs fusion_forward(const ad::Var& rgb, const ad::Var& ir, const FusionConfig& cfg,
                             ad::ParamBinding& params);
FeatureMap fusion_forward(const FeatureMap& rgb, const FeatureMap& ir, const FusionConfig& cfg,
                          const ParamStore& params);

// Pointwise merge of cat(a, b) with the "fuse.w" [D,2D] / "fuse.b" parameters.
ad::Var concat_fuse(const ad::Var& a, const ad::Var& b, ad::ParamBinding& params);

// Merges two maps. kCda runs the full pipeline with a = RGB and b = IR.
ad::Var fuse(const ad::Var& a, const ad::Var& b, FusionMode mode, const FusionConfig& cfg,
             ad::ParamBinding& params);
FeatureMap fuse(const FeatureMap& a, const FeatureMap& b, FusionMode mode, const FusionConfig& cfg,
                const ParamStore& params);

void add_na_params(ParamStore& store, const NAConfig& cfg, std::uint64_t seed);
// The final offset conv starts at zero so sampling begins undeformed.
void add_cda_params(ParamStore& store, const CDAConfig& cfg, std::uint64_t seed);
void add_fusion_params(ParamStore& store, const FusionConfig& cfg, std::uint64_t seed);

}  // namespace fsmod
