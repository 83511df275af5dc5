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

// Support prototypes and the correlational aggregation that turns class
// prototypes into class-agnostic query features.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fsmod/autodiff.hpp"
#include "fsmod/detection.hpp"

namespace fsmod {

// A ground-truth support box in feature-map pixel units. Pixel (i, j) covers
// [j, j+1) x [i, i+1), so its center sits at (j + 0.5, i + 0.5).
struct SupportBox {
  Box box;
  int class_id = 0;
};

struct RoiAlignConfig {
  std::size_t output = 7;    // P
  std::size_t sampling = 2;  // n samples per bin axis
};

// Pixel-index sample locations [2, P*P*n*n], grouped bin by bin (bins
// row-major, samples row-major within a bin).
Matrix roi_sample_points(const Box& box, const RoiAlignConfig& cfg);

FeatureMap roi_align(const FeatureMap& features, const Box& box, const RoiAlignConfig& cfg);
ad::Var roi_align(const ad::Var& features, const Box& box, const RoiAlignConfig& cfg);

struct PrototypeSet {
  Matrix prototypes;       // S [C,D]
  Matrix task_encodings;   // T [C,D]
  std::vector<int> class_ids;

  std::size_t slots() const { return class_ids.size(); }
};

struct SupportFeatures {
  ad::Var features;  // fused support map [D,H,W]
  std::vector<SupportBox> boxes;
};

// One prototype row per entry of `classes`: each box is RoI-aligned and
// average-pooled, then boxes of the same class are averaged.
ad::Var extract_prototypes(const std::vector<SupportFeatures>& supports,
                           const std::vector<int>& classes, const RoiAlignConfig& cfg);
PrototypeSet extract_prototypes(const std::vector<std::pair<FeatureMap, std::vector<SupportBox>>>& supports,
                                const std::vector<int>& classes, const RoiAlignConfig& cfg = {});

// Sinusoidal slot encodings: T[c,2m] = sin(c / 10000^(2m/D)),
// T[c,2m+1] = cos(c / 10000^(2m/D)). D must be even.
Matrix task_encodings(std::size_t classes, std::size_t channels);

// How attention-matched prototypes enter the query features.
enum class GateMode {
  kFilter,  // Q_F = F_q * (A sigmoid(S)), elementwise
  kMatrix,  // Q_F = A sigmoid(S)
};

GateMode parse_gate_mode(const std::string& name);

// Keys: cam.w [D,D] shared projection, cam.ffn_w1 [2D,D], cam.ffn_b1,
// cam.ffn_w2 [D,2D], cam.ffn_b2.
struct CAMConfig {
  std::size_t channels = 8;
  GateMode gate = GateMode::kFilter;
};

struct CAMResult {
  ad::Var output;     // [D,H,W]
  ad::Var attention;  // [H*W, C]
};

CAMResult cam_forward_traced(const ad::Var& query, const ad::Var& prototypes,
                             const Matrix& task_encodings, const CAMConfig& cfg,
                             ad::ParamBinding& params);
ad::Var cam_forward(const ad::Var& query, const ad::Var& prototypes, const Matrix& task_encodings,
                    const CAMConfig& cfg, ad::ParamBinding& params);
FeatureMap cam_forward(const FeatureMap& query, const PrototypeSet& protos, const CAMConfig& cfg,
                       const ParamStore& params);

// Mean cross-entropy of alpha * cos(S_i, W_j) against class labels. Rows with
// zero norm raise NumericError.
ad::Var cosine_ce_loss(const ad::Var& prototypes, const ad::Var& class_weights,
                       const std::vector<std::size_t>& labels, double alpha = 20.0);
double cosine_ce_loss(const Matrix& prototypes, const Matrix& class_weights,
                      const std::vector<std::size_t>& labels, double alpha = 20.0);

// Elementwise mean of the prototype matrices; encodings are carried over.
PrototypeSet average_prototypes(const std::vector<PrototypeSet>& per_seed);

// FMP1 with shape (1, C, D) plus "<path>.classes" listing class ids in row
// order. Task encodings are regenerated on read.
void write_prototypes(const std::filesystem::path& path, const PrototypeSet& set);
PrototypeSet read_prototypes(const std::filesystem::path& path);

void add_cam_params(ParamStore& store, const CAMConfig& cfg, std::uint64_t seed);

}  // namespace fsmod
