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

// Single-head neighborhood attention: each pixel attends to the k x k window
// around it. Windows near the border are shifted inward so every pixel sees
// exactly k*k neighbors.

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fsmod/autodiff.hpp"

namespace fsmod {

struct NAConfig {
  std::size_t window = 3;  // odd
  std::size_t channels = 0;
  std::string prefix;  // parameter keys: <prefix>.wq, <prefix>.wk, <prefix>.wv

  std::string wq() const { return prefix + ".wq"; }
  std::string wk() const { return prefix + ".wk"; }
  std::string wv() const { return prefix + ".wv"; }
};

using PixelCoord = std::pair<std::size_t, std::size_t>;  // (row, col)

// First row (or column) of the window of side k around `center` in an axis of
// the given extent, clamped so the window fits.
std::size_t window_start(std::size_t center, std::size_t extent, std::size_t k);

// The k*k window around (i, j) in row-major order.
std::vector<PixelCoord> neighborhood(std::size_t i, std::size_t j, std::size_t H, std::size_t W,
                                     std::size_t k);

// Attention of q over the shifted windows of k/v. q, k, v are [D,H,W] maps.
ad::Var neighborhood_attend(const ad::Var& q, const ad::Var& k, const ad::Var& v,
                            std::size_t window);

// Attention weights [H*W, k*k]; row p lists the weights over neighborhood(p).
Matrix neighborhood_attention_weights(const FeatureMap& q, const FeatureMap& k, std::size_t window);

ad::Var na_forward(const ad::Var& features, const NAConfig& cfg, ad::ParamBinding& params);
FeatureMap na_forward(const FeatureMap& features, const NAConfig& cfg, const ParamStore& params);

void validate(const NAConfig& cfg, std::size_t H, std::size_t W);

}  // namespace fsmod
