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

#include "fsmod/prototype.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace fsmod {

Matrix roi_sample_points(const Box& box, const RoiAlignConfig& cfg) {
  if (!box.valid()) throw PreconditionError("roi_align: degenerate box");
  if (cfg.output == 0 || cfg.sampling == 0) throw PreconditionError("roi_align: empty grid");
  const std::size_t P = cfg.output, n = cfg.sampling;
  const double bw = (box.x2 - box.x1) / static_cast<double>(P);
  const double bh = (box.y2 - box.y1) / static_cast<double>(P);
  Matrix pts = Tensor::matrix(2, P * P * n * n);
  std::size_t k = 0;
  for (std::size_t by = 0; by < P; ++by)
    for (std::size_t bx = 0; bx < P; ++bx)
      for (std::size_t sy = 0; sy < n; ++sy)
        for (std::size_t sx = 0; sx < n; ++sx, ++k) {
          const double fx = (static_cast<double>(sx) + 0.5) / static_cast<double>(n);
          const double fy = (static_cast<double>(sy) + 0.5) / static_cast<double>(n);
          // continuous coordinate minus half a pixel gives the pixel index
          pts.at(0, k) = box.x1 + (static_cast<double>(bx) + fx) * bw - 0.5;
          pts.at(1, k) = box.y1 + (static_cast<double>(by) + fy) * bh - 0.5;
        }
  return pts;
}

ad::Var roi_align(const ad::Var& features, const Box& box, const RoiAlignConfig& cfg) {
  require_rank(features.value(), 3, "roi_align");
  const std::size_t P = cfg.output, nn = cfg.sampling * cfg.sampling, D = features.dim(0);
  const ad::Var samples = ad::bilinear_sample_pixels(features, roi_sample_points(box, cfg));
  Matrix pool = Tensor::matrix(P * P * nn, P * P);
  for (std::size_t s = 0; s < P * P * nn; ++s) pool.at(s, s / nn) = 1.0 / static_cast<double>(nn);
  return ad::reshape(ad::matmul(samples, ad::constant(std::move(pool))), {D, P, P});
}

FeatureMap roi_align(const FeatureMap& features, const Box& box, const RoiAlignConfig& cfg) {
  return roi_align(ad::constant(features), box, cfg).value();
}

ad::Var extract_prototypes(const std::vector<SupportFeatures>& supports,
                           const std::vector<int>& classes, const RoiAlignConfig& cfg) {
  if (classes.empty()) throw PreconditionError("extract_prototypes: no classes");
  std::vector<ad::Var> rows;
  for (int cls : classes) {
    std::vector<ad::Var> pooled;
    for (const auto& s : supports) {
      const std::size_t D = s.features.dim(0);
      for (const auto& b : s.boxes) {
        if (b.class_id != cls) continue;
        const ad::Var aligned = roi_align(s.features, b.box, cfg);
        pooled.push_back(ad::mean_columns(ad::reshape(aligned, {D, cfg.output * cfg.output})));
      }
    }
    if (pooled.empty()) {
      throw PreconditionError("extract_prototypes: no support boxes for class " +
                              std::to_string(cls));
    }
    ad::Var total = pooled.front();
    for (std::size_t i = 1; i < pooled.size(); ++i) total = ad::add(total, pooled[i]);
    rows.push_back(ad::scale(total, 1.0 / static_cast<double>(pooled.size())));
  }
  return ad::stack_rows(rows);
}

PrototypeSet extract_prototypes(
    const std::vector<std::pair<FeatureMap, std::vector<SupportBox>>>& supports,
    const std::vector<int>& classes, const RoiAlignConfig& cfg) {
  if (std::set<int>(classes.begin(), classes.end()).size() != classes.size()) {
    throw PreconditionError("extract_prototypes: class ids must be distinct");
  }
  std::vector<SupportFeatures> wrapped;
  for (const auto& [map, boxes] : supports) wrapped.push_back({ad::constant(map), boxes});
  PrototypeSet set;
  set.prototypes = extract_prototypes(wrapped, classes, cfg).value();
  set.task_encodings = task_encodings(classes.size(), set.prototypes.dim(1));
  set.class_ids = classes;
  return set;
}

Matrix task_encodings(std::size_t classes, std::size_t channels) {
  if (channels % 2 != 0) {
    throw PreconditionError("task_encodings: channel count must be even, got " +
                            std::to_string(channels));
  }
  Matrix t = Tensor::matrix(classes, channels);
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t m = 0; m < channels / 2; ++m) {
      const double freq =
          std::pow(10000.0, static_cast<double>(2 * m) / static_cast<double>(channels));
      const double angle = static_cast<double>(c) / freq;
      t.at(c, 2 * m) = std::sin(angle);
      t.at(c, 2 * m + 1) = std::cos(angle);
    }
  return t;
}

GateMode parse_gate_mode(const std::string& name) {
  if (name == "filter") return GateMode::kFilter;
  if (name == "matrix") return GateMode::kMatrix;
  throw PreconditionError("unknown gate mode '" + name + "'");
}

CAMResult cam_forward_traced(const ad::Var& query, const ad::Var& prototypes,
                             const Matrix& task_encodings, const CAMConfig& cfg,
                             ad::ParamBinding& params) {
  require_rank(query.value(), 3, "cam_forward query");
  require_rank(prototypes.value(), 2, "cam_forward prototypes");
  const std::size_t D = query.dim(0), H = query.dim(1), W = query.dim(2);
  if (prototypes.dim(1) != D || !task_encodings.same_shape(prototypes.value())) {
    throw DimensionError("cam_forward: query " + to_string(query.shape()) + ", prototypes " +
                         to_string(prototypes.shape()) + ", encodings " +
                         to_string(task_encodings.shape()));
  }
  const ad::Var proj = params("cam.w");
  const ad::Var tokens = ad::transpose(ad::reshape(query, {D, H * W}));  // [HW,D]
  const ad::Var scores = ad::scale(
      ad::matmul(ad::matmul(tokens, proj), ad::transpose(ad::matmul(prototypes, proj))),
      1.0 / std::sqrt(static_cast<double>(D)));
  CAMResult result;
  result.attention = ad::softmax_rows(scores);  // [HW,C]

  const ad::Var gated = ad::matmul(result.attention, ad::sigmoid(prototypes));  // [HW,D]
  const ad::Var filtered = cfg.gate == GateMode::kFilter ? ad::mul(tokens, gated) : gated;
  const ad::Var encoded = ad::matmul(result.attention, ad::constant(task_encodings));
  const ad::Var mixed = ad::add(filtered, encoded);

  const ad::Var hidden = ad::relu(
      ad::add_row_vector(ad::matmul(mixed, ad::transpose(params("cam.ffn_w1"))), params("cam.ffn_b1")));
  const ad::Var out =
      ad::add_row_vector(ad::matmul(hidden, ad::transpose(params("cam.ffn_w2"))), params("cam.ffn_b2"));
  result.output = ad::reshape(ad::transpose(out), {D, H, W});
  return result;
}

ad::Var cam_forward(const ad::Var& query, const ad::Var& prototypes, const Matrix& task_encodings,
                    const CAMConfig& cfg, ad::ParamBinding& params) {
  return cam_forward_traced(query, prototypes, task_encodings, cfg, params).output;
}

FeatureMap cam_forward(const FeatureMap& query, const PrototypeSet& protos, const CAMConfig& cfg,
                       const ParamStore& params) {
  ad::ParamBinding binding(params, false);
  return cam_forward(ad::constant(query), ad::constant(protos.prototypes), protos.task_encodings,
                     cfg, binding)
      .value();
}

ad::Var cosine_ce_loss(const ad::Var& prototypes, const ad::Var& class_weights,
                       const std::vector<std::size_t>& labels, double alpha) {
  const ad::Var s = ad::l2_normalize_rows(prototypes);
  const ad::Var w = ad::l2_normalize_rows(class_weights);
  return ad::cross_entropy(ad::scale(ad::matmul(s, ad::transpose(w)), alpha), labels);
}

double cosine_ce_loss(const Matrix& prototypes, const Matrix& class_weights,
                      const std::vector<std::size_t>& labels, double alpha) {
  return cosine_ce_loss(ad::constant(prototypes), ad::constant(class_weights), labels, alpha)
      .value()[0];
}

PrototypeSet average_prototypes(const std::vector<PrototypeSet>& per_seed) {
  if (per_seed.empty()) throw PreconditionError("average_prototypes: no prototype sets");
  PrototypeSet out = per_seed.front();
  for (std::size_t i = 1; i < per_seed.size(); ++i) {
    if (per_seed[i].class_ids != out.class_ids) {
      throw PreconditionError("average_prototypes: class ids differ between seeds");
    }
    out.prototypes += per_seed[i].prototypes;
  }
  out.prototypes *= 1.0 / static_cast<double>(per_seed.size());
  return out;
}

void write_prototypes(const std::filesystem::path& path, const PrototypeSet& set) {
  const std::size_t C = set.prototypes.dim(0), D = set.prototypes.dim(1);
  write_fmp1(path, set.prototypes.reshaped({1, C, D}));
  std::ofstream side(path.string() + ".classes");
  if (!side) throw IoError("cannot write " + path.string() + ".classes");
  for (int id : set.class_ids) side << id << '\n';
}

PrototypeSet read_prototypes(const std::filesystem::path& path) {
  const FeatureMap map = read_fmp1(path);
  if (map.dim(0) != 1) throw IoError(path.string() + ": prototype container must have D=1");
  PrototypeSet set;
  set.prototypes = map.reshaped({map.dim(1), map.dim(2)});
  std::ifstream side(path.string() + ".classes");
  if (!side) throw IoError("cannot open " + path.string() + ".classes");
  for (int id; side >> id;) set.class_ids.push_back(id);
  if (set.class_ids.size() != set.prototypes.dim(0)) {
    throw IoError(path.string() + ".classes: expected " + std::to_string(set.prototypes.dim(0)) +
                  " class ids");
  }
  set.task_encodings = task_encodings(set.class_ids.size(), set.prototypes.dim(1));
  return set;
}

void add_cam_params(ParamStore& store, const CAMConfig& cfg, std::uint64_t seed) {
  const std::size_t D = cfg.channels;
  store.add("cam.w", glorot_uniform({D, D}, D, D, seed, "cam.w"));
  store.add("cam.ffn_w1", glorot_uniform({2 * D, D}, D, 2 * D, seed, "cam.ffn_w1"));
  store.add("cam.ffn_b1", Tensor::vector(2 * D));
  store.add("cam.ffn_w2", glorot_uniform({D, 2 * D}, 2 * D, D, seed, "cam.ffn_w2"));
  store.add("cam.ffn_b2", Tensor::vector(D));
}

}  // namespace fsmod
