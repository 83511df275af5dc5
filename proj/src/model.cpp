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

#include "fsmod/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

namespace fsmod {

std::size_t class_count(const SplitSpec& split) {
  const auto all = split.all();
  if (all.empty() || all.front() < 0) throw PreconditionError("split: class ids must be >= 0");
  return static_cast<std::size_t>(all.back()) + 1;
}

ParamStore init_model(const ExperimentConfig& cfg) {
  validate(cfg.split);
  const std::size_t D = cfg.data.channels;
  ParamStore store;
  add_fusion_params(store, cfg.fusion, cfg.seed);
  add_cam_params(store, cfg.cam, cfg.seed);
  store.add("head.obj_w", glorot_uniform({1, D}, D, 1, cfg.seed, "head.obj_w"));
  store.add("head.obj_b", Tensor::vector(1));
  store.add("head.box_w", glorot_uniform({4, D}, D, 4, cfg.seed, "head.box_w"));
  store.add("head.box_b", Tensor::vector(4));
  const std::size_t C = class_count(cfg.split);
  store.add("meta.class_w", glorot_uniform({C, D}, D, C, cfg.seed, "meta.class_w"));
  return store;
}

namespace {

Matrix normalized_rows(const Matrix& m) {
  Matrix out = m;
  const std::size_t R = m.dim(0), C = m.dim(1);
  for (std::size_t r = 0; r < R; ++r) {
    double norm = 0.0;
    for (std::size_t c = 0; c < C; ++c) norm += m.at(r, c) * m.at(r, c);
    norm = std::sqrt(norm);
    if (norm == 0.0) throw NumericError("zero-norm task encoding");
    for (std::size_t c = 0; c < C; ++c) out.at(r, c) /= norm;
  }
  return out;
}

// Cell whose area contains the box center.
std::size_t center_cell(const Box& b, std::size_t H, std::size_t W) {
  const double cx = 0.5 * (b.x1 + b.x2), cy = 0.5 * (b.y1 + b.y2);
  const auto i = std::min(H - 1, static_cast<std::size_t>(std::max(0.0, std::floor(cy))));
  const auto j = std::min(W - 1, static_cast<std::size_t>(std::max(0.0, std::floor(cx))));
  return i * W + j;
}

}  // namespace

HeadOutputs head_forward(const ad::Var& features, const Matrix& task_encodings, double alpha,
                         ad::ParamBinding& params) {
  require_rank(features.value(), 3, "head_forward");
  const std::size_t D = features.dim(0), HW = features.dim(1) * features.dim(2);
  if (task_encodings.rank() != 2 || task_encodings.dim(1) != D) {
    throw DimensionError("head_forward: encodings " + to_string(task_encodings.shape()) +
                         " for features " + to_string(features.shape()));
  }
  HeadOutputs out;
  out.objectness = ad::reshape(ad::conv1x1(features, params("head.obj_w"), params("head.obj_b")), {1, HW});
  out.boxes = ad::reshape(ad::conv1x1(features, params("head.box_w"), params("head.box_b")), {4, HW});
  const ad::Var tokens = ad::l2_normalize_rows(ad::transpose(ad::reshape(features, {D, HW})), 1e-12);
  out.slot_logits = ad::scale(
      ad::matmul(tokens, ad::constant(transpose(normalized_rows(task_encodings)))), alpha);
  return out;
}

std::vector<Detection> toy_head(const FeatureMap& features, const PrototypeSet& protos,
                                const ParamStore& params, const HeadConfig& cfg,
                                std::int64_t image_id) {
  ad::ParamBinding binding(params, false);
  const HeadOutputs head =
      head_forward(ad::constant(features), protos.task_encodings, cfg.alpha, binding);
  const std::size_t H = features.dim(1), W = features.dim(2), C = protos.slots();
  const Matrix probs = softmax(head.slot_logits.value());
  const Tensor& obj = head.objectness.value();
  const Tensor& reg = head.boxes.value();
  std::vector<Detection> dets;
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      const std::size_t p = i * W + j;
      const double cx = static_cast<double>(j) + 0.5, cy = static_cast<double>(i) + 0.5;
      const double w = static_cast<double>(W), h = static_cast<double>(H);
      const Box box{std::clamp(cx + reg[0 * H * W + p], 0.0, w),
                    std::clamp(cy + reg[1 * H * W + p], 0.0, h),
                    std::clamp(cx + reg[2 * H * W + p], 0.0, w),
                    std::clamp(cy + reg[3 * H * W + p], 0.0, h)};
      if (!box.valid()) continue;
      const double objectness = activate(Activation::kSigmoid, obj[p]);
      for (std::size_t c = 0; c < C; ++c) {
        const double score = objectness * probs.at(p, c);
        if (score > cfg.score_threshold) dets.push_back({box, score, protos.class_ids[c], image_id});
      }
    }
  return nms(std::move(dets), cfg.nms_iou);
}

LossTerms train_loss(const Episode& ep, const Dataset& data, const ExperimentConfig& cfg,
                     ad::ParamBinding& params) {
  if (ep.slot_classes.empty() || ep.supports.size() != ep.slot_classes.size()) {
    throw PreconditionError("train_loss: episode slots and supports disagree");
  }
  std::map<std::int64_t, ad::Var> fused;
  auto features = [&](std::int64_t id) {
    auto it = fused.find(id);
    if (it != fused.end()) return it->second;
    const ImagePair& p = data.pair(id);
    const ad::Var f =
        fuse(ad::constant(p.rgb), ad::constant(p.ir), cfg.fusion.mode, cfg.fusion, params);
    fused.emplace(id, f);
    return f;
  };

  std::map<std::int64_t, std::vector<SupportBox>> support_boxes;
  for (const auto& slot : ep.supports) {
    if (slot.empty()) throw PreconditionError("train_loss: slot without support instances");
    for (const auto& inst : slot) support_boxes[inst.image_id].push_back({inst.box.box, inst.box.class_id});
  }
  std::vector<SupportFeatures> supports;
  for (const auto& [id, boxes] : support_boxes) supports.push_back({features(id), boxes});
  const ad::Var protos = extract_prototypes(supports, ep.slot_classes, cfg.roi);
  const std::size_t C = ep.slot_classes.size(), D = protos.dim(1);

  std::vector<std::size_t> labels;
  for (int c : ep.slot_classes) labels.push_back(static_cast<std::size_t>(c));
  const ad::Var meta = cosine_ce_loss(protos, params("meta.class_w"), labels, cfg.train.alpha);

  const ad::Var query = features(ep.query_image);
  const std::size_t H = query.dim(1), W = query.dim(2);
  const Matrix T = task_encodings(C, D);
  const ad::Var aggregated = cam_forward(query, protos, T, cfg.cam, params);
  const HeadOutputs head = head_forward(aggregated, T, cfg.head.alpha, params);

  Tensor obj_target = Tensor::matrix(1, H * W);
  std::vector<std::size_t> positives, slots;
  Matrix box_target = Tensor::matrix(4, ep.query_gt.size());
  for (std::size_t g = 0; g < ep.query_gt.size(); ++g) {
    const GroundTruth& gt = ep.query_gt[g];
    const std::size_t p = center_cell(gt.box, H, W);
    const auto slot = std::find(ep.slot_classes.begin(), ep.slot_classes.end(), gt.class_id);
    if (slot == ep.slot_classes.end()) throw PreconditionError("train_loss: GT outside slot classes");
    obj_target[p] = 1.0;
    positives.push_back(p);
    slots.push_back(static_cast<std::size_t>(slot - ep.slot_classes.begin()));
    const double cx = static_cast<double>(p % W) + 0.5, cy = static_cast<double>(p / W) + 0.5;
    box_target.at(0, g) = gt.box.x1 - cx;
    box_target.at(1, g) = gt.box.y1 - cy;
    box_target.at(2, g) = gt.box.x2 - cx;
    box_target.at(3, g) = gt.box.y2 - cy;
  }

  // positives and background each carry half of the objectness term
  std::vector<std::size_t> background;
  for (std::size_t p = 0; p < H * W; ++p)
    if (obj_target[p] == 0.0) background.push_back(p);
  std::vector<std::size_t> foreground(positives);
  std::sort(foreground.begin(), foreground.end());
  foreground.erase(std::unique(foreground.begin(), foreground.end()), foreground.end());
  ad::Var obj_loss = ad::bce_with_logits(ad::gather_columns(head.objectness, background),
                                         Tensor::matrix(1, background.size()));
  if (!foreground.empty()) {
    const ad::Var pos = ad::bce_with_logits(ad::gather_columns(head.objectness, foreground),
                                            Tensor::matrix(1, foreground.size(), 1.0));
    obj_loss = ad::scale(ad::add(obj_loss, pos), 0.5);
  }
  ad::Var cls_loss = obj_loss;
  ad::Var box_loss = ad::constant(Tensor::scalar(0.0));
  LossTerms terms;
  terms.objectness = obj_loss.value()[0];
  if (!positives.empty()) {
    const ad::Var slot_loss = ad::cross_entropy(ad::gather_rows(head.slot_logits, positives), slots);
    cls_loss = ad::add(cls_loss, slot_loss);
    terms.slot = slot_loss.value()[0];
    box_loss = ad::mean(ad::abs(ad::sub(ad::gather_columns(head.boxes, positives),
                                        ad::constant(box_target))));
    terms.box = box_loss.value()[0];
  }
  terms.meta = meta.value()[0];
  terms.total = ad::add(ad::add(ad::scale(meta, cfg.train.lambda_meta),
                                ad::scale(cls_loss, cfg.train.lambda_cls)),
                        ad::scale(box_loss, cfg.train.lambda_box));
  return terms;
}

namespace {

std::string log_line(const char* stage, std::size_t step, const LossTerms& t) {
  char buf[192];
  std::snprintf(buf, sizeof buf, "stage=%s step=%zu loss=%.10f meta=%.10f obj=%.10f slot=%.10f box=%.10f",
                stage, step, t.total.value()[0], t.meta, t.objectness, t.slot, t.box);
  return buf;
}

void descend(ParamStore& params, double lr) {
  for (const auto& key : params.keys()) {
    Tensor& v = params.value(key);
    const Tensor& g = params.grad(key);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
  }
}

SupportSet active_supports(const Dataset& data, const ExperimentConfig& cfg) {
  const auto sets = build_supports(data.index, cfg.split, cfg.fewshot.shots, cfg.fewshot.seeds, cfg.seed);
  if (cfg.fewshot.active >= sets.size()) {
    throw PreconditionError("fewshot.active=" + std::to_string(cfg.fewshot.active) +
                            " but only " + std::to_string(sets.size()) + " support sets");
  }
  return sets[cfg.fewshot.active];
}

}  // namespace

TrainLog run_training(const Dataset& data, const ExperimentConfig& cfg, ParamStore& params) {
  TrainLog log;
  auto run_stage = [&](Stage stage, std::size_t steps, const SupportSet* active,
                       std::vector<double>& losses) {
    const char* name = stage == Stage::kBase ? "base" : "finetune";
    std::mt19937_64 rng(derive_seed(cfg.seed, std::string("episodes.") + name));
    for (std::size_t step = 0; step < steps; ++step) {
      const Episode ep = sample_episode(data.index, cfg.split, stage, cfg.episode, active, rng);
      ad::ParamBinding binding(params);
      const LossTerms terms = train_loss(ep, data, cfg, binding);
      const double loss = terms.total.value()[0];
      if (!std::isfinite(loss)) {
        throw NumericError(std::string("loss diverged at ") + name + " step " + std::to_string(step));
      }
      ad::backward(terms.total, params);
      descend(params, cfg.train.lr);
      losses.push_back(loss);
      log.lines.push_back(log_line(name, step, terms));
    }
  };
  run_stage(Stage::kBase, cfg.train.base_steps, nullptr, log.base_losses);
  if (cfg.train.finetune_steps > 0) {
    const SupportSet active = active_supports(data, cfg);
    run_stage(Stage::kFinetune, cfg.train.finetune_steps, &active, log.finetune_losses);
  }
  return log;
}

std::vector<Episode> probe_episodes(const Dataset& data, const ExperimentConfig& cfg,
                                    std::size_t count) {
  const SupportSet active = active_supports(data, cfg);
  std::mt19937_64 rng(derive_seed(cfg.seed, "episodes.probe"));
  std::vector<Episode> out;
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(sample_episode(data.index, cfg.split, Stage::kFinetune, cfg.episode, &active, rng));
  }
  return out;
}

double mean_loss(const std::vector<Episode>& episodes, const Dataset& data,
                 const ExperimentConfig& cfg, const ParamStore& params) {
  if (episodes.empty()) throw PreconditionError("mean_loss: no episodes");
  double total = 0.0;
  for (const auto& ep : episodes) {
    ad::ParamBinding binding(params, false);
    total += train_loss(ep, data, cfg, binding).total.value()[0];
  }
  return total / static_cast<double>(episodes.size());
}

PrototypeSet compute_prototypes(const Dataset& data, const SupportSet& supports,
                                const ExperimentConfig& cfg, const ParamStore& params) {
  std::map<std::int64_t, std::vector<SupportBox>> boxes;
  for (const auto& [cls, instances] : supports.per_class)
    for (const auto& inst : instances) boxes[inst.image_id].push_back({inst.box.box, cls});
  std::vector<std::pair<FeatureMap, std::vector<SupportBox>>> maps;
  for (const auto& [id, b] : boxes) {
    const ImagePair& p = data.pair(id);
    maps.emplace_back(fuse(p.rgb, p.ir, cfg.fusion.mode, cfg.fusion, params), b);
  }
  return extract_prototypes(maps, cfg.split.all(), cfg.roi);
}

PrototypeSet inference_prototypes(const Dataset& data, const ExperimentConfig& cfg,
                                  const ParamStore& params) {
  const auto sets = build_supports(data.index, cfg.split, cfg.fewshot.shots, cfg.fewshot.seeds, cfg.seed);
  std::vector<PrototypeSet> per_seed;
  for (const auto& s : sets) per_seed.push_back(compute_prototypes(data, s, cfg, params));
  return average_prototypes(per_seed);
}

std::vector<Detection> infer(const ImagePair& query, const PrototypeSet& protos,
                             const ExperimentConfig& cfg, const ParamStore& params,
                             std::int64_t image_id) {
  if (protos.slots() == 0 || protos.slots() > cfg.episode.max_slots) {
    throw PreconditionError("infer: " + std::to_string(protos.slots()) +
                            " prototype slots, episode capacity " +
                            std::to_string(cfg.episode.max_slots));
  }
  if (protos.prototypes.dim(1) != cfg.data.channels) {
    throw DimensionError("infer: prototypes have " + std::to_string(protos.prototypes.dim(1)) +
                         " channels, model expects " + std::to_string(cfg.data.channels));
  }
  const FeatureMap fused = fuse(query.rgb, query.ir, cfg.fusion.mode, cfg.fusion, params);
  const FeatureMap aggregated = cam_forward(fused, protos, cfg.cam, params);
  return toy_head(aggregated, protos, params, cfg.head, image_id);
}

std::vector<Detection> infer_all(const Dataset& data, const PrototypeSet& protos,
                                 const ExperimentConfig& cfg, const ParamStore& params) {
  std::vector<Detection> out;
  for (const auto& [id, pair] : data.pairs) {
    auto dets = infer(pair, protos, cfg, params, id);
    out.insert(out.end(), dets.begin(), dets.end());
  }
  return out;
}

}  // namespace fsmod
