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

// End-to-end detector: fusion, prototype aggregation and a per-location toy
// head, with the episodic loss and the two-stage training loop.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fsmod/autodiff.hpp"
#include "fsmod/config.hpp"
#include "fsmod/dataset.hpp"
#include "fsmod/detection.hpp"
#include "fsmod/prototype.hpp"

namespace fsmod {

// Head keys: head.obj_w [1,D], head.obj_b [1], head.box_w [4,D],
// head.box_b [4]. The meta classifier meta.class_w has one row per class id.
ParamStore init_model(const ExperimentConfig& cfg);
std::size_t class_count(const SplitSpec& split);

struct HeadOutputs {
  ad::Var objectness;   // [1, HW] logits
  ad::Var boxes;        // [4, HW] offsets from the location center
  ad::Var slot_logits;  // [HW, C]
};

HeadOutputs head_forward(const ad::Var& features, const Matrix& task_encodings, double alpha,
                         ad::ParamBinding& params);

// Decodes head outputs into class-labelled detections followed by same-class
// NMS. Boxes are clamped to the map; locations whose clamped box is empty are
// skipped.
std::vector<Detection> toy_head(const FeatureMap& features, const PrototypeSet& protos,
                                const ParamStore& params, const HeadConfig& cfg,
                                std::int64_t image_id = 0);

struct LossTerms {
  ad::Var total;
  double meta = 0.0;
  double objectness = 0.0;
  double slot = 0.0;
  double box = 0.0;
};

LossTerms train_loss(const Episode& ep, const Dataset& data, const ExperimentConfig& cfg,
                     ad::ParamBinding& params);

struct TrainLog {
  std::vector<std::string> lines;
  std::vector<double> base_losses;
  std::vector<double> finetune_losses;
};

// Base stage then fine-tuning on the active support set. Plain gradient
// descent; a non-finite loss raises NumericError naming the stage and step.
TrainLog run_training(const Dataset& data, const ExperimentConfig& cfg, ParamStore& params);

// Fixed, seed-determined fine-tune episodes for before/after comparisons.
std::vector<Episode> probe_episodes(const Dataset& data, const ExperimentConfig& cfg,
                                    std::size_t count);
double mean_loss(const std::vector<Episode>& episodes, const Dataset& data,
                 const ExperimentConfig& cfg, const ParamStore& params);

// Prototypes for every class of the split (sorted ids) from one support set.
PrototypeSet compute_prototypes(const Dataset& data, const SupportSet& supports,
                                const ExperimentConfig& cfg, const ParamStore& params);
// Averages compute_prototypes over all support sets.
PrototypeSet inference_prototypes(const Dataset& data, const ExperimentConfig& cfg,
                                  const ParamStore& params);

std::vector<Detection> infer(const ImagePair& query, const PrototypeSet& protos,
                             const ExperimentConfig& cfg, const ParamStore& params,
                             std::int64_t image_id = 0);
// Runs infer over every image of `data` in image id order.
std::vector<Detection> infer_all(const Dataset& data, const PrototypeSet& protos,
                                 const ExperimentConfig& cfg, const ParamStore& params);

}  // namespace fsmod
