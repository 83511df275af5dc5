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

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fsmod/fusion.hpp"
#include "fsmod/prototype.hpp"

namespace fsmod {

struct DataConfig {
  int classes = 3;
  std::size_t images = 48;
  std::size_t channels = 8;
  std::size_t height = 12;
  std::size_t width = 12;
  std::size_t objects_per_image = 2;
  std::size_t object_size = 3;
  double noise = 0.1;
  double signal = 1.0;
  // "none", "rgb" or "ir": zero that modality's informative channels.
  std::string ablate = "none";
};

struct SplitSpec {
  std::vector<int> base;
  std::vector<int> novel;

  std::vector<int> all() const;  // sorted union
  bool is_novel(int class_id) const;
  bool is_base(int class_id) const;
};

// Disjoint, nonempty class sets.
void validate(const SplitSpec& split);

struct EpisodeConfig {
  std::size_t max_slots = 4;       // T_max
  std::size_t support_shots = 2;   // support instances drawn per slot
};

struct FewShotConfig {
  std::size_t shots = 5;   // K
  std::size_t seeds = 10;
  std::size_t active = 0;  // SupportSet used for fine-tuning
};

struct HeadConfig {
  double alpha = 20.0;
  double score_threshold = 0.05;
  double nms_iou = 0.5;
};

struct TrainConfig {
  std::size_t base_steps = 300;
  std::size_t finetune_steps = 300;
  double lr = 0.05;
  double lambda_meta = 1.0;
  double lambda_cls = 1.0;
  double lambda_box = 1.0;
  double alpha = 20.0;  // cosine loss scale
};

struct ExperimentConfig {
  DataConfig data;
  SplitSpec split{{0, 1}, {2}};
  FusionConfig fusion;
  CAMConfig cam;
  RoiAlignConfig roi;
  EpisodeConfig episode;
  FewShotConfig fewshot;
  HeadConfig head;
  TrainConfig train;
  std::uint64_t seed = 7;
};

// Flat "key = value" text; '#' comments. Unknown keys are rejected. Keys not
// present keep their defaults. Channel counts are propagated from data.channels.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
// Every key with its resolved value, in a stable order.
std::string to_text(const ExperimentConfig& cfg);

}  // namespace fsmod
