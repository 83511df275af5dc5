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

// Paired-modality datasets, K-shot support sampling and episode assembly.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "fsmod/autodiff.hpp"
#include "fsmod/config.hpp"
#include "fsmod/detection.hpp"
#include "fsmod/tensor.hpp"

namespace fsmod {

class SamplingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ImageRecord {
  std::int64_t image_id = 0;
  std::string rgb_path;  // as written in the index; relative to the index file
  std::string ir_path;
  std::vector<GroundTruth> boxes;
  std::string condition;
  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct ImagePair {
  FeatureMap rgb;
  FeatureMap ir;
};

struct DatasetIndex {
  std::filesystem::path root;  // directory that relative paths resolve against
  std::vector<ImageRecord> images;

  const ImageRecord& image(std::int64_t image_id) const;
  std::filesystem::path resolve(const std::string& path) const;
  std::vector<GroundTruth> ground_truth() const;
};

// Index format: a header line "image_id rgb_path ir_path [condition...]"
// followed by indented "box class_id x1 y1 x2 y2" lines; '#' comments.
DatasetIndex parse_index(std::istream& in, const std::filesystem::path& root);
DatasetIndex load_index(const std::filesystem::path& path);
void write_index(std::ostream& out, const DatasetIndex& index);
void write_index(const std::filesystem::path& path, const DatasetIndex& index);

// In-memory dataset: index plus the feature maps keyed by image id.
struct Dataset {
  DatasetIndex index;
  std::map<std::int64_t, ImagePair> pairs;

  const ImagePair& pair(std::int64_t image_id) const;
};

Dataset load_dataset(const std::filesystem::path& index_path);

// Per-class Gaussian-blob signatures painted over noise. A class's RGB
// signature (first D/2 channels) is shared with class^1's partner and its IR
// signature (last D/2 channels) with a differently paired class, so only the
// combination of both modalities identifies every class.
struct ClassSignature {
  std::vector<double> rgb;  // length D, nonzero on the first half
  std::vector<double> ir;   // length D, nonzero on the second half
};

std::vector<ClassSignature> class_signatures(const DataConfig& cfg, std::uint64_t seed);

Dataset generate_synthetic(const DataConfig& cfg, std::uint64_t seed, std::int64_t first_image_id = 0);
// Writes maps under dir/maps and the index as dir/annotations.txt and the
// ground truth as dir/gt.txt. Returns the index with relative paths.
DatasetIndex write_dataset(const Dataset& data, const std::filesystem::path& dir);

struct SupportInstance {
  std::int64_t image_id = 0;
  GroundTruth box;
  friend bool operator==(const SupportInstance&, const SupportInstance&) = default;
};

// K instances per class (base and novel), drawn without replacement.
struct SupportSet {
  std::size_t seed_index = 0;
  std::size_t shots = 0;
  std::map<int, std::vector<SupportInstance>> per_class;

  bool contains(const SupportInstance& inst) const;
};

// Seed i draws from a stream derived from (master_seed, i). Identical draws
// across seeds are reported through `notes` when provided.
std::vector<SupportSet> build_supports(const DatasetIndex& index, const SplitSpec& split,
                                       std::size_t shots, std::size_t n_seeds,
                                       std::uint64_t master_seed,
                                       std::vector<std::string>* notes = nullptr);

enum class Stage { kBase, kFinetune };

struct Episode {
  Stage stage = Stage::kBase;
  std::vector<int> slot_classes;
  std::vector<std::vector<SupportInstance>> supports;  // per slot
  std::int64_t query_image = 0;
  std::vector<GroundTruth> query_gt;  // restricted to slot classes
};

// Base episodes use only base classes and images free of novel objects.
// Fine-tune episodes use base and novel classes; supports come from `active`
// and queries are limited to images whose novel objects all belong to it.
Episode sample_episode(const DatasetIndex& index, const SplitSpec& split, Stage stage,
                       const EpisodeConfig& cfg, const SupportSet* active, std::mt19937_64& rng);

// True when no novel instance outside `active` appears in the episode.
bool respects_support_set(const Episode& ep, const SplitSpec& split, const SupportSet& active,
                          const DatasetIndex& index);

}  // namespace fsmod
