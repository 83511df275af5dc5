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

// Box geometry, greedy IoU matching and all-point average precision.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

namespace fsmod {

struct Box {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  bool valid() const { return x1 < x2 && y1 < y2; }
  double area() const { return (x2 - x1) * (y2 - y1); }
  friend bool operator==(const Box&, const Box&) = default;
};

struct Detection {
  Box box;
  double score = 0.0;
  int class_id = 0;
  std::int64_t image_id = 0;
  friend bool operator==(const Detection&, const Detection&) = default;
};

struct GroundTruth {
  Box box;
  int class_id = 0;
  std::int64_t image_id = 0;
  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

double iou(const Box& a, const Box& b);

// Greedy matching of same-class detections in descending score order (ties
// keep input order). Each detection claims the unmatched ground truth on its
// image with the highest IoU >= threshold. Flags are returned in input order.
std::vector<bool> match(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                        double threshold = 0.5);

struct ApResult {
  double ap = 0.0;
  bool undefined = false;  // no ground truth for the class
  std::size_t num_gt = 0;
  std::size_t num_det = 0;
};

// All-point interpolated AP for one class. Inputs may contain other classes;
// they are filtered out.
ApResult average_precision(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                           int class_id, double threshold = 0.5);

// Unweighted mean of AP@0.5 over the given classes.
double nap50(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
             const std::vector<int>& novel_class_ids);

// Line records "image_id class_id score x1 y1 x2 y2" (score absent for ground
// truth). '#' starts a comment. Parse errors carry the line number.
std::vector<Detection> parse_detections(std::istream& in);
std::vector<GroundTruth> parse_ground_truth(std::istream& in);
std::vector<Detection> read_detections(const std::filesystem::path& path);
std::vector<GroundTruth> read_ground_truth(const std::filesystem::path& path);
void write_detections(std::ostream& out, const std::vector<Detection>& dets);
void write_ground_truth(std::ostream& out, const std::vector<GroundTruth>& gts);

// Greedy same-class suppression: keeps the highest-scoring box and drops any
// same-class box overlapping it with IoU >= threshold.
std::vector<Detection> nms(std::vector<Detection> dets, double threshold = 0.5);

}  // namespace fsmod
