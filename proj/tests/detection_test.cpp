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


#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <map>
#include <sstream>

#include "fsmod/detection.hpp"
#include "fsmod/testing/oracles.hpp"

namespace fsmod {
namespace {

struct RandomCase {
  std::vector<Detection> dets;
  std::vector<GroundTruth> gts;
};

// Clustered boxes on a few images so matches, misses and duplicates all occur.
RandomCase random_case(std::mt19937_64& rng, int classes = 2) {
  std::uniform_real_distribution<double> pos(0.0, 8.0), size(1.5, 4.0), jitter(-1.0, 1.0), score(0.0, 1.0);
  std::uniform_int_distribution<int> cls(0, classes - 1), image(0, 2), count(1, 6);
  RandomCase c;
  const int n_gt = count(rng);
  for (int g = 0; g < n_gt; ++g) {
    const double x = pos(rng), y = pos(rng), s = size(rng);
    c.gts.push_back({{x, y, x + s, y + s}, cls(rng), image(rng)});
  }
  const int n_det = count(rng) + 2;
  for (int d = 0; d < n_det; ++d) {
    const auto& g = c.gts[static_cast<std::size_t>(d) % c.gts.size()];
    Box b = g.box;
    b.x1 += jitter(rng);
    b.y1 += jitter(rng);
    b.x2 = std::max(b.x1 + 0.5, b.x2 + jitter(rng));
    b.y2 = std::max(b.y1 + 0.5, b.y2 + jitter(rng));
    c.dets.push_back({b, score(rng), score(rng) < 0.8 ? g.class_id : cls(rng), g.image_id});
  }
  return c;
}

TEST(IouTest, ClosedForms) {
  const Box a{0, 0, 2, 2};
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, Box{3, 3, 4, 4}), 0.0);
  EXPECT_EQ(iou(a, Box{2, 0, 4, 2}), 0.0);
  EXPECT_DOUBLE_EQ(iou(a, Box{1, 1, 3, 3}), 1.0 / 7.0);
}

TEST(MatchTest, SingleOverlapIsTruePositive) {
  const std::vector<GroundTruth> gts{{{0, 0, 10, 10}, 0, 1}};
  // IoU 80/100 = 0.8.
  EXPECT_EQ(match({{{0, 0, 10, 8}, 0.5, 0, 1}}, gts), (std::vector<bool>{true}));
}

TEST(MatchTest, SecondDetectionOnSameGtIsFalsePositive) {
  const std::vector<GroundTruth> gts{{{0, 0, 10, 10}, 0, 1}};
  const std::vector<Detection> dets{{{0, 0, 10, 10}, 0.9, 0, 1}, {{0, 0, 10, 9}, 0.8, 0, 1}};
  EXPECT_EQ(match(dets, gts), (std::vector<bool>{true, false}));
}

TEST(MatchTest, OtherImageNeverMatches) {
  const std::vector<GroundTruth> gts{{{0, 0, 10, 10}, 0, 1}};
  EXPECT_EQ(match({{{0, 0, 10, 10}, 0.9, 0, 2}}, gts), (std::vector<bool>{false}));
}

TEST(MatchTest, AgreesWithCandidateSearchOracle) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 300; ++t) {
    const RandomCase c = random_case(rng);
    EXPECT_EQ(match(c.dets, c.gts, 0.5), oracle::match(c.dets, c.gts, 0.5)) << "case " << t;
  }
}

TEST(MatchTest, NoGroundTruthIsClaimedTwice) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 300; ++t) {
    const RandomCase c = random_case(rng);
    const auto flags = match(c.dets, c.gts, 0.3);
    // Each TP must have its own GT: TPs per image never exceed that image's GT count.
    std::map<std::int64_t, int> tps, available;
    for (std::size_t d = 0; d < flags.size(); ++d) tps[c.dets[d].image_id] += flags[d] ? 1 : 0;
    for (const auto& g : c.gts) ++available[g.image_id];
    for (const auto& [img, n] : tps) EXPECT_LE(n, available[img]);
  }
}

TEST(ApTest, HandWalkedCaseIsFiveSixths) {
  const auto c = oracle::hand_walked_case();
  EXPECT_EQ(average_precision(c.dets, c.gts, 0).ap, 5.0 / 6.0);
  EXPECT_EQ(c.expected, 5.0 / 6.0);
}

TEST(ApTest, PerfectAndEmptyDetections) {
  const auto c = oracle::hand_walked_case();
  std::vector<Detection> perfect;
  for (const auto& g : c.gts) perfect.push_back({g.box, 0.5, g.class_id, g.image_id});
  EXPECT_EQ(average_precision(perfect, c.gts, 0).ap, 1.0);
  const ApResult empty = average_precision({}, c.gts, 0);
  EXPECT_EQ(empty.ap, 0.0);
  EXPECT_FALSE(empty.undefined);
  EXPECT_TRUE(average_precision(perfect, c.gts, 7).undefined);
}

TEST(ApTest, AgreesWithRecallEnumerationOracle) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 200; ++t) {
    const RandomCase c = random_case(rng);
    for (int cls = 0; cls < 2; ++cls) {
      EXPECT_NEAR(average_precision(c.dets, c.gts, cls).ap,
                  oracle::average_precision(c.dets, c.gts, cls, 0.5), 1e-12);
    }
  }
}

TEST(ApTest, InvariantUnderMonotoneScoreRescaling) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 100; ++t) {
    const RandomCase c = random_case(rng);
    std::vector<Detection> rescaled = c.dets;
    for (auto& d : rescaled) d.score = std::exp(3.0 * d.score) - 0.5;
    for (int cls = 0; cls < 2; ++cls) {
      EXPECT_EQ(average_precision(c.dets, c.gts, cls).ap, average_precision(rescaled, c.gts, cls).ap);
    }
  }
}

TEST(ApTest, TopScoringFalsePositiveNeverHelps) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 100; ++t) {
    const RandomCase c = random_case(rng, 1);
    std::vector<Detection> more = c.dets;
    more.push_back({{100, 100, 101, 101}, 2.0, 0, 0});
    EXPECT_LE(average_precision(more, c.gts, 0).ap, average_precision(c.dets, c.gts, 0).ap);
  }
}

TEST(ApTest, MatchingAnUnmatchedGtNeverHurts) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 100; ++t) {
    const RandomCase c = random_case(rng, 1);
    // A lowest-scoring exact copy of a GT is a TP only if that GT was free.
    for (std::size_t g = 0; g < c.gts.size(); ++g) {
      std::vector<Detection> probe = c.dets;
      probe.push_back({c.gts[g].box, -1.0, 0, c.gts[g].image_id});
      if (!match(probe, c.gts, 0.5).back()) continue;
      EXPECT_GE(average_precision(probe, c.gts, 0).ap, average_precision(c.dets, c.gts, 0).ap);
    }
  }
}

TEST(Nap50Test, MeanOfNovelClasses) {
  const std::vector<GroundTruth> gts{{{0, 0, 4, 4}, 2, 0}, {{5, 5, 9, 9}, 3, 0}};
  const std::vector<Detection> dets{{{0, 0, 4, 4}, 0.9, 2, 0}};
  EXPECT_EQ(nap50(dets, gts, {2}), 1.0);
  EXPECT_EQ(nap50(dets, gts, {2, 3}), 0.5);
  EXPECT_THROW(nap50(dets, gts, {}), PreconditionError);
}

TEST(Nap50Test, EqualsArithmeticMeanExactly) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 50; ++t) {
    const RandomCase c = random_case(rng, 3);
    const double mean = (average_precision(c.dets, c.gts, 0).ap + average_precision(c.dets, c.gts, 1).ap +
                         average_precision(c.dets, c.gts, 2).ap) /
                        3.0;
    EXPECT_EQ(nap50(c.dets, c.gts, {0, 1, 2}), mean);
  }
}

TEST(NmsTest, IdenticalBoxesKeepHighestScore) {
  const auto kept = nms({{{0, 0, 4, 4}, 0.8, 1, 0}, {{0, 0, 4, 4}, 0.9, 1, 0}});
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].score, 0.9);
}

TEST(NmsTest, DifferentClassesAndImagesSurvive) {
  const auto kept =
      nms({{{0, 0, 4, 4}, 0.9, 1, 0}, {{0, 0, 4, 4}, 0.8, 2, 0}, {{0, 0, 4, 4}, 0.7, 1, 5}});
  EXPECT_EQ(kept.size(), 3u);
}

TEST(NmsTest, TiesKeepInputOrder) {
  const auto kept = nms({{{0, 0, 4, 4}, 0.5, 0, 0}, {{0, 0, 4, 4.2}, 0.5, 0, 0}});
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].box.y2, 4.0);
}

TEST(DetectionFileTest, RoundTripPreservesValues) {
  std::mt19937_64 rng(8);
  const RandomCase c = random_case(rng, 3);
  std::stringstream d, g;
  write_detections(d, c.dets);
  write_ground_truth(g, c.gts);
  EXPECT_EQ(parse_detections(d), c.dets);
  EXPECT_EQ(parse_ground_truth(g), c.gts);
}

TEST(DetectionFileTest, ParseErrorReportsLine) {
  std::istringstream in("# image_id class_id score x1 y1 x2 y2\n0 1 0.5 0 0 2 2\n0 1 0.5 0 0 2\n");
  try {
    parse_detections(in);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  std::istringstream bad_number("0 1 abc 0 0 2 2\n");
  EXPECT_THROW(parse_detections(bad_number), ParseError);
  std::istringstream bad_box("0 1 5 0 2 2\n");
  EXPECT_THROW(parse_ground_truth(bad_box), ParseError);
}

TEST(DetectionFileTest, MissingFileIsIoError) {
  EXPECT_THROW(read_detections("/nonexistent/dets.txt"), IoError);
}

}  // namespace
}  // namespace fsmod
