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
#include <limits>
#include <random>

#include "fsmod/autodiff.hpp"
#include "fsmod/tensor.hpp"
#include "fsmod/testing/oracles.hpp"

namespace fsmod {
namespace {

using oracle::random_tensor;

TEST(TensorTest, ShapeAndDataMustAgree) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  const Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.dim(1), 3u);
  EXPECT_THROW(t.dim(2), DimensionError);
}

TEST(TensorTest, KernelsMatchLoopOracles) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const FeatureMap x = random_tensor({3, 4, 6}, rng);
    const Matrix w = random_tensor({5, 3}, rng);
    const Tensor b = random_tensor({5}, rng);
    EXPECT_LE(max_abs_diff(conv1x1(x, w, b), oracle::conv1x1(x, w, b)), 1e-12);
    const FeatureMap k = random_tensor({3, 3, 3}, rng);
    EXPECT_LE(max_abs_diff(depthwise_conv(x, k, 2), oracle::depthwise_conv(x, k, 2)), 1e-12);
    const Tensor g = random_tensor({3}, rng), beta = random_tensor({3}, rng);
    EXPECT_LE(max_abs_diff(layer_norm(x, g, beta), oracle::layer_norm(x, g, beta)), 1e-12);
    const Matrix a = random_tensor({4, 7}, rng), c = random_tensor({7, 2}, rng);
    EXPECT_LE(max_abs_diff(matmul(a, c), oracle::matmul(a, c)), 1e-12);
  }
}

TEST(TensorTest, DepthwiseRejectsRaggedStride) {
  std::mt19937_64 rng(2);
  EXPECT_THROW(depthwise_conv(random_tensor({2, 5, 4}, rng), random_tensor({2, 3, 3}, rng), 2),
               PreconditionError);
}

TEST(TensorTest, SoftmaxRowsSumToOne) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix x = random_tensor({4, 11}, rng, -30.0, 30.0);
    const Matrix s = softmax(x);
    EXPECT_LE(max_abs_diff(s, oracle::softmax_rows(x)), 1e-12);
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 11; ++c) total += s.at(r, c);
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(TensorTest, SoftmaxSurvivesHugeLogits) {
  const Matrix x({1, 3}, std::vector<double>{1000.0, 999.0, -1000.0});
  const Matrix s = softmax(x);
  EXPECT_TRUE(s.all_finite());
  EXPECT_NEAR(s[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
}

TEST(TensorTest, GeluMatchesErfForm) {
  for (double v = -4.0; v <= 4.0; v += 0.25) {
    EXPECT_NEAR(activate(Activation::kGelu, v), oracle::gelu(v), 1e-14) << v;
  }
}

TEST(BilinearTest, IntegerGridIsExactGather) {
  std::mt19937_64 rng(4);
  const FeatureMap x = random_tensor({2, 3, 5}, rng);
  Matrix coords({2, 15});
  std::size_t n = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 5; ++j, ++n) {
      coords.at(0, n) = pixel_to_normalized(static_cast<double>(j), 5);
      coords.at(1, n) = pixel_to_normalized(static_cast<double>(i), 3);
    }
  }
  const Matrix s = bilinear_sample(x, coords);
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t p = 0; p < 15; ++p) EXPECT_EQ(s.at(c, p), x[c * 15 + p]);
  }
}

TEST(BilinearTest, MatchesOracleIncludingOutOfRange) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const FeatureMap x = random_tensor({3, 4, 7}, rng);
    const Matrix coords = random_tensor({2, 30}, rng, -1.5, 1.5);
    EXPECT_LE(max_abs_diff(bilinear_sample(x, coords), oracle::sample_normalized(x, coords)), 1e-12);
  }
}

TEST(BilinearTest, FarOutsideIsZero) {
  std::mt19937_64 rng(6);
  const FeatureMap x = random_tensor({2, 4, 4}, rng);
  const Matrix coords({2, 1}, std::vector<double>{3.0, -3.0});
  const Matrix s = bilinear_sample(x, coords);
  EXPECT_EQ(s[0], 0.0);
  EXPECT_EQ(s[1], 0.0);
}

TEST(Fmp1Test, RoundTripIsBitExact) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const FeatureMap x = random_tensor({1 + trial % 3, 2 + trial % 4, 3}, rng, -1e6, 1e6);
    const auto bytes = encode_fmp1(x);
    EXPECT_EQ(decode_fmp1(bytes), x);
    EXPECT_EQ(checksum(decode_fmp1(bytes)), checksum(x));
  }
}

TEST(Fmp1Test, RejectsCorruptInput) {
  std::mt19937_64 rng(8);
  auto bytes = encode_fmp1(random_tensor({2, 2, 2}, rng));
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(decode_fmp1(truncated), std::exception);
  bytes[0] = 'X';
  EXPECT_THROW(decode_fmp1(bytes), std::exception);
}

TEST(OpsTest, RepeatedCallsAreBitIdentical) {
  std::mt19937_64 rng(9);
  const FeatureMap x = random_tensor({3, 4, 4}, rng);
  const Matrix coords = random_tensor({2, 10}, rng);
  EXPECT_EQ(bilinear_sample(x, coords), bilinear_sample(x, coords));
  EXPECT_EQ(layer_norm(x, Tensor({3}, 1.0), Tensor({3})), layer_norm(x, Tensor({3}, 1.0), Tensor({3})));
}

TEST(OpsTest, FiniteInFiniteOut) {
  std::mt19937_64 rng(10);
  const FeatureMap x = random_tensor({4, 4, 4}, rng, -50.0, 50.0);
  EXPECT_TRUE(layer_norm(x, Tensor({4}, 1.0), Tensor({4})).all_finite());
  for (auto kind : {Activation::kGelu, Activation::kRelu, Activation::kSigmoid, Activation::kTanh}) {
    EXPECT_TRUE(activation(x, kind).all_finite());
  }
  EXPECT_TRUE(softmax(x.reshaped({4, 16})).all_finite());
}

// --- autodiff ---------------------------------------------------------------

TEST(GradCheckTest, LinearFunctionIsExact) {
  std::mt19937_64 rng(11);
  ParamStore store;
  store.add("w", random_tensor({3, 4}, rng));
  const Matrix x = random_tensor({4, 2}, rng);
  const auto r = grad_check(
      [&](ad::ParamBinding& b) { return ad::sum(ad::matmul(b("w"), ad::constant(x))); }, store);
  EXPECT_LT(r.max_rel_error, 1e-10);
  EXPECT_EQ(r.entries, 12u);
}

TEST(GradCheckTest, SoftmaxMatmulComposite) {
  std::mt19937_64 rng(12);
  ParamStore store;
  store.add("a", random_tensor({3, 4}, rng));
  store.add("b", random_tensor({4, 5}, rng));
  const Matrix proj = random_tensor({3, 5}, rng);
  const auto r = grad_check(
      [&](ad::ParamBinding& b) {
        return ad::sum(ad::mul(ad::softmax_rows(ad::matmul(b("a"), b("b"))), ad::constant(proj)));
      },
      store);
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst_key << "[" << r.worst_index << "]";
}

TEST(GradCheckTest, BilinearAtNonIntegerCoordinates) {
  ParamStore store;
  std::mt19937_64 rng(13);
  store.add("x", random_tensor({2, 4, 4}, rng));
  // Pixel positions kept well inside cells.
  store.add("p", Tensor({2, 3}, std::vector<double>{-0.61, 0.27, 0.43, 0.12, -0.38, 0.71}));
  const Matrix proj = random_tensor({2, 3}, rng);
  const auto r = grad_check(
      [&](ad::ParamBinding& b) {
        return ad::sum(ad::mul(ad::bilinear_sample(b("x"), b("p")), ad::constant(proj)));
      },
      store);
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst_key << "[" << r.worst_index << "]";
}

TEST(GradCheckTest, ConvReluSum) {
  std::mt19937_64 rng(14);
  ParamStore store;
  store.add("w", random_tensor({3, 2}, rng));
  store.add("b", random_tensor({3}, rng));
  const FeatureMap x = random_tensor({2, 3, 3}, rng);
  const auto r = grad_check(
      [&](ad::ParamBinding& b) {
        return ad::sum(ad::relu(ad::conv1x1(ad::constant(x), b("w"), b("b"))));
      },
      store);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(AutodiffTest, GradientsAccumulateAcrossUses) {
  ParamStore store;
  store.add("w", Tensor({1}, 3.0));
  ad::ParamBinding b(store);
  const ad::Var w = b("w");
  ad::backward(ad::sum(ad::mul(w, w)), store);
  EXPECT_DOUBLE_EQ(store.grad("w")[0], 6.0);
}

TEST(AutodiffTest, CrossEntropyMatchesClosedForm) {
  const Matrix logits({2, 3}, std::vector<double>{1.0, 2.0, 3.0, 0.0, 0.0, 0.0});
  const double l0 = -std::log(std::exp(1.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  const double l1 = std::log(3.0);
  const ad::Var ce = ad::cross_entropy(ad::constant(logits), {0, 2});
  EXPECT_NEAR(ce.value()[0], 0.5 * (l0 + l1), 1e-14);
}

TEST(ParamStoreTest, FileRoundTripAndErrors) {
  std::mt19937_64 rng(15);
  ParamStore store;
  store.add("a.w", random_tensor({2, 3}, rng));
  store.add("b", random_tensor({4}, rng));
  const auto path = std::filesystem::temp_directory_path() / "fsmod_params_test.prm";
  write_params(path, store);
  EXPECT_EQ(read_params(path), store);
  std::filesystem::remove(path);
  EXPECT_THROW(read_params(path), IoError);
  EXPECT_THROW(store.add("b", Tensor({1})), PreconditionError);
  EXPECT_THROW(store.value("missing"), PreconditionError);
}

TEST(SeedTest, DerivedSeedsAreStableAndDistinct) {
  EXPECT_EQ(derive_seed(7, "x"), derive_seed(7, "x"));
  EXPECT_NE(derive_seed(7, "x"), derive_seed(7, "y"));
  EXPECT_NE(derive_seed(7, "x"), derive_seed(8, "x"));
}

}  // namespace
}  // namespace fsmod
