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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fsmod {

// Error taxonomy shared by every module. The CLI maps these onto exit codes.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NotImplementedError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);

// Dense row-major array of 64-bit reals. Rank 1 (vector), rank 2 (matrix,
// rows x cols) and rank 3 (feature map, channels x rows x cols) are the only
// shapes the pipeline uses.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor vector(std::size_t n, double fill = 0.0) { return Tensor({n}, fill); }
  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor feature_map(std::size_t d, std::size_t h, std::size_t w, double fill = 0.0) {
    return Tensor({d, h, w}, fill);
  }
  static Tensor scalar(double v) { return Tensor({1}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* raw() { return data_.data(); }
  const double* raw() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Matrix access.
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  // Feature-map access.
  double& at(std::size_t d, std::size_t i, std::size_t j) {
    return data_[(d * shape_[1] + i) * shape_[2] + j];
  }
  double at(std::size_t d, std::size_t i, std::size_t j) const {
    return data_[(d * shape_[1] + i) * shape_[2] + j];
  }

  // Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double s);

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Role names used throughout the pipeline. Rank is checked at each op.
using FeatureMap = Tensor;
using Matrix = Tensor;

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);

double max_abs_diff(const Tensor& a, const Tensor& b);

void require_rank(const Tensor& t, std::size_t rank, const char* what);
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

// ---------------------------------------------------------------------------
// Primitive kernels. Pure functions of their inputs; the differentiable layer
// in autodiff.hpp wraps each of them with a matching backward kernel.

// out[d,i,j] = sum_c w[d,c] x[c,i,j] + b[d]. `b` may be empty (no bias).
FeatureMap conv1x1(const FeatureMap& x, const Matrix& w, const Tensor& b = {});

// Per-channel k x k convolution with stride, zero padding of k/2. Kernels are
// stored as a [D,k,k] feature map. H and W must be divisible by the stride.
FeatureMap depthwise_conv(const FeatureMap& x, const FeatureMap& kernels, std::size_t stride);

// Normalizes the channel vector at every spatial location, then applies the
// per-channel affine (gamma, beta).
FeatureMap layer_norm(const FeatureMap& x, const Tensor& gamma, const Tensor& beta,
                      double eps = 1e-5);

enum class Activation { kGelu, kRelu, kSigmoid, kTanh };

Activation parse_activation(const std::string& name);
double activate(Activation kind, double x);
double activate_derivative(Activation kind, double x);
Tensor activation(const Tensor& x, Activation kind);

// axis 1 normalizes each row, axis 0 each column.
Matrix softmax(const Matrix& x, int axis = 1);

// Samples x at normalized coordinates. coords row 0 holds the horizontal
// (column) coordinate, row 1 the vertical (row) coordinate, both in [-1,1]
// with align-corners mapping: pixel = (norm + 1) / 2 * (extent - 1).
// Samples that fall outside the map blend against zero padding.
Matrix bilinear_sample(const FeatureMap& x, const Matrix& coords);

// Pixel-index variant: coords are already in pixel units (col, row).
Matrix bilinear_sample_pixels(const FeatureMap& x, const Matrix& pixel_coords);

double normalized_to_pixel(double norm, std::size_t extent);
double pixel_to_normalized(double pixel, std::size_t extent);

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

// Channel-wise concatenation of two maps with equal spatial size.
FeatureMap concat_channels(const FeatureMap& a, const FeatureMap& b);

// ---------------------------------------------------------------------------
// FMP1 container: magic "FMP1", u32 D, u32 H, u32 W (little endian), then
// D*H*W little-endian IEEE-754 doubles in (channel, row, col) order.

std::vector<std::uint8_t> encode_fmp1(const FeatureMap& map);
FeatureMap decode_fmp1(std::span<const std::uint8_t> bytes);
void write_fmp1(const std::filesystem::path& path, const FeatureMap& map);
FeatureMap read_fmp1(const std::filesystem::path& path);

// 64-bit FNV-1a over the FMP1 encoding; used as a printable checksum.
std::uint64_t checksum(const FeatureMap& map);

namespace debug {
// Test hook for the self-test fault-injection path: when set, softmax returns
// rows scaled by 0.5 so that normalization checks fail.
void set_softmax_fault(bool enabled);
bool softmax_fault();
}  // namespace debug

}  // namespace fsmod
