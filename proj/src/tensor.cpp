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

#include "fsmod/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

namespace fsmod {

namespace {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::atomic<bool> g_softmax_fault{false};

}  // namespace

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != element_count(shape_)) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + to_string(shape_));
  }
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         to_string(shape_));
  }
  return shape_[axis];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (element_count(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "add");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  require_same_shape(*this, other, "subtract");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double s) { return a *= s; }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(what) + ": shape mismatch " + to_string(a.shape()) +
                         " vs " + to_string(b.shape()));
  }
}

FeatureMap conv1x1(const FeatureMap& x, const Matrix& w, const Tensor& b) {
  require_rank(x, 3, "conv1x1 input");
  require_rank(w, 2, "conv1x1 weight");
  if (w.dim(1) != x.dim(0)) {
    throw DimensionError("conv1x1: weight " + to_string(w.shape()) + " incompatible with input " +
                         to_string(x.shape()));
  }
  const std::size_t dout = w.dim(0), din = w.dim(1), hw = x.dim(1) * x.dim(2);
  if (!b.empty() && b.size() != dout) {
    throw DimensionError("conv1x1: bias " + to_string(b.shape()) + " incompatible with weight " +
                         to_string(w.shape()));
  }
  FeatureMap out = Tensor::feature_map(dout, x.dim(1), x.dim(2));
  for (std::size_t d = 0; d < dout; ++d) {
    double* o = out.raw() + d * hw;
    if (!b.empty()) std::fill(o, o + hw, b[d]);
    for (std::size_t c = 0; c < din; ++c) {
      const double wv = w.at(d, c);
      const double* in = x.raw() + c * hw;
      for (std::size_t p = 0; p < hw; ++p) o[p] += wv * in[p];
    }
  }
  return out;
}

FeatureMap depthwise_conv(const FeatureMap& x, const FeatureMap& kernels, std::size_t stride) {
  require_rank(x, 3, "depthwise_conv input");
  require_rank(kernels, 3, "depthwise_conv kernels");
  const std::size_t D = x.dim(0), H = x.dim(1), W = x.dim(2), k = kernels.dim(1);
  if (kernels.dim(0) != D || kernels.dim(2) != k) {
    throw DimensionError("depthwise_conv: kernels " + to_string(kernels.shape()) +
                         " incompatible with input " + to_string(x.shape()));
  }
  if (k % 2 == 0) throw PreconditionError("depthwise_conv: kernel side must be odd");
  if (stride == 0) throw PreconditionError("depthwise_conv: stride must be >= 1");
  if (H % stride != 0 || W % stride != 0) {
    throw PreconditionError("depthwise_conv: spatial size " + std::to_string(H) + "x" +
                            std::to_string(W) + " not divisible by stride " +
                            std::to_string(stride));
  }
  const std::size_t Ho = H / stride, Wo = W / stride;
  const long pad = static_cast<long>(k / 2);
  FeatureMap out = Tensor::feature_map(D, Ho, Wo);
  for (std::size_t d = 0; d < D; ++d) {
    for (std::size_t oi = 0; oi < Ho; ++oi) {
      for (std::size_t oj = 0; oj < Wo; ++oj) {
        double acc = 0.0;
        for (std::size_t ki = 0; ki < k; ++ki) {
          const long i = static_cast<long>(oi * stride + ki) - pad;
          if (i < 0 || i >= static_cast<long>(H)) continue;
          for (std::size_t kj = 0; kj < k; ++kj) {
            const long j = static_cast<long>(oj * stride + kj) - pad;
            if (j < 0 || j >= static_cast<long>(W)) continue;
            acc += kernels.at(d, ki, kj) * x.at(d, static_cast<std::size_t>(i),
                                                static_cast<std::size_t>(j));
          }
        }
        out.at(d, oi, oj) = acc;
      }
    }
  }
  return out;
}

FeatureMap layer_norm(const FeatureMap& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(x, 3, "layer_norm input");
  const std::size_t D = x.dim(0), hw = x.dim(1) * x.dim(2);
  if (gamma.size() != D || beta.size() != D) {
    throw DimensionError("layer_norm: affine parameters must have " + std::to_string(D) +
                         " entries");
  }
  FeatureMap out(x.shape());
  for (std::size_t p = 0; p < hw; ++p) {
    double mean = 0.0;
    for (std::size_t d = 0; d < D; ++d) mean += x[d * hw + p];
    mean /= static_cast<double>(D);
    double var = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
      const double c = x[d * hw + p] - mean;
      var += c * c;
    }
    var /= static_cast<double>(D);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t d = 0; d < D; ++d) {
      out[d * hw + p] = (x[d * hw + p] - mean) * inv * gamma[d] + beta[d];
    }
  }
  return out;
}

Activation parse_activation(const std::string& name) {
  if (name == "gelu") return Activation::kGelu;
  if (name == "relu") return Activation::kRelu;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "tanh") return Activation::kTanh;
  throw PreconditionError("unknown activation '" + name + "'");
}

double activate(Activation kind, double x) {
  switch (kind) {
    case Activation::kGelu:
      return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
    case Activation::kRelu:
      return x > 0.0 ? x : 0.0;
    case Activation::kSigmoid:
      return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    case Activation::kTanh:
      return std::tanh(x);
  }
  return x;
}

double activate_derivative(Activation kind, double x) {
  switch (kind) {
    case Activation::kGelu: {
      const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
      const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
      return cdf + x * pdf;
    }
    case Activation::kRelu:
      return x > 0.0 ? 1.0 : 0.0;
    case Activation::kSigmoid: {
      const double s = activate(kind, x);
      return s * (1.0 - s);
    }
    case Activation::kTanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
  }
  return 1.0;
}

Tensor activation(const Tensor& x, Activation kind) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = activate(kind, x[i]);
  return out;
}

Matrix softmax(const Matrix& x, int axis) {
  require_rank(x, 2, "softmax");
  if (axis != 0 && axis != 1) throw PreconditionError("softmax: axis must be 0 or 1");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  // Normalizing columns is the row case on the transpose.
  const std::size_t outer = axis == 1 ? rows : cols;
  const std::size_t inner = axis == 1 ? cols : rows;
  const std::size_t outer_stride = axis == 1 ? cols : 1;
  const std::size_t inner_stride = axis == 1 ? 1 : cols;
  Matrix out(x.shape());
  std::vector<double> terms(inner);
  for (std::size_t o = 0; o < outer; ++o) {
    const std::size_t base = o * outer_stride;
    double mx = -INFINITY;
    for (std::size_t i = 0; i < inner; ++i) mx = std::max(mx, x[base + i * inner_stride]);
    for (std::size_t i = 0; i < inner; ++i) {
      terms[i] = std::exp(x[base + i * inner_stride] - mx);
      out[base + i * inner_stride] = terms[i];
    }
    // Sorted so the normalizer does not depend on slot order.
    std::sort(terms.begin(), terms.end());
    double total = 0.0;
    for (double e : terms) total += e;
    const double scale = (debug::softmax_fault() ? 0.5 : 1.0) / total;
    for (std::size_t i = 0; i < inner; ++i) out[base + i * inner_stride] *= scale;
  }
  return out;
}

double normalized_to_pixel(double norm, std::size_t extent) {
  return (norm + 1.0) * 0.5 * static_cast<double>(extent - 1);
}

double pixel_to_normalized(double pixel, std::size_t extent) {
  if (extent <= 1) return 0.0;
  return 2.0 * pixel / static_cast<double>(extent - 1) - 1.0;
}

Matrix bilinear_sample_pixels(const FeatureMap& x, const Matrix& pixel_coords) {
  require_rank(x, 3, "bilinear_sample input");
  require_rank(pixel_coords, 2, "bilinear_sample coords");
  if (pixel_coords.dim(0) != 2) {
    throw DimensionError("bilinear_sample: coords must be [2,N], got " +
                         to_string(pixel_coords.shape()));
  }
  const std::size_t D = x.dim(0), H = x.dim(1), W = x.dim(2), N = pixel_coords.dim(1);
  Matrix out = Tensor::matrix(D, N);
  for (std::size_t n = 0; n < N; ++n) {
    const double px = pixel_coords.at(0, n), py = pixel_coords.at(1, n);
    const double fx = std::floor(px), fy = std::floor(py);
    const double ax = px - fx, ay = py - fy;
    const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
    const double wts[4] = {(1 - ay) * (1 - ax), (1 - ay) * ax, ay * (1 - ax), ay * ax};
    const long ys[4] = {y0, y0, y0 + 1, y0 + 1};
    const long xs[4] = {x0, x0 + 1, x0, x0 + 1};
    for (int c = 0; c < 4; ++c) {
      if (ys[c] < 0 || xs[c] < 0 || ys[c] >= static_cast<long>(H) ||
          xs[c] >= static_cast<long>(W) || wts[c] == 0.0) {
        continue;
      }
      for (std::size_t d = 0; d < D; ++d) {
        out.at(d, n) += wts[c] * x.at(d, static_cast<std::size_t>(ys[c]),
                                      static_cast<std::size_t>(xs[c]));
      }
    }
  }
  return out;
}

Matrix bilinear_sample(const FeatureMap& x, const Matrix& coords) {
  require_rank(x, 3, "bilinear_sample input");
  require_rank(coords, 2, "bilinear_sample coords");
  if (coords.dim(0) != 2) {
    throw DimensionError("bilinear_sample: coords must be [2,N], got " + to_string(coords.shape()));
  }
  Matrix pix(coords.shape());
  for (std::size_t n = 0; n < coords.dim(1); ++n) {
    pix.at(0, n) = normalized_to_pixel(coords.at(0, n), x.dim(2));
    pix.at(1, n) = normalized_to_pixel(coords.at(1, n), x.dim(1));
  }
  return bilinear_sample_pixels(x, pix);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: shape mismatch " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  }
  const std::size_t n = a.dim(0), m = a.dim(1), p = b.dim(1);
  Matrix out = Tensor::matrix(n, p);
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out.raw() + i * p;
    for (std::size_t k = 0; k < m; ++k) {
      const double av = a.at(i, k);
      const double* brow = b.raw() + k * p;
      for (std::size_t j = 0; j < p; ++j) o[j] += av * brow[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  require_rank(a, 2, "transpose");
  Matrix out = Tensor::matrix(a.dim(1), a.dim(0));
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < a.dim(1); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

FeatureMap concat_channels(const FeatureMap& a, const FeatureMap& b) {
  require_rank(a, 3, "concat lhs");
  require_rank(b, 3, "concat rhs");
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) {
    throw DimensionError("concat: spatial mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
  std::vector<double> data(a.data().begin(), a.data().end());
  data.insert(data.end(), b.data().begin(), b.data().end());
  return Tensor({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)}, std::move(data));
}

// ---------------------------------------------------------------------------
// FMP1

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[off + i]) << (8 * i);
  return v;
}

constexpr std::size_t kHeaderBytes = 16;

}  // namespace

std::vector<std::uint8_t> encode_fmp1(const FeatureMap& map) {
  require_rank(map, 3, "encode_fmp1");
  std::vector<std::uint8_t> out{'F', 'M', 'P', '1'};
  out.reserve(kHeaderBytes + 8 * map.size());
  for (std::size_t a = 0; a < 3; ++a) put_u32(out, static_cast<std::uint32_t>(map.dim(a)));
  for (double v : map.data()) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  return out;
}

FeatureMap decode_fmp1(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes || std::memcmp(bytes.data(), "FMP1", 4) != 0) {
    throw IoError("FMP1: bad magic or short header");
  }
  const std::size_t D = get_u32(bytes, 4), H = get_u32(bytes, 8), W = get_u32(bytes, 12);
  const std::size_t n = D * H * W;
  if (bytes.size() != kHeaderBytes + 8 * n) {
    throw IoError("FMP1: payload is " + std::to_string(bytes.size() - kHeaderBytes) +
                  " bytes, expected " + std::to_string(8 * n));
  }
  std::vector<double> data(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
      bits |= static_cast<std::uint64_t>(bytes[kHeaderBytes + 8 * k + i]) << (8 * i);
    }
    data[k] = std::bit_cast<double>(bits);
  }
  return Tensor({D, H, W}, std::move(data));
}

void write_fmp1(const std::filesystem::path& path, const FeatureMap& map) {
  const auto bytes = encode_fmp1(map);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

FeatureMap read_fmp1(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_fmp1(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::uint64_t checksum(const FeatureMap& map) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::uint8_t byte : encode_fmp1(map)) {
    h ^= byte;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace debug {
void set_softmax_fault(bool enabled) { g_softmax_fault.store(enabled); }
bool softmax_fault() { return g_softmax_fault.load(std::memory_order_relaxed); }
}  // namespace debug

}  // namespace fsmod
