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

// Minimal reverse-mode differentiation over whole tensors.
//
// A graph is built eagerly: every op computes its value immediately and, when
// any input requires a gradient, records a backward closure. backward() walks
// the graph once in reverse topological order and deposits parameter
// gradients into a ParamStore.

#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "fsmod/tensor.hpp"

namespace fsmod {

// Named model parameters with matching gradient buffers. Keys are kept sorted
// so iteration order (and therefore initialization and serialization) is
// stable.
class ParamStore {
 public:
  Tensor& add(const std::string& key, Tensor value);
  bool contains(const std::string& key) const { return values_.count(key) != 0; }

  const Tensor& value(const std::string& key) const;
  Tensor& value(const std::string& key);
  const Tensor& grad(const std::string& key) const;
  Tensor& grad(const std::string& key);

  std::vector<std::string> keys() const;
  std::size_t size() const { return values_.size(); }
  std::size_t parameter_count() const;
  void zero_grad();

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    return a.values_ == b.values_;
  }

 private:
  std::map<std::string, Tensor> values_;
  std::map<std::string, Tensor> grads_;
};

// PRM1 binary container: magic, u32 count, then per entry u32 key length, key
// bytes, u32 rank, u32 dims, doubles. Little endian throughout.
void write_params(const std::filesystem::path& path, const ParamStore& store);
ParamStore read_params(const std::filesystem::path& path);

// Initialization streams depend only on (seed, key), so a parameter's initial
// value does not change when unrelated parameters are added.
std::uint64_t derive_seed(std::uint64_t seed, const std::string& key);
// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(const Shape& shape, std::size_t fan_in, std::size_t fan_out,
                      std::uint64_t seed, const std::string& key);

namespace ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node& self)>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily during backward
  std::vector<NodePtr> parents;
  BackwardFn backward;
  std::string param_key;
  bool requires_grad = false;

  Tensor& grad_buffer();
  void accumulate(const Tensor& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  // Zero-filled tensor when backward never reached this node.
  Tensor grad() const;
  bool requires_grad() const { return node_->requires_grad; }
  Node* node() const { return node_.get(); }
  const NodePtr& ptr() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  NodePtr node_;
};

Var constant(Tensor value);
Var variable(Tensor value);

// Creates an op result. Parents and the closure are only retained when at least
// one parent requires a gradient.
Var make_op(Tensor value, std::vector<Var> parents, BackwardFn backward);

// Binds parameter keys to graph leaves. Each key maps to exactly one leaf per
// binding so repeated use accumulates into a single gradient.
class ParamBinding {
 public:
  explicit ParamBinding(const ParamStore& store, bool track_grads = true)
      : store_(&store), track_(track_grads) {}
  Var operator()(const std::string& key);
  const ParamStore& store() const { return *store_; }

 private:
  const ParamStore* store_;
  bool track_;
  std::map<std::string, Var> leaves_;
};

// Reverse pass from a scalar loss. Zeroes every gradient in `store`, then
// accumulates d loss / d param for each bound parameter leaf.
void backward(const Var& loss, ParamStore& store);
// Reverse pass without a store; gradients are read back through Var::grad().
void backward(const Var& loss);

// Elementwise and shape ops.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_constant(const Var& a, const Tensor& c);
Var abs(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);
Var reshape(const Var& a, Shape shape);
Var transpose(const Var& a);
Var matmul(const Var& a, const Var& b);
// m[n,k] + v[k] broadcast over rows.
Var add_row_vector(const Var& m, const Var& v);
Var concat_channels(const Var& a, const Var& b);
// Stacks rank-1 vectors of equal length into the rows of a matrix.
Var stack_rows(const std::vector<Var>& rows);
Var gather_rows(const Var& m, const std::vector<std::size_t>& rows);
Var gather_columns(const Var& m, const std::vector<std::size_t>& cols);
// Mean over the columns of a [D,N] matrix: returns a length-D vector.
Var mean_columns(const Var& m);

// Neural primitives.
Var conv1x1(const Var& x, const Var& w);
Var conv1x1(const Var& x, const Var& w, const Var& b);
Var depthwise_conv(const Var& x, const Var& kernels, std::size_t stride);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var activation(const Var& x, Activation kind);
inline Var gelu(const Var& x) { return activation(x, Activation::kGelu); }
inline Var relu(const Var& x) { return activation(x, Activation::kRelu); }
inline Var sigmoid(const Var& x) { return activation(x, Activation::kSigmoid); }
inline Var tanh(const Var& x) { return activation(x, Activation::kTanh); }
Var softmax_rows(const Var& x);
Var bilinear_sample(const Var& x, const Var& coords);
// Pixel-unit sampling with constant coordinates (RoIAlign path).
Var bilinear_sample_pixels(const Var& x, const Matrix& pixel_coords);

// Row-wise L2 normalization. With eps = 0 a zero-norm row raises NumericError;
// otherwise the norm is sqrt(sum x^2 + eps).
Var l2_normalize_rows(const Var& m, double eps = 0.0);

// Mean softmax cross-entropy of logits[n,c] against integer labels.
Var cross_entropy(const Var& logits, const std::vector<std::size_t>& labels);
// Mean binary cross-entropy of logits against {0,1} targets of the same shape.
Var bce_with_logits(const Var& logits, const Tensor& targets);

}  // namespace ad

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_key;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t entries = 0;
  double loss = 0.0;                   // f at the unperturbed parameters
  std::vector<double> relative_errors;  // one per audited entry, in audit order
  std::vector<double> analytic_values;

  std::size_t count_above(double tolerance) const;
};

// Central-difference audit of every entry of every parameter in `store`
// (or only `keys` when non-empty). f must build a scalar loss from a binding
// and be deterministic. Relative error is |a-n| / max(|a|, |n|, 1e-8).
GradCheckResult grad_check(const std::function<ad::Var(ad::ParamBinding&)>& f, ParamStore& store,
                           double eps = 1e-5, const std::vector<std::string>& keys = {});

}  // namespace fsmod
