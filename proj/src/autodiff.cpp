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

#include "fsmod/autodiff.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <unordered_set>

namespace fsmod {

// ---------------------------------------------------------------------------
// ParamStore

Tensor& ParamStore::add(const std::string& key, Tensor value) {
  if (values_.count(key)) throw PreconditionError("duplicate parameter key '" + key + "'");
  grads_[key] = Tensor(value.shape());
  return values_[key] = std::move(value);
}

const Tensor& ParamStore::value(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw PreconditionError("unknown parameter '" + key + "'");
  return it->second;
}

Tensor& ParamStore::value(const std::string& key) {
  auto it = values_.find(key);
  if (it == values_.end()) throw PreconditionError("unknown parameter '" + key + "'");
  return it->second;
}

const Tensor& ParamStore::grad(const std::string& key) const {
  auto it = grads_.find(key);
  if (it == grads_.end()) throw PreconditionError("unknown parameter '" + key + "'");
  return it->second;
}

Tensor& ParamStore::grad(const std::string& key) {
  auto it = grads_.find(key);
  if (it == grads_.end()) throw PreconditionError("unknown parameter '" + key + "'");
  return it->second;
}

std::vector<std::string> ParamStore::keys() const {
  std::vector<std::string> out;
  out.reserve(values_.size());
  for (const auto& [k, v] : values_) out.push_back(k);
  return out;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [k, v] : values_) n += v.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [k, g] : grads_) std::fill(g.data().begin(), g.data().end(), 0.0);
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>(v >> (8 * i));
  out.write(b, 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("PRM1: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void write_params(const std::filesystem::path& path, const ParamStore& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write("PRM1", 4);
  put_u32(out, static_cast<std::uint32_t>(store.size()));
  for (const auto& key : store.keys()) {
    const Tensor& t = store.value(key);
    put_u32(out, static_cast<std::uint32_t>(key.size()));
    out.write(key.data(), static_cast<std::streamsize>(key.size()));
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.data()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      char b[8];
      for (int i = 0; i < 8; ++i) b[i] = static_cast<char>(bits >> (8 * i));
      out.write(b, 8);
    }
  }
  if (!out) throw IoError("write failed: " + path.string());
}

ParamStore read_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "PRM1", 4) != 0) {
    throw IoError(path.string() + ": bad PRM1 magic");
  }
  ParamStore store;
  const std::uint32_t count = get_u32(in);
  for (std::uint32_t e = 0; e < count; ++e) {
    std::string key(get_u32(in), '\0');
    if (!in.read(key.data(), static_cast<std::streamsize>(key.size()))) {
      throw IoError(path.string() + ": truncated key");
    }
    Shape shape(get_u32(in));
    for (auto& d : shape) d = get_u32(in);
    Tensor t(shape);
    for (double& v : t.data()) {
      unsigned char b[8];
      if (!in.read(reinterpret_cast<char*>(b), 8)) throw IoError(path.string() + ": truncated data");
      std::uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
      v = std::bit_cast<double>(bits);
    }
    store.add(key, std::move(t));
  }
  return store;
}

std::uint64_t derive_seed(std::uint64_t seed, const std::string& key) {
  std::uint64_t h = 1469598103934665603ULL ^ seed;
  for (unsigned char c : key) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Tensor glorot_uniform(const Shape& shape, std::size_t fan_in, std::size_t fan_out,
                      std::uint64_t seed, const std::string& key) {
  std::mt19937_64 rng(derive_seed(seed, key));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(shape);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

namespace ad {

Tensor& Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Tensor(value.shape());
  return grad;
}

void Node::accumulate(const Tensor& g) { grad_buffer() += g; }

Tensor Var::grad() const {
  if (node_->grad.empty()) return Tensor(node_->value.shape());
  return node_->grad;
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Var variable(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

Var make_op(Tensor value, std::vector<Var> parents, BackwardFn backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = std::any_of(parents.begin(), parents.end(),
                                 [](const Var& p) { return p.requires_grad(); });
  if (n->requires_grad) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.ptr());
    n->backward = std::move(backward);
  }
  return Var(std::move(n));
}

Var ParamBinding::operator()(const std::string& key) {
  auto it = leaves_.find(key);
  if (it != leaves_.end()) return it->second;
  Var leaf = track_ ? variable(store_->value(key)) : constant(store_->value(key));
  leaf.node()->param_key = key;
  leaves_.emplace(key, leaf);
  return leaf;
}

namespace {

std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // parents before children
}

void run_backward(const Var& loss, ParamStore* store) {
  if (loss.value().size() != 1) {
    throw PreconditionError("backward: loss must be scalar, got shape " +
                            to_string(loss.value().shape()));
  }
  if (store) store->zero_grad();
  Node* root = loss.node();
  if (!root->requires_grad) return;
  auto order = topo_order(root);
  for (Node* n : order) n->grad = Tensor();
  root->grad = Tensor(root->value.shape(), 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->grad.empty()) continue;
    if (n->backward) n->backward(*n);
    if (store && !n->param_key.empty()) store->grad(n->param_key) += n->grad;
  }
}

Tensor& pgrad(Node& self, std::size_t i) { return self.parents[i]->grad_buffer(); }
bool wants(Node& self, std::size_t i) { return self.parents[i]->requires_grad; }
const Tensor& pval(Node& self, std::size_t i) { return self.parents[i]->value; }

}  // namespace

void backward(const Var& loss, ParamStore& store) { run_backward(loss, &store); }
void backward(const Var& loss) { run_backward(loss, nullptr); }

// ---------------------------------------------------------------------------
// Elementwise and shape ops

Var add(const Var& a, const Var& b) {
  return make_op(a.value() + b.value(), {a, b}, [](Node& self) {
    if (wants(self, 0)) pgrad(self, 0) += self.grad;
    if (wants(self, 1)) pgrad(self, 1) += self.grad;
  });
}

Var sub(const Var& a, const Var& b) {
  return make_op(a.value() - b.value(), {a, b}, [](Node& self) {
    if (wants(self, 0)) pgrad(self, 0) += self.grad;
    if (wants(self, 1)) pgrad(self, 1) -= self.grad;
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = pval(self, 0);
    const Tensor& bv = pval(self, 1);
    if (wants(self, 0)) {
      Tensor& g = pgrad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (wants(self, 1)) {
      Tensor& g = pgrad(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Var scale(const Var& a, double s) {
  return make_op(a.value() * s, {a}, [s](Node& self) {
    Tensor& g = pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Var add_constant(const Var& a, const Tensor& c) {
  return make_op(a.value() + c, {a}, [](Node& self) { pgrad(self, 0) += self.grad; });
}

Var abs(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = std::abs(v);
  return make_op(std::move(out), {a}, [](Node& self) {
    const Tensor& x = pval(self, 0);
    Tensor& g = pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * (x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0));
    }
  });
}

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return make_op(Tensor::scalar(total), {a}, [](Node& self) {
    Tensor& g = pgrad(self, 0);
    for (double& v : g.data()) v += self.grad[0];
  });
}

Var mean(const Var& a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw PreconditionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var reshape(const Var& a, Shape shape) {
  return make_op(a.value().reshaped(std::move(shape)), {a}, [](Node& self) {
    Tensor& g = pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var transpose(const Var& a) {
  return make_op(fsmod::transpose(a.value()), {a},
                 [](Node& self) { pgrad(self, 0) += fsmod::transpose(self.grad); });
}

Var matmul(const Var& a, const Var& b) {
  return make_op(fsmod::matmul(a.value(), b.value()), {a, b}, [](Node& self) {
    if (wants(self, 0)) pgrad(self, 0) += fsmod::matmul(self.grad, fsmod::transpose(pval(self, 1)));
    if (wants(self, 1)) pgrad(self, 1) += fsmod::matmul(fsmod::transpose(pval(self, 0)), self.grad);
  });
}

Var add_row_vector(const Var& m, const Var& v) {
  require_rank(m.value(), 2, "add_row_vector");
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  if (v.value().size() != cols) {
    throw DimensionError("add_row_vector: vector " + to_string(v.shape()) +
                         " incompatible with matrix " + to_string(m.shape()));
  }
  Tensor out = m.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) += v.value()[c];
  return make_op(std::move(out), {m, v}, [rows, cols](Node& self) {
    if (wants(self, 0)) pgrad(self, 0) += self.grad;
    if (wants(self, 1)) {
      Tensor& g = pgrad(self, 1);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) g[c] += self.grad.at(r, c);
    }
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const std::size_t split = a.value().size();
  return make_op(fsmod::concat_channels(a.value(), b.value()), {a, b}, [split](Node& self) {
    if (wants(self, 0)) {
      Tensor& g = pgrad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      Tensor& g = pgrad(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[split + i];
    }
  });
}

Var stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw PreconditionError("stack_rows: no rows");
  const std::size_t width = rows.front().value().size();
  Tensor out = Tensor::matrix(rows.size(), width);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].value().size() != width) throw DimensionError("stack_rows: ragged rows");
    std::copy(rows[r].value().data().begin(), rows[r].value().data().end(), out.raw() + r * width);
  }
  return make_op(std::move(out), rows, [width](Node& self) {
    for (std::size_t r = 0; r < self.parents.size(); ++r) {
      if (!wants(self, r)) continue;
      Tensor& g = pgrad(self, r);
      for (std::size_t c = 0; c < width; ++c) g[c] += self.grad[r * width + c];
    }
  });
}

Var gather_rows(const Var& m, const std::vector<std::size_t>& rows) {
  require_rank(m.value(), 2, "gather_rows");
  const std::size_t cols = m.dim(1);
  Tensor out = Tensor::matrix(rows.size(), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= m.dim(0)) throw DimensionError("gather_rows: index out of range");
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = m.value().at(rows[r], c);
  }
  return make_op(std::move(out), {m}, [rows, cols](Node& self) {
    Tensor& g = pgrad(self, 0);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < cols; ++c) g.at(rows[r], c) += self.grad.at(r, c);
  });
}

Var gather_columns(const Var& m, const std::vector<std::size_t>& cols) {
  require_rank(m.value(), 2, "gather_columns");
  const std::size_t rows = m.dim(0);
  Tensor out = Tensor::matrix(rows, cols.size());
  for (std::size_t c = 0; c < cols.size(); ++c) {
    if (cols[c] >= m.dim(1)) throw DimensionError("gather_columns: index out of range");
    for (std::size_t r = 0; r < rows; ++r) out.at(r, c) = m.value().at(r, cols[c]);
  }
  return make_op(std::move(out), {m}, [rows, cols](Node& self) {
    Tensor& g = pgrad(self, 0);
    for (std::size_t c = 0; c < cols.size(); ++c)
      for (std::size_t r = 0; r < rows; ++r) g.at(r, cols[c]) += self.grad.at(r, c);
  });
}

Var mean_columns(const Var& m) {
  require_rank(m.value(), 2, "mean_columns");
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  if (cols == 0) throw PreconditionError("mean_columns: no columns");
  Tensor out = Tensor::vector(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += m.value().at(r, c);
    out[r] = acc / static_cast<double>(cols);
  }
  return make_op(std::move(out), {m}, [rows, cols](Node& self) {
    Tensor& g = pgrad(self, 0);
    const double inv = 1.0 / static_cast<double>(cols);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) g.at(r, c) += self.grad[r] * inv;
  });
}

// ---------------------------------------------------------------------------
// Neural primitives

namespace {

// Accumulates gradients of conv1x1 into the input, weight and (optional) bias.
void conv1x1_backward(Node& self, bool has_bias) {
  const Tensor& x = pval(self, 0);
  const Tensor& w = pval(self, 1);
  const Tensor& g = self.grad;
  const std::size_t dout = w.dim(0), din = w.dim(1), hw = x.dim(1) * x.dim(2);
  if (wants(self, 0)) {
    Tensor& gx = pgrad(self, 0);
    for (std::size_t d = 0; d < dout; ++d)
      for (std::size_t c = 0; c < din; ++c) {
        const double wv = w.at(d, c);
        for (std::size_t p = 0; p < hw; ++p) gx[c * hw + p] += wv * g[d * hw + p];
      }
  }
  if (wants(self, 1)) {
    Tensor& gw = pgrad(self, 1);
    for (std::size_t d = 0; d < dout; ++d)
      for (std::size_t c = 0; c < din; ++c) {
        double acc = 0.0;
        for (std::size_t p = 0; p < hw; ++p) acc += g[d * hw + p] * x[c * hw + p];
        gw.at(d, c) += acc;
      }
  }
  if (has_bias && wants(self, 2)) {
    Tensor& gb = pgrad(self, 2);
    for (std::size_t d = 0; d < dout; ++d) {
      double acc = 0.0;
      for (std::size_t p = 0; p < hw; ++p) acc += g[d * hw + p];
      gb[d] += acc;
    }
  }
}

}  // namespace

Var conv1x1(const Var& x, const Var& w) {
  return make_op(fsmod::conv1x1(x.value(), w.value()), {x, w},
                 [](Node& self) { conv1x1_backward(self, false); });
}

Var conv1x1(const Var& x, const Var& w, const Var& b) {
  return make_op(fsmod::conv1x1(x.value(), w.value(), b.value()), {x, w, b},
                 [](Node& self) { conv1x1_backward(self, true); });
}

Var depthwise_conv(const Var& x, const Var& kernels, std::size_t stride) {
  return make_op(fsmod::depthwise_conv(x.value(), kernels.value(), stride), {x, kernels},
                 [stride](Node& self) {
    const Tensor& xv = pval(self, 0);
    const Tensor& kv = pval(self, 1);
    const std::size_t D = xv.dim(0), H = xv.dim(1), W = xv.dim(2), k = kv.dim(1);
    const std::size_t Ho = H / stride, Wo = W / stride;
    const long pad = static_cast<long>(k / 2);
    const bool gx_on = wants(self, 0), gk_on = wants(self, 1);
    Tensor* gx = gx_on ? &pgrad(self, 0) : nullptr;
    Tensor* gk = gk_on ? &pgrad(self, 1) : nullptr;
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t oi = 0; oi < Ho; ++oi)
        for (std::size_t oj = 0; oj < Wo; ++oj) {
          const double g = self.grad.at(d, oi, oj);
          for (std::size_t ki = 0; ki < k; ++ki) {
            const long i = static_cast<long>(oi * stride + ki) - pad;
            if (i < 0 || i >= static_cast<long>(H)) continue;
            for (std::size_t kj = 0; kj < k; ++kj) {
              const long j = static_cast<long>(oj * stride + kj) - pad;
              if (j < 0 || j >= static_cast<long>(W)) continue;
              const auto ui = static_cast<std::size_t>(i), uj = static_cast<std::size_t>(j);
              if (gx) gx->at(d, ui, uj) += g * kv.at(d, ki, kj);
              if (gk) gk->at(d, ki, kj) += g * xv.at(d, ui, uj);
            }
          }
        }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  return make_op(fsmod::layer_norm(x.value(), gamma.value(), beta.value(), eps), {x, gamma, beta},
                 [eps](Node& self) {
    const Tensor& xv = pval(self, 0);
    const Tensor& gm = pval(self, 1);
    const std::size_t D = xv.dim(0), hw = xv.dim(1) * xv.dim(2);
    std::vector<double> xhat(D), gxhat(D);
    for (std::size_t p = 0; p < hw; ++p) {
      double mu = 0.0;
      for (std::size_t d = 0; d < D; ++d) mu += xv[d * hw + p];
      mu /= static_cast<double>(D);
      double var = 0.0;
      for (std::size_t d = 0; d < D; ++d) var += (xv[d * hw + p] - mu) * (xv[d * hw + p] - mu);
      var /= static_cast<double>(D);
      const double inv = 1.0 / std::sqrt(var + eps);
      double mean_g = 0.0, mean_gx = 0.0;
      for (std::size_t d = 0; d < D; ++d) {
        xhat[d] = (xv[d * hw + p] - mu) * inv;
        gxhat[d] = self.grad[d * hw + p] * gm[d];
        mean_g += gxhat[d];
        mean_gx += gxhat[d] * xhat[d];
      }
      mean_g /= static_cast<double>(D);
      mean_gx /= static_cast<double>(D);
      if (wants(self, 0)) {
        Tensor& gx = pgrad(self, 0);
        for (std::size_t d = 0; d < D; ++d)
          gx[d * hw + p] += inv * (gxhat[d] - mean_g - xhat[d] * mean_gx);
      }
      if (wants(self, 1)) {
        Tensor& gg = pgrad(self, 1);
        for (std::size_t d = 0; d < D; ++d) gg[d] += self.grad[d * hw + p] * xhat[d];
      }
      if (wants(self, 2)) {
        Tensor& gb = pgrad(self, 2);
        for (std::size_t d = 0; d < D; ++d) gb[d] += self.grad[d * hw + p];
      }
    }
  });
}

Var activation(const Var& x, Activation kind) {
  return make_op(fsmod::activation(x.value(), kind), {x}, [kind](Node& self) {
    const Tensor& xv = pval(self, 0);
    Tensor& g = pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += self.grad[i] * activate_derivative(kind, xv[i]);
  });
}

Var softmax_rows(const Var& x) {
  return make_op(fsmod::softmax(x.value(), 1), {x}, [](Node& self) {
    const Tensor& y = self.value;
    const std::size_t rows = y.dim(0), cols = y.dim(1);
    Tensor& g = pgrad(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += self.grad.at(r, c) * y.at(r, c);
      for (std::size_t c = 0; c < cols; ++c) g.at(r, c) += y.at(r, c) * (self.grad.at(r, c) - dot);
    }
  });
}

namespace {

// Backward of pixel-unit bilinear sampling. `coord_scale` converts a pixel
// derivative to the caller's coordinate units (per axis); null skips coords.
void bilinear_backward(Node& self, const Tensor& pix, const double* coord_scale) {
  const Tensor& x = pval(self, 0);
  const std::size_t D = x.dim(0), H = x.dim(1), W = x.dim(2), N = pix.dim(1);
  Tensor* gx = wants(self, 0) ? &pgrad(self, 0) : nullptr;
  Tensor* gc = (coord_scale && wants(self, 1)) ? &pgrad(self, 1) : nullptr;
  auto inside = [&](long y, long xx) {
    return y >= 0 && xx >= 0 && y < static_cast<long>(H) && xx < static_cast<long>(W);
  };
  for (std::size_t n = 0; n < N; ++n) {
    const double px = pix.at(0, n), py = pix.at(1, n);
    const double fx = std::floor(px), fy = std::floor(py);
    const double ax = px - fx, ay = py - fy;
    const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
    const double wts[4] = {(1 - ay) * (1 - ax), (1 - ay) * ax, ay * (1 - ax), ay * ax};
    // d weight / d px and d weight / d py
    const double dwx[4] = {-(1 - ay), (1 - ay), -ay, ay};
    const double dwy[4] = {-(1 - ax), -ax, (1 - ax), ax};
    const long ys[4] = {y0, y0, y0 + 1, y0 + 1};
    const long xs[4] = {x0, x0 + 1, x0, x0 + 1};
    double dpx = 0.0, dpy = 0.0;
    for (int c = 0; c < 4; ++c) {
      if (!inside(ys[c], xs[c])) continue;
      const auto yi = static_cast<std::size_t>(ys[c]), xi = static_cast<std::size_t>(xs[c]);
      for (std::size_t d = 0; d < D; ++d) {
        const double g = self.grad.at(d, n);
        if (gx) gx->at(d, yi, xi) += g * wts[c];
        if (gc) {
          const double v = x.at(d, yi, xi);
          dpx += g * v * dwx[c];
          dpy += g * v * dwy[c];
        }
      }
    }
    if (gc) {
      gc->at(0, n) += dpx * coord_scale[0];
      gc->at(1, n) += dpy * coord_scale[1];
    }
  }
}

}  // namespace

Var bilinear_sample(const Var& x, const Var& coords) {
  const Tensor& c = coords.value();
  const std::size_t H = x.dim(1), W = x.dim(2);
  Matrix pix(c.shape());
  for (std::size_t n = 0; n < c.dim(1); ++n) {
    pix.at(0, n) = normalized_to_pixel(c.at(0, n), W);
    pix.at(1, n) = normalized_to_pixel(c.at(1, n), H);
  }
  Tensor value = fsmod::bilinear_sample_pixels(x.value(), pix);
  const double scales[2] = {0.5 * static_cast<double>(W - 1), 0.5 * static_cast<double>(H - 1)};
  return make_op(std::move(value), {x, coords},
                 [pix = std::move(pix), sx = scales[0], sy = scales[1]](Node& self) {
                   const double s[2] = {sx, sy};
                   bilinear_backward(self, pix, s);
                 });
}

Var bilinear_sample_pixels(const Var& x, const Matrix& pixel_coords) {
  return make_op(fsmod::bilinear_sample_pixels(x.value(), pixel_coords), {x},
                 [pix = pixel_coords](Node& self) { bilinear_backward(self, pix, nullptr); });
}

Var l2_normalize_rows(const Var& m, double eps) {
  require_rank(m.value(), 2, "l2_normalize_rows");
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  Tensor out = m.value();
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < cols; ++c) ss += out.at(r, c) * out.at(r, c);
    if (eps == 0.0 && ss == 0.0) {
      throw NumericError("l2_normalize_rows: row " + std::to_string(r) + " has zero norm");
    }
    norms[r] = std::sqrt(ss + eps);
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) /= norms[r];
  }
  return make_op(std::move(out), {m}, [norms, rows, cols](Node& self) {
    const Tensor& y = self.value;
    Tensor& g = pgrad(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += self.grad.at(r, c) * y.at(r, c);
      for (std::size_t c = 0; c < cols; ++c)
        g.at(r, c) += (self.grad.at(r, c) - y.at(r, c) * dot) / norms[r];
    }
  });
}

Var cross_entropy(const Var& logits, const std::vector<std::size_t>& labels) {
  require_rank(logits.value(), 2, "cross_entropy");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) throw DimensionError("cross_entropy: label count mismatch");
  if (n == 0) throw PreconditionError("cross_entropy: no rows");
  Matrix probs = fsmod::softmax(logits.value(), 1);
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] >= c) throw DimensionError("cross_entropy: label out of range");
    // log-sum-exp form keeps the loss exact for saturated rows
    double mx = -INFINITY;
    for (std::size_t k = 0; k < c; ++k) mx = std::max(mx, logits.value().at(r, k));
    double total = 0.0;
    for (std::size_t k = 0; k < c; ++k) total += std::exp(logits.value().at(r, k) - mx);
    loss += mx + std::log(total) - logits.value().at(r, labels[r]);
  }
  loss /= static_cast<double>(n);
  return make_op(Tensor::scalar(loss), {logits},
                 [probs = std::move(probs), labels, n, c](Node& self) {
    Tensor& g = pgrad(self, 0);
    const double s = self.grad[0] / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t k = 0; k < c; ++k)
        g.at(r, k) += s * (probs.at(r, k) - (k == labels[r] ? 1.0 : 0.0));
  });
}

Var bce_with_logits(const Var& logits, const Tensor& targets) {
  require_same_shape(logits.value(), targets, "bce_with_logits");
  const std::size_t n = targets.size();
  if (n == 0) throw PreconditionError("bce_with_logits: empty input");
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double l = logits.value()[i];
    loss += std::max(l, 0.0) - l * targets[i] + std::log1p(std::exp(-std::abs(l)));
  }
  loss /= static_cast<double>(n);
  return make_op(Tensor::scalar(loss), {logits}, [targets, n](Node& self) {
    const Tensor& l = pval(self, 0);
    Tensor& g = pgrad(self, 0);
    const double s = self.grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      g[i] += s * (activate(Activation::kSigmoid, l[i]) - targets[i]);
  });
}

}  // namespace ad

std::size_t GradCheckResult::count_above(double tolerance) const {
  return static_cast<std::size_t>(std::count_if(relative_errors.begin(), relative_errors.end(),
                                                [&](double r) { return r > tolerance; }));
}

GradCheckResult grad_check(const std::function<ad::Var(ad::ParamBinding&)>& f, ParamStore& store,
                           double eps, const std::vector<std::string>& keys) {
  double loss_value = 0.0;
  {
    ad::ParamBinding binding(store);
    ad::Var loss = f(binding);
    ad::backward(loss, store);
    loss_value = loss.value()[0];
  }
  const auto evaluate = [&]() {
    ad::ParamBinding binding(store, false);
    return f(binding).value()[0];
  };
  GradCheckResult result;
  result.loss = loss_value;
  const auto audit = keys.empty() ? store.keys() : keys;
  for (const auto& key : audit) {
    Tensor& value = store.value(key);
    const Tensor analytic = store.grad(key);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + eps;
      const double up = evaluate();
      value[i] = saved - eps;
      const double down = evaluate();
      value[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[i];
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++result.entries;
      result.relative_errors.push_back(rel);
      result.analytic_values.push_back(a);
      if (rel > result.max_rel_error || result.worst_key.empty()) {
        if (rel >= result.max_rel_error) {
          result.max_rel_error = rel;
          result.worst_key = key;
          result.worst_index = i;
          result.analytic = a;
          result.numeric = numeric;
        }
      }
    }
  }
  return result;
}

}  // namespace fsmod
