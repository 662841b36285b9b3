// Copyright 2026 The reverb-fl Authors
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

#include "reverb/autodiff/graph.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "reverb/kernels/kernels.hpp"
#include "reverb/rng.hpp"

namespace reverb::autodiff {

std::string_view op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Parameter: return "parameter";
    case Op::Add: return "add";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::MatMul: return "matmul";
    case Op::Conv2d: return "conv2d";
    case Op::MaxPool2: return "maxpool2";
    case Op::Relu: return "relu";
    case Op::BatchNorm: return "batch_norm";
    case Op::Affine: return "affine";
    case Op::Softmax: return "softmax";
    case Op::SoftmaxCrossEntropy: return "softmax_cross_entropy";
    case Op::Reshape: return "reshape";
    case Op::Mean: return "mean";
    case Op::Sum: return "sum";
    case Op::Dropout: return "dropout";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Graph construction

namespace {

Node make_node(Op op, std::vector<NodeId> inputs) {
  Node n;
  n.op = op;
  n.inputs = std::move(inputs);
  return n;
}

}  // namespace

void Graph::check_id(NodeId id) const {
  if (id >= nodes_.size()) throw GraphError("node id " + std::to_string(id) + " does not exist");
}

NodeId Graph::push(Node node) {
  for (NodeId in : node.inputs) check_id(in);
  nodes_.push_back(std::move(node));
  const NodeId id = nodes_.size() - 1;
  if (!nodes_.back().name.empty()) {
    if (!by_name_.emplace(nodes_.back().name, id).second) {
      throw GraphError("duplicate node name '" + nodes_.back().name + "'");
    }
  }
  return id;
}

NodeId Graph::input(std::string name) {
  if (name.empty()) throw GraphError("input nodes need a name");
  Node n = make_node(Op::Input, {});
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Graph::parameter(std::string name) {
  if (name.empty()) throw GraphError("parameter nodes need a name");
  Node n = make_node(Op::Parameter, {});
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) { return push(make_node(Op::Add, {a, b})); }
NodeId Graph::mul(NodeId a, NodeId b) { return push(make_node(Op::Mul, {a, b})); }

NodeId Graph::scale(NodeId x, double factor) {
  Node n = make_node(Op::Scale, {x});
  n.scalar = factor;
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) { return push(make_node(Op::MatMul, {a, b})); }

NodeId Graph::conv2d(NodeId x, NodeId kernel, NodeId bias, Padding padding) {
  Node n = make_node(Op::Conv2d, {x, kernel});
  if (bias != kNoNode) n.inputs.push_back(bias);
  n.padding = padding;
  return push(std::move(n));
}

NodeId Graph::maxpool2(NodeId x) { return push(make_node(Op::MaxPool2, {x})); }
NodeId Graph::relu(NodeId x) { return push(make_node(Op::Relu, {x})); }

NodeId Graph::batch_norm(NodeId x, NodeId gamma, NodeId beta, NodeId running_mean, NodeId running_var,
                         double epsilon) {
  if (!(epsilon > 0.0)) throw GraphError("batch_norm epsilon must be positive");
  Node n = make_node(Op::BatchNorm, {x, gamma, beta, running_mean, running_var});
  n.scalar = epsilon;
  return push(std::move(n));
}

NodeId Graph::affine(NodeId x, NodeId weight, NodeId bias) { return push(make_node(Op::Affine, {x, weight, bias})); }
NodeId Graph::softmax(NodeId logits) { return push(make_node(Op::Softmax, {logits})); }

NodeId Graph::softmax_cross_entropy(NodeId logits, NodeId targets) {
  return push(make_node(Op::SoftmaxCrossEntropy, {logits, targets}));
}

NodeId Graph::reshape(NodeId x, Shape shape) {
  Node n = make_node(Op::Reshape, {x});
  n.target = std::move(shape);
  return push(std::move(n));
}

NodeId Graph::flatten(NodeId x) {
  Node n = make_node(Op::Reshape, {x});
  n.flatten = true;
  return push(std::move(n));
}

NodeId Graph::mean(NodeId x) { return push(make_node(Op::Mean, {x})); }
NodeId Graph::sum(NodeId x) { return push(make_node(Op::Sum, {x})); }

NodeId Graph::dropout(NodeId x, double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw GraphError("dropout rate must lie in [0, 1)");
  Node n = make_node(Op::Dropout, {x});
  n.scalar = rate;
  return push(std::move(n));
}

NodeId Graph::named(NodeId id, std::string name) {
  check_id(id);
  if (name.empty()) throw GraphError("empty node name");
  if (!nodes_[id].name.empty()) throw GraphError("node " + std::to_string(id) + " is already named");
  if (!by_name_.emplace(name, id).second) throw GraphError("duplicate node name '" + name + "'");
  nodes_[id].name = std::move(name);
  return id;
}

NodeId Graph::find(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) throw GraphError("no node named '" + std::string(name) + "'");
  return it->second;
}

bool Graph::contains(std::string_view name) const { return by_name_.count(std::string(name)) > 0; }

const Tensor& Tape::value(NodeId id) const {
  if (id >= computed_) throw GraphError("node " + std::to_string(id) + " was not evaluated by this forward pass");
  return values_[id];
}

const Tensor& Tape::batch_mean(NodeId bn) const {
  const Tensor& t = cache_.at(bn).c;
  if (mode_ != Mode::Train) throw GraphError("batch statistics exist only for train-mode runs");
  return t;
}

const Tensor& Tape::batch_var(NodeId bn) const {
  const Tensor& t = cache_.at(bn).d;
  if (mode_ != Mode::Train) throw GraphError("batch statistics exist only for train-mode runs");
  return t;
}

// ---------------------------------------------------------------------------
// Forward pass

namespace {

std::string where(const Graph& g, NodeId id) {
  const Node& n = g.node(id);
  std::string s = std::string(op_name(n.op)) + " node " + std::to_string(id);
  if (!n.name.empty()) s += " '" + n.name + "'";
  return s;
}

[[noreturn]] void shape_fail(const Graph& g, NodeId id, const std::string& detail) {
  throw ShapeError(where(g, id) + ": " + detail);
}

struct ConvGeom {
  std::size_t batch, h, w, c, kh, kw, f, ho, wo, pad_t, pad_b, pad_l, pad_r;
  std::size_t hp() const { return h + pad_t + pad_b; }
  std::size_t wp() const { return w + pad_l + pad_r; }
};

ConvGeom conv_geometry(const Graph& g, NodeId id, const Tensor& x, const Tensor& k) {
  if (x.rank() != 4) shape_fail(g, id, "input must be rank 4 NHWC, got " + to_string(x.shape()));
  if (k.rank() != 4) shape_fail(g, id, "kernel must be rank 4, got " + to_string(k.shape()));
  if (k.dim(2) != x.dim(3)) {
    shape_fail(g, id, "kernel channels " + std::to_string(k.dim(2)) + " != input channels " + std::to_string(x.dim(3)));
  }
  ConvGeom cg{x.dim(0), x.dim(1), x.dim(2), x.dim(3), k.dim(0), k.dim(1), k.dim(3), 0, 0, 0, 0, 0, 0};
  if (g.node(id).padding == Padding::Same) {
    cg.ho = cg.h;
    cg.wo = cg.w;
    cg.pad_t = (cg.kh - 1) / 2;
    cg.pad_b = cg.kh - 1 - cg.pad_t;
    cg.pad_l = (cg.kw - 1) / 2;
    cg.pad_r = cg.kw - 1 - cg.pad_l;
  } else {
    if (cg.kh > cg.h || cg.kw > cg.w) shape_fail(g, id, "kernel larger than input with valid padding");
    cg.ho = cg.h - cg.kh + 1;
    cg.wo = cg.w - cg.kw + 1;
  }
  return cg;
}

// Zero-pads x [B,H,W,C] to [B, H+pt+pb, W+pl+pr, C].
Tensor pad_nhwc(const double* x, std::size_t B, std::size_t H, std::size_t W, std::size_t C, std::size_t pt,
                std::size_t pb, std::size_t pl, std::size_t pr) {
  const std::size_t Hp = H + pt + pb, Wp = W + pl + pr;
  Tensor out(Shape{B, Hp, Wp, C});
  double* o = out.raw();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t y = 0; y < H; ++y) {
      const double* src = x + (b * H + y) * W * C;
      std::copy(src, src + W * C, o + ((b * Hp + y + pt) * Wp + pl) * C);
    }
  }
  return out;
}

// Cross-correlation of an already padded input xp [B,Hp,Wp,C] with k [kh,kw,C,F].
// Output pixel (b,y,x) is computed at flat row q = (b*Hp + y)*Wp + x of a
// [M,F] buffer, whose kernel-row-ky patch starts at xp + (q + ky*Wp)*C and is
// kw*C contiguous values; consecutive rows overlap with stride C, so each
// kernel row is a single GEMM with lda = C. Rows for x >= Wo or y >= Ho are
// computed and discarded.
void correlate_padded(const kernels::KernelTable& kt, const Tensor& xp, const double* k, std::size_t kh, std::size_t kw,
                      std::size_t F, double* y) {
  const std::size_t B = xp.dim(0), Hp = xp.dim(1), Wp = xp.dim(2), C = xp.dim(3);
  const std::size_t Ho = Hp - kh + 1, Wo = Wp - kw + 1;
  const std::size_t M = B * Hp * Wp - (kh - 1) * Wp - (kw - 1);
  Tensor full = Tensor::uninitialized(Shape{M, F});
  for (std::size_t ky = 0; ky < kh; ++ky) {
    kt.gemm_nn(M, F, kw * C, xp.raw() + ky * Wp * C, C, k + ky * kw * C * F, F, full.raw(), F, ky > 0);
  }
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      const double* src = full.raw() + (b * Hp + oy) * Wp * F;
      std::copy(src, src + Wo * F, y + (b * Ho + oy) * Wo * F);
    }
  }
}

Tensor transpose2d(const double* m, std::size_t rows, std::size_t cols) {
  Tensor t(Shape{cols, rows});
  double* out = t.raw();
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = m[i * cols + j];
  }
  return t;
}

void add_row_bias(double* out, std::size_t rows, const double* bias, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    double* r = out + i * cols;
    for (std::size_t j = 0; j < cols; ++j) r[j] += bias[j];
  }
}

void column_sums_add(const double* m, std::size_t rows, std::size_t cols, double* out) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* r = m + i * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += r[j];
  }
}

void softmax_rows(const double* z, std::size_t rows, std::size_t k, double* p) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* zr = z + i * k;
    double* pr = p + i * k;
    const double mx = *std::max_element(zr, zr + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      pr[j] = std::exp(zr[j] - mx);
      s += pr[j];
    }
    for (std::size_t j = 0; j < k; ++j) pr[j] /= s;
  }
}

}  // namespace

Tape forward(const Graph& graph, const Bindings& bindings, const RunOptions& options) {
  const auto& kt = kernels::active();
  Tape tape;
  tape.mode_ = options.mode;
  tape.values_.resize(graph.size());
  tape.cache_.resize(graph.size());
  auto& vals = tape.values_;
  if (options.last && *options.last >= graph.size()) throw GraphError("forward stop node does not exist");
  const std::size_t count = options.last ? *options.last + 1 : graph.size();
  tape.computed_ = count;

  for (NodeId id = 0; id < count; ++id) {
    const Node& n = graph.node(id);
    auto in = [&](std::size_t i) -> const Tensor& { return vals[n.inputs[i]]; };
    Tape::Cache& cache = tape.cache_[id];
    Tensor out;

    switch (n.op) {
      case Op::Input:
      case Op::Parameter: {
        auto it = bindings.find(n.name);
        if (it == bindings.end()) throw GraphError(where(graph, id) + " is unbound");
        out = it->second;
        break;
      }
      case Op::Add:
      case Op::Mul: {
        if (in(0).shape() != in(1).shape()) {
          shape_fail(graph, id, to_string(in(0).shape()) + " vs " + to_string(in(1).shape()));
        }
        out = in(0);
        const double* b = in(1).raw();
        double* o = out.raw();
        if (n.op == Op::Add) {
          for (std::size_t i = 0; i < out.size(); ++i) o[i] += b[i];
        } else {
          for (std::size_t i = 0; i < out.size(); ++i) o[i] *= b[i];
        }
        break;
      }
      case Op::Scale: {
        out = in(0);
        for (double& v : out.data()) v *= n.scalar;
        break;
      }
      case Op::MatMul:
      case Op::Affine: {
        const Tensor& a = in(0);
        const Tensor& w = in(1);
        if (a.rank() != 2 || w.rank() != 2 || a.dim(1) != w.dim(0)) {
          shape_fail(graph, id, to_string(a.shape()) + " x " + to_string(w.shape()));
        }
        const std::size_t m = a.dim(0), k = a.dim(1), nn = w.dim(1);
        out = Tensor::uninitialized(Shape{m, nn});
        kt.gemm_nn(m, nn, k, a.raw(), k, w.raw(), nn, out.raw(), nn, false);
        if (n.op == Op::Affine) {
          if (in(2).shape() != Shape{nn}) shape_fail(graph, id, "bias shape " + to_string(in(2).shape()));
          add_row_bias(out.raw(), m, in(2).raw(), nn);
        }
        break;
      }
      case Op::Conv2d: {
        const ConvGeom cg = conv_geometry(graph, id, in(0), in(1));
        cache.a = pad_nhwc(in(0).raw(), cg.batch, cg.h, cg.w, cg.c, cg.pad_t, cg.pad_b, cg.pad_l, cg.pad_r);
        out = Tensor::uninitialized(Shape{cg.batch, cg.ho, cg.wo, cg.f});
        correlate_padded(kt, cache.a, in(1).raw(), cg.kh, cg.kw, cg.f, out.raw());
        if (n.inputs.size() == 3) {
          if (in(2).shape() != Shape{cg.f}) shape_fail(graph, id, "bias shape " + to_string(in(2).shape()));
          add_row_bias(out.raw(), cg.batch * cg.ho * cg.wo, in(2).raw(), cg.f);
        }
        break;
      }
      case Op::MaxPool2: {
        const Tensor& x = in(0);
        if (x.rank() != 4 || x.dim(1) < 2 || x.dim(2) < 2) {
          shape_fail(graph, id, "needs NHWC input with height and width >= 2, got " + to_string(x.shape()));
        }
        const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
        const std::size_t Ho = H / 2, Wo = W / 2;
        out = Tensor::uninitialized(Shape{B, Ho, Wo, C});
        cache.index.resize(out.size());
        const double* xs = x.raw();
        double* o = out.raw();
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t oy = 0; oy < Ho; ++oy) {
            for (std::size_t ox = 0; ox < Wo; ++ox) {
              for (std::size_t c = 0; c < C; ++c) {
                std::size_t best = ((b * H + 2 * oy) * W + 2 * ox) * C + c;
                for (std::size_t dy = 0; dy < 2; ++dy) {
                  for (std::size_t dx = 0; dx < 2; ++dx) {
                    const std::size_t idx = ((b * H + 2 * oy + dy) * W + 2 * ox + dx) * C + c;
                    if (xs[idx] > xs[best]) best = idx;
                  }
                }
                const std::size_t oi = ((b * Ho + oy) * Wo + ox) * C + c;
                o[oi] = xs[best];
                cache.index[oi] = static_cast<std::uint32_t>(best);
              }
            }
          }
        }
        break;
      }
      case Op::Relu: {
        out = Tensor::uninitialized(in(0).shape());
        kt.relu(out.size(), in(0).raw(), out.raw());
        break;
      }
      case Op::BatchNorm: {
        const Tensor& x = in(0);
        const std::size_t C = x.shape().back();
        for (std::size_t i = 1; i < 5; ++i) {
          if (in(i).shape() != Shape{C}) {
            shape_fail(graph, id, "per-channel tensor " + std::to_string(i) + " has shape " + to_string(in(i).shape()));
          }
        }
        const std::size_t N = x.size() / C;
        const double eps = n.scalar;
        Tensor mean(Shape{C}), var(Shape{C});
        if (options.mode == Mode::Train) {
          const double* __restrict xs = x.raw();
          double* __restrict m = mean.raw();
          double* __restrict v = var.raw();
          for (std::size_t r = 0; r < N; ++r) {
            for (std::size_t c = 0; c < C; ++c) m[c] += xs[r * C + c];
          }
          for (std::size_t c = 0; c < C; ++c) m[c] /= static_cast<double>(N);
          for (std::size_t r = 0; r < N; ++r) {
            for (std::size_t c = 0; c < C; ++c) {
              const double d = xs[r * C + c] - m[c];
              v[c] += d * d;
            }
          }
          for (std::size_t c = 0; c < C; ++c) v[c] /= static_cast<double>(N);
        } else {
          mean = in(3);
          var = in(4);
          for (std::size_t c = 0; c < C; ++c) {
            if (var[c] + eps <= 0.0) shape_fail(graph, id, "running variance + epsilon must be positive");
          }
        }
        Tensor inv_std(Shape{C});
        std::vector<double> scale(C), shift(C);
        for (std::size_t c = 0; c < C; ++c) {
          inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
          scale[c] = in(1)[c];
          shift[c] = in(2)[c];
        }
        cache.a = Tensor::uninitialized(x.shape());
        out = Tensor::uninitialized(x.shape());
        {
          const double* __restrict xs = x.raw();
          const double* __restrict mu = mean.raw();
          const double* __restrict is = inv_std.raw();
          const double* __restrict gamma = scale.data();
          const double* __restrict beta = shift.data();
          double* __restrict xh = cache.a.raw();
          double* __restrict o = out.raw();
          for (std::size_t r = 0; r < N; ++r) {
            for (std::size_t c = 0; c < C; ++c) {
              const std::size_t i = r * C + c;
              xh[i] = (xs[i] - mu[c]) * is[c];
              o[i] = gamma[c] * xh[i] + beta[c];
            }
          }
        }
        cache.b = std::move(inv_std);
        cache.c = std::move(mean);
        cache.d = std::move(var);
        break;
      }
      case Op::Softmax: {
        const Tensor& z = in(0);
        if (z.rank() != 2) shape_fail(graph, id, "logits must be [batch, classes], got " + to_string(z.shape()));
        out = Tensor(z.shape());
        softmax_rows(z.raw(), z.dim(0), z.dim(1), out.raw());
        break;
      }
      case Op::SoftmaxCrossEntropy: {
        const Tensor& z = in(0);
        const Tensor& t = in(1);
        if (z.rank() != 2 || z.shape() != t.shape()) {
          shape_fail(graph, id, "logits " + to_string(z.shape()) + " vs targets " + to_string(t.shape()));
        }
        const std::size_t B = z.dim(0), K = z.dim(1);
        cache.a = Tensor(z.shape());
        softmax_rows(z.raw(), B, K, cache.a.raw());
        double loss = 0.0;
        for (std::size_t i = 0; i < B; ++i) {
          const double* zr = z.raw() + i * K;
          const double mx = *std::max_element(zr, zr + K);
          double s = 0.0;
          for (std::size_t j = 0; j < K; ++j) s += std::exp(zr[j] - mx);
          const double lse = mx + std::log(s);
          for (std::size_t j = 0; j < K; ++j) {
            const double tj = t[i * K + j];
            if (tj != 0.0) loss -= tj * (zr[j] - lse);
          }
        }
        out = Tensor::scalar(loss / static_cast<double>(B));
        break;
      }
      case Op::Reshape: {
        const Tensor& x = in(0);
        if (n.flatten) {
          if (x.rank() < 1) shape_fail(graph, id, "cannot flatten a scalar");
          out = x.reshaped(Shape{x.dim(0), x.size() / x.dim(0)});
        } else {
          if (numel(n.target) != x.size()) {
            shape_fail(graph, id, "cannot reshape " + to_string(x.shape()) + " to " + to_string(n.target));
          }
          out = x.reshaped(n.target);
        }
        break;
      }
      case Op::Mean:
      case Op::Sum: {
        double s = 0.0;
        for (double v : in(0).data()) s += v;
        if (n.op == Op::Mean) s /= static_cast<double>(in(0).size());
        out = Tensor::scalar(s);
        break;
      }
      case Op::Dropout: {
        out = in(0);
        if (options.mode == Mode::Train && n.scalar > 0.0) {
          Rng rng = keyed_rng({options.dropout_seed, static_cast<std::uint64_t>(id)});
          const double keep_scale = 1.0 / (1.0 - n.scalar);
          cache.a = Tensor(out.shape());
          for (std::size_t i = 0; i < out.size(); ++i) {
            cache.a[i] = uniform01(rng) < n.scalar ? 0.0 : keep_scale;
            out[i] *= cache.a[i];
          }
        }
        break;
      }
    }

    if (!out.all_finite()) throw NumericError("non-finite value produced by " + where(graph, id));
    vals[id] = std::move(out);
  }
  return tape;
}

// ---------------------------------------------------------------------------
// Reverse pass

std::vector<Tensor> backward(const Graph& graph, const Tape& tape, NodeId loss, std::span<const NodeId> wrt) {
  const auto& kt = kernels::active();
  if (loss >= graph.size()) throw GraphError("loss node does not exist");
  if (tape.values_.size() != graph.size()) throw GraphError("tape does not belong to this graph");
  if (tape.value(loss).size() != 1) {
    throw ShapeError("loss must be scalar, got shape " + to_string(tape.value(loss).shape()));
  }

  // A node needs a gradient when some wrt node is among its ancestors (or itself).
  std::vector<char> needs(graph.size(), 0);
  for (NodeId w : wrt) {
    if (w >= graph.size()) throw GraphError("wrt node does not exist");
    needs[w] = 1;
  }
  for (NodeId id = 0; id < graph.size(); ++id) {
    for (NodeId in : graph.node(id).inputs) needs[id] = needs[id] || needs[in];
  }

  std::vector<Tensor> grads(graph.size(), Tensor());
  std::vector<char> has(graph.size(), 0);
  auto grad_of = [&](NodeId id) -> Tensor& {
    if (!has[id]) {
      grads[id] = Tensor(tape.value(id).shape());
      has[id] = 1;
    }
    return grads[id];
  };
  // Takes ownership when the node has no gradient yet, otherwise accumulates.
  auto add_grad = [&](NodeId id, Tensor&& g) {
    if (!has[id]) {
      grads[id] = std::move(g);
      has[id] = 1;
    } else {
      kt.axpy(g.size(), 1.0, g.raw(), grads[id].raw());
    }
  };

  if (needs[loss]) {
    grad_of(loss)[0] = 1.0;
  }

  for (NodeId id = loss + 1; id-- > 0;) {
    if (!has[id] || !needs[id]) continue;
    const Node& n = graph.node(id);
    if (n.op == Op::Input || n.op == Op::Parameter) continue;
    const Tensor& dy = grads[id];
    const Tape::Cache& cache = tape.cache_[id];
    auto val = [&](std::size_t i) -> const Tensor& { return tape.value(n.inputs[i]); };
    auto want = [&](std::size_t i) { return i < n.inputs.size() && needs[n.inputs[i]]; };

    switch (n.op) {
      case Op::Input:
      case Op::Parameter:
        break;
      case Op::Add:
        for (std::size_t i = 0; i < 2; ++i) {
          if (want(i)) kt.axpy(dy.size(), 1.0, dy.raw(), grad_of(n.inputs[i]).raw());
        }
        break;
      case Op::Mul: {
        for (std::size_t i = 0; i < 2; ++i) {
          if (!want(i)) continue;
          const double* other = val(1 - i).raw();
          double* g = grad_of(n.inputs[i]).raw();
          for (std::size_t j = 0; j < dy.size(); ++j) g[j] += dy[j] * other[j];
        }
        break;
      }
      case Op::Scale:
        if (want(0)) kt.axpy(dy.size(), n.scalar, dy.raw(), grad_of(n.inputs[0]).raw());
        break;
      case Op::MatMul:
      case Op::Affine: {
        const Tensor& a = val(0);
        const Tensor& w = val(1);
        const std::size_t m = a.dim(0), k = a.dim(1), nn = w.dim(1);
        if (want(0)) {
          const Tensor wt = transpose2d(w.raw(), k, nn);
          kt.gemm_nn(m, k, nn, dy.raw(), nn, wt.raw(), k, grad_of(n.inputs[0]).raw(), k, true);
        }
        if (want(1)) kt.gemm_tn(k, nn, m, a.raw(), k, dy.raw(), nn, grad_of(n.inputs[1]).raw(), nn, true);
        if (n.op == Op::Affine && want(2)) column_sums_add(dy.raw(), m, nn, grad_of(n.inputs[2]).raw());
        break;
      }
      case Op::Conv2d: {
        const ConvGeom cg = conv_geometry(graph, id, val(0), val(1));
        const std::size_t Hp = cg.hp(), Wp = cg.wp();
        if (want(1)) {
          // dK[ky] = patches_ky^T * dY laid out on the padded row grid.
          const std::size_t M = cg.batch * Hp * Wp - (cg.kh - 1) * Wp - (cg.kw - 1);
          Tensor dyp(Shape{M, cg.f});
          for (std::size_t b = 0; b < cg.batch; ++b) {
            for (std::size_t oy = 0; oy < cg.ho; ++oy) {
              const double* src = dy.raw() + (b * cg.ho + oy) * cg.wo * cg.f;
              std::copy(src, src + cg.wo * cg.f, dyp.raw() + (b * Hp + oy) * Wp * cg.f);
            }
          }
          const std::size_t kc = cg.kw * cg.c;
          double* dk = grad_of(n.inputs[1]).raw();
          for (std::size_t ky = 0; ky < cg.kh; ++ky) {
            kt.gemm_tn(kc, cg.f, M, cache.a.raw() + ky * Wp * cg.c, cg.c, dyp.raw(), cg.f, dk + ky * kc * cg.f, cg.f,
                       true);
          }
        }
        if (want(2)) column_sums_add(dy.raw(), cg.batch * cg.ho * cg.wo, cg.f, grad_of(n.inputs[2]).raw());
        if (want(0)) {
          // dX is dY correlated with the spatially flipped, channel-transposed kernel.
          const double* k = val(1).raw();
          Tensor flipped(Shape{cg.kh, cg.kw, cg.f, cg.c});
          double* fk = flipped.raw();
          for (std::size_t ky = 0; ky < cg.kh; ++ky) {
            for (std::size_t kx = 0; kx < cg.kw; ++kx) {
              const double* src = k + ((cg.kh - 1 - ky) * cg.kw + (cg.kw - 1 - kx)) * cg.c * cg.f;
              double* dst = fk + (ky * cg.kw + kx) * cg.f * cg.c;
              for (std::size_t c = 0; c < cg.c; ++c) {
                for (std::size_t f = 0; f < cg.f; ++f) dst[f * cg.c + c] = src[c * cg.f + f];
              }
            }
          }
          const Tensor dyp = pad_nhwc(dy.raw(), cg.batch, cg.ho, cg.wo, cg.f, cg.kh - 1 - cg.pad_t,
                                      cg.kh - 1 - cg.pad_b, cg.kw - 1 - cg.pad_l, cg.kw - 1 - cg.pad_r);
          Tensor dx = Tensor::uninitialized(val(0).shape());
          correlate_padded(kt, dyp, fk, cg.kh, cg.kw, cg.c, dx.raw());
          add_grad(n.inputs[0], std::move(dx));
        }
        break;
      }
      case Op::MaxPool2:
        if (want(0)) {
          double* g = grad_of(n.inputs[0]).raw();
          for (std::size_t i = 0; i < dy.size(); ++i) g[cache.index[i]] += dy[i];
        }
        break;
      case Op::Relu:
        if (want(0)) {
          Tensor dx = Tensor::uninitialized(dy.shape());
          kt.relu_backward(dy.size(), val(0).raw(), dy.raw(), dx.raw());
          add_grad(n.inputs[0], std::move(dx));
        }
        break;
      case Op::BatchNorm: {
        const Tensor& x = val(0);
        const std::size_t C = x.shape().back();
        const std::size_t N = x.size() / C;
        const double* __restrict gamma = val(1).raw();
        const double* __restrict xh = cache.a.raw();
        const double* __restrict inv_std = cache.b.raw();
        const double* __restrict dyr = dy.raw();
        std::vector<double> sum_dy(C, 0.0), sum_dy_xh(C, 0.0);
        {
          double* __restrict s0 = sum_dy.data();
          double* __restrict s1 = sum_dy_xh.data();
          for (std::size_t r = 0; r < N; ++r) {
            for (std::size_t c = 0; c < C; ++c) {
              s0[c] += dyr[r * C + c];
              s1[c] += dyr[r * C + c] * xh[r * C + c];
            }
          }
        }
        if (want(1)) {
          double* g = grad_of(n.inputs[1]).raw();
          for (std::size_t c = 0; c < C; ++c) g[c] += sum_dy_xh[c];
        }
        if (want(2)) {
          double* g = grad_of(n.inputs[2]).raw();
          for (std::size_t c = 0; c < C; ++c) g[c] += sum_dy[c];
        }
        if (tape.mode() == Mode::Train) {
          if (want(0)) {
            const double inv_n = 1.0 / static_cast<double>(N);
            std::vector<double> k0(C), k1(C), k2(C);
            for (std::size_t c = 0; c < C; ++c) {
              k0[c] = gamma[c] * inv_std[c];
              k1[c] = inv_n * sum_dy[c];
              k2[c] = inv_n * sum_dy_xh[c];
            }
            Tensor dx = Tensor::uninitialized(x.shape());
            double* __restrict g = dx.raw();
            const double* __restrict a0 = k0.data();
            const double* __restrict a1 = k1.data();
            const double* __restrict a2 = k2.data();
            for (std::size_t r = 0; r < N; ++r) {
              for (std::size_t c = 0; c < C; ++c) {
                const std::size_t i = r * C + c;
                g[i] = a0[c] * (dyr[i] - a1[c] - xh[i] * a2[c]);
              }
            }
            add_grad(n.inputs[0], std::move(dx));
          }
          // Running statistics do not influence a train-mode output.
        } else {
          if (want(0)) {
            std::vector<double> k0(C);
            for (std::size_t c = 0; c < C; ++c) k0[c] = gamma[c] * inv_std[c];
            Tensor dx = Tensor::uninitialized(x.shape());
            double* __restrict g = dx.raw();
            const double* __restrict a0 = k0.data();
            for (std::size_t r = 0; r < N; ++r) {
              for (std::size_t c = 0; c < C; ++c) g[r * C + c] = dyr[r * C + c] * a0[c];
            }
            add_grad(n.inputs[0], std::move(dx));
          }
          if (want(3)) {
            double* g = grad_of(n.inputs[3]).raw();
            for (std::size_t c = 0; c < C; ++c) g[c] -= sum_dy[c] * gamma[c] * inv_std[c];
          }
          if (want(4)) {
            // d/dv of gamma*(x-m)*(v+eps)^(-1/2) = -0.5*gamma*xh*(v+eps)^-1
            double* g = grad_of(n.inputs[4]).raw();
            for (std::size_t c = 0; c < C; ++c) g[c] -= 0.5 * gamma[c] * sum_dy_xh[c] * inv_std[c] * inv_std[c];
          }
        }
        break;
      }
      case Op::Softmax:
        if (want(0)) {
          const Tensor& p = tape.value(id);
          const std::size_t B = p.dim(0), K = p.dim(1);
          double* g = grad_of(n.inputs[0]).raw();
          for (std::size_t i = 0; i < B; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < K; ++j) s += dy[i * K + j] * p[i * K + j];
            for (std::size_t j = 0; j < K; ++j) g[i * K + j] += p[i * K + j] * (dy[i * K + j] - s);
          }
        }
        break;
      case Op::SoftmaxCrossEntropy: {
        const Tensor& z = val(0);
        const Tensor& t = val(1);
        const std::size_t B = z.dim(0), K = z.dim(1);
        const double scale = dy[0] / static_cast<double>(B);
        const Tensor& p = cache.a;
        if (want(0)) {
          double* g = grad_of(n.inputs[0]).raw();
          for (std::size_t i = 0; i < B; ++i) {
            double tsum = 0.0;
            for (std::size_t j = 0; j < K; ++j) tsum += t[i * K + j];
            for (std::size_t j = 0; j < K; ++j) g[i * K + j] += scale * (p[i * K + j] * tsum - t[i * K + j]);
          }
        }
        if (want(1)) {
          double* g = grad_of(n.inputs[1]).raw();
          for (std::size_t i = 0; i < B; ++i) {
            for (std::size_t j = 0; j < K; ++j) g[i * K + j] -= scale * std::log(p[i * K + j]);
          }
        }
        break;
      }
      case Op::Reshape:
        if (want(0)) kt.axpy(dy.size(), 1.0, dy.raw(), grad_of(n.inputs[0]).raw());
        break;
      case Op::Mean:
      case Op::Sum:
        if (want(0)) {
          const double s = n.op == Op::Mean ? dy[0] / static_cast<double>(val(0).size()) : dy[0];
          for (double& v : grad_of(n.inputs[0]).data()) v += s;
        }
        break;
      case Op::Dropout:
        if (want(0)) {
          double* g = grad_of(n.inputs[0]).raw();
          if (tape.mode() == Mode::Train && n.scalar > 0.0) {
            for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i] * cache.a[i];
          } else {
            for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i];
          }
        }
        break;
    }
  }

  std::vector<Tensor> result;
  result.reserve(wrt.size());
  for (NodeId w : wrt) {
    if (has[w]) {
      result.push_back(grads[w]);
    } else {
      result.emplace_back(tape.value(w).shape());
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Name-based conveniences

std::map<std::string, Tensor> evaluate(const Graph& graph, const Bindings& bindings,
                                       std::span<const std::string> outputs, const RunOptions& options) {
  RunOptions opts = options;
  if (!outputs.empty() && !opts.last) {
    NodeId last = 0;
    for (const std::string& name : outputs) last = std::max(last, graph.find(name));
    opts.last = last;
  }
  const Tape tape = forward(graph, bindings, opts);
  std::map<std::string, Tensor> result;
  if (outputs.empty()) {
    for (NodeId id = 0; id < graph.size(); ++id) {
      if (!graph.node(id).name.empty()) result.emplace(graph.node(id).name, tape.value(id));
    }
  } else {
    for (const std::string& name : outputs) result.emplace(name, tape.value(graph.find(name)));
  }
  return result;
}

std::map<std::string, Tensor> gradients(const Graph& graph, const Bindings& bindings, std::string_view loss,
                                        std::span<const std::string> wrt, const RunOptions& options) {
  const NodeId loss_id = graph.find(loss);
  std::vector<NodeId> ids;
  ids.reserve(wrt.size());
  for (const std::string& name : wrt) ids.push_back(graph.find(name));
  RunOptions opts = options;
  if (!opts.last) opts.last = loss_id;
  const Tape tape = forward(graph, bindings, opts);
  std::vector<Tensor> g = backward(graph, tape, loss_id, ids);
  std::map<std::string, Tensor> result;
  for (std::size_t i = 0; i < wrt.size(); ++i) result.emplace(wrt[i], std::move(g[i]));
  return result;
}

double finite_difference_check(const Graph& graph, const Bindings& bindings, std::string_view loss, double step,
                               std::span<const std::string> wrt, const RunOptions& options) {
  if (!(step > 0.0)) throw ConfigError("finite-difference step must be positive");
  std::vector<std::string> names(wrt.begin(), wrt.end());
  if (names.empty()) {
    for (const Node& n : graph.nodes()) {
      if ((n.op == Op::Input || n.op == Op::Parameter) && bindings.count(n.name)) names.push_back(n.name);
    }
  }
  const auto analytic = gradients(graph, bindings, loss, names, options);
  const NodeId loss_id = graph.find(loss);

  Bindings probe = bindings;
  double worst = 0.0;
  for (const std::string& name : names) {
    Tensor& t = probe.at(name);
    const Tensor& g = analytic.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t[i];
      // Use the representable perturbation actually applied, not the nominal step.
      const volatile double hi = orig + step;
      const volatile double lo = orig - step;
      t[i] = hi;
      const double up = forward(graph, probe, options).value(loss_id).item();
      t[i] = lo;
      const double down = forward(graph, probe, options).value(loss_id).item();
      t[i] = orig;
      const double fd = (up - down) / (hi - lo);
      if (!std::isfinite(fd)) throw NumericError("non-finite finite-difference estimate for '" + name + "'");
      const double denom = std::max({std::abs(g[i]), std::abs(fd), 1e-6});
      worst = std::max(worst, std::abs(g[i] - fd) / denom);
    }
  }
  return worst;
}

}  // namespace reverb::autodiff
