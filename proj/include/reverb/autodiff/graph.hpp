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

#pragma once

// Minimal reverse-mode differentiation over a static graph of dense tensor ops.
//
// A Graph is built once (nodes are appended in topological order) and then
// evaluated any number of times against name -> Tensor bindings. Evaluation is
// a pure function of (graph, bindings, options); the forward pass records a
// Tape that backward() consumes.
//
// Layout conventions: images are NHWC ([batch, height, width, channels]);
// convolution kernels are [kh, kw, c_in, c_out]; dense weights are [in, out].

#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "reverb/error.hpp"
#include "reverb/tensor.hpp"

namespace reverb::autodiff {

using NodeId = std::size_t;
inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

enum class Op {
  Input,
  Parameter,
  Add,
  Mul,
  Scale,
  MatMul,
  Conv2d,
  MaxPool2,
  Relu,
  BatchNorm,
  Affine,
  Softmax,
  SoftmaxCrossEntropy,
  Reshape,
  Mean,
  Sum,
  Dropout,
};

std::string_view op_name(Op op);

enum class Padding { Same, Valid };
enum class Mode { Train, Eval };

/// Unbound or unknown node names, malformed graphs.
class GraphError : public Error {
 public:
  using Error::Error;
};

struct Node {
  Op op;
  std::string name;
  std::vector<NodeId> inputs;
  double scalar = 0.0;  // Scale factor, dropout rate or batch-norm epsilon.
  Padding padding = Padding::Same;
  bool flatten = false;  // Reshape: keep dim 0, collapse the rest.
  Shape target;          // Reshape: explicit target shape.
};

class Graph {
 public:
  NodeId input(std::string name);
  NodeId parameter(std::string name);

  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId x, double factor);
  NodeId matmul(NodeId a, NodeId b);
  /// Stride-1 2-D convolution; `bias` may be kNoNode.
  NodeId conv2d(NodeId x, NodeId kernel, NodeId bias, Padding padding = Padding::Same);
  /// 2x2 max-pool, stride 2. Odd trailing rows/columns are dropped.
  NodeId maxpool2(NodeId x);
  NodeId relu(NodeId x);
  /// Normalizes over every axis but the last. Train mode uses batch statistics,
  /// eval mode the running statistics bound to `running_mean`/`running_var`.
  NodeId batch_norm(NodeId x, NodeId gamma, NodeId beta, NodeId running_mean, NodeId running_var,
                    double epsilon = 1e-5);
  NodeId affine(NodeId x, NodeId weight, NodeId bias);
  NodeId softmax(NodeId logits);
  /// Mean over the batch of -sum_k t_k log softmax(z)_k; scalar output.
  NodeId softmax_cross_entropy(NodeId logits, NodeId targets);
  NodeId reshape(NodeId x, Shape shape);
  NodeId flatten(NodeId x);
  NodeId mean(NodeId x);
  NodeId sum(NodeId x);
  /// Inverted dropout, active in train mode only.
  NodeId dropout(NodeId x, double rate);

  /// Attach a lookup name to an op node. Names are unique.
  NodeId named(NodeId id, std::string name);

  NodeId find(std::string_view name) const;
  bool contains(std::string_view name) const;
  const Node& node(NodeId id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }
  std::span<const Node> nodes() const { return nodes_; }

 private:
  NodeId push(Node node);
  void check_id(NodeId id) const;

  std::vector<Node> nodes_;
  std::unordered_map<std::string, NodeId> by_name_;
};

using Bindings = std::unordered_map<std::string, Tensor>;

struct RunOptions {
  Mode mode = Mode::Eval;
  std::uint64_t dropout_seed = 0;
  /// Evaluate nodes 0..last only. Node ids are topologically ordered, so the
  /// prefix is closed under inputs and later (unbound) inputs are never read.
  std::optional<NodeId> last;
};

/// Values recorded by a forward pass plus what backward() needs.
class Tape {
 public:
  const Tensor& value(NodeId id) const;
  /// Number of leading nodes that were evaluated.
  std::size_t computed() const { return computed_; }
  Mode mode() const { return mode_; }
  /// Per-channel batch mean and (biased) variance of a batch-norm node in train mode.
  const Tensor& batch_mean(NodeId bn) const;
  const Tensor& batch_var(NodeId bn) const;

 private:
  friend Tape forward(const Graph&, const Bindings&, const RunOptions&);
  friend std::vector<Tensor> backward(const Graph&, const Tape&, NodeId, std::span<const NodeId>);

  struct Cache {
    Tensor a;  // padded conv input, normalized activations, dropout mask, softmax probabilities
    Tensor b;  // batch-norm inverse std
    Tensor c;  // batch-norm batch mean
    Tensor d;  // batch-norm batch variance
    std::vector<std::uint32_t> index;  // max-pool argmax
  };

  Mode mode_ = Mode::Eval;
  std::size_t computed_ = 0;
  std::vector<Tensor> values_;
  std::vector<Cache> cache_;
};

Tape forward(const Graph& graph, const Bindings& bindings, const RunOptions& options = {});

/// Reverse pass from scalar `loss`. Returns one gradient per `wrt` entry;
/// nodes that do not influence the loss get an all-zeros tensor.
std::vector<Tensor> backward(const Graph& graph, const Tape& tape, NodeId loss, std::span<const NodeId> wrt);

/// Values of the requested named nodes (all named nodes when `outputs` is empty).
std::map<std::string, Tensor> evaluate(const Graph& graph, const Bindings& bindings,
                                       std::span<const std::string> outputs = {}, const RunOptions& options = {});

std::map<std::string, Tensor> gradients(const Graph& graph, const Bindings& bindings, std::string_view loss,
                                        std::span<const std::string> wrt, const RunOptions& options = {});

/// Worst relative discrepancy between gradients() and a central-difference
/// estimate over every coordinate of `wrt` (all bound leaves when empty).
/// Relative error per coordinate is |g - fd| / max(|g|, |fd|, 1e-6).
double finite_difference_check(const Graph& graph, const Bindings& bindings, std::string_view loss, double step,
                               std::span<const std::string> wrt = {}, const RunOptions& options = {});

}  // namespace reverb::autodiff
