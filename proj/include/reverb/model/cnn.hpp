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

// Spectrogram CNN: three conv(3x3, same) -> batch norm -> ReLU -> 2x2 max-pool
// blocks, then dense -> ReLU -> dropout -> dense -> softmax.
//
// Parameter names: conv{i}.w [3,3,cin,cout], conv{i}.b, bn{i}.gamma, bn{i}.beta,
// bn{i}.mean, bn{i}.var (running statistics, not trained), dense1.w, dense1.b,
// dense2.w, dense2.b.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "reverb/autodiff/graph.hpp"
#include "reverb/tensor.hpp"

namespace reverb::data {
struct LabeledExample;
}

namespace reverb::model {

using Params = std::map<std::string, Tensor>;
using autodiff::Mode;

struct ModelArch {
  std::vector<std::size_t> conv_channels{8, 16, 32};
  std::size_t kernel = 3;
  std::size_t dense_units = 64;
  double dropout = 0.5;
  std::size_t num_classes = 4;
  Shape input_shape{129, 16, 2};  // [bins, frames, 2]

  void validate() const;

  /// Reduced-width profile used for all training runs.
  static ModelArch desk(std::size_t classes);
  /// Full-width profile; `frames` is left free by the architecture table.
  static ModelArch paper(std::size_t classes, std::size_t frames);
};

/// Running batch-norm statistics are carried along with the trained tensors.
bool is_running_stat(const std::string& name);
/// Tensors subject to weight decay (conv and dense kernels).
bool is_weight(const std::string& name);

/// Fan-in scaled uniform weights U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero
/// biases, unit/zero batch-norm scale/shift, zero running mean, unit running variance.
Params init_params(const ModelArch& arch, std::uint64_t seed);

/// Number of trainable scalars (running statistics excluded).
std::size_t parameter_count(const Params& params);

Tensor one_hot(std::span<const std::size_t> labels, std::size_t classes);

/// Mean over the batch of -log max(p_true, 1e-12).
double cross_entropy(const Tensor& probs, std::span<const std::size_t> labels);

struct ParamGradients {
  double loss = 0.0;  // data term only, without weight decay
  Params grads;       // trainable tensors only
  Params running;     // updated running statistics (train mode), else empty
};

class Cnn {
 public:
  explicit Cnn(ModelArch arch);

  const ModelArch& arch() const { return arch_; }
  const autodiff::Graph& graph() const { return graph_; }

  /// Class probabilities [B, K] for a batch [B, bins, frames, 2].
  Tensor probabilities(const Params& params, const Tensor& x, Mode mode = Mode::Eval,
                       std::uint64_t dropout_seed = 0) const;
  Tensor logits(const Params& params, const Tensor& x, Mode mode = Mode::Eval, std::uint64_t dropout_seed = 0) const;

  /// Gradient of mean cross-entropy + weight_decay * sum of squared weights.
  /// In train mode the running statistics are advanced with momentum 0.9.
  ParamGradients grad_params(const Params& params, const Tensor& x, std::span<const std::size_t> labels, Mode mode,
                             std::uint64_t dropout_seed, double weight_decay) const;

  /// d(mean loss)/dX in eval mode; also returns the loss.
  Tensor grad_input(const Params& params, const Tensor& x, std::span<const std::size_t> labels,
                    double* loss = nullptr) const;

  /// Eval-mode mean cross-entropy.
  double loss(const Params& params, const Tensor& x, std::span<const std::size_t> labels) const;

 private:
  autodiff::Bindings bind(const Params& params, const Tensor& x) const;
  void check_input(const Tensor& x) const;

  ModelArch arch_;
  autodiff::Graph graph_;
  std::vector<autodiff::NodeId> bn_nodes_;
  std::vector<autodiff::NodeId> trainable_;
  std::vector<std::string> trainable_names_;
};

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
};

/// Argmax accuracy (ties go to the lowest class index) and mean loss in eval mode.
EvalResult evaluate(const Cnn& model, const Params& params, std::span<const data::LabeledExample> examples,
                    std::size_t batch_size = 128);
double accuracy(const Cnn& model, const Params& params, std::span<const data::LabeledExample> examples);

void save_checkpoint(const std::filesystem::path& path, const Params& params);
Params load_checkpoint(const std::filesystem::path& path);

/// Order-sensitive 64-bit hash of names, shapes and value bit patterns.
std::uint64_t fingerprint(const Params& params);

/// Element-wise equality of shapes; throws ShapeError naming the first mismatch.
void check_compatible(const Params& a, const Params& b);

}  // namespace reverb::model
