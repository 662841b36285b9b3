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

#include "reverb/model/cnn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "reverb/data/dataset.hpp"
#include "reverb/error.hpp"
#include "reverb/rng.hpp"
#include "reverb/tensor_io.hpp"

namespace reverb::model {

using autodiff::Graph;
using autodiff::NodeId;

void ModelArch::validate() const {
  if (conv_channels.size() != 3) throw ConfigError("model.conv_channels must list exactly 3 widths");
  for (std::size_t c : conv_channels) {
    if (c == 0) throw ConfigError("model.conv_channels entries must be positive");
  }
  if (kernel == 0 || kernel % 2 == 0) throw ConfigError("model.kernel must be odd and positive");
  if (dense_units == 0) throw ConfigError("model.dense_units must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must lie in [0, 1)");
  if (num_classes < 1) throw ConfigError("model.num_classes must be >= 1");
  if (input_shape.size() != 3 || input_shape[2] != 2) throw ConfigError("model input must be [bins, frames, 2]");
  if (input_shape[0] < 8 || input_shape[1] < 8) {
    throw ConfigError("model input needs at least 8 bins and 8 frames to survive three 2x2 pools");
  }
}

ModelArch ModelArch::desk(std::size_t classes) {
  ModelArch a;
  a.num_classes = classes;
  return a;
}

ModelArch ModelArch::paper(std::size_t classes, std::size_t frames) {
  ModelArch a;
  a.conv_channels = {32, 64, 128};
  a.dense_units = 128;
  a.num_classes = classes;
  a.input_shape = {513, frames, 2};
  return a;
}

bool is_running_stat(const std::string& name) {
  return name.ends_with(".mean") || name.ends_with(".var");
}

bool is_weight(const std::string& name) { return name.ends_with(".w"); }

namespace {

struct Layout {
  std::vector<std::pair<std::string, Shape>> tensors;
  std::size_t flat = 0;
};

Layout layout(const ModelArch& arch) {
  Layout l;
  std::size_t h = arch.input_shape[0], w = arch.input_shape[1], c = arch.input_shape[2];
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string n = std::to_string(i + 1);
    const std::size_t f = arch.conv_channels[i];
    l.tensors.push_back({"conv" + n + ".w", {arch.kernel, arch.kernel, c, f}});
    l.tensors.push_back({"conv" + n + ".b", {f}});
    for (const char* s : {".gamma", ".beta", ".mean", ".var"}) l.tensors.push_back({"bn" + n + s, {f}});
    h /= 2;
    w /= 2;
    c = f;
  }
  l.flat = h * w * c;
  l.tensors.push_back({"dense1.w", {l.flat, arch.dense_units}});
  l.tensors.push_back({"dense1.b", {arch.dense_units}});
  l.tensors.push_back({"dense2.w", {arch.dense_units, arch.num_classes}});
  l.tensors.push_back({"dense2.b", {arch.num_classes}});
  return l;
}

}  // namespace

Params init_params(const ModelArch& arch, std::uint64_t seed) {
  arch.validate();
  Params p;
  std::uint64_t index = 0;
  for (const auto& [name, shape] : layout(arch).tensors) {
    Tensor t(shape, 0.0);
    ++index;
    if (is_weight(name)) {
      std::size_t fan_in = 1;
      for (std::size_t i = 0; i + 1 < shape.size(); ++i) fan_in *= shape[i];
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
      Rng rng = keyed_rng({seed, 0x1417ULL, index});
      for (double& v : t.data()) v = uniform(rng, -limit, limit);
    } else if (name.ends_with(".gamma") || name.ends_with(".var")) {
      t.fill(1.0);
    }
    p.emplace(name, std::move(t));
  }
  return p;
}

std::size_t parameter_count(const Params& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) {
    if (!is_running_stat(name)) n += t.size();
  }
  return n;
}

Tensor one_hot(std::span<const std::size_t> labels, std::size_t classes) {
  Tensor t({labels.size(), classes}, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) throw DataError("label " + std::to_string(labels[i]) + " >= class count");
    t[i * classes + labels[i]] = 1.0;
  }
  return t;
}

double cross_entropy(const Tensor& probs, std::span<const std::size_t> labels) {
  if (probs.rank() != 2 || probs.dim(0) != labels.size()) {
    throw ShapeError("cross_entropy: probabilities " + to_string(probs.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t K = probs.dim(1);
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= K) throw DataError("label out of range in cross_entropy");
    s -= std::log(std::max(probs[i * K + labels[i]], 1e-12));
  }
  return s / static_cast<double>(labels.size());
}

std::uint64_t fingerprint(const Params& params) {
  std::uint64_t h = 0x6a09e667f3bcc908ULL;
  auto mix = [&h](std::uint64_t v) { h = splitmix64(h ^ v); };
  for (const auto& [name, t] : params) {
    for (unsigned char c : name) mix(c);
    for (std::size_t d : t.shape()) mix(d);
    for (double v : t.data()) mix(std::bit_cast<std::uint64_t>(v));
  }
  return h;
}

void check_compatible(const Params& a, const Params& b) {
  if (a.size() != b.size()) throw ShapeError("parameter sets differ in size");
  for (const auto& [name, t] : a) {
    auto it = b.find(name);
    if (it == b.end()) throw ShapeError("parameter '" + name + "' missing");
    if (it->second.shape() != t.shape()) {
      throw ShapeError("parameter '" + name + "' shape " + to_string(t.shape()) + " vs " + to_string(it->second.shape()));
    }
  }
}

// ---------------------------------------------------------------------------

Cnn::Cnn(ModelArch arch) : arch_(std::move(arch)) {
  arch_.validate();
  Graph& g = graph_;
  NodeId y = g.input("x");
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string n = std::to_string(i + 1);
    y = g.conv2d(y, g.parameter("conv" + n + ".w"), g.parameter("conv" + n + ".b"));
    y = g.batch_norm(y, g.parameter("bn" + n + ".gamma"), g.parameter("bn" + n + ".beta"), g.input("bn" + n + ".mean"),
                     g.input("bn" + n + ".var"));
    bn_nodes_.push_back(y);
    y = g.maxpool2(g.relu(y));
  }
  y = g.relu(g.affine(g.flatten(y), g.parameter("dense1.w"), g.parameter("dense1.b")));
  y = g.dropout(y, arch_.dropout);
  const NodeId logits = g.named(g.affine(y, g.parameter("dense2.w"), g.parameter("dense2.b")), "logits");
  g.named(g.softmax(logits), "probs");
  g.named(g.softmax_cross_entropy(logits, g.input("y")), "loss");
  for (const auto& [name, shape] : layout(arch_).tensors) {
    if (is_running_stat(name)) continue;
    trainable_.push_back(g.find(name));
    trainable_names_.push_back(name);
  }
}

void Cnn::check_input(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != arch_.input_shape[0] || x.dim(2) != arch_.input_shape[1] ||
      x.dim(3) != arch_.input_shape[2]) {
    throw ShapeError("model expects [B, " + std::to_string(arch_.input_shape[0]) + ", " +
                     std::to_string(arch_.input_shape[1]) + ", 2] input, got " + to_string(x.shape()));
  }
}

autodiff::Bindings Cnn::bind(const Params& params, const Tensor& x) const {
  check_input(x);
  autodiff::Bindings b;
  b.reserve(params.size() + 2);
  for (const auto& [name, t] : params) b.emplace(name, t);
  b.emplace("x", x);
  return b;
}

Tensor Cnn::logits(const Params& params, const Tensor& x, Mode mode, std::uint64_t dropout_seed) const {
  const NodeId out = graph_.find("logits");
  const auto tape = autodiff::forward(graph_, bind(params, x), {mode, dropout_seed, out});
  return tape.value(out);
}

Tensor Cnn::probabilities(const Params& params, const Tensor& x, Mode mode, std::uint64_t dropout_seed) const {
  const NodeId out = graph_.find("probs");
  const auto tape = autodiff::forward(graph_, bind(params, x), {mode, dropout_seed, out});
  return tape.value(out);
}

ParamGradients Cnn::grad_params(const Params& params, const Tensor& x, std::span<const std::size_t> labels, Mode mode,
                                std::uint64_t dropout_seed, double weight_decay) const {
  auto b = bind(params, x);
  b.emplace("y", one_hot(labels, arch_.num_classes));
  const auto tape = autodiff::forward(graph_, b, {mode, dropout_seed, std::nullopt});
  const NodeId loss = graph_.find("loss");
  auto grads = autodiff::backward(graph_, tape, loss, trainable_);

  ParamGradients out;
  out.loss = tape.value(loss).item();
  for (std::size_t i = 0; i < trainable_.size(); ++i) {
    const std::string& name = trainable_names_[i];
    Tensor& g = grads[i];
    if (weight_decay != 0.0 && is_weight(name)) {
      const Tensor& w = params.at(name);
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += 2.0 * weight_decay * w[j];
    }
    out.grads.emplace(name, std::move(g));
  }
  if (mode == Mode::Train) {
    // Running variance uses the unbiased batch estimate.
    for (std::size_t i = 0; i < bn_nodes_.size(); ++i) {
      const std::string n = "bn" + std::to_string(i + 1);
      const Tensor& bm = tape.batch_mean(bn_nodes_[i]);
      const Tensor& bv = tape.batch_var(bn_nodes_[i]);
      Tensor rm = params.at(n + ".mean"), rv = params.at(n + ".var");
      const Tensor& act = tape.value(bn_nodes_[i]);
      const double per_channel = static_cast<double>(act.size() / act.dim(act.rank() - 1));
      const double unbias = per_channel > 1.0 ? per_channel / (per_channel - 1.0) : 1.0;
      for (std::size_t c = 0; c < rm.size(); ++c) {
        rm[c] = 0.9 * rm[c] + 0.1 * bm[c];
        rv[c] = 0.9 * rv[c] + 0.1 * bv[c] * unbias;
      }
      out.running.emplace(n + ".mean", std::move(rm));
      out.running.emplace(n + ".var", std::move(rv));
    }
  }
  return out;
}

Tensor Cnn::grad_input(const Params& params, const Tensor& x, std::span<const std::size_t> labels,
                       double* loss) const {
  auto b = bind(params, x);
  b.emplace("y", one_hot(labels, arch_.num_classes));
  const auto tape = autodiff::forward(graph_, b, {Mode::Eval, 0, std::nullopt});
  const NodeId loss_id = graph_.find("loss");
  const NodeId wrt[] = {graph_.find("x")};
  auto g = autodiff::backward(graph_, tape, loss_id, wrt);
  if (loss != nullptr) *loss = tape.value(loss_id).item();
  return std::move(g[0]);
}

double Cnn::loss(const Params& params, const Tensor& x, std::span<const std::size_t> labels) const {
  return cross_entropy(probabilities(params, x), labels);
}

// ---------------------------------------------------------------------------

EvalResult evaluate(const Cnn& model, const Params& params, std::span<const data::LabeledExample> examples,
                    std::size_t batch_size) {
  if (examples.empty()) throw DataError("cannot evaluate on an empty dataset");
  if (batch_size == 0) throw ConfigError("evaluation batch size must be positive");
  const std::size_t K = model.arch().num_classes;
  std::size_t correct = 0;
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const auto batch = examples.subspan(start, std::min(batch_size, examples.size() - start));
    const Tensor probs = model.probabilities(params, data::stack_features(batch));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const double* row = probs.raw() + i * K;
      const auto pred = static_cast<std::size_t>(std::max_element(row, row + K) - row);  // first max wins
      correct += pred == batch[i].label;
      loss_sum -= std::log(std::max(row[batch[i].label], 1e-12));
    }
  }
  const double n = static_cast<double>(examples.size());
  return {static_cast<double>(correct) / n, loss_sum / n};
}

double accuracy(const Cnn& model, const Params& params, std::span<const data::LabeledExample> examples) {
  return evaluate(model, params, examples).accuracy;
}

void save_checkpoint(const std::filesystem::path& path, const Params& params) { save_tensors(path, params); }

Params load_checkpoint(const std::filesystem::path& path) { return load_tensors(path); }

}  // namespace reverb::model
