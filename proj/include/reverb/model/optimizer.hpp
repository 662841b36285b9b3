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

#include <cstdint>

#include "reverb/model/cnn.hpp"

namespace reverb::model {

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 1e-4;
  double decay_rate = 0.9;
  double decay_steps = 1000.0;
  double weight_decay = 1e-4;  // consumed by the loss, see Cnn::grad_params
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
  /// lr * decay_rate^(step / decay_steps), continuous exponent.
  double learning_rate_at(std::uint64_t step) const;
};

/// Optimizer step counter and Adam moments. Tensors missing from `grads`
/// (running statistics) are left untouched.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config = {}) : config_(config) { config_.validate(); }

  const OptimizerConfig& config() const { return config_; }
  std::uint64_t step() const { return step_; }
  /// Clears the step counter and moments; the schedule offset is kept.
  void reset();
  /// Steps already taken elsewhere that the decay schedule should count, so a
  /// freshly reset optimizer can continue a global schedule.
  void set_schedule_offset(std::uint64_t offset) { offset_ = offset; }

  void apply(Params& params, const Params& grads);

 private:
  OptimizerConfig config_;
  std::uint64_t step_ = 0;
  std::uint64_t offset_ = 0;
  Params m_;
  Params v_;
};

}  // namespace reverb::model
