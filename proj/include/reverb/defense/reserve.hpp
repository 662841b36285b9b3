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

// Server-side reserve defense: pretraining on the trusted reserve and a short
// retraining pass after every aggregation, optionally on adversarially
// augmented reserve batches.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "reverb/attack/attacks.hpp"
#include "reverb/data/dataset.hpp"
#include "reverb/model/cnn.hpp"
#include "reverb/model/optimizer.hpp"

namespace reverb::defense {

enum class DefenseMode { Disabled, NoPoison, Fgsm, Pgd, Awgn, AllAdversarial };

std::string_view defense_name(DefenseMode mode);
/// disabled, nopoison, fgsm, pgd, awgn, all (case-insensitive).
DefenseMode parse_defense(std::string_view name);

/// Attack family used to craft augmentations, None for Disabled/NoPoison.
attack::AttackKind augmentation_attack(DefenseMode mode);

struct DefenseConfig {
  DefenseMode mode = DefenseMode::Disabled;
  double reserve_fraction = 0.05;
  std::size_t pretrain_epochs = 3;
  std::size_t reserve_batch = 32;
  std::size_t steps = 0;  // retraining steps per round; 0 means one epoch over the reserve
  model::OptimizerConfig optimizer;
  attack::AttackSpec attack;  // budgets for augmentation; kind is taken from mode

  void validate() const;
  bool enabled() const { return mode != DefenseMode::Disabled; }
  /// ceil(reserve_size / reserve_batch) unless overridden by `steps`.
  std::size_t steps_per_round(std::size_t reserve_size) const;
};

/// NoPoison returns the batch unchanged. Other modes append a perturbed copy of
/// every example, crafted against `params`, after the clean ones and repeat the
/// labels, so the batch doubles. Disabled is a ConfigError.
std::pair<Tensor, std::vector<std::size_t>> augment_batch(const model::Cnn& model, const model::Params& params,
                                                          const Tensor& x, std::span<const std::size_t> labels,
                                                          const DefenseConfig& config, Rng& rng);

class ReserveDefense {
 public:
  ReserveDefense(const model::Cnn& model, data::ReserveSet reserve, DefenseConfig config, std::uint64_t seed);

  const DefenseConfig& config() const { return config_; }
  const data::ReserveSet& reserve() const { return reserve_; }
  bool enabled() const { return config_.enabled(); }
  std::size_t steps_per_round() const { return config_.steps_per_round(reserve_.size()); }
  /// Optimizer steps taken by the most recent retrain call.
  std::size_t last_steps() const { return last_steps_; }

  /// pretrain_epochs passes of clean minibatch training over the reserve
  /// (identity when disabled). Resets the server optimizer afterwards.
  model::Params pretrain(model::Params params);

  /// Exactly steps_per_round() steps on augmented reserve batches; the
  /// aggregate is returned unchanged when disabled. The server optimizer state
  /// carries over between rounds.
  model::Params retrain(model::Params aggregated, std::size_t round);

 private:
  void step(model::Params& params, std::span<const data::LabeledExample> batch, bool augment, Rng& rng);

  const model::Cnn& model_;
  data::ReserveSet reserve_;
  DefenseConfig config_;
  std::uint64_t seed_;
  model::Optimizer optimizer_;
  std::uint64_t dropout_counter_ = 0;
  std::size_t last_steps_ = 0;
};

}  // namespace reverb::defense
