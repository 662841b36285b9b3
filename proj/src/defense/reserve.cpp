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

#include "reverb/defense/reserve.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>
#include <string>

#include "reverb/error.hpp"

namespace reverb::defense {

namespace {

constexpr std::uint64_t kPretrainKey = 0x70726574;  // stream tags
constexpr std::uint64_t kRetrainKey = 0x72657472;
constexpr std::uint64_t kDropoutKey = 0x64726f70;

constexpr DefenseMode kModes[] = {DefenseMode::Disabled, DefenseMode::NoPoison, DefenseMode::Fgsm,
                                  DefenseMode::Pgd,      DefenseMode::Awgn,     DefenseMode::AllAdversarial};

Tensor concat_batches(const Tensor& a, const Tensor& b) {
  Shape shape = a.shape();
  shape[0] += b.dim(0);
  Tensor out = Tensor::uninitialized(shape);
  std::copy(a.raw(), a.raw() + a.size(), out.raw());
  std::copy(b.raw(), b.raw() + b.size(), out.raw() + a.size());
  return out;
}

}  // namespace

std::string_view defense_name(DefenseMode mode) {
  switch (mode) {
    case DefenseMode::Disabled: return "disabled";
    case DefenseMode::NoPoison: return "nopoison";
    case DefenseMode::Fgsm: return "fgsm";
    case DefenseMode::Pgd: return "pgd";
    case DefenseMode::Awgn: return "awgn";
    case DefenseMode::AllAdversarial: return "all";
  }
  return "?";
}

DefenseMode parse_defense(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  for (DefenseMode m : kModes) {
    if (s == defense_name(m)) return m;
  }
  throw ConfigError("unknown defense mode '" + std::string(name) + "' (expected disabled, nopoison, fgsm, pgd, awgn or all)");
}

attack::AttackKind augmentation_attack(DefenseMode mode) {
  switch (mode) {
    case DefenseMode::Fgsm: return attack::AttackKind::Fgsm;
    case DefenseMode::Pgd: return attack::AttackKind::Pgd;
    case DefenseMode::Awgn: return attack::AttackKind::Awgn;
    case DefenseMode::AllAdversarial: return attack::AttackKind::MixedAll;
    default: return attack::AttackKind::None;
  }
}

void DefenseConfig::validate() const {
  if (!(reserve_fraction > 0.0 && reserve_fraction < 1.0)) throw ConfigError("defense.reserve_fraction must lie in (0, 1)");
  if (reserve_batch < 1) throw ConfigError("defense.reserve_batch must be >= 1");
  optimizer.validate();
  attack::AttackSpec a = attack;
  a.kind = augmentation_attack(mode);
  a.validate();
}

std::size_t DefenseConfig::steps_per_round(std::size_t reserve_size) const {
  if (steps > 0) return steps;
  return (reserve_size + reserve_batch - 1) / reserve_batch;
}

std::pair<Tensor, std::vector<std::size_t>> augment_batch(const model::Cnn& model, const model::Params& params,
                                                          const Tensor& x, std::span<const std::size_t> labels,
                                                          const DefenseConfig& config, Rng& rng) {
  if (!config.enabled()) throw ConfigError("augment_batch called with the defense disabled");
  std::vector<std::size_t> out_labels(labels.begin(), labels.end());
  if (config.mode == DefenseMode::NoPoison) return {x, std::move(out_labels)};
  attack::AttackSpec spec = config.attack;
  spec.kind = augmentation_attack(config.mode);
  const Tensor adv = attack::poison_batch(model, params, x, labels, spec, rng);
  out_labels.insert(out_labels.end(), labels.begin(), labels.end());
  return {concat_batches(x, adv), std::move(out_labels)};
}

ReserveDefense::ReserveDefense(const model::Cnn& model, data::ReserveSet reserve, DefenseConfig config,
                               std::uint64_t seed)
    : model_(model), reserve_(std::move(reserve)), config_(std::move(config)), seed_(seed), optimizer_(config_.optimizer) {
  config_.validate();
  if (config_.enabled() && reserve_.examples.empty()) throw DataError("reserve defense enabled with an empty reserve");
}

void ReserveDefense::step(model::Params& params, std::span<const data::LabeledExample> batch, bool augment, Rng& rng) {
  Tensor x = data::stack_features(batch);
  std::vector<std::size_t> y = data::labels_of(batch);
  if (augment) std::tie(x, y) = augment_batch(model_, params, x, y, config_, rng);
  auto g = model_.grad_params(params, x, y, model::Mode::Train, mix_keys({seed_, kDropoutKey, dropout_counter_++}),
                              config_.optimizer.weight_decay);
  optimizer_.apply(params, g.grads);
  for (auto& [name, v] : g.running) params.at(name) = std::move(v);
}

model::Params ReserveDefense::pretrain(model::Params params) {
  if (!enabled()) return params;
  Rng rng = keyed_rng({seed_, kPretrainKey});
  std::vector<data::LabeledExample> order = reserve_.examples;
  const std::size_t b = config_.reserve_batch;
  for (std::size_t epoch = 0; epoch < config_.pretrain_epochs; ++epoch) {
    shuffle(order, rng);
    for (std::size_t s = 0; s < order.size(); s += b) {
      step(params, std::span<const data::LabeledExample>(order).subspan(s, std::min(b, order.size() - s)), false, rng);
    }
  }
  optimizer_.reset();
  return params;
}

model::Params ReserveDefense::retrain(model::Params aggregated, std::size_t round) {
  last_steps_ = 0;
  if (!enabled()) return aggregated;
  Rng rng = keyed_rng({seed_, kRetrainKey, round});
  std::vector<data::LabeledExample> order = reserve_.examples;
  const std::size_t b = config_.reserve_batch, steps = steps_per_round();
  std::size_t cursor = order.size();
  for (std::size_t i = 0; i < steps; ++i) {
    if (cursor >= order.size()) {
      shuffle(order, rng);
      cursor = 0;
    }
    const std::size_t n = std::min(b, order.size() - cursor);
    step(aggregated, std::span<const data::LabeledExample>(order).subspan(cursor, n), true, rng);
    cursor += n;
    ++last_steps_;
  }
  return aggregated;
}

}  // namespace reverb::defense
