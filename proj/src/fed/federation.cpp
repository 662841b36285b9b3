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

#include "reverb/fed/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>

#include "reverb/error.hpp"
#include "reverb/kernels/kernels.hpp"

namespace reverb::fed {

namespace {

constexpr std::uint64_t kAdversaryKey = 0xad5e;  // stream tags
constexpr std::uint64_t kSampleKey = 0x5a3b;
constexpr std::uint64_t kClientKey = 0xc11e;
constexpr std::uint64_t kHoldoutKey = 0x7e57;
constexpr std::uint64_t kReserveKey = 0x4e5e;

}  // namespace

void FedConfig::validate() const {
  if (num_clients < 1) throw ConfigError("fed.num_clients must be >= 1");
  if (!(sample_fraction > 0.0 && sample_fraction <= 1.0)) throw ConfigError("fed.sample_fraction must lie in (0, 1]");
  if (clients_per_round() < 1) throw ConfigError("fed.sample_fraction * fed.num_clients rounds to zero clients");
  if (batch_size < 1) throw ConfigError("fed.batch_size must be >= 1");
  if (!(adversarial_fraction >= 0.0 && adversarial_fraction <= 1.0)) {
    throw ConfigError("fed.adversarial_fraction must lie in [0, 1]");
  }
  attack.validate();
  optimizer.validate();
}

std::size_t FedConfig::clients_per_round() const {
  const auto m = static_cast<std::size_t>(std::llround(sample_fraction * static_cast<double>(num_clients)));
  return std::min(m, num_clients);
}

std::size_t FedConfig::num_adversaries() const {
  return static_cast<std::size_t>(std::ceil(adversarial_fraction * static_cast<double>(num_clients) - 1e-9));
}

std::vector<std::size_t> designate_adversaries(std::size_t num_clients, double rho, std::uint64_t seed) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("adversarial fraction must lie in [0, 1]");
  const auto count = static_cast<std::size_t>(std::ceil(rho * static_cast<double>(num_clients) - 1e-9));
  std::vector<std::size_t> ids(num_clients);
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng = keyed_rng({seed, kAdversaryKey});
  shuffle(ids, rng);
  ids.resize(count);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<std::size_t> sample_clients(std::size_t num_clients, std::size_t m, Rng& rng) {
  if (m < 1 || m > num_clients) throw ConfigError("sample size must lie in [1, num_clients]");
  // Partial Fisher-Yates over the first m positions.
  std::vector<std::size_t> ids(num_clients);
  std::iota(ids.begin(), ids.end(), 0);
  for (std::size_t i = 0; i < m; ++i) std::swap(ids[i], ids[i + uniform_index(rng, num_clients - i)]);
  ids.resize(m);
  std::sort(ids.begin(), ids.end());
  return ids;
}

model::Params local_train(const model::Cnn& model, const data::ClientShard& shard, const model::Params& global,
                          const FedConfig& config, Rng& rng, std::uint64_t schedule_offset) {
  model::Params params = global;
  if (config.local_steps == 0) return params;
  if (shard.examples.empty()) throw DataError("client " + std::to_string(shard.client_id) + " has no data");
  model::Optimizer opt(config.optimizer);
  opt.set_schedule_offset(schedule_offset);
  const bool poison = shard.adversarial && config.attack.kind != attack::AttackKind::None;
  std::vector<std::size_t> order(shard.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t b = std::min(config.batch_size, shard.size());
  std::size_t cursor = order.size();
  std::vector<data::LabeledExample> batch;
  for (std::size_t step = 0; step < config.local_steps; ++step) {
    if (cursor + b > order.size()) {
      shuffle(order, rng);
      cursor = 0;
    }
    batch.clear();
    for (std::size_t i = 0; i < b; ++i) batch.push_back(shard.examples[order[cursor + i]]);
    cursor += b;
    Tensor x = data::stack_features(batch);
    const auto y = data::labels_of(batch);
    if (poison) x = attack::poison_batch(model, params, x, y, config.attack, rng);
    auto g = model.grad_params(params, x, y, model::Mode::Train, rng(), config.optimizer.weight_decay);
    opt.apply(params, g.grads);
    for (auto& [name, v] : g.running) params.at(name) = std::move(v);
  }
  return params;
}

model::Params fedavg(std::span<const ClientUpdate> updates) {
  if (updates.empty()) throw ConfigError("fedavg needs at least one update");
  double total = 0.0;
  for (const auto& u : updates) {
    model::check_compatible(updates.front().params, u.params);
    total += static_cast<double>(u.examples);
  }
  if (total <= 0.0) throw DataError("fedavg: total client data size is zero");
  const auto& kt = kernels::active();
  model::Params out;
  for (const auto& [name, t] : updates.front().params) {
    Tensor acc(t.shape(), 0.0);
    for (const auto& u : updates) {
      kt.axpy(acc.size(), static_cast<double>(u.examples) / total, u.params.at(name).raw(), acc.raw());
    }
    out.emplace(name, std::move(acc));
  }
  return out;
}

FederatedData prepare_data(data::Dataset all, const data::PartitionSpec& partition, double test_fraction,
                           double reserve_fraction, const FedConfig& config) {
  config.validate();
  if (partition.num_clients != config.num_clients) {
    throw ConfigError("partition.num_clients must equal fed.num_clients");
  }
  FederatedData out;
  data::Dataset train;
  std::tie(train, out.test) = data::split_holdout(std::move(all), test_fraction, mix_keys({config.seed, kHoldoutKey}));
  auto shards = data::partition(std::move(train), partition);
  std::tie(out.reserve, out.shards) =
      data::extract_reserve(std::move(shards), reserve_fraction, mix_keys({config.seed, kReserveKey}));
  for (std::size_t id : designate_adversaries(config.num_clients, config.adversarial_fraction, config.seed)) {
    out.shards[id].adversarial = true;
  }
  return out;
}

Federation::Federation(const model::Cnn& model, std::vector<data::ClientShard> shards, data::Dataset test,
                       FedConfig config, defense::ReserveDefense* defense)
    : model_(model), shards_(std::move(shards)), test_(std::move(test)), config_(std::move(config)), defense_(defense) {
  config_.validate();
  if (shards_.size() != config_.num_clients) {
    throw ConfigError("expected " + std::to_string(config_.num_clients) + " client shards, got " +
                      std::to_string(shards_.size()));
  }
  for (const auto& s : shards_) {
    if (s.examples.empty()) throw DataError("client " + std::to_string(s.client_id) + " has no data");
  }
  if (test_.empty()) throw DataError("empty test split");
}

RoundRecord Federation::run_round(FedState& state) {
  RoundRecord rec;
  rec.round = state.round + 1;
  const std::size_t m = config_.clients_per_round();
  Rng sampler = keyed_rng({config_.seed, kSampleKey, rec.round});
  rec.selected = sample_clients(config_.num_clients, m, sampler);
  for (std::size_t id : rec.selected) rec.adversarial_selected += shards_[id].adversarial ? 1 : 0;
  rec.beta = static_cast<double>(rec.adversarial_selected) / static_cast<double>(m);

  std::vector<ClientUpdate> updates(m);
  const std::uint64_t offset = static_cast<std::uint64_t>(state.round) * config_.local_steps;
  auto train_one = [&](std::size_t i) {
    const auto& shard = shards_[rec.selected[i]];
    Rng rng = keyed_rng({config_.seed, rec.round, shard.client_id, kClientKey});
    updates[i] = {local_train(model_, shard, state.params, config_, rng, offset), shard.size()};
  };
  std::size_t threads = config_.threads == 0 ? std::thread::hardware_concurrency() : config_.threads;
  threads = std::clamp<std::size_t>(threads, 1, m);
  if (threads == 1) {
    for (std::size_t i = 0; i < m; ++i) train_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&] {
          for (std::size_t i; (i = next.fetch_add(1)) < m;) {
            try {
              train_one(i);
            } catch (...) {
              std::lock_guard lock(failure_mutex);
              if (!failure) failure = std::current_exception();
            }
          }
        });
      }
    }
    if (failure) std::rethrow_exception(failure);
  }

  model::Params aggregate = fedavg(updates);
  rec.aggregate_hash = model::fingerprint(aggregate);
  rec.aggregate = model::evaluate(model_, aggregate, test_);
  if (defense_ != nullptr && defense_->enabled()) {
    state.params = defense_->retrain(std::move(aggregate), rec.round);
    rec.broadcast = model::evaluate(model_, state.params, test_);
    rec.broadcast_hash = model::fingerprint(state.params);
  } else {
    state.params = std::move(aggregate);
    rec.broadcast = rec.aggregate;
    rec.broadcast_hash = rec.aggregate_hash;
  }
  state.round = rec.round;
  return rec;
}

}  // namespace reverb::fed
