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

// Synchronous federated training: client sampling, local optimization (clean
// or with poisoned inputs), data-size weighted averaging and round
// orchestration around an optional server-side reserve defense.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "reverb/attack/attacks.hpp"
#include "reverb/data/dataset.hpp"
#include "reverb/defense/reserve.hpp"
#include "reverb/model/cnn.hpp"
#include "reverb/model/optimizer.hpp"

namespace reverb::fed {

struct FedConfig {
  std::size_t num_clients = 10;
  double sample_fraction = 0.6;
  std::size_t local_steps = 10;  // optimizer steps per client per round
  std::size_t batch_size = 16;
  std::size_t rounds = 30;
  double adversarial_fraction = 0.5;
  attack::AttackSpec attack;  // applied by adversarial clients to their inputs
  model::OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  std::size_t threads = 1;  // 0 uses every hardware thread

  void validate() const;
  /// m = round(C N).
  std::size_t clients_per_round() const;
  /// |A| = ceil(rho N).
  std::size_t num_adversaries() const;
};

/// Uniform random subset of ceil(rho N) client ids, sorted.
std::vector<std::size_t> designate_adversaries(std::size_t num_clients, double rho, std::uint64_t seed);

/// Uniform m-subset of 0..N-1 without replacement, sorted.
std::vector<std::size_t> sample_clients(std::size_t num_clients, std::size_t m, Rng& rng);

/// Runs exactly config.local_steps optimizer steps from a copy of `global`
/// with fresh optimizer state. Minibatches of min(B, |shard|) are taken in
/// order from a shuffled pass and the shard is reshuffled when exhausted.
/// Adversarial shards poison each batch against the current local parameters
/// before the step. `schedule_offset` is the number of local steps already
/// taken in earlier rounds, used only by the learning-rate decay.
model::Params local_train(const model::Cnn& model, const data::ClientShard& shard, const model::Params& global,
                          const FedConfig& config, Rng& rng, std::uint64_t schedule_offset = 0);

struct ClientUpdate {
  model::Params params;
  std::size_t examples = 0;
};

/// sum_n (D_n / sum_k D_k) theta_n over every tensor, accumulated in list order.
model::Params fedavg(std::span<const ClientUpdate> updates);

struct RoundRecord {
  std::size_t round = 0;  // 1-based
  std::vector<std::size_t> selected;
  std::size_t adversarial_selected = 0;
  double beta = 0.0;  // adversarial_selected / m
  model::EvalResult aggregate;  // test metrics of the raw aggregate
  model::EvalResult broadcast;  // test metrics of the model sent out next round
  std::uint64_t aggregate_hash = 0;
  std::uint64_t broadcast_hash = 0;
};

struct FedState {
  model::Params params;
  std::size_t round = 0;  // completed rounds
};

/// Client shards with adversarial flags, the server reserve and the global test split.
struct FederatedData {
  std::vector<data::ClientShard> shards;
  data::ReserveSet reserve;
  data::Dataset test;
};

/// Holds out `test_fraction` of the data (stratified), partitions the rest,
/// extracts the reserve and flags the designated adversaries.
FederatedData prepare_data(data::Dataset all, const data::PartitionSpec& partition, double test_fraction,
                           double reserve_fraction, const FedConfig& config);

class Federation {
 public:
  /// `defense` may be null (plain FedAvg). Both the model and the defense must outlive the federation.
  Federation(const model::Cnn& model, std::vector<data::ClientShard> shards, data::Dataset test, FedConfig config,
             defense::ReserveDefense* defense = nullptr);

  const FedConfig& config() const { return config_; }
  const std::vector<data::ClientShard>& shards() const { return shards_; }

  /// Sample, train the selected clients (concurrently when threads > 1),
  /// aggregate, apply the defense and evaluate. Client streams are keyed by
  /// (seed, round, client) so results do not depend on the thread count.
  RoundRecord run_round(FedState& state);

 private:
  const model::Cnn& model_;
  std::vector<data::ClientShard> shards_;
  data::Dataset test_;
  FedConfig config_;
  defense::ReserveDefense* defense_;
};

}  // namespace reverb::fed
