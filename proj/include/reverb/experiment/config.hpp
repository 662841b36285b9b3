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

// Flat key=value experiment configuration with dotted namespaces
// (fed.num_clients=10). Every key has a default from the selected profile and
// appears in the resolved dump written to run manifests.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "reverb/attack/attacks.hpp"
#include "reverb/data/dataset.hpp"
#include "reverb/defense/reserve.hpp"
#include "reverb/fed/federation.hpp"
#include "reverb/model/cnn.hpp"
#include "reverb/signal/stft.hpp"

namespace reverb::experiment {

enum class Profile { Desk, Paper };

Profile parse_profile(std::string_view name);
std::string_view profile_name(Profile p);

enum class Variant { FedAvg, RetrainNoPoison, RetrainFgsm, RetrainPgd, RetrainAwgn, RetrainAll };

std::string_view variant_name(Variant v);
/// FedAvg, Retrain-NoPoison, Retrain-FGSM, Retrain-PGD, Retrain-AWGN, Retrain-All (case-insensitive).
Variant parse_variant(std::string_view name);
defense::DefenseMode defense_mode(Variant v);

struct ExperimentConfig {
  Profile profile = Profile::Desk;
  std::uint64_t seed = 0;
  Variant variant = Variant::FedAvg;

  // Dataset.
  std::string data_source = "synthetic";  // synthetic | wav
  std::filesystem::path wav_dir;
  std::size_t classes = 4;
  std::size_t per_class = 300;
  std::size_t frames = 16;
  double test_fraction = 0.2;

  signal::SignalConfig signal;
  data::PartitionSpec partition;  // num_clients and seed are filled from fed/seed
  bool paper_arch = false;
  fed::FedConfig fed;             // includes the client attack and optimizer
  defense::DefenseConfig defense; // mode follows the variant; budgets and optimizer mirror the clients
  std::filesystem::path output_dir;  // empty: the caller picks one

  /// Profile defaults.
  static ExperimentConfig defaults(Profile profile);

  /// Copies the shared settings into the nested configs (partition clients and
  /// seed, fed seed, defense mode/optimizer/attack budgets) and validates.
  void resolve();
  model::ModelArch arch() const;
  /// Every key with its resolved value, in key order.
  std::map<std::string, std::string> dump() const;
  std::string dump_text() const;
};

struct KeyHelp {
  std::string key;
  std::string help;
};
/// Documentation for every accepted key.
std::vector<KeyHelp> config_keys();

/// Applies one key=value assignment; unknown keys and unparsable values throw
/// ConfigError naming the key.
void set_key(ExperimentConfig& config, std::string_view key, std::string_view value);

/// Reads `profile=` first (if present) to pick defaults, then applies every
/// other line in order. Blank lines and lines starting with '#' are ignored.
ExperimentConfig parse_config_text(std::string_view text, Profile fallback = Profile::Desk);
ExperimentConfig load_config(const std::filesystem::path& path, Profile fallback = Profile::Desk);

}  // namespace reverb::experiment
