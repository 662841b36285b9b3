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

// Single training runs and the on-disk metrics format.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "reverb/experiment/config.hpp"
#include "reverb/fed/federation.hpp"

namespace reverb::experiment {

std::string_view software_version();

struct MetricsRow {
  std::size_t round = 0;
  std::string variant;
  std::string attack;
  std::uint64_t seed = 0;
  double test_accuracy = 0.0;
  double test_loss = 0.0;
  double beta_t = 0.0;
};

inline constexpr std::string_view kMetricsHeader = "round,variant,attack,seed,test_accuracy,test_loss,beta_t";

/// Shortest round-trip decimal form.
std::string format_number(double v);
/// One CSV line without the trailing newline.
std::string format_row(const MetricsRow& row);
/// Parses a metrics file; throws DataError on a wrong header, malformed rows
/// or rounds that are not contiguous from 1.
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);

/// Synthetic tones or a WAV directory, as selected by the config.
data::Dataset load_dataset(const ExperimentConfig& config);
/// Resolves the config (for WAV input the class and frame counts are taken
/// from the files first), then loads, splits, partitions and extracts the reserve.
fed::FederatedData prepare(ExperimentConfig& config);

struct RunResult {
  std::filesystem::path metrics;
  std::filesystem::path manifest;
  std::vector<MetricsRow> rows;
};

using Progress = std::function<void(const fed::RoundRecord&)>;

/// Resolves the config, pretrains (when the variant has a defense), runs every
/// round and writes <out_dir>/metrics.csv one row per round. manifest.json is
/// written last (resolved config, seed, version, timestamp, wall time), so its
/// presence marks a finished run. Errors raised inside a round are rethrown
/// with the round number prepended.
RunResult run_experiment(ExperimentConfig config, const std::filesystem::path& out_dir, const Progress& progress = {});

}  // namespace reverb::experiment
