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

// Cartesian experiment grids (variants x attacks x partitions x seeds) with
// resumable per-cell run directories.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "reverb/experiment/config.hpp"

namespace reverb::experiment {

struct PartitionChoice {
  data::PartitionMode mode = data::PartitionMode::Dirichlet;
  double alpha = 0.5;

  /// "iid" or "dirichlet-<alpha>"; used as a directory name.
  std::string label() const;
};

/// "iid", "dirichlet" (alpha from the base config) or "dirichlet:<alpha>".
PartitionChoice parse_partition_choice(std::string_view text, double default_alpha);

struct GridSpec {
  ExperimentConfig base;
  std::vector<Variant> variants;
  std::vector<attack::AttackKind> attacks;
  std::vector<PartitionChoice> partitions;
  std::vector<std::uint64_t> seeds;
  std::size_t jobs = 1;  // cells run concurrently
};

/// grid.variants, grid.attacks, grid.partitions (comma lists), grid.seeds
/// (comma list with a-b ranges) and grid.jobs; every other line is a base
/// config key. Unset grid lists default to the base config's single value.
GridSpec parse_grid_text(std::string_view text, Profile fallback = Profile::Desk);
GridSpec load_grid(const std::filesystem::path& path, Profile fallback = Profile::Desk);

struct GridCell {
  ExperimentConfig config;
  std::filesystem::path dir;  // <root>/<variant>/<attack>/<partition>/seed-<n>
};

std::vector<GridCell> expand_grid(const GridSpec& spec, const std::filesystem::path& root);

/// A cell counts as complete when both manifest.json and metrics.csv exist.
bool cell_complete(const std::filesystem::path& dir);

struct CellFailure {
  std::filesystem::path dir;
  std::string message;
};

struct GridReport {
  std::size_t cells = 0;
  std::size_t ran = 0;
  std::size_t skipped = 0;
  std::vector<CellFailure> failures;
  std::vector<std::filesystem::path> metrics;  // every complete cell, in grid order

  bool ok() const { return failures.empty(); }
  std::string summary() const;
};

using CellCallback = std::function<void(const GridCell&, const std::string& status)>;

/// Runs every incomplete cell; failures are collected rather than aborting the grid.
GridReport run_grid(const GridSpec& spec, const std::filesystem::path& root, const CellCallback& on_cell = {});

}  // namespace reverb::experiment
