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

#include "reverb/experiment/grid.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "reverb/error.hpp"
#include "reverb/experiment/runner.hpp"

namespace reverb::experiment {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  while (!text.empty()) {
    const auto comma = text.find(',');
    const auto item = trim(text.substr(0, comma));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  return out;
}

std::uint64_t parse_u64(std::string_view key, std::string_view s) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("grid key '" + std::string(key) + "': cannot parse '" + std::string(s) + "'");
  }
  return v;
}

std::string format_alpha(double a) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, a);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string PartitionChoice::label() const {
  return mode == data::PartitionMode::Iid ? "iid" : "dirichlet-" + format_alpha(alpha);
}

PartitionChoice parse_partition_choice(std::string_view text, double default_alpha) {
  text = trim(text);
  if (text == "iid") return {data::PartitionMode::Iid, default_alpha};
  if (text == "dirichlet") return {data::PartitionMode::Dirichlet, default_alpha};
  if (text.starts_with("dirichlet:")) {
    const auto rest = text.substr(10);
    double a = 0.0;
    const auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), a);
    if (ec == std::errc() && ptr == rest.data() + rest.size() && a > 0.0) return {data::PartitionMode::Dirichlet, a};
  }
  throw ConfigError("grid.partitions: cannot use '" + std::string(text) + "' (expected iid, dirichlet or dirichlet:<alpha>)");
}

GridSpec parse_grid_text(std::string_view text, Profile fallback) {
  std::string base_text;
  std::vector<std::pair<std::string, std::string>> grid_keys;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (t.starts_with("grid.")) {
      const auto eq = t.find('=');
      if (eq == std::string_view::npos) throw ConfigError("grid line without '=': " + std::string(t));
      grid_keys.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    } else {
      base_text += line;
      base_text += '\n';
    }
  }
  GridSpec spec;
  spec.base = parse_config_text(base_text, fallback);
  bool have_variants = false, have_attacks = false, have_partitions = false, have_seeds = false;
  for (const auto& [key, value] : grid_keys) {
    if (key == "grid.variants") {
      have_variants = true;
      for (const auto& v : split_list(value)) spec.variants.push_back(parse_variant(v));
    } else if (key == "grid.attacks") {
      have_attacks = true;
      for (const auto& v : split_list(value)) spec.attacks.push_back(attack::parse_attack(v));
    } else if (key == "grid.partitions") {
      have_partitions = true;
      for (const auto& v : split_list(value)) spec.partitions.push_back(parse_partition_choice(v, spec.base.partition.alpha));
    } else if (key == "grid.seeds") {
      have_seeds = true;
      for (const auto& v : split_list(value)) {
        const auto dash = v.find('-');
        if (dash == std::string::npos) {
          spec.seeds.push_back(parse_u64(key, v));
          continue;
        }
        const auto lo = parse_u64(key, trim(std::string_view(v).substr(0, dash)));
        const auto hi = parse_u64(key, trim(std::string_view(v).substr(dash + 1)));
        if (hi < lo) throw ConfigError("grid.seeds: empty range '" + v + "'");
        for (auto s = lo; s <= hi; ++s) spec.seeds.push_back(s);
      }
    } else if (key == "grid.jobs") {
      spec.jobs = parse_u64(key, value);
    } else {
      throw ConfigError("unknown grid key '" + key + "'");
    }
  }
  if (!have_variants) spec.variants = {spec.base.variant};
  if (!have_attacks) spec.attacks = {spec.base.fed.attack.kind};
  if (!have_partitions) spec.partitions = {{spec.base.partition.mode, spec.base.partition.alpha}};
  if (!have_seeds) spec.seeds = {spec.base.seed};
  if (spec.variants.empty() || spec.attacks.empty() || spec.partitions.empty() || spec.seeds.empty()) {
    throw ConfigError("grid lists must not be empty");
  }
  if (spec.jobs == 0) spec.jobs = std::max(1u, std::thread::hardware_concurrency());
  return spec;
}

GridSpec load_grid(const std::filesystem::path& path, Profile fallback) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read grid file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_grid_text(ss.str(), fallback);
}

std::vector<GridCell> expand_grid(const GridSpec& spec, const std::filesystem::path& root) {
  std::vector<GridCell> cells;
  for (Variant v : spec.variants) {
    for (attack::AttackKind a : spec.attacks) {
      for (const auto& p : spec.partitions) {
        for (std::uint64_t seed : spec.seeds) {
          GridCell cell;
          cell.config = spec.base;
          set_key(cell.config, "variant", variant_name(v));
          cell.config.fed.attack.kind = a;
          cell.config.partition.mode = p.mode;
          cell.config.partition.alpha = p.alpha;
          cell.config.seed = seed;
          cell.dir = root / std::string(variant_name(v)) / std::string(attack::attack_name(a)) / p.label() /
                     ("seed-" + std::to_string(seed));
          cell.config.output_dir = cell.dir;
          cells.push_back(std::move(cell));
        }
      }
    }
  }
  return cells;
}

bool cell_complete(const std::filesystem::path& dir) {
  return std::filesystem::is_regular_file(dir / "manifest.json") && std::filesystem::is_regular_file(dir / "metrics.csv");
}

std::string GridReport::summary() const {
  std::string s = std::to_string(cells) + " cells: " + std::to_string(ran) + " ran, " + std::to_string(skipped) +
                  " skipped, " + std::to_string(failures.size()) + " failed";
  for (const auto& f : failures) s += "\n  FAILED " + f.dir.string() + ": " + f.message;
  return s;
}

GridReport run_grid(const GridSpec& spec, const std::filesystem::path& root, const CellCallback& on_cell) {
  const auto cells = expand_grid(spec, root);
  GridReport report;
  report.cells = cells.size();

  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cell_complete(cells[i].dir)) {
      ++report.skipped;
      if (on_cell) on_cell(cells[i], "skipped");
    } else {
      todo.push_back(i);
    }
  }

  std::vector<std::string> errors(cells.size());
  std::vector<char> failed(cells.size(), 0);
  std::atomic<std::size_t> next{0};
  std::mutex callback_mutex;
  auto worker = [&] {
    for (std::size_t k = next++; k < todo.size(); k = next++) {
      const auto& cell = cells[todo[k]];
      std::string status = "done";
      try {
        run_experiment(cell.config, cell.dir);
      } catch (const std::exception& e) {
        failed[todo[k]] = 1;
        errors[todo[k]] = e.what();
        status = std::string("failed: ") + e.what();
      }
      if (on_cell) {
        std::lock_guard lock(callback_mutex);
        on_cell(cell, status);
      }
    }
  };
  const std::size_t jobs = std::min(spec.jobs, std::max<std::size_t>(todo.size(), 1));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }

  for (std::size_t i : todo) {
    if (failed[i]) report.failures.push_back({cells[i].dir, errors[i]});
    else ++report.ran;
  }
  for (const auto& c : cells) {
    if (cell_complete(c.dir)) report.metrics.push_back(c.dir / "metrics.csv");
  }
  return report;
}

}  // namespace reverb::experiment
