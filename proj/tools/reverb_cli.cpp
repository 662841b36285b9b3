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

// reverb: partitioning, federated training runs, grids, plots and the
// contraction check from the command line.
//
// Exit codes: 0 success, 1 configuration error, 2 runtime error,
// 3 contraction bound violated.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "reverb/error.hpp"
#include "reverb/experiment/config.hpp"
#include "reverb/experiment/grid.hpp"
#include "reverb/experiment/plot.hpp"
#include "reverb/experiment/runner.hpp"
#include "reverb/experiment/theory_run.hpp"
#include "reverb/runtime.hpp"

namespace fs = std::filesystem;
using namespace reverb;
using namespace reverb::experiment;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitBound = 3;

struct CommonFlags {
  std::string config;
  std::string out;
  std::string profile;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::vector<std::string> overrides;
};

// Relative paths land under $REVERB_OUTPUT_ROOT when it is set.
fs::path output_path(const fs::path& p) {
  const char* root = std::getenv("REVERB_OUTPUT_ROOT");
  if (root == nullptr || *root == '\0' || p.is_absolute()) return p;
  return fs::path(root) / p;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// File contents first, then --profile, --seed and --set in that order, so the
// command line wins.
std::string config_text(const CommonFlags& f) {
  std::string text = f.config.empty() ? std::string() : read_file(f.config);
  text += '\n';
  if (!f.profile.empty()) text += "profile=" + f.profile + '\n';
  if (f.seed_set) text += "seed=" + std::to_string(f.seed) + '\n';
  for (const auto& kv : f.overrides) {
    if (kv.find('=') == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    text += kv + '\n';
  }
  return text;
}

void add_common(CLI::App* cmd, CommonFlags& f, const std::string& config_help) {
  cmd->add_option("--config", f.config, config_help)->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out, "output location (relative paths go under $REVERB_OUTPUT_ROOT)");
  cmd->add_option("--profile", f.profile, "default profile")->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option_function<std::uint64_t>(
      "--seed", [&f](const std::uint64_t& s) { f.seed = s, f.seed_set = true; }, "master seed");
}

std::string keys_help() {
  std::string s = "\nConfig keys (key=value, one per line, '#' starts a comment):\n";
  for (const auto& k : config_keys()) s += "  " + k.key + std::string(k.key.size() < 28 ? 28 - k.key.size() : 1, ' ') + k.help + "\n";
  s += "\nGrid files add grid.variants, grid.attacks, grid.partitions (iid | dirichlet | dirichlet:<alpha>),\n"
       "grid.seeds (list with a-b ranges) and grid.jobs.\n";
  return s;
}

fs::path default_run_dir(const ExperimentConfig& c) {
  if (!c.output_dir.empty()) return c.output_dir;
  return fs::path("runs") / std::string(variant_name(c.variant)) / std::string(attack::attack_name(c.fed.attack.kind)) /
         ("seed-" + std::to_string(c.seed));
}

int cmd_partition(const CommonFlags& f) {
  auto config = parse_config_text(config_text(f));
  const fs::path out = output_path(f.out.empty() ? fs::path("partition") : fs::path(f.out));
  auto fd = prepare(config);
  data::dump_partition(out, fd.shards, fd.reserve, config.partition);
  std::size_t total = fd.reserve.size() + fd.test.size();
  for (const auto& s : fd.shards) total += s.size();
  std::printf("partition written to %s (%zu clients, reserve %zu, test %zu, %zu examples)\n", out.c_str(),
              fd.shards.size(), fd.reserve.size(), fd.test.size(), total);
  return 0;
}

int cmd_train(const CommonFlags& f, bool quiet) {
  auto config = parse_config_text(config_text(f));
  const fs::path out = output_path(f.out.empty() ? default_run_dir(config) : fs::path(f.out));
  const auto result = run_experiment(config, out, [&](const fed::RoundRecord& r) {
    if (!quiet) {
      std::fprintf(stderr, "round %zu  beta %.3f  aggregate acc %.4f  broadcast acc %.4f loss %.4f\n", r.round,
                   r.beta, r.aggregate.accuracy, r.broadcast.accuracy, r.broadcast.loss);
    }
  });
  std::printf("%s\n", result.metrics.c_str());
  return 0;
}

int cmd_grid(const CommonFlags& f) {
  if (f.config.empty()) throw ConfigError("grid needs --config <grid file>");
  auto spec = parse_grid_text(config_text(f));
  const fs::path root = output_path(f.out.empty() ? fs::path("grid") : fs::path(f.out));
  const auto report = run_grid(spec, root, [](const GridCell& cell, const std::string& status) {
    std::fprintf(stderr, "%s: %s\n", cell.dir.c_str(), status.c_str());
  });
  std::printf("%s\n", report.summary().c_str());
  return report.ok() ? 0 : kExitRuntime;
}

int cmd_plot(const std::vector<std::string>& inputs, const std::string& out_arg) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::recursive_directory_iterator(p)) {
        if (e.is_regular_file() && e.path().filename() == "metrics.csv") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.push_back(p);
    }
  }
  const fs::path out = output_path(out_arg.empty() ? fs::path("accuracy.svg") : fs::path(out_arg));
  emit_plot(files, out);
  std::printf("%s\n", out.c_str());
  return 0;
}

int cmd_theory(const std::string& params, const std::string& out_arg) {
  const TheoryRun run = params.empty() ? parse_theory_text("") : load_theory(params);
  const auto report = run_theory(run);
  const fs::path stem = output_path(out_arg.empty() ? fs::path("theory/report") : fs::path(out_arg));
  report.write(stem);
  std::printf("%s", report.table().c_str());
  std::printf("report: %s.txt, %s.csv\n", stem.c_str(), stem.c_str());
  return report.passed() ? 0 : kExitBound;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Federated training with server-side reserve retraining under client poisoning"};
  app.require_subcommand(1);
  app.footer(keys_help());
  app.set_version_flag("--version", std::string(software_version()));

  CommonFlags part_flags, train_flags, grid_flags;
  bool quiet = false;
  auto* part = app.add_subcommand("partition", "build the test split, client shards and reserve and dump them");
  add_common(part, part_flags, "experiment config file");
  part->add_option("--set", part_flags.overrides, "key=value override (repeatable)");

  auto* train = app.add_subcommand("train", "run one federated experiment; writes metrics.csv and manifest.json");
  add_common(train, train_flags, "experiment config file");
  train->add_option("--set", train_flags.overrides, "key=value override (repeatable)");
  train->add_flag("--quiet", quiet, "no per-round progress on stderr");

  auto* grid = app.add_subcommand("grid", "run variants x attacks x partitions x seeds; completed cells are skipped");
  add_common(grid, grid_flags, "grid file (base config keys plus grid.* keys)");
  grid->add_option("--set", grid_flags.overrides, "base key=value override (repeatable)");

  std::vector<std::string> plot_inputs;
  std::string plot_out;
  auto* plot = app.add_subcommand("plot", "SVG of mean test accuracy per round, one line per variant");
  plot->add_option("inputs", plot_inputs, "metrics.csv files or directories searched recursively")->required();
  plot->add_option("--out", plot_out, "SVG path");

  std::string theory_params, theory_out;
  auto* theory = app.add_subcommand("theory-verify", "Monte Carlo check of the round-wise contraction bound");
  theory->add_option("--config", theory_params, "params file (theory.*, sim.*, run.* keys)")->check(CLI::ExistingFile);
  theory->add_option("--out", theory_out, "report stem; writes <stem>.txt and <stem>.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*part) return cmd_partition(part_flags);
    if (*train) return cmd_train(train_flags, quiet);
    if (*grid) return cmd_grid(grid_flags);
    if (*plot) return cmd_plot(plot_inputs, plot_out);
    if (*theory) return cmd_theory(theory_params, theory_out);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitRuntime;
}
