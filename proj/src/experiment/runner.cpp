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

#include "reverb/experiment/runner.hpp"

#include <charconv>
#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "reverb/defense/reserve.hpp"
#include "reverb/error.hpp"

#ifndef REVERB_VERSION
#define REVERB_VERSION "0.0.0"
#endif

namespace reverb::experiment {

namespace {

constexpr std::uint64_t kDataKey = 0xda7a;
constexpr std::uint64_t kInitKey = 0x1417;
constexpr std::uint64_t kDefenseKey = 0xdef0;

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <class T>
T parse_field(const std::string& s, const std::filesystem::path& path, std::size_t line) {
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw DataError(path.string() + ":" + std::to_string(line) + ": cannot parse '" + s + "'");
  }
  return v;
}

// Same exception type, message prefixed with the round.
[[noreturn]] void rethrow_in_round(std::size_t round) {
  const std::string prefix = "round " + std::to_string(round) + ": ";
  try {
    throw;
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const DataError& e) {
    throw DataError(prefix + e.what());
  } catch (const ShapeError& e) {
    throw ShapeError(prefix + e.what());
  } catch (const NumericError& e) {
    throw NumericError(prefix + e.what());
  } catch (const std::exception& e) {
    throw Error(prefix + e.what());
  }
}

}  // namespace

std::string_view software_version() { return REVERB_VERSION; }

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string format_row(const MetricsRow& row) {
  std::string s = std::to_string(row.round);
  s += ',' + row.variant + ',' + row.attack + ',' + std::to_string(row.seed);
  s += ',' + format_number(row.test_accuracy);
  s += ',' + format_number(row.test_loss);
  s += ',' + format_number(row.beta_t);
  return s;
}

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read metrics file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw DataError(path.string() + ": missing or unexpected metrics header");
  }
  std::vector<MetricsRow> rows;
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 7) throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 7 fields");
    MetricsRow r;
    r.round = parse_field<std::size_t>(f[0], path, lineno);
    r.variant = f[1];
    r.attack = f[2];
    r.seed = parse_field<std::uint64_t>(f[3], path, lineno);
    r.test_accuracy = parse_field<double>(f[4], path, lineno);
    r.test_loss = parse_field<double>(f[5], path, lineno);
    r.beta_t = parse_field<double>(f[6], path, lineno);
    if (r.round != rows.size() + 1) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": rounds must be contiguous from 1");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

data::Dataset load_dataset(const ExperimentConfig& config) {
  if (config.data_source == "wav") return data::load_wav_dir(config.wav_dir, config.signal, config.frames);
  return data::generate_synthetic(config.classes, config.per_class, config.signal.samples_for_frames(config.frames),
                                  config.signal, mix_keys({config.seed, kDataKey}));
}

fed::FederatedData prepare(ExperimentConfig& config) {
  data::Dataset all;
  if (config.data_source == "wav") {
    // Class count and frame count come from the files.
    all = load_dataset(config);
    if (all.empty()) throw DataError("no WAV files in " + config.wav_dir.string());
    config.classes = data::num_classes(all);
    config.frames = all.front().features.frames();
    config.resolve();
  } else {
    config.resolve();
    all = load_dataset(config);
  }
  return fed::prepare_data(std::move(all), config.partition, config.test_fraction, config.defense.reserve_fraction,
                           config.fed);
}

RunResult run_experiment(ExperimentConfig config, const std::filesystem::path& out_dir, const Progress& progress) {
  const auto started = std::chrono::steady_clock::now();
  config.output_dir = out_dir;
  auto fd = prepare(config);

  std::filesystem::create_directories(out_dir);
  RunResult result;
  result.metrics = out_dir / "metrics.csv";
  result.manifest = out_dir / "manifest.json";
  std::filesystem::remove(result.manifest);

  const model::Cnn model(config.arch());
  defense::ReserveDefense defense(model, std::move(fd.reserve), config.defense, mix_keys({config.seed, kDefenseKey}));
  fed::Federation federation(model, std::move(fd.shards), std::move(fd.test), config.fed,
                             defense.enabled() ? &defense : nullptr);

  fed::FedState state;
  state.params = defense.pretrain(model::init_params(model.arch(), mix_keys({config.seed, kInitKey})));

  std::ofstream out(result.metrics, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + result.metrics.string());
  out << kMetricsHeader << '\n';
  out.flush();

  const std::string variant(variant_name(config.variant));
  const std::string attack(attack::attack_name(config.fed.attack.kind));
  for (std::size_t t = 0; t < config.fed.rounds; ++t) {
    fed::RoundRecord rec;
    try {
      rec = federation.run_round(state);
    } catch (...) {
      rethrow_in_round(t + 1);
    }
    MetricsRow row{rec.round, variant, attack, config.seed, rec.broadcast.accuracy, rec.broadcast.loss, rec.beta};
    out << format_row(row) << '\n';
    out.flush();
    result.rows.push_back(std::move(row));
    if (progress) progress(rec);
  }
  out.close();
  if (!out) throw Error("failed writing " + result.metrics.string());

  nlohmann::ordered_json manifest;
  manifest["version"] = std::string(software_version());
  manifest["seed"] = config.seed;
  manifest["config"] = config.dump();
  manifest["timestamp"] = utc_timestamp();
  manifest["elapsed_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  const auto tmp = out_dir / "manifest.json.tmp";
  {
    std::ofstream m(tmp, std::ios::binary | std::ios::trunc);
    m << manifest.dump(2) << '\n';
    if (!m) throw Error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, result.manifest);
  return result;
}

}  // namespace reverb::experiment
