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

#include "reverb/data/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <string>

#include "json.hpp"
#include "reverb/error.hpp"
#include "reverb/tensor_io.hpp"

namespace reverb::data {

void PartitionSpec::validate() const {
  if (num_clients < 1) throw ConfigError("partition.num_clients must be >= 1");
  if (mode == PartitionMode::Dirichlet && !(alpha > 0.0)) throw ConfigError("partition.alpha must be positive");
}

std::size_t num_classes(std::span<const LabeledExample> data) {
  std::size_t k = 0;
  for (const auto& e : data) k = std::max(k, e.label + 1);
  return k;
}

std::vector<std::size_t> class_counts(std::span<const LabeledExample> data, std::size_t classes) {
  std::vector<std::size_t> counts(classes, 0);
  for (const auto& e : data) {
    if (e.label >= classes) throw DataError("label " + std::to_string(e.label) + " out of range");
    ++counts[e.label];
  }
  return counts;
}

// ---------------------------------------------------------------------------
// Synthetic data

std::vector<double> synthetic_waveform(std::size_t label, std::size_t classes, std::size_t length,
                                       double sample_rate, Rng& rng) {
  const double base = sample_rate * static_cast<double>(label + 1) / (4.0 * static_cast<double>(classes));
  const double f0 = base * (1.0 + uniform(rng, -0.05, 0.05));
  const double amp = uniform(rng, 0.5, 1.0);
  const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double chirp_phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double duration = static_cast<double>(length) / sample_rate;
  const double nyquist = 0.5 * sample_rate;
  const double f1 = std::min(2.0 * f0, 0.95 * nyquist);

  std::vector<double> x(length);
  double power = 0.0;
  for (std::size_t n = 0; n < length; ++n) {
    const double t = static_cast<double>(n) / sample_rate;
    const double tone = std::sin(2.0 * std::numbers::pi * f0 * t + phase);
    const double sweep = std::sin(2.0 * std::numbers::pi * (f0 * t + 0.5 * (f1 - f0) * t * t / duration) + chirp_phase);
    x[n] = amp * (tone + 0.5 * sweep);
    power += x[n] * x[n];
  }
  power /= static_cast<double>(length);
  const double noise_std = std::sqrt(power / 10.0);  // 10 dB SNR
  for (double& v : x) v += noise_std * standard_normal(rng);
  return x;
}

Dataset generate_synthetic(std::size_t classes, std::size_t per_class, std::size_t waveform_length,
                           const signal::SignalConfig& config, std::uint64_t seed) {
  if (classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (per_class < 2) throw ConfigError("synthetic data needs at least 2 examples per class");
  config.validate();
  Dataset data;
  data.reserve(classes * per_class);
  for (std::size_t k = 0; k < classes; ++k) {
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::uint64_t id = k * per_class + i;
      Rng rng = keyed_rng({seed, 0x5157ULL, id});
      const auto wave = synthetic_waveform(k, classes, waveform_length, config.sample_rate, rng);
      data.push_back({id, signal::normalize_clip(signal::stft(wave, config), config), k});
    }
  }
  return data;
}

// ---------------------------------------------------------------------------
// WAV

namespace {

std::uint32_t le32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}
std::uint16_t le16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

void put32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char((v >> 24) & 0xff)};
  out.write(b, 4);
}
void put16(std::ostream& out, std::uint16_t v) {
  const char b[2] = {char(v & 0xff), char((v >> 8) & 0xff)};
  out.write(b, 2);
}

}  // namespace

WavData read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string();
  if (bytes.size() < 12 || std::string(bytes.begin(), bytes.begin() + 4) != "RIFF" ||
      std::string(bytes.begin() + 8, bytes.begin() + 12) != "WAVE") {
    throw DataError("malformed RIFF header in " + where);
  }
  bool have_fmt = false;
  WavData wav;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                         bytes.begin() + static_cast<std::ptrdiff_t>(pos + 4));
    const std::size_t size = le32(&bytes[pos + 4]);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw DataError("truncated '" + id + "' chunk in " + where);
    if (id == "fmt ") {
      if (size < 16) throw DataError("short fmt chunk in " + where);
      const std::uint16_t format = le16(&bytes[body]);
      const std::uint16_t channels = le16(&bytes[body + 2]);
      const std::uint16_t bits = le16(&bytes[body + 14]);
      if (format != 1) throw DataError("unsupported WAV format tag " + std::to_string(format) + " in " + where);
      if (channels != 1) throw DataError("unsupported channel count " + std::to_string(channels) + " in " + where);
      if (bits != 16) throw DataError("unsupported bit depth " + std::to_string(bits) + " in " + where);
      wav.sample_rate = le32(&bytes[body + 4]);
      if (wav.sample_rate <= 0.0) throw DataError("zero sample rate in " + where);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw DataError("data chunk before fmt chunk in " + where);
      wav.samples.resize(size / 2);
      for (std::size_t i = 0; i < wav.samples.size(); ++i) {
        const auto s = static_cast<std::int16_t>(le16(&bytes[body + 2 * i]));
        wav.samples[i] = static_cast<double>(s) / 32768.0;
      }
      return wav;
    }
    pos = body + size + (size & 1);
  }
  throw DataError("no data chunk in " + where);
}

void write_wav(const std::filesystem::path& path, const WavData& wav) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  const auto n = static_cast<std::uint32_t>(wav.samples.size());
  const auto rate = static_cast<std::uint32_t>(std::lround(wav.sample_rate));
  out.write("RIFF", 4);
  put32(out, 36 + 2 * n);
  out.write("WAVEfmt ", 8);
  put32(out, 16);
  put16(out, 1);
  put16(out, 1);
  put32(out, rate);
  put32(out, rate * 2);
  put16(out, 2);
  put16(out, 16);
  out.write("data", 4);
  put32(out, 2 * n);
  for (double v : wav.samples) {
    const double s = std::clamp(std::round(v * 32768.0), -32768.0, 32767.0);
    put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(s)));
  }
}

std::vector<double> resample_linear(std::span<const double> samples, double from_rate, double to_rate) {
  if (!(from_rate > 0.0) || !(to_rate > 0.0)) throw ConfigError("sample rates must be positive");
  if (samples.empty()) return {};
  if (from_rate == to_rate) return {samples.begin(), samples.end()};
  const auto out_len = static_cast<std::size_t>(
      std::max<long long>(1, std::llround(static_cast<double>(samples.size()) * to_rate / from_rate)));
  std::vector<double> out(out_len);
  const double ratio = from_rate / to_rate;
  const std::size_t last = samples.size() - 1;
  for (std::size_t i = 0; i < out_len; ++i) {
    const double pos = static_cast<double>(i) * ratio;
    const auto lo = std::min(static_cast<std::size_t>(pos), last);
    const std::size_t hi = std::min(lo + 1, last);
    const double frac = pos - static_cast<double>(lo);
    out[i] = samples[lo] + (samples[hi] - samples[lo]) * std::min(frac, 1.0);
  }
  return out;
}

std::size_t label_from_filename(const std::filesystem::path& path) {
  const std::string stem = path.stem().string();
  const std::size_t us = stem.find('_');
  const std::string prefix = stem.substr(0, us);
  std::size_t label = 0;
  const auto [end, ec] = std::from_chars(prefix.data(), prefix.data() + prefix.size(), label);
  if (prefix.empty() || ec != std::errc() || end != prefix.data() + prefix.size()) {
    throw DataError("file name '" + path.filename().string() + "' does not start with an integer label");
  }
  return label;
}

Dataset load_wav_dir(const std::filesystem::path& dir, const signal::SignalConfig& config,
                     std::size_t target_frames) {
  config.validate();
  if (!std::filesystem::is_directory(dir)) throw DataError(dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".wav") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no .wav files in " + dir.string());

  Dataset data;
  std::vector<std::size_t> frames;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const std::size_t label = label_from_filename(files[i]);
    const WavData wav = read_wav(files[i]);
    auto samples = resample_linear(wav.samples, wav.sample_rate, config.sample_rate);
    if (samples.size() < config.window_length) samples.resize(config.window_length, 0.0);
    auto spec = signal::normalize_clip(signal::stft(samples, config), config);
    frames.push_back(spec.frames());
    data.push_back({i, std::move(spec), label});
  }
  if (target_frames == 0) {
    std::vector<std::size_t> sorted = frames;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
    target_frames = sorted[sorted.size() / 2];
  }
  for (auto& e : data) e.features = signal::pad_or_crop(e.features, target_frames);
  return data;
}

// ---------------------------------------------------------------------------
// Splitting

std::pair<Dataset, Dataset> split_holdout(Dataset data, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ConfigError("holdout fraction must lie in [0, 1)");
  Rng rng = keyed_rng({seed, 0x401dULL});
  const std::size_t K = num_classes(data);
  std::vector<std::vector<std::size_t>> by_class(K);
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data[i].label].push_back(i);
  std::vector<char> held(data.size(), 0);
  for (auto& idx : by_class) {
    shuffle(idx, rng);
    const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
    for (std::size_t j = 0; j < take; ++j) held[idx[j]] = 1;
  }
  Dataset train, test;
  for (std::size_t i = 0; i < data.size(); ++i) (held[i] ? test : train).push_back(std::move(data[i]));
  return {std::move(train), std::move(test)};
}

namespace {

// Floor of each quota plus one extra unit to the largest remainders (ties to the lower index).
std::vector<std::size_t> largest_remainder(const std::vector<double>& p, std::size_t total) {
  const std::size_t n = p.size();
  std::vector<std::size_t> counts(n);
  std::vector<std::pair<double, std::size_t>> rem(n);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double quota = p[i] * static_cast<double>(total);
    counts[i] = static_cast<std::size_t>(std::floor(quota));
    assigned += counts[i];
    rem[i] = {quota - static_cast<double>(counts[i]), i};
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t j = 0; assigned < total; ++j, ++assigned) ++counts[rem[j % n].second];
  while (assigned > total) {  // only reachable through rounding of p summing slightly above 1
    for (std::size_t i = n; i-- > 0 && assigned > total;) {
      if (counts[i] > 0) --counts[i], --assigned;
    }
  }
  return counts;
}

std::vector<double> dirichlet(double alpha, std::size_t n, Rng& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  for (;;) {
    std::vector<double> p(n);
    double sum = 0.0;
    for (double& v : p) sum += (v = gamma(rng));
    if (sum > 0.0) {
      for (double& v : p) v /= sum;
      return p;
    }
  }
}

}  // namespace

std::vector<ClientShard> partition(Dataset data, const PartitionSpec& spec) {
  spec.validate();
  const std::size_t N = spec.num_clients;
  if (N > data.size()) {
    throw DataError("cannot partition " + std::to_string(data.size()) + " examples across " + std::to_string(N) +
                    " clients");
  }
  Rng rng = keyed_rng({spec.seed, 0x9a27ULL});
  std::vector<ClientShard> shards(N);
  for (std::size_t n = 0; n < N; ++n) shards[n].client_id = n;

  if (spec.mode == PartitionMode::Iid) {
    shuffle(data, rng);
    const std::size_t base = data.size() / N, extra = data.size() % N;
    std::size_t pos = 0;
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t take = base + (n < extra ? 1 : 0);
      for (std::size_t j = 0; j < take; ++j) shards[n].examples.push_back(std::move(data[pos++]));
    }
    return shards;
  }

  const std::size_t K = num_classes(data);
  std::vector<std::vector<std::size_t>> by_class(K);
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data[i].label].push_back(i);
  for (auto& idx : by_class) shuffle(idx, rng);

  // counts[k][n]: examples of class k given to client n.
  std::vector<std::vector<std::size_t>> counts(K);
  for (std::size_t k = 0; k < K; ++k) counts[k] = largest_remainder(dirichlet(spec.alpha, N, rng), by_class[k].size());
  auto client_total = [&](std::size_t n) {
    std::size_t s = 0;
    for (std::size_t k = 0; k < K; ++k) s += counts[k][n];
    return s;
  };
  auto has_empty = [&] {
    for (std::size_t n = 0; n < N; ++n)
      if (client_total(n) == 0) return true;
    return false;
  };
  std::size_t redraws = 0;
  while (has_empty()) {
    if (redraws == 100) throw DataError("Dirichlet partition left a client empty after 100 redraws");
    const std::size_t k = redraws % K;
    counts[k] = largest_remainder(dirichlet(spec.alpha, N, rng), by_class[k].size());
    ++redraws;
  }

  for (std::size_t k = 0; k < K; ++k) {
    std::size_t pos = 0;
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t j = 0; j < counts[k][n]; ++j) shards[n].examples.push_back(std::move(data[by_class[k][pos++]]));
    }
  }
  return shards;
}

std::pair<ReserveSet, std::vector<ClientShard>> extract_reserve(std::vector<ClientShard> shards, double fraction,
                                                                std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("reserve fraction must lie in (0, 1)");
  std::size_t K = 0;
  for (const auto& s : shards) K = std::max(K, num_classes(s.examples));
  // Candidates per class as (shard, position).
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> by_class(K);
  for (std::size_t s = 0; s < shards.size(); ++s) {
    for (std::size_t i = 0; i < shards[s].examples.size(); ++i) by_class[shards[s].examples[i].label].push_back({s, i});
  }
  Rng rng = keyed_rng({seed, 0x7e5eULL});
  std::vector<std::vector<char>> take(shards.size());
  for (std::size_t s = 0; s < shards.size(); ++s) take[s].assign(shards[s].examples.size(), 0);
  for (std::size_t k = 0; k < K; ++k) {
    auto& cand = by_class[k];
    if (cand.empty()) throw DataError("class " + std::to_string(k) + " is absent; cannot build a stratified reserve");
    // Slack absorbs products such as 0.05 * 20 landing one ulp above an integer.
    auto want = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(cand.size()) - 1e-9));
    want = std::clamp<std::size_t>(want, 1, cand.size());
    shuffle(cand, rng);
    for (std::size_t j = 0; j < want; ++j) take[cand[j].first][cand[j].second] = 1;
  }
  ReserveSet reserve;
  reserve.fraction = fraction;
  for (std::size_t s = 0; s < shards.size(); ++s) {
    std::vector<LabeledExample> keep;
    for (std::size_t i = 0; i < shards[s].examples.size(); ++i) {
      (take[s][i] ? reserve.examples : keep).push_back(std::move(shards[s].examples[i]));
    }
    if (keep.empty()) {
      throw DataError("reserve extraction left client " + std::to_string(shards[s].client_id) + " empty");
    }
    shards[s].examples = std::move(keep);
  }
  std::sort(reserve.examples.begin(), reserve.examples.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  return {std::move(reserve), std::move(shards)};
}

Tensor stack_features(std::span<const LabeledExample> examples) {
  if (examples.empty()) throw DataError("cannot stack an empty batch");
  const Shape& s = examples.front().features.data.shape();
  Shape shape{examples.size()};
  shape.insert(shape.end(), s.begin(), s.end());
  Tensor out(shape);
  const std::size_t per = examples.front().features.data.size();
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const Tensor& f = examples[i].features.data;
    if (f.shape() != s) throw ShapeError("batch mixes feature shapes " + to_string(s) + " and " + to_string(f.shape()));
    std::copy(f.raw(), f.raw() + per, out.raw() + i * per);
  }
  return out;
}

std::vector<std::size_t> labels_of(std::span<const LabeledExample> examples) {
  std::vector<std::size_t> y;
  y.reserve(examples.size());
  for (const auto& e : examples) y.push_back(e.label);
  return y;
}

namespace {

void dump_examples(const std::filesystem::path& dir, std::span<const LabeledExample> examples) {
  std::filesystem::create_directories(dir);
  if (!examples.empty()) save_tensors(dir / "features.bin", {{"features", stack_features(examples)}});
  std::ofstream labels(dir / "labels.txt", std::ios::trunc);
  for (const auto& e : examples) labels << e.id << ' ' << e.label << '\n';
}

}  // namespace

void dump_partition(const std::filesystem::path& dir, std::span<const ClientShard> shards, const ReserveSet& reserve,
                    const PartitionSpec& spec) {
  using nlohmann::json;
  json manifest;
  manifest["partition"] = {{"mode", spec.mode == PartitionMode::Iid ? "iid" : "dirichlet"},
                           {"alpha", spec.alpha},
                           {"num_clients", spec.num_clients},
                           {"seed", spec.seed}};
  for (const auto& s : shards) {
    char name[32];
    std::snprintf(name, sizeof name, "client_%03zu", s.client_id);
    dump_examples(dir / name, s.examples);
    json ids = json::array();
    for (const auto& e : s.examples) ids.push_back(e.id);
    manifest["clients"].push_back({{"client_id", s.client_id}, {"dir", name}, {"adversarial", s.adversarial}, {"ids", ids}});
  }
  dump_examples(dir / "reserve", reserve.examples);
  json rids = json::array();
  for (const auto& e : reserve.examples) rids.push_back(e.id);
  manifest["reserve"] = {{"fraction", reserve.fraction}, {"dir", "reserve"}, {"ids", rids}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << manifest.dump(2) << '\n';
}

}  // namespace reverb::data
