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

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "reverb/data/dataset.hpp"
#include "reverb/error.hpp"
#include "reverb/tensor_io.hpp"

using namespace reverb;
using namespace reverb::data;

namespace {

// Balanced labels with placeholder features; partitioning never looks at features.
Dataset balanced(std::size_t classes, std::size_t per_class) {
  Dataset d;
  for (std::size_t k = 0; k < classes; ++k)
    for (std::size_t i = 0; i < per_class; ++i)
      d.push_back({k * per_class + i, signal::Spectrogram{Tensor({1, 1, 2}, double(k))}, k});
  return d;
}

std::multiset<std::uint64_t> ids_of(const std::vector<ClientShard>& shards) {
  std::multiset<std::uint64_t> ids;
  for (const auto& s : shards)
    for (const auto& e : s.examples) ids.insert(e.id);
  return ids;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("reverb_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

signal::SignalConfig desk_signal() { return {}; }

// Mean over clients of the largest class share within the client.
double mean_max_share(const std::vector<ClientShard>& shards, std::size_t K) {
  double acc = 0.0;
  for (const auto& s : shards) {
    const auto c = class_counts(s.examples, K);
    acc += double(*std::max_element(c.begin(), c.end())) / double(s.size());
  }
  return acc / double(shards.size());
}

}  // namespace

TEST_CASE("synthetic data is deterministic, balanced and normalized") {
  const auto cfg = desk_signal();
  const std::size_t len = cfg.samples_for_frames(16);
  const Dataset a = generate_synthetic(4, 30, len, cfg, 7);
  const Dataset b = generate_synthetic(4, 30, len, cfg, 7);
  REQUIRE(a.size() == 120);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id == b[i].id);
    CHECK(a[i].label == b[i].label);
    CHECK(a[i].features.data == b[i].features.data);
  }
  CHECK(class_counts(a, 4) == std::vector<std::size_t>{30, 30, 30, 30});
  CHECK(a[0].features.data.shape() == Shape{129, 16, 2});
  for (double v : a[5].features.data.data()) CHECK(std::abs(v) <= 3.0);
  const Dataset c = generate_synthetic(4, 30, len, cfg, 8);
  CHECK_FALSE(a[0].features.data == c[0].features.data);

  const Dataset big = generate_synthetic(4, 300, len, cfg, 1);
  CHECK(big.size() == 1200);
  CHECK(class_counts(big, 4) == std::vector<std::size_t>{300, 300, 300, 300});
}

TEST_CASE("synthetic classes peak at their base frequency") {
  const auto cfg = desk_signal();
  for (std::size_t k = 0; k < 4; ++k) {
    Rng rng(40 + k);
    const auto wave = synthetic_waveform(k, 4, cfg.samples_for_frames(16), cfg.sample_rate, rng);
    const auto spec = signal::stft(wave, cfg);
    std::size_t best = 0;
    double best_mag = -1.0;
    for (std::size_t b = 0; b < spec.bins(); ++b) {
      double mag = 0.0;
      for (std::size_t t = 0; t < spec.frames(); ++t) {
        mag += std::hypot(spec.data[(b * 16 + t) * 2], spec.data[(b * 16 + t) * 2 + 1]);
      }
      if (mag > best_mag) best_mag = mag, best = b;
    }
    const double base_bin = 8000.0 * double(k + 1) / 16.0 / (8000.0 / 256.0);
    CHECK(double(best) >= 0.95 * base_bin - 1.0);
    CHECK(double(best) <= 1.05 * base_bin + 1.0);
  }
}

TEST_CASE("WAV parsing, resampling and label naming") {
  const auto dir = scratch_dir("wav");
  WavData silence{16000.0, std::vector<double>(16000, 0.0)};
  write_wav(dir / "3_silence.wav", silence);
  const WavData back = read_wav(dir / "3_silence.wav");
  CHECK(back.sample_rate == 16000.0);
  CHECK(back.samples.size() == 16000);

  WavData tone{8000.0, {}};
  for (int i = 0; i < 8000; ++i) tone.samples.push_back(0.5 * std::sin(0.05 * i));
  write_wav(dir / "7_theo_42.wav", tone);
  const WavData t2 = read_wav(dir / "7_theo_42.wav");
  for (std::size_t i = 0; i < tone.samples.size(); ++i) CHECK(std::abs(t2.samples[i] - tone.samples[i]) <= 1.0 / 32768);
  const auto up = resample_linear(t2.samples, 8000.0, 16000.0);
  CHECK(std::abs(double(up.size()) - 16000.0) <= 1.0);
  CHECK(up[2] == doctest::Approx(t2.samples[1]));
  CHECK(up[3] == doctest::Approx(0.5 * (t2.samples[1] + t2.samples[2])));

  CHECK(label_from_filename("7_theo_42.wav") == 7);
  CHECK(label_from_filename("12.wav") == 12);
  CHECK_THROWS_AS(label_from_filename("x_1.wav"), DataError);
  CHECK_THROWS_AS(label_from_filename("_1.wav"), DataError);

  signal::SignalConfig cfg;
  cfg.sample_rate = 16000;
  const Dataset d = load_wav_dir(dir, cfg);
  REQUIRE(d.size() == 2);
  CHECK(d[0].label == 3);
  CHECK(d[1].label == 7);
  CHECK(d[0].features.data == Tensor(d[0].features.data.shape(), 0.0));
  CHECK(d[0].features.frames() == d[1].features.frames());

  // Malformed inputs.
  {
    std::ofstream(dir / "bad.wav") << "RIFX0000WAVE";
    CHECK_THROWS_AS(read_wav(dir / "bad.wav"), DataError);
  }
  {
    // Valid layout except for an 8-bit sample depth.
    static const char hdr[] =
        "RIFF\x24\0\0\0WAVEfmt \x10\0\0\0\x01\0\x01\0\x40\x1f\0\0\x80\x3e\0\0\x02\0\x08\0data\0\0\0\0";
    static_assert(sizeof(hdr) == 45);
    std::ofstream f(dir / "8bit.wav", std::ios::binary);
    f.write(hdr, 44);
  }
  CHECK_THROWS_AS(read_wav(dir / "8bit.wav"), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("IID and trivial partitions") {
  auto shards = partition(balanced(4, 300), {PartitionMode::Iid, 0.0, 10, 1});
  for (const auto& s : shards) CHECK(s.size() == 120);
  auto uneven = partition(balanced(2, 6), {PartitionMode::Iid, 0.0, 5, 1});
  std::vector<std::size_t> sizes;
  for (const auto& s : uneven) sizes.push_back(s.size());
  CHECK(sizes == std::vector<std::size_t>{3, 3, 2, 2, 2});
  auto one = partition(balanced(3, 10), {PartitionMode::Dirichlet, 0.5, 1, 4});
  REQUIRE(one.size() == 1);
  CHECK(one[0].size() == 30);
  CHECK_THROWS_AS(partition(balanced(2, 2), {PartitionMode::Iid, 0.0, 5, 1}), DataError);
  CHECK_THROWS_AS(partition(balanced(2, 2), {PartitionMode::Dirichlet, 0.0, 2, 1}), ConfigError);
}

TEST_CASE("Dirichlet with huge alpha approaches global proportions") {
  const std::size_t K = 4;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto shards = partition(balanced(K, 300), {PartitionMode::Dirichlet, 1e6, 10, seed});
    for (const auto& s : shards) {
      const auto c = class_counts(s.examples, K);
      for (std::size_t k = 0; k < K; ++k) CHECK(std::abs(double(c[k]) / double(s.size()) - 0.25) <= 0.05);
    }
  }
}

TEST_CASE("partition and reserve invariants across alpha") {
  const std::size_t K = 4;
  const Dataset data = balanced(K, 240);
  std::multiset<std::uint64_t> all;
  for (const auto& e : data) all.insert(e.id);
  std::map<double, double> share;
  for (double alpha : {0.1, 0.5, 10.0}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto shards = partition(data, {PartitionMode::Dirichlet, alpha, 10, seed});
      CHECK(ids_of(shards) == all);
      for (const auto& s : shards) CHECK(s.size() >= 1);
      share[alpha] += mean_max_share(shards, K) / 20.0;

      // Redraw with a shifted seed when reserve extraction empties a client.
      for (std::uint64_t attempt = 0;; ++attempt) {
        try {
          const auto parts = partition(data, {PartitionMode::Dirichlet, alpha, 10, seed + 1000 * attempt});
          auto [reserve, rest] = extract_reserve(parts, 0.05, seed);
          std::multiset<std::uint64_t> ids = ids_of(rest);
          for (const auto& e : reserve.examples) {
            CHECK(ids.count(e.id) == 0);
            ids.insert(e.id);
          }
          CHECK(ids == all);
          CHECK(class_counts(reserve.examples, K) == std::vector<std::size_t>(K, 12));
          break;
        } catch (const DataError&) {
          REQUIRE(attempt < 20);
        }
      }
    }
  }
  CHECK(share[0.1] > share[0.5]);
  CHECK(share[0.5] > share[10.0]);
}

TEST_CASE("reserve extraction counts") {
  // 200 examples of class 3 -> exactly 10 reserved; rare class keeps a minimum of one.
  Dataset d = balanced(4, 200);
  d.push_back({9999, signal::Spectrogram{Tensor({1, 1, 2})}, 4});
  const auto shards = partition(d, {PartitionMode::Iid, 0.0, 4, 2});
  auto [reserve, rest] = extract_reserve(shards, 0.05, 3);
  const auto c = class_counts(reserve.examples, 5);
  CHECK(c[3] == 10);
  CHECK(c[4] == 1);
  std::size_t total = reserve.size();
  for (const auto& s : rest) total += s.size();
  CHECK(total == d.size());

  // A client holding only reserved examples is an error.
  std::vector<ClientShard> tiny(2);
  tiny[0].examples = {d[0]};
  tiny[1].examples = {d[1], d[2]};
  CHECK_THROWS_AS(extract_reserve(tiny, 0.5, 1), DataError);
}

TEST_CASE("stratified holdout and determinism") {
  auto [train, test] = split_holdout(balanced(4, 50), 0.2, 5);
  CHECK(class_counts(test, 4) == std::vector<std::size_t>{10, 10, 10, 10});
  CHECK(train.size() == 160);
  auto [train2, test2] = split_holdout(balanced(4, 50), 0.2, 5);
  for (std::size_t i = 0; i < test.size(); ++i) CHECK(test[i].id == test2[i].id);
  const auto p1 = partition(balanced(4, 50), {PartitionMode::Dirichlet, 0.5, 5, 9});
  const auto p2 = partition(balanced(4, 50), {PartitionMode::Dirichlet, 0.5, 5, 9});
  for (std::size_t n = 0; n < 5; ++n) {
    REQUIRE(p1[n].size() == p2[n].size());
    for (std::size_t i = 0; i < p1[n].size(); ++i) CHECK(p1[n].examples[i].id == p2[n].examples[i].id);
  }
}

TEST_CASE("tensor files and partition dumps round-trip") {
  const auto dir = scratch_dir("dump");
  NamedTensors t{{"a", Tensor({2, 3}, {1, 2, 3, 4, 5, 6.5})}, {"s", Tensor::scalar(-1e-300)}};
  save_tensors(dir / "t.bin", t);
  CHECK(load_tensors(dir / "t.bin") == t);

  auto shards = partition(balanced(2, 20), {PartitionMode::Iid, 0.0, 3, 1});
  auto [reserve, rest] = extract_reserve(shards, 0.1, 1);
  dump_partition(dir / "p", rest, reserve, {PartitionMode::Iid, 0.0, 3, 1});
  CHECK(std::filesystem::exists(dir / "p" / "manifest.json"));
  const auto f = load_tensors(dir / "p" / "client_000" / "features.bin").at("features");
  CHECK(f.dim(0) == rest[0].size());
  std::filesystem::remove_all(dir);
}
