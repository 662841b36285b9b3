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

// Labeled spectrogram datasets: synthetic generation, WAV ingestion,
// client partitioning and the stratified server reserve.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "reverb/rng.hpp"
#include "reverb/signal/stft.hpp"

namespace reverb::data {

struct LabeledExample {
  std::uint64_t id = 0;  // stable identity assigned at creation
  signal::Spectrogram features;
  std::size_t label = 0;
};

using Dataset = std::vector<LabeledExample>;

struct ClientShard {
  std::size_t client_id = 0;
  std::vector<LabeledExample> examples;
  bool adversarial = false;

  std::size_t size() const { return examples.size(); }
};

enum class PartitionMode { Iid, Dirichlet };

struct PartitionSpec {
  PartitionMode mode = PartitionMode::Dirichlet;
  double alpha = 0.5;
  std::size_t num_clients = 10;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ReserveSet {
  std::vector<LabeledExample> examples;
  double fraction = 0.05;

  std::size_t size() const { return examples.size(); }
};

/// Number of classes, i.e. one more than the largest label.
std::size_t num_classes(std::span<const LabeledExample> data);
std::vector<std::size_t> class_counts(std::span<const LabeledExample> data, std::size_t classes);

/// Raw synthetic waveform of class `label`: a sinusoid at f_k = fs (k+1) / (4K)
/// (jittered by up to +-5%), a linear chirp sweeping f_k -> 2 f_k at half
/// amplitude, and white noise at 10 dB SNR.
std::vector<double> synthetic_waveform(std::size_t label, std::size_t classes, std::size_t length,
                                       double sample_rate, Rng& rng);

/// `per_class` examples of each of `classes` classes, ids 0..K*per_class-1 in
/// class-major order. Each is STFT'd, normalized and clipped.
Dataset generate_synthetic(std::size_t classes, std::size_t per_class, std::size_t waveform_length,
                           const signal::SignalConfig& config, std::uint64_t seed);

struct WavData {
  double sample_rate = 0.0;
  std::vector<double> samples;  // in [-1, 1)
};

/// RIFF little-endian, PCM format tag 1, 16-bit, mono. Anything else is a DataError.
WavData read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const WavData& wav);

/// Linear interpolation onto a grid of round(n * to / from) samples.
std::vector<double> resample_linear(std::span<const double> samples, double from_rate, double to_rate);

/// Integer label before the first underscore of the file stem, e.g. "7_theo_42.wav" -> 7.
std::size_t label_from_filename(const std::filesystem::path& path);

/// Every *.wav in `dir` (sorted by filename), resampled to config.sample_rate,
/// STFT'd, normalized, clipped and padded/cropped to `target_frames`
/// (0 selects the median frame count of the directory). Waveforms shorter than
/// one window are zero-padded to a single window.
Dataset load_wav_dir(const std::filesystem::path& dir, const signal::SignalConfig& config,
                     std::size_t target_frames = 0);

/// Stratified split: round(fraction * class count) examples of each class go
/// to the second element.
std::pair<Dataset, Dataset> split_holdout(Dataset data, double fraction, std::uint64_t seed);

/// IID: shuffle, equal splits with the remainder spread one per client.
/// Dirichlet: per class, proportions p ~ Dir(alpha 1_N) and largest-remainder
/// rounding. If a client ends up empty, class proportions are redrawn (cycling
/// through classes) up to 100 times before a DataError.
std::vector<ClientShard> partition(Dataset data, const PartitionSpec& spec);

/// Moves ceil(fraction * class total) examples of each class (minimum 1),
/// drawn uniformly across all shards, into the reserve. Throws DataError when a
/// client would be left empty.
std::pair<ReserveSet, std::vector<ClientShard>> extract_reserve(std::vector<ClientShard> shards, double fraction,
                                                                std::uint64_t seed);

/// Stacks features into [B, bins, frames, 2].
Tensor stack_features(std::span<const LabeledExample> examples);
std::vector<std::size_t> labels_of(std::span<const LabeledExample> examples);

/// One directory per client (features.bin + labels.txt), reserve/ likewise,
/// and a top-level manifest.json with ids, adversarial flags and the spec.
void dump_partition(const std::filesystem::path& dir, std::span<const ClientShard> shards, const ReserveSet& reserve,
                    const PartitionSpec& spec);

}  // namespace reverb::data
