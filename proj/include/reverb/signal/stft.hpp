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

// Waveform -> normalized real/imaginary STFT tensors.

#include <cstddef>
#include <span>

#include "reverb/tensor.hpp"

namespace reverb::signal {

struct SignalConfig {
  double sample_rate = 8000.0;
  std::size_t window_length = 256;
  std::size_t hop = 128;
  std::size_t fft_size = 256;
  double bound = 3.0;  // admissible set is [-bound, bound]

  std::size_t bins() const { return fft_size / 2 + 1; }
  /// Throws ConfigError on window > fft size, zero hop, non power-of-two fft size, non-positive bound/rate.
  void validate() const;
  /// Waveform length that yields exactly `frames` frames.
  std::size_t samples_for_frames(std::size_t frames) const;
};

/// data has shape [bins, frames, 2]; channel 0 holds the real part, channel 1 the imaginary part.
struct Spectrogram {
  Tensor data;

  std::size_t bins() const { return data.dim(0); }
  std::size_t frames() const { return data.dim(1); }
};

/// Symmetric Hann window, w[n] = 0.5 (1 - cos(2 pi n / (L - 1))).
Tensor hann_window(std::size_t length);

/// Non-centered frames: frame t covers samples [t*hop, t*hop + window_length).
/// Frame count is floor((n - window_length) / hop) + 1.
std::size_t frame_count(std::size_t samples, const SignalConfig& config);

Spectrogram stft(std::span<const double> waveform, const SignalConfig& config);

/// Zero mean, unit population variance over every element (both channels jointly).
/// A variance below 1e-12 yields all zeros.
Tensor standardize(const Tensor& x);

/// standardize() followed by element-wise clipping to [-bound, bound].
Spectrogram normalize_clip(const Spectrogram& spec, const SignalConfig& config);

/// Center-crops or symmetrically zero-pads along the frame axis. When the
/// surplus or deficit is odd, the extra frame is taken from / added at the end.
Spectrogram pad_or_crop(const Spectrogram& spec, std::size_t target_frames);

}  // namespace reverb::signal
