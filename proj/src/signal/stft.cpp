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

#include "reverb/signal/stft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <numbers>
#include <string>
#include <vector>

#include "reverb/error.hpp"

namespace reverb::signal {

void SignalConfig::validate() const {
  if (!(sample_rate > 0.0)) throw ConfigError("signal.sample_rate must be positive");
  if (fft_size < 2 || (fft_size & (fft_size - 1)) != 0) {
    throw ConfigError("signal.fft_size must be a power of two >= 2, got " + std::to_string(fft_size));
  }
  if (window_length < 2 || window_length > fft_size) {
    throw ConfigError("signal.window_length must lie in [2, fft_size], got " + std::to_string(window_length));
  }
  if (hop < 1) throw ConfigError("signal.hop must be >= 1");
  if (!(bound > 0.0)) throw ConfigError("signal.bound must be positive");
}

std::size_t SignalConfig::samples_for_frames(std::size_t frames) const {
  if (frames == 0) throw ConfigError("frame count must be >= 1");
  return window_length + (frames - 1) * hop;
}

Tensor hann_window(std::size_t length) {
  if (length < 2) throw ConfigError("Hann window length must be >= 2");
  Tensor w({length});
  const double denom = static_cast<double>(length - 1);
  for (std::size_t n = 0; n < length; ++n) {
    w[n] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / denom));
  }
  // Exact zeros at both ends regardless of cos rounding.
  w[0] = 0.0;
  w[length - 1] = 0.0;
  return w;
}

std::size_t frame_count(std::size_t samples, const SignalConfig& config) {
  if (samples < config.window_length) {
    throw DataError("waveform of " + std::to_string(samples) + " samples is shorter than one window (" +
                    std::to_string(config.window_length) + ")");
  }
  return (samples - config.window_length) / config.hop + 1;
}

namespace {

// FFTW's planner is not thread-safe; execution with the new-array interface is.
fftw_plan r2c_plan(std::size_t n) {
  static std::mutex mu;
  static std::map<std::size_t, fftw_plan> plans;
  std::lock_guard lock(mu);
  auto it = plans.find(n);
  if (it != plans.end()) return it->second;
  std::vector<double> in(n);
  std::vector<std::complex<double>> out(n / 2 + 1);
  fftw_plan p = fftw_plan_dft_r2c_1d(static_cast<int>(n), in.data(), reinterpret_cast<fftw_complex*>(out.data()),
                                     FFTW_ESTIMATE | FFTW_UNALIGNED);
  if (p == nullptr) throw Error("FFTW could not create a plan of size " + std::to_string(n));
  plans.emplace(n, p);
  return p;
}

}  // namespace

Spectrogram stft(std::span<const double> waveform, const SignalConfig& config) {
  config.validate();
  const std::size_t frames = frame_count(waveform.size(), config);
  const std::size_t F = config.fft_size, L = config.window_length, bins = config.bins();
  const Tensor window = hann_window(L);
  fftw_plan plan = r2c_plan(F);

  Tensor out({bins, frames, 2});
  std::vector<double> buf(F, 0.0);
  std::vector<std::complex<double>> spec(bins);
  for (std::size_t t = 0; t < frames; ++t) {
    const double* frame = waveform.data() + t * config.hop;
    for (std::size_t n = 0; n < L; ++n) buf[n] = frame[n] * window[n];
    std::fill(buf.begin() + static_cast<std::ptrdiff_t>(L), buf.end(), 0.0);
    fftw_execute_dft_r2c(plan, buf.data(), reinterpret_cast<fftw_complex*>(spec.data()));
    for (std::size_t k = 0; k < bins; ++k) {
      out[(k * frames + t) * 2] = spec[k].real();
      out[(k * frames + t) * 2 + 1] = spec[k].imag();
    }
  }
  require_finite(out, "stft");
  return Spectrogram{std::move(out)};
}

Tensor standardize(const Tensor& x) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x.data()) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x.data()) var += (v - mean) * (v - mean);
  var /= n;
  Tensor out(x.shape(), 0.0);
  if (var < 1e-12) return out;
  const double inv = 1.0 / std::sqrt(var);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) * inv;
  return out;
}

Spectrogram normalize_clip(const Spectrogram& spec, const SignalConfig& config) {
  Tensor out = standardize(spec.data);
  for (double& v : out.data()) v = std::clamp(v, -config.bound, config.bound);
  return Spectrogram{std::move(out)};
}

Spectrogram pad_or_crop(const Spectrogram& spec, std::size_t target_frames) {
  if (target_frames < 1) throw ConfigError("target frame count must be >= 1");
  const std::size_t bins = spec.bins(), T = spec.frames();
  if (T == target_frames) return spec;
  Tensor out({bins, target_frames, 2}, 0.0);
  // src frame s maps to dst frame s - offset (crop) or s + offset (pad).
  const bool crop = T > target_frames;
  const std::size_t offset = crop ? (T - target_frames) / 2 : (target_frames - T) / 2;
  const std::size_t count = std::min(T, target_frames);
  for (std::size_t k = 0; k < bins; ++k) {
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t src = crop ? i + offset : i;
      const std::size_t dst = crop ? i : i + offset;
      out[(k * target_frames + dst) * 2] = spec.data[(k * T + src) * 2];
      out[(k * target_frames + dst) * 2 + 1] = spec.data[(k * T + src) * 2 + 1];
    }
  }
  return Spectrogram{std::move(out)};
}

}  // namespace reverb::signal
