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

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "reverb/error.hpp"
#include "reverb/rng.hpp"
#include "reverb/signal/stft.hpp"
#include "test_util.hpp"

using namespace reverb;
using namespace reverb::signal;

namespace {

// O(F^2) DFT of the windowed, zero-padded frame starting at `start`.
std::vector<std::complex<double>> naive_frame_dft(const std::vector<double>& x, std::size_t start,
                                                  const SignalConfig& cfg) {
  const std::size_t F = cfg.fft_size, L = cfg.window_length;
  std::vector<std::complex<double>> out(cfg.bins());
  for (std::size_t k = 0; k < cfg.bins(); ++k) {
    std::complex<double> s = 0.0;
    for (std::size_t n = 0; n < L; ++n) {
      const double w = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * double(n) / double(L - 1)));
      const double ang = -2.0 * std::numbers::pi * double(k * n % F) / double(F);
      s += x[start + n] * w * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = s;
  }
  return out;
}

SignalConfig small_config() {
  SignalConfig c;
  c.sample_rate = 8000;
  c.window_length = 48;
  c.hop = 20;
  c.fft_size = 64;
  return c;
}

}  // namespace

TEST_CASE("hann_window endpoints and closed form") {
  CHECK(hann_window(2) == Tensor::vector({0.0, 0.0}));
  const Tensor w3 = hann_window(3);
  CHECK(w3[0] == 0.0);
  CHECK(w3[1] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(w3[2] == 0.0);
  const Tensor w8 = hann_window(8);
  for (std::size_t n = 0; n < 8; ++n) {
    CHECK(std::abs(w8[n] - std::pow(std::sin(std::numbers::pi * double(n) / 7.0), 2)) < 1e-12);
  }
  CHECK_THROWS_AS(hann_window(1), ConfigError);
}

TEST_CASE("stft shapes and trivial cases") {
  SignalConfig paper;
  paper.sample_rate = 16000;
  paper.window_length = 1024;
  paper.hop = 512;
  paper.fft_size = 1024;
  CHECK(paper.bins() == 513);
  std::vector<double> zeros(1024 + 3 * 512, 0.0);
  const Spectrogram s = stft(zeros, paper);
  CHECK(s.data.shape() == Shape{513, 4, 2});
  CHECK(s.data == Tensor({513, 4, 2}, 0.0));
  CHECK(frame_count(1024 + 3 * 512 + 511, paper) == 4);
  std::vector<double> short_wave(1023, 0.0);
  CHECK_THROWS_AS(stft(short_wave, paper), DataError);

  SignalConfig bad = paper;
  bad.fft_size = 1000;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = paper;
  bad.window_length = 2048;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("stft matches a naive DFT on sinusoids and random waveforms") {
  const SignalConfig cfg = small_config();
  Rng rng(21);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 48 + uniform_index(rng, 200);
    std::vector<double> x(n);
    const double f = uniform(rng, 50.0, 3900.0);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = trial % 2 ? uniform(rng, -1.0, 1.0) : std::sin(2.0 * std::numbers::pi * f * double(i) / cfg.sample_rate);
    }
    const Spectrogram s = stft(x, cfg);
    REQUIRE(s.frames() == (n - 48) / 20 + 1);
    for (std::size_t t = 0; t < s.frames(); ++t) {
      const auto ref = naive_frame_dft(x, t * cfg.hop, cfg);
      for (std::size_t k = 0; k < cfg.bins(); ++k) {
        worst = std::max(worst, std::abs(s.data[(k * s.frames() + t) * 2] - ref[k].real()));
        worst = std::max(worst, std::abs(s.data[(k * s.frames() + t) * 2 + 1] - ref[k].imag()));
      }
    }
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("half spectrum reconstructs the windowed frame") {
  const SignalConfig cfg = small_config();
  Rng rng(4);
  std::vector<double> x(48);
  for (double& v : x) v = uniform(rng, -1.0, 1.0);
  const Spectrogram s = stft(x, cfg);
  const std::size_t F = cfg.fft_size;
  std::vector<std::complex<double>> full(F);
  for (std::size_t k = 0; k < cfg.bins(); ++k) full[k] = {s.data[k * 2], s.data[k * 2 + 1]};
  for (std::size_t k = cfg.bins(); k < F; ++k) full[k] = std::conj(full[F - k]);
  const Tensor w = hann_window(48);
  for (std::size_t n = 0; n < F; ++n) {
    std::complex<double> acc = 0.0;
    for (std::size_t k = 0; k < F; ++k) {
      const double ang = 2.0 * std::numbers::pi * double(k * n % F) / double(F);
      acc += full[k] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    const double expect = n < 48 ? x[n] * w[n] : 0.0;
    CHECK(std::abs(acc.real() / double(F) - expect) < 1e-8);
  }
}

TEST_CASE("normalize_clip") {
  SignalConfig cfg;
  cfg.bound = 3.0;
  Rng rng(8);

  // Standardized input with |x| < c is a fixed point.
  Tensor x = standardize(test::random_tensor({5, 4, 2}, rng));
  const Spectrogram same = normalize_clip(Spectrogram{x}, cfg);
  CHECK(max_abs_diff(same.data, x) < 1e-12);

  CHECK(normalize_clip(Spectrogram{Tensor({3, 2, 2}, 7.5)}, cfg).data == Tensor({3, 2, 2}, 0.0));

  // One outlier among many zeros standardizes far beyond 3 and is clipped.
  Tensor spike({50, 1, 2}, 0.0);
  spike[0] = 1.0;
  const Tensor z = standardize(spike);
  CHECK(z[0] > 9.0);
  CHECK(normalize_clip(Spectrogram{spike}, cfg).data[0] == 3.0);

  for (int trial = 0; trial < 20; ++trial) {
    const Tensor t = test::random_tensor({6, 5, 2}, rng, -50.0, 80.0);
    const Tensor pre = standardize(t);
    double mean = 0.0, var = 0.0;
    for (double v : pre.data()) mean += v;
    mean /= double(pre.size());
    for (double v : pre.data()) var += (v - mean) * (v - mean);
    CHECK(std::abs(mean) < 1e-10);
    CHECK(var / double(pre.size()) == doctest::Approx(1.0).epsilon(1e-12));
    const Spectrogram clipped = normalize_clip(Spectrogram{t}, cfg);
    for (double v : clipped.data.data()) CHECK(std::abs(v) <= 3.0);
  }
}

TEST_CASE("pad_or_crop") {
  Tensor d({1, 5, 2});
  for (std::size_t i = 0; i < 10; ++i) d[i] = double(i);
  const Spectrogram s{d};
  CHECK(pad_or_crop(s, 5).data == d);
  CHECK(pad_or_crop(s, 3).data == Tensor({1, 3, 2}, {2, 3, 4, 5, 6, 7}));

  const Spectrogram two{Tensor({1, 2, 2}, {1, 2, 3, 4})};
  CHECK(pad_or_crop(two, 4).data == Tensor({1, 4, 2}, {0, 0, 1, 2, 3, 4, 0, 0}));
  CHECK_THROWS_AS(pad_or_crop(two, 0), ConfigError);
}
