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

// Parameter files for the contraction check.
//
//   theory.<field>=...  declared constants (L, mu, sigma_g2, zeta2, sigma_r2,
//                       eps_r, gamma_bias, rho, N, m, tau, eta, gamma_r, r, c_s, a)
//   sim.<field>=...     magnitudes actually injected into the simulated
//                       federation (default: the declared values)
//   run.rounds, run.trials, run.dim, run.initial_gap, run.seed

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "reverb/theory/contraction.hpp"

namespace reverb::experiment {

struct TheoryRun {
  theory::TheoryParams declared;
  theory::TheoryParams injected;
  std::size_t rounds = 50;
  std::size_t trials = 1000;
  std::size_t dim = 10;
  double initial_gap = 1.0;
  std::uint64_t seed = 17;

  std::map<std::string, std::string> dump() const;
};

TheoryRun parse_theory_text(std::string_view text);
TheoryRun load_theory(const std::filesystem::path& path);

theory::ContractionReport run_theory(const TheoryRun& run);

}  // namespace reverb::experiment
