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

// Accuracy-vs-round SVG charts from metrics files.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace reverb::experiment {

struct PlotSeries {
  std::string label;             // variant, plus the attack when several attacks are present
  std::vector<double> accuracy;  // mean over runs, index = round - 1
  std::size_t runs = 0;
};

/// Groups the files by variant (and attack when the inputs mix attacks) and
/// averages accuracy over seeds. Throws ConfigError for an empty input and
/// DataError when the files do not share one round range.
std::vector<PlotSeries> collect_series(std::span<const std::filesystem::path> metrics_files);

/// Self-contained SVG; numbers are printed with 6 significant digits.
std::string render_svg(std::span<const PlotSeries> series, const std::string& title = "Test accuracy per round");

/// collect_series + render_svg; nothing is written when either fails.
void emit_plot(std::span<const std::filesystem::path> metrics_files, const std::filesystem::path& output);

}  // namespace reverb::experiment
