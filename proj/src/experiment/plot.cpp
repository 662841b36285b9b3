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

#include "reverb/experiment/plot.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

#include "reverb/error.hpp"
#include "reverb/experiment/runner.hpp"

namespace reverb::experiment {

namespace {

constexpr double kWidth = 720, kHeight = 440;
constexpr double kLeft = 70, kRight = 200, kTop = 40, kBottom = 60;

const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                               "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::vector<PlotSeries> collect_series(std::span<const std::filesystem::path> metrics_files) {
  if (metrics_files.empty()) throw ConfigError("plot: no metrics files given");
  std::vector<std::vector<MetricsRow>> runs;
  std::set<std::string> attacks;
  for (const auto& path : metrics_files) {
    runs.push_back(read_metrics(path));
    if (runs.back().empty()) throw DataError("plot: " + path.string() + " has no rounds");
    if (runs.back().size() != runs.front().size()) {
      throw DataError("plot: " + path.string() + " covers rounds 1.." + std::to_string(runs.back().size()) +
                      " but " + metrics_files.front().string() + " covers 1.." + std::to_string(runs.front().size()));
    }
    attacks.insert(runs.back().front().attack);
  }
  const bool mixed = attacks.size() > 1;
  std::map<std::string, PlotSeries> grouped;
  for (const auto& rows : runs) {
    std::string label = rows.front().variant;
    if (mixed) label += " / " + rows.front().attack;
    auto& s = grouped[label];
    s.label = label;
    s.accuracy.resize(rows.size(), 0.0);
    for (std::size_t i = 0; i < rows.size(); ++i) s.accuracy[i] += rows[i].test_accuracy;
    ++s.runs;
  }
  std::vector<PlotSeries> out;
  for (auto& [label, s] : grouped) {
    for (double& a : s.accuracy) a /= static_cast<double>(s.runs);
    out.push_back(std::move(s));
  }
  return out;
}

std::string render_svg(std::span<const PlotSeries> series, const std::string& title) {
  if (series.empty()) throw ConfigError("plot: no series");
  const std::size_t rounds = series.front().accuracy.size();
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  const double xspan = rounds > 1 ? static_cast<double>(rounds - 1) : 1.0;
  auto px = [&](std::size_t round) { return kLeft + pw * static_cast<double>(round - 1) / xspan; };
  auto py = [&](double acc) { return kTop + ph * (1.0 - std::clamp(acc, 0.0, 1.0)); };

  std::string s;
  s += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" + num(kHeight) +
       "\" viewBox=\"0 0 " + num(kWidth) + " " + num(kHeight) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(kLeft + pw / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" + escape(title) +
       "</text>\n";

  // Axes, ticks and grid.
  s += "<g stroke=\"#000\" stroke-width=\"1\">\n";
  s += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(kTop + ph) + "\" x2=\"" + num(kLeft + pw) + "\" y2=\"" +
       num(kTop + ph) + "\"/>\n";
  s += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(kTop) + "\" x2=\"" + num(kLeft) + "\" y2=\"" + num(kTop + ph) +
       "\"/>\n";
  s += "</g>\n";
  for (int i = 0; i <= 5; ++i) {
    const double acc = i / 5.0;
    const double y = py(acc);
    s += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(y) + "\" x2=\"" + num(kLeft + pw) + "\" y2=\"" + num(y) +
         "\" stroke=\"#ddd\"/>\n";
    s += "<text x=\"" + num(kLeft - 6) + "\" y=\"" + num(y + 4) + "\" text-anchor=\"end\">" + num(acc) + "</text>\n";
  }
  const std::size_t step = std::max<std::size_t>(1, (rounds + 9) / 10);
  for (std::size_t r = 1; r <= rounds; r += step) {
    s += "<text x=\"" + num(px(r)) + "\" y=\"" + num(kTop + ph + 18) + "\" text-anchor=\"middle\">" +
         std::to_string(r) + "</text>\n";
  }
  s += "<text x=\"" + num(kLeft + pw / 2) + "\" y=\"" + num(kHeight - 16) +
       "\" text-anchor=\"middle\">Communication round</text>\n";
  s += "<text x=\"18\" y=\"" + num(kTop + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " +
       num(kTop + ph / 2) + ")\">Test accuracy</text>\n";

  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& ser = series[i];
    if (ser.accuracy.size() != rounds) throw DataError("plot: series '" + ser.label + "' has a different round count");
    const char* color = kColors[i % std::size(kColors)];
    s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\" points=\"";
    for (std::size_t r = 1; r <= rounds; ++r) {
      if (r > 1) s += ' ';
      s += num(px(r)) + "," + num(py(ser.accuracy[r - 1]));
    }
    s += "\"/>\n";
    const double ly = kTop + 10 + 20.0 * static_cast<double>(i);
    const double lx = kLeft + pw + 16;
    s += "<line x1=\"" + num(lx) + "\" y1=\"" + num(ly) + "\" x2=\"" + num(lx + 24) + "\" y2=\"" + num(ly) +
         "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + num(lx + 30) + "\" y=\"" + num(ly + 4) + "\">" + escape(ser.label) + " (n=" +
         std::to_string(ser.runs) + ")</text>\n";
  }
  s += "</svg>\n";
  return s;
}

void emit_plot(std::span<const std::filesystem::path> metrics_files, const std::filesystem::path& output) {
  const auto series = collect_series(metrics_files);
  const std::string svg = render_svg(series);
  if (output.has_parent_path()) std::filesystem::create_directories(output.parent_path());
  std::ofstream out(output, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + output.string());
  out << svg;
}

}  // namespace reverb::experiment
