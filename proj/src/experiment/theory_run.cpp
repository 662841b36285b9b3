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

#include "reverb/experiment/theory_run.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <vector>

#include "reverb/error.hpp"

namespace reverb::experiment {

namespace {

using theory::TheoryParams;

struct DoubleKey {
  const char* name;
  double TheoryParams::*member;
};
struct SizeKey {
  const char* name;
  std::size_t TheoryParams::*member;
};

constexpr DoubleKey kDoubles[] = {
    {"L", &TheoryParams::L},           {"mu", &TheoryParams::mu},
    {"sigma_g2", &TheoryParams::sigma_g2}, {"zeta2", &TheoryParams::zeta2},
    {"sigma_r2", &TheoryParams::sigma_r2}, {"eps_r", &TheoryParams::eps_r},
    {"gamma_bias", &TheoryParams::gamma_bias}, {"rho", &TheoryParams::rho},
    {"eta", &TheoryParams::eta},       {"gamma_r", &TheoryParams::gamma_r},
    {"c_s", &TheoryParams::c_s},       {"a", &TheoryParams::a},
};
constexpr SizeKey kSizes[] = {
    {"N", &TheoryParams::N}, {"m", &TheoryParams::m}, {"tau", &TheoryParams::tau}, {"r", &TheoryParams::r}};

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

template <class T>
T parse(std::string_view key, std::string_view v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("theory key '" + std::string(key) + "': cannot parse '" + std::string(v) + "'");
  }
  return out;
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

bool set_param(TheoryParams& p, std::string_view field, std::string_view key, std::string_view value) {
  for (const auto& d : kDoubles) {
    if (field == d.name) {
      p.*d.member = parse<double>(key, value);
      return true;
    }
  }
  for (const auto& s : kSizes) {
    if (field == s.name) {
      p.*s.member = parse<std::size_t>(key, value);
      return true;
    }
  }
  return false;
}

}  // namespace

std::map<std::string, std::string> TheoryRun::dump() const {
  std::map<std::string, std::string> out;
  for (const auto& d : kDoubles) {
    out[std::string("theory.") + d.name] = fmt(declared.*d.member);
    out[std::string("sim.") + d.name] = fmt(injected.*d.member);
  }
  for (const auto& s : kSizes) {
    out[std::string("theory.") + s.name] = std::to_string(declared.*s.member);
    out[std::string("sim.") + s.name] = std::to_string(injected.*s.member);
  }
  out["run.rounds"] = std::to_string(rounds);
  out["run.trials"] = std::to_string(trials);
  out["run.dim"] = std::to_string(dim);
  out["run.initial_gap"] = fmt(initial_gap);
  out["run.seed"] = std::to_string(seed);
  return out;
}

TheoryRun parse_theory_text(std::string_view text) {
  TheoryRun run;
  std::vector<std::pair<std::string, std::string>> sim;
  std::istringstream in{std::string(text)};
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw ConfigError("theory line " + std::to_string(lineno) + ": expected key=value");
    const std::string key(trim(t.substr(0, eq)));
    const std::string value(trim(t.substr(eq + 1)));
    const std::string_view k(key);
    bool known = false;
    if (k.starts_with("theory.")) {
      known = set_param(run.declared, k.substr(7), k, value);
    } else if (k.starts_with("sim.")) {
      TheoryParams probe;
      known = set_param(probe, k.substr(4), k, value);
      sim.emplace_back(key.substr(4), value);
    } else if (k == "run.rounds") {
      run.rounds = parse<std::size_t>(k, value), known = true;
    } else if (k == "run.trials") {
      run.trials = parse<std::size_t>(k, value), known = true;
    } else if (k == "run.dim") {
      run.dim = parse<std::size_t>(k, value), known = true;
    } else if (k == "run.initial_gap") {
      run.initial_gap = parse<double>(k, value), known = true;
    } else if (k == "run.seed") {
      run.seed = parse<std::uint64_t>(k, value), known = true;
    }
    if (!known) throw ConfigError("unknown theory key '" + key + "'");
  }
  run.injected = run.declared;
  for (const auto& [field, value] : sim) set_param(run.injected, field, "sim." + field, value);
  run.declared.validate();
  if (run.trials < 2) throw ConfigError("run.trials must be >= 2");
  if (run.dim == 0 || run.rounds == 0) throw ConfigError("run.dim and run.rounds must be positive");
  if (!(run.initial_gap >= 0.0)) throw ConfigError("run.initial_gap must be non-negative");
  return run;
}

TheoryRun load_theory(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read theory params file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_theory_text(ss.str());
}

theory::ContractionReport run_theory(const TheoryRun& run) {
  const auto fed = theory::QuadraticFederation::make(run.injected, run.dim, run.initial_gap, run.seed);
  return theory::verify_contraction(fed, run.declared, run.rounds, run.trials, run.seed);
}

}  // namespace reverb::experiment
