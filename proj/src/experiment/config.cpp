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

#include "reverb/experiment/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <tuple>

#include "reverb/error.hpp"

namespace reverb::experiment {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw ConfigError("config key '" + std::string(key) + "': cannot use '" + std::string(value) + "' (expected " +
                    std::string(expected) + ")");
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "a number");
  return out;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

struct Field {
  std::string key;
  std::string help;
  std::function<void(ExperimentConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class T>
Field size_field(std::string key, std::string help, T ExperimentConfig::*outer, std::size_t T::*member) {
  return {std::move(key), std::move(help),
          [=](ExperimentConfig& c, std::string_view k, std::string_view v) { (c.*outer).*member = to_u64(k, v); },
          [=](const ExperimentConfig& c) { return std::to_string((c.*outer).*member); }};
}

template <class T>
Field double_field(std::string key, std::string help, T ExperimentConfig::*outer, double T::*member) {
  return {std::move(key), std::move(help),
          [=](ExperimentConfig& c, std::string_view k, std::string_view v) { (c.*outer).*member = to_double(k, v); },
          [=](const ExperimentConfig& c) { return fmt((c.*outer).*member); }};
}

Field top_size(std::string key, std::string help, std::size_t ExperimentConfig::*member) {
  return {std::move(key), std::move(help),
          [=](ExperimentConfig& c, std::string_view k, std::string_view v) { c.*member = to_u64(k, v); },
          [=](const ExperimentConfig& c) { return std::to_string(c.*member); }};
}

const std::vector<Field>& fields() {
  using EC = ExperimentConfig;
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"profile", "desk | paper; selects the defaults for every other key",
                 [](EC& c, std::string_view, std::string_view v) { c.profile = parse_profile(v); },
                 [](const EC& c) { return std::string(profile_name(c.profile)); }});
    f.push_back({"seed", "master seed; every random stream derives from it",
                 [](EC& c, std::string_view k, std::string_view v) { c.seed = to_u64(k, v); },
                 [](const EC& c) { return std::to_string(c.seed); }});
    f.push_back({"variant", "FedAvg | Retrain-NoPoison | Retrain-FGSM | Retrain-PGD | Retrain-AWGN | Retrain-All",
                 [](EC& c, std::string_view, std::string_view v) { c.variant = parse_variant(v); },
                 [](const EC& c) { return std::string(variant_name(c.variant)); }});
    f.push_back({"data.source", "synthetic | wav",
                 [](EC& c, std::string_view k, std::string_view v) {
                   const auto s = lower(v);
                   if (s != "synthetic" && s != "wav") bad_value(k, v, "synthetic or wav");
                   c.data_source = s;
                 },
                 [](const EC& c) { return c.data_source; }});
    f.push_back({"data.wav_dir", "directory of <label>_*.wav files (data.source=wav)",
                 [](EC& c, std::string_view, std::string_view v) { c.wav_dir = std::string(v); },
                 [](const EC& c) { return c.wav_dir.string(); }});
    f.push_back({"output.dir", "run directory for metrics.csv and manifest.json (overridden by --out)",
                 [](EC& c, std::string_view, std::string_view v) { c.output_dir = std::string(v); },
                 [](const EC& c) { return c.output_dir.string(); }});
    f.push_back(top_size("data.classes", "synthetic classes K", &EC::classes));
    f.push_back(top_size("data.per_class", "synthetic examples per class", &EC::per_class));
    f.push_back(top_size("data.frames", "STFT frames T per example (wav: 0 uses the median)", &EC::frames));
    f.push_back({"data.test_fraction", "stratified global test split held out before partitioning",
                 [](EC& c, std::string_view k, std::string_view v) { c.test_fraction = to_double(k, v); },
                 [](const EC& c) { return fmt(c.test_fraction); }});
    f.push_back(double_field("signal.sample_rate", "Hz", &EC::signal, &signal::SignalConfig::sample_rate));
    f.push_back(size_field("signal.window_length", "Hann window length L_w", &EC::signal,
                           &signal::SignalConfig::window_length));
    f.push_back(size_field("signal.hop", "hop size h", &EC::signal, &signal::SignalConfig::hop));
    f.push_back(size_field("signal.fft_size", "FFT size F (power of two)", &EC::signal, &signal::SignalConfig::fft_size));
    f.push_back(double_field("signal.bound", "admissible box [-bound, bound] for inputs and attacks", &EC::signal,
                             &signal::SignalConfig::bound));
    f.push_back({"partition.mode", "iid | dirichlet",
                 [](EC& c, std::string_view k, std::string_view v) {
                   const auto s = lower(v);
                   if (s == "iid") c.partition.mode = data::PartitionMode::Iid;
                   else if (s == "dirichlet") c.partition.mode = data::PartitionMode::Dirichlet;
                   else bad_value(k, v, "iid or dirichlet");
                 },
                 [](const EC& c) { return std::string(c.partition.mode == data::PartitionMode::Iid ? "iid" : "dirichlet"); }});
    f.push_back(double_field("partition.alpha", "Dirichlet concentration", &EC::partition, &data::PartitionSpec::alpha));
    f.push_back({"model.arch", "desk | paper",
                 [](EC& c, std::string_view k, std::string_view v) {
                   const auto s = lower(v);
                   if (s != "desk" && s != "paper") bad_value(k, v, "desk or paper");
                   c.paper_arch = s == "paper";
                 },
                 [](const EC& c) { return std::string(c.paper_arch ? "paper" : "desk"); }});
    f.push_back(size_field("fed.num_clients", "N", &EC::fed, &fed::FedConfig::num_clients));
    f.push_back(double_field("fed.sample_fraction", "C; m = round(C N) clients per round", &EC::fed,
                             &fed::FedConfig::sample_fraction));
    f.push_back(size_field("fed.local_steps", "tau, optimizer steps per client per round", &EC::fed,
                           &fed::FedConfig::local_steps));
    f.push_back(size_field("fed.batch_size", "client batch size B", &EC::fed, &fed::FedConfig::batch_size));
    f.push_back(size_field("fed.rounds", "R", &EC::fed, &fed::FedConfig::rounds));
    f.push_back(double_field("fed.adversarial_fraction", "rho; |A| = ceil(rho N)", &EC::fed,
                             &fed::FedConfig::adversarial_fraction));
    f.push_back(size_field("fed.threads", "client trainings run concurrently (0 = all cores); results do not change",
                           &EC::fed, &fed::FedConfig::threads));
    f.push_back({"attack.kind", "client poisoning: none | fgsm | pgd | awgn | mixed",
                 [](EC& c, std::string_view, std::string_view v) { c.fed.attack.kind = attack::parse_attack(v); },
                 [](const EC& c) { return std::string(attack::attack_name(c.fed.attack.kind)); }});
    f.push_back({"attack.epsilon", "l-inf budget for FGSM/PGD (clients and augmentation)",
                 [](EC& c, std::string_view k, std::string_view v) { c.fed.attack.epsilon = to_double(k, v); },
                 [](const EC& c) { return fmt(c.fed.attack.epsilon); }});
    f.push_back({"attack.iterations", "PGD iterations",
                 [](EC& c, std::string_view k, std::string_view v) { c.fed.attack.iterations = to_u64(k, v); },
                 [](const EC& c) { return std::to_string(c.fed.attack.iterations); }});
    f.push_back({"attack.sigma", "AWGN standard deviation",
                 [](EC& c, std::string_view k, std::string_view v) { c.fed.attack.sigma = to_double(k, v); },
                 [](const EC& c) { return fmt(c.fed.attack.sigma); }});
    f.push_back({"optimizer.kind", "adam | sgd (clients and server)",
                 [](EC& c, std::string_view k, std::string_view v) {
                   const auto s = lower(v);
                   if (s == "adam") c.fed.optimizer.kind = model::OptimizerKind::Adam;
                   else if (s == "sgd") c.fed.optimizer.kind = model::OptimizerKind::Sgd;
                   else bad_value(k, v, "adam or sgd");
                 },
                 [](const EC& c) { return std::string(c.fed.optimizer.kind == model::OptimizerKind::Adam ? "adam" : "sgd"); }});
    using OC = model::OptimizerConfig;
    for (auto [key, member, help] : {std::tuple{"optimizer.learning_rate", &OC::learning_rate, "initial learning rate"},
                                     std::tuple{"optimizer.decay_rate", &OC::decay_rate, "exponential decay factor"},
                                     std::tuple{"optimizer.decay_steps", &OC::decay_steps, "steps per decay factor"},
                                     std::tuple{"optimizer.weight_decay", &OC::weight_decay, "L2 coefficient lambda"},
                                     std::tuple{"optimizer.beta1", &OC::beta1, "Adam beta1"},
                                     std::tuple{"optimizer.beta2", &OC::beta2, "Adam beta2"},
                                     std::tuple{"optimizer.epsilon", &OC::epsilon, "Adam epsilon"}}) {
      f.push_back({key, help,
                   [member](EC& c, std::string_view k, std::string_view v) { c.fed.optimizer.*member = to_double(k, v); },
                   [member](const EC& c) { return fmt(c.fed.optimizer.*member); }});
    }
    f.push_back({"defense.mode", "optional; must agree with the variant (disabled | nopoison | fgsm | pgd | awgn | all)",
                 [](EC& c, std::string_view, std::string_view v) { c.defense.mode = defense::parse_defense(v); },
                 [](const EC& c) { return std::string(defense::defense_name(c.defense.mode)); }});
    f.push_back(double_field("defense.reserve_fraction", "stratified reserve fraction", &EC::defense,
                             &defense::DefenseConfig::reserve_fraction));
    f.push_back(size_field("defense.pretrain_epochs", "reserve pretraining epochs", &EC::defense,
                           &defense::DefenseConfig::pretrain_epochs));
    f.push_back(size_field("defense.reserve_batch", "B_r", &EC::defense, &defense::DefenseConfig::reserve_batch));
    f.push_back(size_field("defense.steps", "retraining steps per round; 0 = one epoch over the reserve", &EC::defense,
                           &defense::DefenseConfig::steps));
    std::sort(f.begin(), f.end(), [](const Field& a, const Field& b) { return a.key < b.key; });
    return f;
  }();
  return table;
}

}  // namespace

Profile parse_profile(std::string_view name) {
  const auto s = lower(name);
  if (s == "desk") return Profile::Desk;
  if (s == "paper") return Profile::Paper;
  throw ConfigError("unknown profile '" + std::string(name) + "' (expected desk or paper)");
}

std::string_view profile_name(Profile p) { return p == Profile::Desk ? "desk" : "paper"; }

namespace {
constexpr Variant kVariants[] = {Variant::FedAvg,     Variant::RetrainNoPoison, Variant::RetrainFgsm,
                                 Variant::RetrainPgd, Variant::RetrainAwgn,     Variant::RetrainAll};
}

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::FedAvg: return "FedAvg";
    case Variant::RetrainNoPoison: return "Retrain-NoPoison";
    case Variant::RetrainFgsm: return "Retrain-FGSM";
    case Variant::RetrainPgd: return "Retrain-PGD";
    case Variant::RetrainAwgn: return "Retrain-AWGN";
    case Variant::RetrainAll: return "Retrain-All";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  const auto s = lower(name);
  for (Variant v : kVariants) {
    if (s == lower(variant_name(v))) return v;
  }
  throw ConfigError("unknown variant '" + std::string(name) +
                    "' (expected FedAvg, Retrain-NoPoison, Retrain-FGSM, Retrain-PGD, Retrain-AWGN or Retrain-All)");
}

defense::DefenseMode defense_mode(Variant v) {
  switch (v) {
    case Variant::FedAvg: return defense::DefenseMode::Disabled;
    case Variant::RetrainNoPoison: return defense::DefenseMode::NoPoison;
    case Variant::RetrainFgsm: return defense::DefenseMode::Fgsm;
    case Variant::RetrainPgd: return defense::DefenseMode::Pgd;
    case Variant::RetrainAwgn: return defense::DefenseMode::Awgn;
    case Variant::RetrainAll: return defense::DefenseMode::AllAdversarial;
  }
  return defense::DefenseMode::Disabled;
}

ExperimentConfig ExperimentConfig::defaults(Profile profile) {
  ExperimentConfig c;
  c.profile = profile;
  c.fed.attack.kind = attack::AttackKind::Pgd;
  if (profile == Profile::Paper) {
    c.classes = 10;
    c.frames = 30;
    c.signal.sample_rate = 16000.0;
    c.signal.window_length = 1024;
    c.signal.hop = 512;
    c.signal.fft_size = 1024;
    c.paper_arch = true;
    c.fed.rounds = 60;
    c.fed.attack.iterations = 50;
  }
  c.defense.mode = defense_mode(c.variant);
  return c;
}

void ExperimentConfig::resolve() {
  if (defense.mode != defense_mode(variant)) {
    throw ConfigError("defense.mode '" + std::string(defense::defense_name(defense.mode)) + "' contradicts variant '" +
                      std::string(variant_name(variant)) + "'");
  }
  if (data_source == "wav" && wav_dir.empty()) throw ConfigError("data.source=wav needs data.wav_dir");
  if (data_source == "synthetic" && (classes < 2 || per_class < 2)) {
    throw ConfigError("data.classes and data.per_class must be >= 2");
  }
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("data.test_fraction must lie in (0, 1)");
  signal.validate();
  fed.attack.bound = signal.bound;
  fed.seed = seed;
  fed.validate();
  partition.num_clients = fed.num_clients;
  partition.seed = mix_keys({seed, 0x9a27});
  partition.validate();
  defense.optimizer = fed.optimizer;
  defense.attack = fed.attack;
  defense.validate();
  arch().validate();
}

model::ModelArch ExperimentConfig::arch() const {
  model::ModelArch a = paper_arch ? model::ModelArch::paper(classes, frames) : model::ModelArch::desk(classes);
  a.input_shape = {signal.bins(), frames, 2};
  return a;
}

std::map<std::string, std::string> ExperimentConfig::dump() const {
  std::map<std::string, std::string> out;
  for (const auto& f : fields()) out[f.key] = f.get(*this);
  return out;
}

std::string ExperimentConfig::dump_text() const {
  std::string out;
  for (const auto& [k, v] : dump()) out += k + "=" + v + "\n";
  return out;
}

std::vector<KeyHelp> config_keys() {
  std::vector<KeyHelp> out;
  for (const auto& f : fields()) out.push_back({f.key, f.help});
  return out;
}

void set_key(ExperimentConfig& config, std::string_view key, std::string_view value) {
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(config, key, value);
      if (key == "variant") config.defense.mode = defense_mode(config.variant);
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

ExperimentConfig parse_config_text(std::string_view text, Profile fallback) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::istringstream in{std::string(text)};
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" + std::string(t) + "'");
    }
    entries.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  Profile profile = fallback;
  for (const auto& [k, v] : entries) {
    if (k == "profile") profile = parse_profile(v);
  }
  ExperimentConfig c = ExperimentConfig::defaults(profile);
  // The variant goes first so that an explicit defense.mode is checked against it.
  for (const auto& [k, v] : entries) {
    if (k == "variant") set_key(c, k, v);
  }
  for (const auto& [k, v] : entries) {
    if (k != "variant") set_key(c, k, v);
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, Profile fallback) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), fallback);
}

}  // namespace reverb::experiment
