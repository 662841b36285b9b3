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

#include "reverb/attack/attacks.hpp"

#include <algorithm>
#include <cctype>
#include <vector>

#include "reverb/error.hpp"
#include "reverb/kernels/kernels.hpp"

namespace reverb::attack {

std::string_view attack_name(AttackKind kind) {
  switch (kind) {
    case AttackKind::None: return "none";
    case AttackKind::Fgsm: return "fgsm";
    case AttackKind::Pgd: return "pgd";
    case AttackKind::Awgn: return "awgn";
    case AttackKind::MixedAll: return "mixed";
  }
  return "?";
}

AttackKind parse_attack(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  for (AttackKind k : {AttackKind::None, AttackKind::Fgsm, AttackKind::Pgd, AttackKind::Awgn, AttackKind::MixedAll}) {
    if (s == attack_name(k)) return k;
  }
  throw ConfigError("unknown attack '" + std::string(name) + "' (expected none, fgsm, pgd, awgn or mixed)");
}

void AttackSpec::validate() const {
  if (!(epsilon >= 0.0)) throw ConfigError("attack.epsilon must be >= 0");
  if (!(bound > 0.0)) throw ConfigError("attack.bound must be positive");
  if ((kind == AttackKind::Pgd || kind == AttackKind::MixedAll) && iterations < 1) {
    throw ConfigError("attack.iterations must be >= 1 for PGD");
  }
  if (!(sigma >= 0.0)) throw ConfigError("attack.sigma must be >= 0");
}

InputGradient model_gradient(const model::Cnn& model, const model::Params& params,
                             std::span<const std::size_t> labels) {
  return [&model, &params, labels](const Tensor& x) { return model.grad_input(params, x, labels); };
}

Tensor clip(const Tensor& x, double bound) {
  Tensor out = x;
  for (double& v : out.data()) v = std::clamp(v, -bound, bound);
  return out;
}

namespace {

void check_gradient(const Tensor& g, const Tensor& x) {
  if (g.shape() != x.shape()) {
    throw ShapeError("input gradient shape " + to_string(g.shape()) + " does not match input " + to_string(x.shape()));
  }
}

}  // namespace

Tensor fgsm(const InputGradient& grad, const Tensor& x, const AttackSpec& spec) {
  spec.validate();
  const Tensor g = grad(x);
  check_gradient(g, x);
  Tensor out = Tensor::uninitialized(x.shape());
  kernels::active().signed_step_project(x.size(), x.raw(), x.raw(), g.raw(), spec.epsilon, spec.epsilon, spec.bound,
                                        out.raw());
  return out;
}

Tensor pgd(const InputGradient& grad, const Tensor& x, const AttackSpec& spec, Rng& rng, bool random_start) {
  spec.validate();
  if (spec.iterations < 1) throw ConfigError("attack.iterations must be >= 1 for PGD");
  const auto& kt = kernels::active();
  Tensor cur = x;
  if (random_start) {
    for (std::size_t i = 0; i < cur.size(); ++i) {
      cur[i] = std::clamp(x[i] + uniform(rng, -spec.epsilon, spec.epsilon), -spec.bound, spec.bound);
    }
  }
  const double step = spec.epsilon / static_cast<double>(spec.iterations);
  Tensor next = Tensor::uninitialized(x.shape());
  for (std::size_t it = 0; it < spec.iterations; ++it) {
    const Tensor g = grad(cur);
    check_gradient(g, x);
    kt.signed_step_project(x.size(), cur.raw(), x.raw(), g.raw(), step, spec.epsilon, spec.bound, next.raw());
    std::swap(cur, next);
  }
  return cur;
}

Tensor awgn(const Tensor& x, const AttackSpec& spec, Rng& rng) {
  spec.validate();
  Tensor out = Tensor::uninitialized(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::clamp(x[i] + spec.sigma * standard_normal(rng), -spec.bound, spec.bound);
  }
  return out;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  if (x.rank() < 1 || rows.empty()) throw ShapeError("gather_rows needs a batch tensor and at least one row");
  const std::size_t row = x.size() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = rows.size();
  Tensor out = Tensor::uninitialized(shape);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.dim(0)) throw ShapeError("gather_rows index out of range");
    std::copy(x.raw() + rows[i] * row, x.raw() + (rows[i] + 1) * row, out.raw() + i * row);
  }
  return out;
}

void scatter_rows(const Tensor& part, std::span<const std::size_t> rows, Tensor& x) {
  const std::size_t row = x.size() / x.dim(0);
  if (part.size() != rows.size() * row) throw ShapeError("scatter_rows size mismatch");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.dim(0)) throw ShapeError("scatter_rows index out of range");
    std::copy(part.raw() + i * row, part.raw() + (i + 1) * row, x.raw() + rows[i] * row);
  }
}

std::vector<AttackKind> assign_families(std::size_t count, Rng& rng) {
  static constexpr AttackKind kFamilies[] = {AttackKind::Fgsm, AttackKind::Pgd, AttackKind::Awgn};
  std::vector<AttackKind> out(count);
  for (auto& k : out) k = kFamilies[uniform_index(rng, 3)];
  return out;
}

Tensor poison_batch(const model::Cnn& model, const model::Params& params, const Tensor& x,
                    std::span<const std::size_t> labels, const AttackSpec& spec, Rng& rng) {
  spec.validate();
  if (x.rank() < 1 || labels.size() != x.dim(0)) throw ShapeError("poison_batch: one label per example required");
  switch (spec.kind) {
    case AttackKind::None: return x;
    case AttackKind::Fgsm: return fgsm(model_gradient(model, params, labels), x, spec);
    case AttackKind::Pgd: return pgd(model_gradient(model, params, labels), x, spec, rng);
    case AttackKind::Awgn: return awgn(x, spec, rng);
    case AttackKind::MixedAll: break;
  }
  // One family per example; each family runs once on its sub-batch.
  const auto families = assign_families(labels.size(), rng);
  Tensor out = x;
  for (AttackKind family : {AttackKind::Fgsm, AttackKind::Pgd, AttackKind::Awgn}) {
    std::vector<std::size_t> rows, part_labels;
    for (std::size_t i = 0; i < families.size(); ++i) {
      if (families[i] != family) continue;
      rows.push_back(i);
      part_labels.push_back(labels[i]);
    }
    if (rows.empty()) continue;
    const Tensor part = gather_rows(x, rows);
    Tensor done;
    if (family == AttackKind::Fgsm) {
      done = fgsm(model_gradient(model, params, part_labels), part, spec);
    } else if (family == AttackKind::Pgd) {
      done = pgd(model_gradient(model, params, part_labels), part, spec, rng);
    } else {
      done = awgn(part, spec, rng);
    }
    scatter_rows(done, rows, out);
  }
  return out;
}

}  // namespace reverb::attack
