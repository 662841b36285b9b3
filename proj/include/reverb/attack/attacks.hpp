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

// Feature-space perturbations: FGSM, PGD (l-inf) and additive Gaussian noise.
// All outputs stay inside the admissible box [-bound, bound]; FGSM and PGD also
// stay within epsilon of the clean input in every coordinate.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "reverb/model/cnn.hpp"
#include "reverb/rng.hpp"
#include "reverb/tensor.hpp"

namespace reverb::attack {

enum class AttackKind { None, Fgsm, Pgd, Awgn, MixedAll };

std::string_view attack_name(AttackKind kind);
/// Accepts none, fgsm, pgd, awgn, mixed (case-insensitive); throws ConfigError otherwise.
AttackKind parse_attack(std::string_view name);

struct AttackSpec {
  AttackKind kind = AttackKind::None;
  double epsilon = 0.02;
  std::size_t iterations = 10;  // PGD
  double sigma = 0.03;          // AWGN
  double bound = 3.0;           // admissible set is [-bound, bound]

  void validate() const;
};

/// d(mean loss)/dX evaluated at X.
using InputGradient = std::function<Tensor(const Tensor& x)>;

/// Gradient oracle for a model in eval mode with fixed labels.
InputGradient model_gradient(const model::Cnn& model, const model::Params& params,
                             std::span<const std::size_t> labels);

Tensor clip(const Tensor& x, double bound);

/// clip(X + epsilon * sign(grad(X))), sign(0) = 0.
Tensor fgsm(const InputGradient& grad, const Tensor& x, const AttackSpec& spec);

/// Uniform random start in the epsilon box (skipped when random_start is
/// false), then `iterations` signed steps of epsilon/iterations, each projected
/// onto the epsilon box around X and then onto the admissible box.
Tensor pgd(const InputGradient& grad, const Tensor& x, const AttackSpec& spec, Rng& rng, bool random_start = true);

/// clip(X + sigma * N(0, 1)) elementwise.
Tensor awgn(const Tensor& x, const AttackSpec& spec, Rng& rng);

/// One attack family per example, uniform over {FGSM, PGD, AWGN}.
std::vector<AttackKind> assign_families(std::size_t count, Rng& rng);

/// Perturbs a batch [B, ...] against the current parameters; labels are
/// untouched. MixedAll draws one family per example from {FGSM, PGD, AWGN}.
/// Each example's perturbation depends only on that example because the
/// gradient is taken in eval mode.
Tensor poison_batch(const model::Cnn& model, const model::Params& params, const Tensor& x,
                    std::span<const std::size_t> labels, const AttackSpec& spec, Rng& rng);

/// Rows `rows` of a batch tensor, in order.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
/// Writes the rows of `part` back to positions `rows` of `x`.
void scatter_rows(const Tensor& part, std::span<const std::size_t> rows, Tensor& x);

}  // namespace reverb::attack
