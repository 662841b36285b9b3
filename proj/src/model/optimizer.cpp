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

#include "reverb/model/optimizer.hpp"

#include <cmath>

#include "reverb/error.hpp"
#include "reverb/kernels/kernels.hpp"

namespace reverb::model {

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("optimizer.learning_rate must be positive");
  if (!(decay_rate > 0.0 && decay_rate <= 1.0)) throw ConfigError("optimizer.decay_rate must lie in (0, 1]");
  if (!(decay_steps > 0.0)) throw ConfigError("optimizer.decay_steps must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("optimizer.weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("optimizer betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("optimizer.epsilon must be positive");
}

double OptimizerConfig::learning_rate_at(std::uint64_t step) const {
  return learning_rate * std::pow(decay_rate, static_cast<double>(step) / decay_steps);
}

void Optimizer::reset() {
  step_ = 0;
  m_.clear();
  v_.clear();
}

void Optimizer::apply(Params& params, const Params& grads) {
  const auto& kt = kernels::active();
  const double lr = config_.learning_rate_at(offset_ + step_);
  ++step_;
  if (config_.kind == OptimizerKind::Sgd) {
    for (const auto& [name, g] : grads) {
      Tensor& p = params.at(name);
      if (p.shape() != g.shape()) throw ShapeError("gradient shape mismatch for '" + name + "'");
      kt.axpy(p.size(), -lr, g.raw(), p.raw());
    }
    return;
  }
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  // Bias correction folded into the step size and epsilon.
  const double lr_hat = lr * std::sqrt(bc2) / bc1;
  const double eps_hat = config_.epsilon * std::sqrt(bc2);
  for (const auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    if (p.shape() != g.shape()) throw ShapeError("gradient shape mismatch for '" + name + "'");
    auto [mit, fresh] = m_.try_emplace(name, g.shape(), 0.0);
    auto vit = v_.try_emplace(name, g.shape(), 0.0).first;
    (void)fresh;
    kt.adam_update(p.size(), g.raw(), mit->second.raw(), vit->second.raw(), p.raw(), config_.beta1, config_.beta2,
                   lr_hat, eps_hat);
  }
}

}  // namespace reverb::model
