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

// Round-wise contraction bound for federated averaging followed by reserve
// retraining, and a Monte Carlo check of that bound on quadratic federations.

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "reverb/attack/attacks.hpp"
#include "reverb/model/cnn.hpp"

namespace reverb::theory {

struct TheoryParams {
  double L = 1.0;           // smoothness
  double mu = 0.1;          // strong convexity
  double sigma_g2 = 0.01;   // per-step stochastic gradient variance
  double zeta2 = 0.01;      // client drift bound
  double sigma_r2 = 0.01;   // reserve gradient variance
  double eps_r = 0.0;       // reserve gradient mismatch
  double gamma_bias = 0.05; // adversarial gradient bias bound
  double rho = 0.5;
  std::size_t N = 10;
  std::size_t m = 6;
  std::size_t tau = 5;
  double eta = 0.02;        // client step; the aggregation step is eta * tau
  double gamma_r = 0.1;
  std::size_t r = 1;
  double c_s = 1.0;
  double a = 0.5;

  double gamma_g() const { return eta * static_cast<double>(tau); }
  /// tau (tau - 1) eta^2 L^2 / 2.
  double c_tau() const;
  /// gamma_g / (2a) + L gamma_g^2 / 2.
  double c_g() const;
  void validate() const;
};

struct BetaMoments {
  double mean = 0.0;
  double second = 0.0;
};

/// E[beta] = rho and E[beta^2] = rho^2 + rho (1 - rho) (N - m) / (m (N - 1)) for
/// an m-subset drawn without replacement from N clients of which rho N are adversarial.
BetaMoments beta_moments(double rho, std::size_t N, std::size_t m);

/// L_loss * mixed_norm * sqrt(d) * eps.
double gradient_bias_bound(double loss_lipschitz, double mixed_norm, std::size_t dim, double eps);

struct Contraction {
  double q = 0.0;
  double c_prime = 0.0;
};

/// q = (1 - mu g_g)(1 - mu g_r)^r and
/// C' = (1 - mu g_r)^r c_g (c_s s_g^2 / m + c_tau z^2 + E[b^2] G^2) + L g_r^2 r s_r^2 / 2 + (1 - mu g_r)^r e_r^2.
Contraction contraction_constants(const TheoryParams& p);

/// Quadratic clients phi_n(t) = 1/2 (t - t_n)^T H (t - t_n) sharing one Hessian.
/// The global minimizer is the mean of the client minimizers, and the drift
/// H (t_n - t*) is independent of the iterate.
struct QuadraticFederation {
  Eigen::MatrixXd hessian;
  Eigen::VectorXd eigenvalues;
  Eigen::VectorXd optimum;
  std::vector<Eigen::VectorXd> client_optima;
  std::vector<bool> adversarial;
  Eigen::VectorXd bias;      // added to every adversarial gradient step
  Eigen::VectorXd mismatch;  // added to every reserve gradient step
  double sigma_g = 0.0;      // per-step noise N(0, sigma_g^2 / d I)
  double sigma_r = 0.0;
  Eigen::VectorXd start;

  std::size_t dim() const { return static_cast<std::size_t>(optimum.size()); }
  std::size_t num_clients() const { return client_optima.size(); }
  double gap(const Eigen::VectorXd& theta) const;
  /// Largest ||H (t_n - t*)|| over clients.
  double max_drift() const;

  /// Spectrum spread over [mu, L] in a random orthonormal basis, client drift
  /// vectors of norm sqrt(zeta2) summing to zero, a bias of norm gamma_bias on
  /// ceil(rho N) clients, a mismatch of norm eps_r, and a start at gap
  /// `initial_gap`. Injected magnitudes equal the values in `p`.
  static QuadraticFederation make(const TheoryParams& p, std::size_t dim, double initial_gap, std::uint64_t seed);
};

struct RoundCheck {
  std::size_t round = 0;  // the gap after `round` rounds
  double mean_gap = 0.0;
  double bound = 0.0;   // q * mean_gap[round - 1] + C'
  double slack = 0.0;   // 3 standard errors of gap[round] - q gap[round - 1]
  bool pass = true;
};

struct ContractionReport {
  TheoryParams params;
  Contraction constants;
  std::size_t trials = 0;
  std::vector<RoundCheck> rounds;
  /// Injected noise, drift, bias and mismatch do not exceed the declared bounds.
  bool declared_bounds_hold = true;
  /// Noiseless single-trajectory check: gap ratio <= q at every round, no slack.
  bool exact_pass = true;
  double worst_exact_ratio = 0.0;

  bool passed() const;
  std::string table() const;
  std::string csv() const;
  /// Writes <stem>.txt and <stem>.csv.
  void write(const std::filesystem::path& stem) const;
};

/// Simulates one round from `theta`: m sampled clients each take tau noisy
/// gradient steps of size eta (adversaries add the bias), equal-weight
/// averaging, then r reserve steps of size gamma_r. Client and reserve noise
/// come from separate streams so runs that differ only in r share the client noise.
Eigen::VectorXd simulate_round(const QuadraticFederation& fed, const TheoryParams& p, const Eigen::VectorXd& theta,
                               Rng& client_rng, Rng& reserve_rng);

/// Mean gap after 0..rounds rounds over `trials` keyed trajectories.
std::vector<double> mean_gaps(const QuadraticFederation& fed, const TheoryParams& p, std::size_t rounds,
                              std::size_t trials, std::uint64_t seed);

/// Monte Carlo check of mean gap[t+1] <= q mean gap[t] + C' + 3 SE at every
/// round, plus the noiseless exact-gradient check. Throws ConfigError when the
/// federation's structure disagrees with `p` (dimension-independent checks:
/// spectrum inside [mu, L], client count, adversary count). Injected magnitudes
/// above the declared bounds are reported, not rejected.
ContractionReport verify_contraction(const QuadraticFederation& fed, const TheoryParams& p, std::size_t rounds,
                                     std::size_t trials, std::uint64_t seed);

/// ||grad_theta loss(poisoned batch) - grad_theta loss(clean batch)||_2 in eval
/// mode, the quantity the adversarial bias bound covers.
double measure_gradient_bias(const model::Cnn& model, const model::Params& params, const Tensor& x,
                             std::span<const std::size_t> labels, const attack::AttackSpec& spec, Rng& rng);

}  // namespace reverb::theory
