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

#include "reverb/theory/contraction.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "reverb/error.hpp"
#include "reverb/fed/federation.hpp"

namespace reverb::theory {

namespace {

constexpr std::uint64_t kClientStream = 1;
constexpr std::uint64_t kReserveStream = 2;

Eigen::VectorXd gaussian(std::size_t d, double scale, Rng& rng) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = scale * standard_normal(rng);
  return v;
}

Eigen::VectorXd unit(std::size_t d, Rng& rng) {
  Eigen::VectorXd v = gaussian(d, 1.0, rng);
  return v / v.norm();
}

std::size_t adversary_count(double rho, std::size_t n) {
  return static_cast<std::size_t>(std::ceil(rho * static_cast<double>(n) - 1e-9));
}

}  // namespace

double TheoryParams::c_tau() const {
  const double t = static_cast<double>(tau);
  return t * (t - 1.0) / 2.0 * eta * eta * L * L;
}

double TheoryParams::c_g() const { return gamma_g() / (2.0 * a) + L * gamma_g() * gamma_g() / 2.0; }

void TheoryParams::validate() const {
  if (!(mu > 0.0 && mu <= L)) throw ConfigError("theory: need 0 < mu <= L");
  if (!(eta > 0.0) || tau < 1) throw ConfigError("theory: need eta > 0 and tau >= 1");
  if (gamma_g() > 1.0 / L + 1e-12) throw ConfigError("theory: gamma_g = eta * tau must be <= 1/L");
  if (!(gamma_r >= 0.0) || gamma_r > 1.0 / L + 1e-12) throw ConfigError("theory: gamma_r must lie in [0, 1/L]");
  if (!(a > 0.0 && a < 1.0)) throw ConfigError("theory: a must lie in (0, 1)");
  if (!(c_s > 0.0)) throw ConfigError("theory: c_s must be positive");
  if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("theory: rho must lie in [0, 1]");
  if (m < 1 || m > N) throw ConfigError("theory: need 1 <= m <= N");
  for (double v : {sigma_g2, zeta2, sigma_r2, eps_r, gamma_bias}) {
    if (!(v >= 0.0)) throw ConfigError("theory: variances and bias bounds must be >= 0");
  }
}

BetaMoments beta_moments(double rho, std::size_t N, std::size_t m) {
  if (!(rho >= 0.0 && rho <= 1.0) || m < 1 || m > N) throw ConfigError("beta_moments: need 0 <= rho <= 1, 1 <= m <= N");
  const double rn = rho * static_cast<double>(N);
  if (std::abs(rn - std::round(rn)) > 1e-9) throw ConfigError("beta_moments: rho * N must be an integer");
  const double n = static_cast<double>(N), mm = static_cast<double>(m);
  BetaMoments out;
  out.mean = rho;
  out.second = rho * rho + (N == 1 ? 0.0 : rho * (1.0 - rho) * (n - mm) / (mm * (n - 1.0)));
  return out;
}

double gradient_bias_bound(double loss_lipschitz, double mixed_norm, std::size_t dim, double eps) {
  if (loss_lipschitz < 0.0 || mixed_norm < 0.0 || eps < 0.0) throw ConfigError("gradient_bias_bound: inputs must be >= 0");
  return loss_lipschitz * mixed_norm * std::sqrt(static_cast<double>(dim)) * eps;
}

Contraction contraction_constants(const TheoryParams& p) {
  p.validate();
  // E[beta^2] for the realized |A| = ceil(rho N), which need not equal rho N.
  const double rho_eff = static_cast<double>(adversary_count(p.rho, p.N)) / static_cast<double>(p.N);
  const double beta2 = beta_moments(rho_eff, p.N, p.m).second;
  const double damp = std::pow(1.0 - p.mu * p.gamma_r, static_cast<double>(p.r));
  Contraction c;
  c.q = (1.0 - p.mu * p.gamma_g()) * damp;
  c.c_prime = damp * p.c_g() *
                  (p.c_s * p.sigma_g2 / static_cast<double>(p.m) + p.c_tau() * p.zeta2 + beta2 * p.gamma_bias * p.gamma_bias) +
              p.L * p.gamma_r * p.gamma_r * static_cast<double>(p.r) * p.sigma_r2 / 2.0 + damp * p.eps_r * p.eps_r;
  return c;
}

double QuadraticFederation::gap(const Eigen::VectorXd& theta) const {
  const Eigen::VectorXd d = theta - optimum;
  return 0.5 * d.dot(hessian * d);
}

double QuadraticFederation::max_drift() const {
  double worst = 0.0;
  for (const auto& t : client_optima) worst = std::max(worst, (hessian * (t - optimum)).norm());
  return worst;
}

QuadraticFederation QuadraticFederation::make(const TheoryParams& p, std::size_t dim, double initial_gap,
                                              std::uint64_t seed) {
  p.validate();
  if (dim < 1) throw ConfigError("quadratic federation needs dim >= 1");
  Rng rng = keyed_rng({seed, 0x9ad});
  const auto d = static_cast<Eigen::Index>(dim);
  QuadraticFederation f;
  f.eigenvalues.resize(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    f.eigenvalues[i] = dim == 1 ? p.mu : p.mu + (p.L - p.mu) * static_cast<double>(i) / static_cast<double>(dim - 1);
  }
  Eigen::MatrixXd g(d, d);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = standard_normal(rng);
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
  f.hessian = q * f.eigenvalues.asDiagonal() * q.transpose();
  f.hessian = 0.5 * (f.hessian + f.hessian.transpose());
  f.optimum = gaussian(dim, 1.0, rng);

  // Drift vectors v_n with sum zero and max ||v_n|| = zeta; t_n = t* + H^-1 v_n.
  const std::size_t n = p.N;
  std::vector<Eigen::VectorXd> v(n, Eigen::VectorXd::Zero(d));
  if (n > 1 && p.zeta2 > 0.0) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
    for (auto& x : v) mean += (x = gaussian(dim, 1.0, rng));
    mean /= static_cast<double>(n);
    for (auto& x : v) x -= mean;
    double worst = 0.0;
    for (const auto& x : v) worst = std::max(worst, x.norm());
    for (auto& x : v) x *= std::sqrt(p.zeta2) / worst;
  }
  const Eigen::LDLT<Eigen::MatrixXd> solve(f.hessian);
  for (const auto& x : v) f.client_optima.push_back(f.optimum + solve.solve(x));

  f.adversarial.assign(n, false);
  for (std::size_t id : fed::designate_adversaries(n, p.rho, seed)) f.adversarial[id] = true;
  f.bias = unit(dim, rng) * p.gamma_bias;
  f.mismatch = unit(dim, rng) * p.eps_r;
  f.sigma_g = std::sqrt(p.sigma_g2);
  f.sigma_r = std::sqrt(p.sigma_r2);
  const Eigen::VectorXd dir = unit(dim, rng);
  f.start = f.optimum + dir * std::sqrt(2.0 * initial_gap / dir.dot(f.hessian * dir));
  return f;
}

Eigen::VectorXd simulate_round(const QuadraticFederation& fed, const TheoryParams& p, const Eigen::VectorXd& theta,
                               Rng& client_rng, Rng& reserve_rng) {
  const std::size_t d = fed.dim();
  const double noise_g = fed.sigma_g / std::sqrt(static_cast<double>(d));
  const auto selected = fed::sample_clients(fed.num_clients(), p.m, client_rng);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(theta.size());
  for (std::size_t id : selected) {
    Eigen::VectorXd local = theta;
    for (std::size_t j = 0; j < p.tau; ++j) {
      Eigen::VectorXd g = fed.hessian * (local - fed.client_optima[id]);
      if (noise_g > 0.0) g += gaussian(d, noise_g, client_rng);
      if (fed.adversarial[id]) g += fed.bias;
      local -= p.eta * g;
    }
    sum += local;
  }
  Eigen::VectorXd out = sum / static_cast<double>(selected.size());
  const double noise_r = fed.sigma_r / std::sqrt(static_cast<double>(d));
  for (std::size_t k = 0; k < p.r; ++k) {
    Eigen::VectorXd g = fed.hessian * (out - fed.optimum) + fed.mismatch;
    if (noise_r > 0.0) g += gaussian(d, noise_r, reserve_rng);
    out -= p.gamma_r * g;
  }
  return out;
}

namespace {

// gaps[trial][round], round 0 being the start.
std::vector<std::vector<double>> trajectories(const QuadraticFederation& fed, const TheoryParams& p,
                                              std::size_t rounds, std::size_t trials, std::uint64_t seed) {
  std::vector<std::vector<double>> gaps(trials, std::vector<double>(rounds + 1));
  for (std::size_t i = 0; i < trials; ++i) {
    Rng client_rng = keyed_rng({seed, i, kClientStream});
    Rng reserve_rng = keyed_rng({seed, i, kReserveStream});
    Eigen::VectorXd theta = fed.start;
    gaps[i][0] = fed.gap(theta);
    for (std::size_t t = 1; t <= rounds; ++t) {
      theta = simulate_round(fed, p, theta, client_rng, reserve_rng);
      gaps[i][t] = fed.gap(theta);
    }
  }
  return gaps;
}

}  // namespace

std::vector<double> mean_gaps(const QuadraticFederation& fed, const TheoryParams& p, std::size_t rounds,
                              std::size_t trials, std::uint64_t seed) {
  if (trials < 1) throw ConfigError("mean_gaps needs at least one trial");
  const auto gaps = trajectories(fed, p, rounds, trials, seed);
  std::vector<double> mean(rounds + 1, 0.0);
  for (const auto& g : gaps)
    for (std::size_t t = 0; t <= rounds; ++t) mean[t] += g[t];
  for (double& v : mean) v /= static_cast<double>(trials);
  return mean;
}

ContractionReport verify_contraction(const QuadraticFederation& fed, const TheoryParams& p, std::size_t rounds,
                                     std::size_t trials, std::uint64_t seed) {
  p.validate();
  if (trials < 2) throw ConfigError("verify_contraction needs at least two trials");
  if (fed.num_clients() != p.N) throw ConfigError("theory: federation has a different client count than N");
  if (static_cast<std::size_t>(std::count(fed.adversarial.begin(), fed.adversarial.end(), true)) !=
      adversary_count(p.rho, p.N)) {
    throw ConfigError("theory: federation adversary count differs from ceil(rho N)");
  }
  const double tol = 1e-9 * p.L;
  if (fed.eigenvalues.minCoeff() < p.mu - tol || fed.eigenvalues.maxCoeff() > p.L + tol) {
    throw ConfigError("theory: Hessian spectrum lies outside [mu, L]");
  }

  ContractionReport rep;
  rep.params = p;
  rep.constants = contraction_constants(p);
  rep.trials = trials;
  const double rel = 1.0 + 1e-9;
  rep.declared_bounds_hold = fed.sigma_g * fed.sigma_g <= p.sigma_g2 * rel &&
                             fed.max_drift() * fed.max_drift() <= p.zeta2 * rel &&
                             fed.bias.norm() <= p.gamma_bias * rel && fed.sigma_r * fed.sigma_r <= p.sigma_r2 * rel &&
                             fed.mismatch.norm() <= p.eps_r * rel;

  const double q = rep.constants.q;
  const auto gaps = trajectories(fed, p, rounds, trials, seed);
  const double n = static_cast<double>(trials);
  for (std::size_t t = 1; t <= rounds; ++t) {
    double prev = 0.0, cur = 0.0, dmean = 0.0;
    for (const auto& g : gaps) {
      prev += g[t - 1];
      cur += g[t];
      dmean += g[t] - q * g[t - 1];
    }
    prev /= n;
    cur /= n;
    dmean /= n;
    double dvar = 0.0;
    for (const auto& g : gaps) dvar += std::pow(g[t] - q * g[t - 1] - dmean, 2);
    dvar /= n - 1.0;
    RoundCheck rc;
    rc.round = t;
    rc.mean_gap = cur;
    rc.bound = q * prev + rep.constants.c_prime;
    rc.slack = 3.0 * std::sqrt(dvar / n);
    rc.pass = cur <= rc.bound + rc.slack;
    rep.rounds.push_back(rc);
  }

  // Noiseless, drift-free, unpoisoned copy with exact gradients: one trajectory, no slack.
  QuadraticFederation exact = fed;
  for (auto& t : exact.client_optima) t = exact.optimum;
  exact.bias.setZero();
  exact.mismatch.setZero();
  exact.sigma_g = exact.sigma_r = 0.0;
  Rng unused_a(0), unused_b(0);
  Eigen::VectorXd theta = exact.start;
  double gap = exact.gap(theta);
  for (std::size_t t = 1; t <= rounds && gap > 0.0; ++t) {
    theta = simulate_round(exact, p, theta, unused_a, unused_b);
    const double next = exact.gap(theta);
    const double ratio = next / gap;
    rep.worst_exact_ratio = std::max(rep.worst_exact_ratio, ratio);
    rep.exact_pass = rep.exact_pass && ratio <= q;
    gap = next;
  }
  return rep;
}

bool ContractionReport::passed() const {
  return exact_pass && std::all_of(rounds.begin(), rounds.end(), [](const RoundCheck& r) { return r.pass; });
}

std::string ContractionReport::table() const {
  std::ostringstream os;
  os << std::setprecision(6);
  os << "q = " << constants.q << "  C' = " << constants.c_prime << "  trials = " << trials << "\n";
  os << "declared bounds cover the injected noise/drift/bias: " << (declared_bounds_hold ? "yes" : "no") << "\n";
  os << "exact-gradient check: worst ratio " << worst_exact_ratio << " vs q " << constants.q << " -> "
     << (exact_pass ? "pass" : "FAIL") << "\n\n";
  os << std::left << std::setw(7) << "round" << std::setw(15) << "mean_gap" << std::setw(15) << "bound" << std::setw(15)
     << "slack" << "status\n";
  for (const auto& r : rounds) {
    os << std::setw(7) << r.round << std::setw(15) << r.mean_gap << std::setw(15) << r.bound << std::setw(15)
       << r.slack << (r.pass ? "pass" : "FAIL") << "\n";
  }
  os << "\noverall: " << (passed() ? "PASS" : "FAIL") << "\n";
  return os.str();
}

std::string ContractionReport::csv() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "round,mean_gap,bound,slack,pass\n";
  for (const auto& r : rounds) {
    os << r.round << ',' << r.mean_gap << ',' << r.bound << ',' << r.slack << ',' << (r.pass ? 1 : 0) << "\n";
  }
  return os.str();
}

void ContractionReport::write(const std::filesystem::path& stem) const {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  for (const auto& [ext, body] : {std::pair{".txt", table()}, std::pair{".csv", csv()}}) {
    std::filesystem::path path = stem;
    path += ext;
    std::ofstream out(path, std::ios::binary);
    if (!(out << body)) throw Error("cannot write " + path.string());
  }
}

double measure_gradient_bias(const model::Cnn& model, const model::Params& params, const Tensor& x,
                             std::span<const std::size_t> labels, const attack::AttackSpec& spec, Rng& rng) {
  const Tensor poisoned = attack::poison_batch(model, params, x, labels, spec, rng);
  const auto clean = model.grad_params(params, x, labels, model::Mode::Eval, 0, 0.0);
  const auto adv = model.grad_params(params, poisoned, labels, model::Mode::Eval, 0, 0.0);
  double sq = 0.0;
  for (const auto& [name, g] : clean.grads) {
    const Tensor& h = adv.grads.at(name);
    for (std::size_t i = 0; i < g.size(); ++i) sq += (h[i] - g[i]) * (h[i] - g[i]);
  }
  return std::sqrt(sq);
}

}  // namespace reverb::theory
