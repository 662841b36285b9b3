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

#include <doctest.h>

#include <cmath>
#include <map>

#include "reverb/attack/attacks.hpp"
#include "reverb/error.hpp"
#include "test_util.hpp"
#include "trained_model.hpp"

using namespace reverb;
using namespace reverb::attack;
using reverb::test::random_tensor;

namespace {

double linf(const Tensor& a, const Tensor& b) { return max_abs_diff(a, b); }

bool inside(const Tensor& x, double bound) {
  for (double v : x.data()) {
    if (v < -bound || v > bound) return false;
  }
  return true;
}

// Smooth input-dependent gradient with mixed signs and exact zeros.
InputGradient wavy_gradient(double phase) {
  return [phase](const Tensor& x) {
    Tensor g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = i % 7 == 0 ? 0.0 : std::sin(3.0 * x[i] + phase + 0.1 * i);
    return g;
  };
}

AttackSpec spec_of(AttackKind kind) {
  AttackSpec s;
  s.kind = kind;
  return s;
}

}  // namespace

TEST_CASE("attack names parse and round-trip") {
  for (AttackKind k : {AttackKind::None, AttackKind::Fgsm, AttackKind::Pgd, AttackKind::Awgn, AttackKind::MixedAll}) {
    CHECK(parse_attack(attack_name(k)) == k);
  }
  CHECK(parse_attack("PGD") == AttackKind::Pgd);
  CHECK_THROWS_AS(parse_attack("cw"), ConfigError);
  AttackSpec bad;
  bad.epsilon = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = spec_of(AttackKind::Pgd);
  bad.iterations = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("fgsm with a zero gradient only clips") {
  Rng rng(1);
  const Tensor x = random_tensor({4, 6}, rng, -4.0, 4.0);
  const InputGradient zero = [](const Tensor& v) { return Tensor(v.shape()); };
  CHECK(fgsm(zero, x, spec_of(AttackKind::Fgsm)) == clip(x, 3.0));
}

TEST_CASE("fgsm on a linear softmax toy moves each coordinate by exactly epsilon") {
  // Two classes, z = x W; d loss / dx = (softmax(z) - y) W^T, written out by hand.
  const Tensor w(Shape{3, 2}, {0.4, -0.3, -0.2, 0.5, 0.7, 0.1});
  const std::size_t label = 1;
  const InputGradient grad = [&](const Tensor& x) {
    const double z0 = x[0] * w[0] + x[1] * w[2] + x[2] * w[4];
    const double z1 = x[0] * w[1] + x[1] * w[3] + x[2] * w[5];
    const double p1 = 1.0 / (1.0 + std::exp(z0 - z1));
    const double r0 = (1.0 - p1) - (label == 0), r1 = p1 - (label == 1);
    Tensor g(Shape{1, 3});
    for (std::size_t i = 0; i < 3; ++i) g[i] = r0 * w[i * 2] + r1 * w[i * 2 + 1];
    return g;
  };
  const Tensor x(Shape{1, 3}, {0.3, -1.2, 2.5});
  const Tensor g = grad(x);
  const Tensor adv = fgsm(grad, x, spec_of(AttackKind::Fgsm));
  for (std::size_t i = 0; i < 3; ++i) {
    const double expect = g[i] > 0 ? 0.02 : -0.02;
    CHECK(adv[i] - x[i] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("pgd degenerate cases: zero budget clips, one step without start equals fgsm bitwise") {
  Rng rng(2);
  const Tensor x = random_tensor({3, 5, 2}, rng, -3.5, 3.5);
  AttackSpec s = spec_of(AttackKind::Pgd);
  s.epsilon = 0.0;
  CHECK(pgd(wavy_gradient(0.2), x, s, rng) == clip(x, 3.0));

  s = spec_of(AttackKind::Pgd);
  s.iterations = 1;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor xi = random_tensor({2, 4, 3}, rng, -3.0, 3.0);
    const auto grad = wavy_gradient(0.37 * trial);
    CHECK(pgd(grad, xi, s, rng, false) == fgsm(grad, xi, s));
  }
}

TEST_CASE("fgsm and pgd stay in the epsilon box and the admissible set") {
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    AttackSpec s = spec_of(trial % 2 ? AttackKind::Pgd : AttackKind::Fgsm);
    s.epsilon = uniform(rng, 0.0, 0.3);
    s.iterations = 1 + uniform_index(rng, 6);
    s.bound = uniform(rng, 0.5, 3.0);
    const Tensor x = random_tensor({2, 3, 4}, rng, -s.bound, s.bound);
    const auto grad = wavy_gradient(uniform(rng, 0.0, 6.3));
    const Tensor adv = s.kind == AttackKind::Pgd ? pgd(grad, x, s, rng) : fgsm(grad, x, s);
    CAPTURE(trial);
    CHECK(linf(adv, x) <= s.epsilon + 1e-12);
    CHECK(inside(adv, s.bound));
  }
}

TEST_CASE("awgn: zero noise clips, variance matches, stream determinism") {
  Rng rng(4);
  const Tensor x = random_tensor({5, 4}, rng, -4.0, 4.0);
  AttackSpec s = spec_of(AttackKind::Awgn);
  s.sigma = 0.0;
  CHECK(awgn(x, s, rng) == clip(x, 3.0));

  s.sigma = 0.03;
  const Tensor big = random_tensor({100000}, rng, -1.0, 1.0);
  const Tensor noisy = awgn(big, s, rng);
  double mean = 0.0, var = 0.0;
  for (std::size_t i = 0; i < big.size(); ++i) mean += noisy[i] - big[i];
  mean /= static_cast<double>(big.size());
  for (std::size_t i = 0; i < big.size(); ++i) var += std::pow(noisy[i] - big[i] - mean, 2);
  var /= static_cast<double>(big.size() - 1);
  CHECK(std::abs(var / 9e-4 - 1.0) < 0.05);

  Rng a(77), b(77);
  CHECK(awgn(x, s, a) == awgn(x, s, b));
}

TEST_CASE("mixed assignment is uniform over the three families") {
  Rng rng(5);
  const auto fam = assign_families(3000, rng);
  std::map<AttackKind, int> count;
  for (AttackKind k : fam) ++count[k];
  CHECK(count.size() == 3);
  for (AttackKind k : {AttackKind::Fgsm, AttackKind::Pgd, AttackKind::Awgn}) {
    CAPTURE(attack_name(k));
    CHECK(std::abs(count[k] - 1000) <= 100);
  }
}

TEST_CASE("poison_batch against a trained model") {
  const auto t = reverb::test::trained_desk(31);
  const auto& model = t.model;
  const auto& params = t.params;

  SUBCASE("none is the identity and every attack keeps shapes") {
    const std::span<const data::LabeledExample> batch(t.test.data(), 8);
    const Tensor x = data::stack_features(batch);
    const auto y = data::labels_of(batch);
    Rng rng(1);
    CHECK(poison_batch(model, params, x, y, spec_of(AttackKind::None), rng) == x);
    for (AttackKind k : {AttackKind::Fgsm, AttackKind::Pgd, AttackKind::Awgn, AttackKind::MixedAll}) {
      const Tensor p = poison_batch(model, params, x, y, spec_of(k), rng);
      CHECK(p.shape() == x.shape());
      CHECK(inside(p, 3.0));
      if (k == AttackKind::Fgsm || k == AttackKind::Pgd) CHECK(linf(p, x) <= 0.02 + 1e-12);
    }
  }

  SUBCASE("mixed matches per-family attacks on the assigned rows") {
    const std::span<const data::LabeledExample> batch(t.test.data(), 12);
    const Tensor x = data::stack_features(batch);
    const auto y = data::labels_of(batch);
    Rng a(9), b(9);
    const Tensor mixed = poison_batch(model, params, x, y, spec_of(AttackKind::MixedAll), a);
    const auto fam = assign_families(12, b);
    for (std::size_t i = 0; i < 12; ++i) {
      const std::size_t row[] = {i};
      const Tensor xi = gather_rows(x, row), mi = gather_rows(mixed, row);
      if (fam[i] == AttackKind::Fgsm) {
        const std::size_t yi[] = {y[i]};
        CHECK(mi == fgsm(model_gradient(model, params, yi), xi, spec_of(AttackKind::Fgsm)));
      } else {
        CHECK(linf(mi, xi) > 0.0);
      }
    }
  }

  SUBCASE("fgsm raises the loss on nearly every batch; pgd is at least as strong") {
    int raised = 0;
    double fgsm_sum = 0.0, pgd_sum = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed);
      data::Dataset pool = t.test;
      shuffle(pool, rng);
      const std::span<const data::LabeledExample> batch(pool.data(), 16);
      const Tensor x = data::stack_features(batch);
      const auto y = data::labels_of(batch);
      const double clean = model.loss(params, x, y);
      const double lf = model.loss(params, poison_batch(model, params, x, y, spec_of(AttackKind::Fgsm), rng), y);
      const double lp = model.loss(params, poison_batch(model, params, x, y, spec_of(AttackKind::Pgd), rng), y);
      raised += lf > clean;
      fgsm_sum += lf;
      pgd_sum += lp;
    }
    CHECK(raised >= 19);
    CHECK(pgd_sum / 20 >= fgsm_sum / 20 - 0.01);
  }
}

TEST_CASE("row gather and scatter") {
  Tensor x(Shape{3, 2}, {1, 2, 3, 4, 5, 6});
  const std::size_t rows[] = {2, 0};
  const Tensor g = gather_rows(x, rows);
  CHECK(g == Tensor(Shape{2, 2}, {5, 6, 1, 2}));
  scatter_rows(Tensor(Shape{2, 2}, {0, 0, 9, 9}), rows, x);
  CHECK(x == Tensor(Shape{3, 2}, {9, 9, 3, 4, 0, 0}));
  const std::size_t bad[] = {3};
  CHECK_THROWS_AS(gather_rows(x, bad), ShapeError);
}
