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
#include <numeric>

#include "reverb/error.hpp"
#include "reverb/fed/federation.hpp"
#include "reverb/kernels/kernels.hpp"
#include "test_util.hpp"
#include "trained_model.hpp"

using namespace reverb;
using namespace reverb::fed;
using reverb::test::toy_arch;
using reverb::test::toy_dataset;

namespace {

double log_choose(double n, double k) { return std::lgamma(n + 1) - std::lgamma(k + 1) - std::lgamma(n - k + 1); }

// E[beta^2] summed directly over the hypergeometric pmf.
double beta_second_moment(std::size_t N, std::size_t A, std::size_t m) {
  double s = 0.0;
  for (std::size_t k = 0; k <= std::min(A, m); ++k) {
    if (m - k > N - A) continue;
    const double p = std::exp(log_choose(A, k) + log_choose(N - A, m - k) - log_choose(N, m));
    s += p * std::pow(static_cast<double>(k) / m, 2);
  }
  return s;
}

data::ClientShard shard_of(data::Dataset examples, std::size_t id, bool adversarial = false) {
  data::ClientShard s;
  s.client_id = id;
  s.examples = std::move(examples);
  s.adversarial = adversarial;
  return s;
}

FedConfig toy_config() {
  FedConfig c;
  c.num_clients = 4;
  c.sample_fraction = 0.5;
  c.local_steps = 3;
  c.batch_size = 4;
  c.adversarial_fraction = 0.5;
  c.optimizer.learning_rate = 1e-2;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("config derives m and |A|") {
  FedConfig c;
  CHECK(c.clients_per_round() == 6);
  CHECK(c.num_adversaries() == 5);
  c.adversarial_fraction = 0.25;
  CHECK(c.num_adversaries() == 3);
  c.sample_fraction = 0.01;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = FedConfig{};
  c.adversarial_fraction = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("adversary designation") {
  CHECK(designate_adversaries(10, 0.0, 1).empty());
  const auto all = designate_adversaries(10, 1.0, 1);
  CHECK(all.size() == 10);
  CHECK(std::is_sorted(all.begin(), all.end()));
  CHECK(designate_adversaries(10, 0.5, 1).size() == 5);
  CHECK(designate_adversaries(10, 0.5, 7) == designate_adversaries(10, 0.5, 7));
  CHECK(designate_adversaries(10, 0.33, 1).size() == 4);
  // Each client is adversarial in about half of the seeds.
  std::vector<int> hits(10, 0);
  for (std::uint64_t s = 0; s < 2000; ++s)
    for (std::size_t id : designate_adversaries(10, 0.5, s)) ++hits[id];
  for (int h : hits) CHECK(std::abs(h - 1000) < 120);
}

TEST_CASE("client sampling") {
  Rng rng(3);
  const auto full = sample_clients(10, 10, rng);
  CHECK(full == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  CHECK_THROWS_AS(sample_clients(10, 0, rng), ConfigError);
  CHECK_THROWS_AS(sample_clients(10, 11, rng), ConfigError);

  std::vector<int> hits(10, 0);
  for (int i = 0; i < 10000; ++i) ++hits[sample_clients(10, 1, rng)[0]];
  for (int h : hits) CHECK(std::abs(h - 1000) <= 150);

  const std::vector<std::size_t> adv = designate_adversaries(10, 0.5, 11);
  auto beta = [&](const std::vector<std::size_t>& s) {
    std::size_t k = 0;
    for (std::size_t id : s) k += std::count(adv.begin(), adv.end(), id);
    return static_cast<double>(k) / static_cast<double>(s.size());
  };
  double mean = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const auto s = sample_clients(10, 6, rng);
    CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
    mean += beta(s);
  }
  CHECK(std::abs(mean / 10000 - 0.5) <= 0.02);

  double second = 0.0;
  for (int i = 0; i < 100000; ++i) second += std::pow(beta(sample_clients(10, 6, rng)), 2);
  second /= 100000;
  const double oracle = beta_second_moment(10, 5, 6);
  CHECK(std::abs(second / oracle - 1.0) < 0.01);
  // Closed form rho^2 + rho (1 - rho) (N - m) / (m (N - 1)) agrees with the pmf sum.
  CHECK(oracle == doctest::Approx(0.25 + 0.25 * 4.0 / 54.0).epsilon(1e-12));
}

TEST_CASE("fedavg algebra") {
  auto scalar = [](double v) {
    model::Params p;
    p.emplace("w", Tensor(Shape{1}, {v}));
    return p;
  };
  const ClientUpdate one[] = {{scalar(2.5), 7}};
  CHECK(fedavg(one).at("w")[0] == 2.5);
  const ClientUpdate weighted[] = {{scalar(0.0), 1}, {scalar(4.0), 3}};
  CHECK(fedavg(weighted).at("w")[0] == doctest::Approx(3.0).epsilon(1e-15));
  const ClientUpdate equal[] = {{scalar(1.0), 5}, {scalar(2.0), 5}, {scalar(6.0), 5}};
  CHECK(fedavg(equal).at("w")[0] == doctest::Approx(3.0).epsilon(1e-15));

  CHECK_THROWS_AS(fedavg(std::span<const ClientUpdate>{}), ConfigError);
  const ClientUpdate empty[] = {{scalar(1.0), 0}, {scalar(2.0), 0}};
  CHECK_THROWS_AS(fedavg(empty), DataError);
  model::Params wide;
  wide.emplace("w", Tensor(Shape{2}, {1.0, 2.0}));
  const ClientUpdate mismatch[] = {{scalar(1.0), 1}, {wide, 1}};
  CHECK_THROWS_AS(fedavg(mismatch), ShapeError);

  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ClientUpdate> ups;
    for (int n = 0; n < 5; ++n) {
      model::Params p;
      p.emplace("a", reverb::test::random_tensor({3, 4}, rng, -5, 5));
      p.emplace("b", reverb::test::random_tensor({2}, rng, -5, 5));
      ups.push_back({std::move(p), 1 + uniform_index(rng, 50)});
    }
    const auto avg = fedavg(ups);
    for (const auto& [name, t] : avg) {
      for (std::size_t i = 0; i < t.size(); ++i) {
        double lo = 1e300, hi = -1e300;
        for (const auto& u : ups) lo = std::min(lo, u.params.at(name)[i]), hi = std::max(hi, u.params.at(name)[i]);
        CHECK(t[i] >= lo - 1e-12);
        CHECK(t[i] <= hi + 1e-12);
      }
    }
  }
}

TEST_CASE("local training") {
  const model::Cnn model(toy_arch());
  const model::Params global = model::init_params(model.arch(), 2);
  const auto shard = shard_of(toy_dataset(3, 2, 4), 0);
  FedConfig cfg = toy_config();
  cfg.optimizer.kind = model::OptimizerKind::Sgd;
  cfg.optimizer.learning_rate = 0.1;
  cfg.batch_size = 16;

  SUBCASE("zero steps return the global model") {
    cfg.local_steps = 0;
    Rng rng(1);
    CHECK(model::fingerprint(local_train(model, shard, global, cfg, rng)) == model::fingerprint(global));
  }

  SUBCASE("one full-batch SGD step matches theta - lr * grad") {
    cfg.local_steps = 1;
    Rng rng(1);
    const auto local = local_train(model, shard, global, cfg, rng);
    const auto g = model.grad_params(global, data::stack_features(shard.examples), data::labels_of(shard.examples),
                                     model::Mode::Train, 0, cfg.optimizer.weight_decay);
    for (const auto& [name, t] : global) {
      CAPTURE(name);
      Tensor expect = t;
      if (auto it = g.grads.find(name); it != g.grads.end()) {
        for (std::size_t i = 0; i < t.size(); ++i) expect[i] = t[i] - 0.1 * it->second[i];
      } else if (auto r = g.running.find(name); r != g.running.end()) {
        expect = r->second;
      }
      CHECK(max_abs_diff(local.at(name), expect) < 1e-12);
    }
  }

  SUBCASE("poisoning is gated by the adversarial flag") {
    cfg.attack.kind = attack::AttackKind::Pgd;
    cfg.attack.iterations = 2;
    cfg.batch_size = 4;
    auto honest = shard;
    auto flagged = shard;
    flagged.adversarial = true;
    FedConfig none = cfg;
    none.attack.kind = attack::AttackKind::None;
    Rng a(9), b(9), c(9);
    const auto p_honest = local_train(model, honest, global, cfg, a);
    const auto p_none = local_train(model, flagged, global, none, b);
    const auto p_poison = local_train(model, flagged, global, cfg, c);
    CHECK(model::fingerprint(p_honest) == model::fingerprint(p_none));
    CHECK(model::fingerprint(p_poison) != model::fingerprint(p_honest));
  }

  SUBCASE("an empty shard is rejected") {
    Rng rng(1);
    CHECK_THROWS_AS(local_train(model, shard_of({}, 3), global, cfg, rng), DataError);
  }
}

TEST_CASE("clean round with full participation is canonical FedAvg") {
  const model::Cnn model(toy_arch());
  FedConfig cfg = toy_config();
  cfg.sample_fraction = 1.0;
  cfg.adversarial_fraction = 0.0;
  cfg.local_steps = 1;
  cfg.batch_size = 64;
  cfg.optimizer.kind = model::OptimizerKind::Sgd;
  cfg.optimizer.learning_rate = 0.05;
  std::vector<data::ClientShard> shards;
  for (std::size_t n = 0; n < 4; ++n) shards.push_back(shard_of(toy_dataset(3, 1 + n, 20 + n), n));
  FedState state{model::init_params(model.arch(), 1), 0};
  const auto start = state.params;
  Federation fed(model, shards, toy_dataset(3, 4, 99), cfg);
  const auto rec = fed.run_round(state);
  CHECK(rec.round == 1);
  CHECK(rec.selected.size() == 4);
  CHECK(rec.beta == 0.0);
  CHECK(rec.aggregate_hash == rec.broadcast_hash);

  // Oracle: sum_n (D_n / D) (theta - lr g_n), with g_n the full-shard gradient.
  const double total = 3.0 * (1 + 2 + 3 + 4);
  for (const auto& [name, t] : start) {
    Tensor expect(t.shape(), 0.0);
    for (const auto& s : shards) {
      const auto g = model.grad_params(start, data::stack_features(s.examples), data::labels_of(s.examples),
                                       model::Mode::Train, 0, cfg.optimizer.weight_decay);
      const double w = static_cast<double>(s.size()) / total;
      for (std::size_t i = 0; i < t.size(); ++i) {
        double v = t[i];
        if (auto it = g.grads.find(name); it != g.grads.end()) v -= 0.05 * it->second[i];
        if (auto r = g.running.find(name); r != g.running.end()) v = r->second[i];
        expect[i] += w * v;
      }
    }
    CAPTURE(name);
    CHECK(max_abs_diff(state.params.at(name), expect) < 1e-12);
  }
}

TEST_CASE("rounds are deterministic and independent of the thread count") {
  const model::Cnn model(toy_arch(3, 0.25));
  FedConfig cfg = toy_config();
  cfg.attack.kind = attack::AttackKind::MixedAll;
  cfg.attack.iterations = 2;
  data::PartitionSpec ps;
  ps.num_clients = 4;
  ps.alpha = 0.5;
  ps.seed = 3;

  auto run = [&](std::size_t threads, bool with_defense) {
    FedConfig c = cfg;
    c.threads = threads;
    auto fd = prepare_data(toy_dataset(3, 20, 1), ps, 0.2, 0.1, c);
    defense::DefenseConfig dc;
    dc.mode = defense::DefenseMode::AllAdversarial;
    dc.attack.iterations = 2;
    dc.pretrain_epochs = 1;
    defense::ReserveDefense def(model, fd.reserve, dc, c.seed);
    Federation fed(model, std::move(fd.shards), std::move(fd.test), c, with_defense ? &def : nullptr);
    FedState state{def.pretrain(model::init_params(model.arch(), c.seed)), 0};
    std::vector<RoundRecord> recs;
    for (int r = 0; r < 3; ++r) recs.push_back(fed.run_round(state));
    return std::make_pair(recs, model::fingerprint(state.params));
  };
  for (bool with_defense : {false, true}) {
    CAPTURE(with_defense);
    const auto [a, ha] = run(1, with_defense);
    const auto [b, hb] = run(1, with_defense);
    const auto [c, hc] = run(3, with_defense);
    CHECK(ha == hb);
    CHECK(ha == hc);
    for (std::size_t r = 0; r < a.size(); ++r) {
      CHECK(a[r].selected == c[r].selected);
      CHECK(a[r].broadcast_hash == c[r].broadcast_hash);
      CHECK(a[r].broadcast.accuracy == c[r].broadcast.accuracy);
      CHECK(a[r].beta * 2 == static_cast<double>(a[r].adversarial_selected));
      if (with_defense) CHECK(a[r].broadcast_hash != a[r].aggregate_hash);
      else CHECK(a[r].broadcast_hash == a[r].aggregate_hash);
    }
  }
}

TEST_CASE("data preparation flags adversaries and keeps every example once") {
  FedConfig cfg = toy_config();
  data::PartitionSpec ps;
  ps.num_clients = 4;
  ps.seed = 2;
  const auto fd = prepare_data(toy_dataset(3, 30, 1), ps, 0.2, 0.05, cfg);
  CHECK(fd.test.size() == 18);
  std::vector<int> seen(90, 0);
  for (const auto& e : fd.test) ++seen[e.id];
  for (const auto& e : fd.reserve.examples) ++seen[e.id];
  std::size_t flagged = 0;
  for (const auto& s : fd.shards) {
    flagged += s.adversarial;
    for (const auto& e : s.examples) ++seen[e.id];
  }
  CHECK(flagged == 2);
  CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
  ps.num_clients = 5;
  CHECK_THROWS_AS(prepare_data(toy_dataset(3, 30, 1), ps, 0.2, 0.05, cfg), ConfigError);
}
