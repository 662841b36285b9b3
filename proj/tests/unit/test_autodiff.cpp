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

#include <cmath>
#include <numbers>

#include "doctest.h"
#include "reverb/autodiff/graph.hpp"
#include "reverb/rng.hpp"
#include "test_util.hpp"

using namespace reverb;
using namespace reverb::autodiff;

TEST_CASE("evaluate: relu, uniform softmax loss, valid convolution of ones") {
  {
    Graph g;
    g.named(g.relu(g.input("x")), "y");
    const auto out = evaluate(g, {{"x", Tensor::vector({-1.0, 0.0, 2.0})}});
    CHECK(out.at("y") == Tensor::vector({0.0, 0.0, 2.0}));
  }
  {
    Graph g;
    g.named(g.softmax_cross_entropy(g.input("z"), g.input("t")), "loss");
    const auto out = evaluate(g, {{"z", Tensor({1, 2}, {0.0, 0.0})}, {"t", Tensor({1, 2}, {1.0, 0.0})}});
    CHECK(out.at("loss").item() == doctest::Approx(std::numbers::ln2).epsilon(1e-12));
  }
  {
    Graph g;
    g.named(g.conv2d(g.input("x"), g.parameter("k"), kNoNode, Padding::Valid), "y");
    const auto out = evaluate(g, {{"x", Tensor({1, 3, 3, 1}, 1.0)}, {"k", Tensor({2, 2, 1, 1}, 1.0)}});
    CHECK(out.at("y") == Tensor({1, 2, 2, 1}, 4.0));
  }
}

TEST_CASE("same padding preserves spatial size and zero-pads borders") {
  Graph g;
  g.named(g.conv2d(g.input("x"), g.parameter("k"), kNoNode, Padding::Same), "y");
  const auto y = evaluate(g, {{"x", Tensor({1, 3, 3, 1}, 1.0)}, {"k", Tensor({3, 3, 1, 1}, 1.0)}}).at("y");
  CHECK(y.shape() == Shape{1, 3, 3, 1});
  CHECK(y[0] == 4.0);  // corner sees a 2x2 window
  CHECK(y[1] == 6.0);  // edge sees 2x3
  CHECK(y[4] == 9.0);  // centre sees everything
}

TEST_CASE("max-pool floors odd sizes and routes gradient to the argmax") {
  Graph g;
  const NodeId x = g.input("x");
  g.named(g.sum(g.maxpool2(x)), "loss");
  Tensor in({1, 3, 3, 1}, {1, 5, 2, 3, 4, 9, 7, 8, 6});
  const auto pooled = evaluate(g, {{"x", in}});
  CHECK(pooled.at("loss").item() == 5.0);
  const std::vector<std::string> wrt{"x"};
  const auto grad = gradients(g, {{"x", in}}, "loss", wrt).at("x");
  CHECK(grad == Tensor({1, 3, 3, 1}, {0, 1, 0, 0, 0, 0, 0, 0, 0}));
}

TEST_CASE("gradients: polynomial and softmax identities") {
  {
    Graph g;
    const NodeId x = g.input("x");
    g.named(g.sum(g.mul(x, x)), "loss");
    const std::vector<std::string> wrt{"x"};
    CHECK(gradients(g, {{"x", Tensor::scalar(3.0)}}, "loss", wrt).at("x").item() == 6.0);
  }
  {
    Graph g;
    g.named(g.softmax_cross_entropy(g.input("z"), g.input("t")), "loss");
    const Tensor z({1, 3}, {0.3, -1.2, 2.0});
    const Tensor t({1, 3}, {0.0, 1.0, 0.0});
    const std::vector<std::string> wrt{"z"};
    const Tensor grad = gradients(g, {{"z", z}, {"t", t}}, "loss", wrt).at("z");
    const double den = std::exp(0.3) + std::exp(-1.2) + std::exp(2.0);
    CHECK(grad[0] == doctest::Approx(std::exp(0.3) / den).epsilon(1e-12));
    CHECK(grad[1] == doctest::Approx(std::exp(-1.2) / den - 1.0).epsilon(1e-12));
    CHECK(grad[2] == doctest::Approx(std::exp(2.0) / den).epsilon(1e-12));
    CHECK(finite_difference_check(g, {{"z", z}, {"t", t}}, "loss", 1e-5) < 1e-6);
  }
}

TEST_CASE("random two-layer net with 20 parameters matches central differences") {
  // x[3,3] -> affine(3->3) -> relu -> affine(3->2) -> softmax CE: 9+3+6+2 = 20 params.
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Graph g;
    const NodeId x = g.input("x");
    const NodeId h = g.relu(g.affine(x, g.parameter("w1"), g.parameter("b1")));
    const NodeId z = g.affine(h, g.parameter("w2"), g.parameter("b2"));
    g.named(g.softmax_cross_entropy(z, g.input("t")), "loss");
    Bindings b{{"x", test::random_tensor({3, 3}, rng)},       {"w1", test::random_tensor({3, 3}, rng)},
               {"b1", test::random_tensor({3}, rng)},         {"w2", test::random_tensor({3, 2}, rng)},
               {"b2", test::random_tensor({2}, rng)},         {"t", Tensor({3, 2}, {1, 0, 0, 1, 1, 0})}};
    const std::vector<std::string> params{"w1", "b1", "w2", "b2"};
    CHECK(finite_difference_check(g, b, "loss", 1e-5, params) < 1e-4);
  }
}

TEST_CASE("finite_difference_check: exact for linear, tight for quadratic") {
  Rng rng(3);
  {
    Graph g;
    g.named(g.sum(g.mul(g.input("x"), g.input("c"))), "loss");
    Bindings b{{"x", test::random_tensor({5}, rng)}, {"c", test::random_tensor({5}, rng)}};
    for (double step : {1e-5, 1e-3, 1e-1, 1.0}) CHECK(finite_difference_check(g, b, "loss", step) < 1e-10);
  }
  {
    Graph g;
    const NodeId y = g.matmul(g.input("x"), g.parameter("a"));
    g.named(g.sum(g.mul(y, y)), "loss");
    Bindings b{{"x", test::random_tensor({2, 3}, rng)}, {"a", test::random_tensor({3, 2}, rng)}};
    CHECK(finite_difference_check(g, b, "loss", 1e-5) < 1e-8);
  }
  Graph g;
  g.named(g.sum(g.input("x")), "loss");
  CHECK_THROWS_AS(finite_difference_check(g, {{"x", Tensor({2}, 1.0)}}, "loss", 0.0), ConfigError);
}

TEST_CASE("CNN micro-instance (8x8x2) gradients in train and eval mode") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    for (Mode mode : {Mode::Train, Mode::Eval}) {
      Rng rng(100 + seed);
      RunOptions opt{mode, seed};
      test::MicroCnn net = test::smooth_micro_cnn(rng, 8, 8, 3, opt);
      CHECK(finite_difference_check(net.graph, net.bindings, "loss", 1e-5, {}, opt) < 1e-4);
    }
  }
}

TEST_CASE("linearity of gradients in the loss") {
  Rng rng(5);
  test::MicroCnn net = test::micro_cnn(rng, 6, 6, 2);
  Graph& g = net.graph;
  const NodeId f = g.find("loss");
  const NodeId other = g.mean(g.mul(g.find("x"), g.find("x")));
  const double a = 0.7, c = -1.3;
  const NodeId combo = g.add(g.scale(f, a), g.scale(other, c));
  std::vector<NodeId> wrt{g.find("x"), g.find("conv.w"), g.find("fc.w")};
  const Tape tape = forward(g, net.bindings);
  const auto gf = backward(g, tape, f, wrt);
  const auto gg = backward(g, tape, other, wrt);
  const auto gc = backward(g, tape, combo, wrt);
  for (std::size_t i = 0; i < wrt.size(); ++i) {
    for (std::size_t j = 0; j < gc[i].size(); ++j) {
      CHECK(std::abs(gc[i][j] - (a * gf[i][j] + c * gg[i][j])) < 1e-12);
    }
  }
}

TEST_CASE("determinism: bitwise identical values and gradients across runs") {
  Rng rng(9);
  test::MicroCnn net = test::micro_cnn(rng, 8, 8, 3);
  const std::vector<std::string> wrt{"x", "conv.w", "bn.gamma", "fc.w", "out.b"};
  RunOptions opt{Mode::Train, 42};
  const auto g1 = gradients(net.graph, net.bindings, "loss", wrt, opt);
  const auto g2 = gradients(net.graph, net.bindings, "loss", wrt, opt);
  CHECK(g1 == g2);
}

TEST_CASE("50 random micro-graphs agree with finite differences") {
  int failures = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(1000 + seed);
    const std::size_t h = 4 + uniform_index(rng, 4);
    const std::size_t w = 4 + uniform_index(rng, 4);
    const RunOptions opt{seed % 2 ? Mode::Train : Mode::Eval, seed};
    test::MicroCnn net = test::smooth_micro_cnn(rng, h, w, 2 + uniform_index(rng, 3), opt);
    const double err = finite_difference_check(net.graph, net.bindings, "loss", 1e-5, {}, opt);
    CAPTURE(seed);
    CAPTURE(err);
    if (err >= 1e-4) ++failures;
    CHECK(err < 1e-4);
  }
  CHECK(failures == 0);
}

TEST_CASE("error paths") {
  Graph g;
  const NodeId x = g.input("x");
  const NodeId y = g.input("y");
  g.named(g.add(x, y), "sum");
  CHECK_THROWS_AS(evaluate(g, {{"x", Tensor({2}, 1.0)}, {"y", Tensor({3}, 1.0)}}), ShapeError);
  CHECK_THROWS_AS(evaluate(g, {{"x", Tensor({2}, 1.0)}}), GraphError);

  Graph h;
  const NodeId a = h.input("a");
  h.named(h.softmax_cross_entropy(a, h.input("t")), "loss");
  CHECK_THROWS_AS(evaluate(h, {{"a", Tensor({1, 2}, {1e308, -1e308})}, {"t", Tensor({1, 2}, {0.0, 1.0})}}),
                  NumericError);

  const std::vector<std::string> wrt{"x"};
  CHECK_THROWS_AS(gradients(g, {{"x", Tensor({2}, 1.0)}, {"y", Tensor({2}, 1.0)}}, "sum", wrt), ShapeError);

  Graph d;
  const NodeId p = d.input("p");
  d.input("unused");
  d.named(d.sum(p), "loss");
  const std::vector<std::string> both{"p", "unused"};
  const auto gr = gradients(d, {{"p", Tensor({2}, 1.0)}, {"unused", Tensor({3}, 5.0)}}, "loss", both);
  CHECK(gr.at("unused") == Tensor({3}, 0.0));
  CHECK(gr.at("p") == Tensor({2}, 1.0));
}

TEST_CASE("dropout masks only in train mode and is seeded") {
  Graph g;
  g.named(g.dropout(g.input("x"), 0.5), "y");
  const Bindings b{{"x", Tensor({1000}, 1.0)}};
  CHECK(evaluate(g, b).at("y") == b.at("x"));
  const auto t1 = evaluate(g, b, {}, RunOptions{Mode::Train, 1}).at("y");
  const auto t2 = evaluate(g, b, {}, RunOptions{Mode::Train, 1}).at("y");
  const auto t3 = evaluate(g, b, {}, RunOptions{Mode::Train, 2}).at("y");
  CHECK(t1 == t2);
  CHECK_FALSE(t1 == t3);
  std::size_t kept = 0;
  for (double v : t1.data()) {
    CHECK((v == 0.0 || v == 2.0));
    kept += v != 0.0;
  }
  CHECK(kept > 400);
  CHECK(kept < 600);
}
