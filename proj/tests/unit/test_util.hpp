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

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "reverb/autodiff/graph.hpp"
#include "reverb/rng.hpp"
#include "reverb/tensor.hpp"

namespace reverb::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

struct MicroCnn {
  autodiff::Graph graph;
  autodiff::Bindings bindings;
};

// conv(3x3, 2->3) -> batch norm -> relu -> pool -> dense(4) -> relu -> dropout -> dense(classes) -> CE.
inline MicroCnn micro_cnn(Rng& rng, std::size_t h, std::size_t w, std::size_t classes) {
  using namespace autodiff;
  MicroCnn net;
  Graph& g = net.graph;
  const NodeId x = g.input("x");
  NodeId y = g.conv2d(x, g.parameter("conv.w"), g.parameter("conv.b"));
  y = g.batch_norm(y, g.parameter("bn.gamma"), g.parameter("bn.beta"), g.input("bn.mean"), g.input("bn.var"));
  y = g.flatten(g.maxpool2(g.relu(y)));
  y = g.relu(g.affine(y, g.parameter("fc.w"), g.parameter("fc.b")));
  y = g.affine(g.dropout(y, 0.25), g.parameter("out.w"), g.parameter("out.b"));
  g.named(g.softmax_cross_entropy(y, g.input("t")), "loss");

  const std::size_t batch = 3;
  const std::size_t flat = (h / 2) * (w / 2) * 3;
  Tensor targets({batch, classes}, 0.0);
  for (std::size_t i = 0; i < batch; ++i) targets[i * classes + uniform_index(rng, classes)] = 1.0;
  net.bindings = {
      {"x", random_tensor({batch, h, w, 2}, rng)},
      {"conv.w", random_tensor({3, 3, 2, 3}, rng, -0.5, 0.5)},
      {"conv.b", random_tensor({3}, rng, -0.1, 0.1)},
      {"bn.gamma", random_tensor({3}, rng, 0.5, 1.5)},
      {"bn.beta", random_tensor({3}, rng, -0.2, 0.2)},
      {"bn.mean", random_tensor({3}, rng, -0.2, 0.2)},
      {"bn.var", random_tensor({3}, rng, 0.5, 1.5)},
      {"fc.w", random_tensor({flat, 4}, rng, -0.5, 0.5)},
      {"fc.b", random_tensor({4}, rng, -0.1, 0.1)},
      {"out.w", random_tensor({4, classes}, rng, -0.5, 0.5)},
      {"out.b", random_tensor({classes}, rng, -0.1, 0.1)},
      {"t", targets},
  };
  return net;
}


// Distance of the instance from the nearest non-differentiable point: smallest
// |relu input| and smallest gap between the two largest entries of a pool window.
// Central differences are only a valid oracle when this exceeds the step by a wide margin.
inline double kink_margin(const autodiff::Graph& g, const autodiff::Bindings& b, const autodiff::RunOptions& opt) {
  using namespace autodiff;
  const Tape tape = forward(g, b, opt);
  double margin = 1e300;
  for (NodeId id = 0; id < g.size(); ++id) {
    const Node& n = g.node(id);
    if (n.op == Op::Relu) {
      for (double v : tape.value(n.inputs[0]).data()) margin = std::min(margin, std::abs(v));
    } else if (n.op == Op::MaxPool2) {
      const Tensor& x = tape.value(n.inputs[0]);
      const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
      for (std::size_t bi = 0; bi < B; ++bi)
        for (std::size_t i = 0; i + 1 < H; i += 2)
          for (std::size_t j = 0; j + 1 < W; j += 2)
            for (std::size_t c = 0; c < C; ++c) {
              double w[4];
              for (std::size_t k = 0; k < 4; ++k) w[k] = x[((bi * H + i + k / 2) * W + j + k % 2) * C + c];
              std::sort(w, w + 4);
              if (w[3] == 0.0) continue;  // all-zero window after a relu: gradient is zero either way
              margin = std::min(margin, w[3] - w[2]);
            }
    }
  }
  return margin;
}

// Draws micro-CNN instances until one sits at least `margin` away from every kink.
inline MicroCnn smooth_micro_cnn(Rng& rng, std::size_t h, std::size_t w, std::size_t classes,
                                 const autodiff::RunOptions& opt, double margin = 1e-3) {
  for (;;) {
    MicroCnn net = micro_cnn(rng, h, w, classes);
    if (kink_margin(net.graph, net.bindings, opt) >= margin) return net;
  }
}

}  // namespace reverb::test
