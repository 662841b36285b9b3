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

// Data-parallel inner loops used by the autodiff engine, the attacks and the
// optimizers. Every kernel has a scalar reference implementation and, on x86-64,
// an AVX2/FMA variant. The variant is chosen once per process (CPU detection,
// overridable with REVERB_ISA=scalar|avx2) and never changes afterwards, so
// results are reproducible run to run on the same host. Scalar and AVX2 results
// agree to rounding (FMA contraction and lane-wise reductions), not bitwise.

#include <cstddef>
#include <string_view>

namespace reverb::kernels {

enum class Isa { Scalar, Avx2 };

std::string_view isa_name(Isa isa);

struct KernelTable {
  Isa isa;

  /// C[m,n] (+)= A[m,k] * B[k,n]; row-major with leading dimensions.
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate);

  /// C[m,n] (+)= A^T * B where A is stored [k,m] and B is [k,n].
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate);

  /// y += alpha * x
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);

  double (*dot)(std::size_t n, const double* x, const double* y);

  /// y = max(x, 0)
  void (*relu)(std::size_t n, const double* x, double* y);

  /// dx = dy where x > 0, else 0
  void (*relu_backward)(std::size_t n, const double* x, const double* dy, double* dx);

  /// out = clamp(clamp(cur + step*sign(grad), origin-radius, origin+radius), -bound, bound)
  /// with sign(0) = 0. Signed-gradient ascent followed by projection onto the
  /// l-inf ball around `origin` and then the admissible box.
  void (*signed_step_project)(std::size_t n, const double* cur, const double* origin, const double* grad,
                              double step, double radius, double bound, double* out);

  /// Adam moment update and parameter step for one tensor.
  /// m = b1*m + (1-b1)*g; v = b2*v + (1-b2)*g^2; p -= lr_hat * m / (sqrt(v) + eps_hat)
  /// where lr_hat and eps_hat already include bias corrections.
  void (*adam_update)(std::size_t n, const double* g, double* m, double* v, double* p, double beta1,
                      double beta2, double lr_hat, double eps_hat);
};

const KernelTable& scalar_table();

/// Whether the ISA is compiled in and supported by this CPU.
bool isa_available(Isa isa);

/// Table for `isa`; throws ConfigError when unavailable.
const KernelTable& table(Isa isa);

/// Process-wide selection, fixed on first use.
const KernelTable& active();

}  // namespace reverb::kernels
