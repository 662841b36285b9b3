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

#include <cstddef>

#include "reverb/kernels/kernels.hpp"

namespace reverb::kernels {

#define REVERB_KERNEL_DECLS                                                                                   \
  void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b, \
               std::size_t ldb, double* c, std::size_t ldc, bool accumulate);                                  \
  void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b, \
               std::size_t ldb, double* c, std::size_t ldc, bool accumulate);                                  \
  void axpy(std::size_t n, double alpha, const double* x, double* y);                                          \
  double dot(std::size_t n, const double* x, const double* y);                                                 \
  void relu(std::size_t n, const double* x, double* y);                                                        \
  void relu_backward(std::size_t n, const double* x, const double* dy, double* dx);                            \
  void signed_step_project(std::size_t n, const double* cur, const double* origin, const double* grad,         \
                           double step, double radius, double bound, double* out);                             \
  void adam_update(std::size_t n, const double* g, double* m, double* v, double* p, double beta1, double beta2, \
                   double lr_hat, double eps_hat);

namespace scalar {
REVERB_KERNEL_DECLS
}

#if defined(REVERB_HAVE_AVX2)
namespace avx2 {
REVERB_KERNEL_DECLS
}
#endif

#undef REVERB_KERNEL_DECLS

}  // namespace reverb::kernels
