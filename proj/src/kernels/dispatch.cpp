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

#include <cstdlib>
#include <string>
#include <string_view>

#include "kernels_impl.hpp"
#include "reverb/error.hpp"

namespace reverb::kernels {

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return "scalar";
    case Isa::Avx2:
      return "avx2";
  }
  return "unknown";
}

const KernelTable& scalar_table() {
  static const KernelTable t{Isa::Scalar,        scalar::gemm_nn, scalar::gemm_tn,
                             scalar::axpy,       scalar::dot,     scalar::relu,
                             scalar::relu_backward, scalar::signed_step_project, scalar::adam_update};
  return t;
}

#if defined(REVERB_HAVE_AVX2)
namespace {
const KernelTable& avx2_table() {
  static const KernelTable t{Isa::Avx2,        avx2::gemm_nn, avx2::gemm_tn,
                             avx2::axpy,       avx2::dot,     avx2::relu,
                             avx2::relu_backward, avx2::signed_step_project, avx2::adam_update};
  return t;
}
}  // namespace
#endif

bool isa_available(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return true;
    case Isa::Avx2:
#if defined(REVERB_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& table(Isa isa) {
  if (!isa_available(isa)) {
    throw ConfigError("kernel ISA '" + std::string(isa_name(isa)) + "' is not available on this host");
  }
#if defined(REVERB_HAVE_AVX2)
  if (isa == Isa::Avx2) return avx2_table();
#endif
  return scalar_table();
}

namespace {

const KernelTable& select() {
  if (const char* env = std::getenv("REVERB_ISA")) {
    const std::string_view want(env);
    if (want == "scalar") return scalar_table();
    if (want == "avx2") return table(Isa::Avx2);
    if (!want.empty() && want != "auto") throw ConfigError("REVERB_ISA must be scalar, avx2 or auto");
  }
  return isa_available(Isa::Avx2) ? table(Isa::Avx2) : scalar_table();
}

}  // namespace

const KernelTable& active() {
  static const KernelTable& t = select();
  return t;
}

}  // namespace reverb::kernels
