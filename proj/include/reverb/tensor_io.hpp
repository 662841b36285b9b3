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

// Named-tensor binary files: little-endian, "RVBT" magic, version 1.
// Layout: magic[4] u32 version u64 count, then per entry
// u32 name_len, name bytes, u32 rank, u64 dims[rank], f64 values[numel].

#include <filesystem>
#include <map>
#include <string>

#include "reverb/tensor.hpp"

namespace reverb {

using NamedTensors = std::map<std::string, Tensor>;

void save_tensors(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_tensors(const std::filesystem::path& path);

}  // namespace reverb
