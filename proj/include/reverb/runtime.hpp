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

namespace reverb {

/// Keeps large freed blocks in the heap instead of returning them to the OS.
/// Training allocates and frees the same multi-megabyte activations every
/// step; without this glibc maps and faults them in again each time.
/// No-op on other C libraries. Call once at program start.
void tune_allocator();

}  // namespace reverb
