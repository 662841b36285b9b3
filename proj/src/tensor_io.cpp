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

#include "reverb/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "reverb/error.hpp"

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

namespace reverb {

namespace {

constexpr char kMagic[4] = {'R', 'V', 'B', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError("truncated tensor file " + path.string());
  return v;
}

}  // namespace

void save_tensors(const std::filesystem::path& path, const NamedTensors& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.raw()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw Error("write failed for " + path.string());
}

NamedTensors load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw DataError(path.string() + " is not a tensor file");
  if (get<std::uint32_t>(in, path) != kVersion) throw DataError("unsupported tensor file version in " + path.string());
  const auto count = get<std::uint64_t>(in, path);
  NamedTensors result;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name(get<std::uint32_t>(in, path), '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name.size()))) throw DataError("truncated " + path.string());
    Shape shape(get<std::uint32_t>(in, path));
    for (auto& d : shape) d = get<std::uint64_t>(in, path);
    Tensor t(shape);
    if (!in.read(reinterpret_cast<char*>(t.raw()), static_cast<std::streamsize>(t.size() * sizeof(double)))) {
      throw DataError("truncated tensor '" + name + "' in " + path.string());
    }
    result.emplace(std::move(name), std::move(t));
  }
  return result;
}

}  // namespace reverb
