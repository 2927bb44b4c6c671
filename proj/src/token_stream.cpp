// Copyright 2026 The kvcompress Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "kvc/token_stream.hpp"

#include <cmath>
#include <numbers>

#include "kvc/error.hpp"

namespace kvc {
namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Uniform in (0, 1], never 0 so the log below stays finite.
double unit_open(std::uint64_t& state) {
  return (static_cast<double>(splitmix64(state) >> 11) + 1.0) * 0x1.0p-53;
}

// Box-Muller; implemented here rather than with <random> distributions so
// the stream is identical across standard libraries.
void fill_normal(std::uint64_t& state, std::span<double> out) {
  for (std::size_t i = 0; i < out.size(); i += 2) {
    const double r = std::sqrt(-2.0 * std::log(unit_open(state)));
    const double theta = 2.0 * std::numbers::pi * unit_open(state);
    out[i] = r * std::cos(theta);
    if (i + 1 < out.size()) out[i + 1] = r * std::sin(theta);
  }
}

}  // namespace

void TokenStream::fill(SeqId seq, int layer, int position, std::span<double> q,
                       std::span<double> k, std::span<double> v) const {
  const auto d = static_cast<std::size_t>(shape_.head_dim);
  if (q.size() != d * shape_.query_heads || k.size() != d * shape_.kv_heads ||
      v.size() != k.size()) {
    throw Error(ErrorCode::kShape, "token stream buffers do not match model shape");
  }
  std::uint64_t state = seed_;
  splitmix64(state);
  state ^= static_cast<std::uint64_t>(seq) * 0xD1B54A32D192ED03ULL;
  splitmix64(state);
  state ^= (static_cast<std::uint64_t>(layer) << 32) ^
           static_cast<std::uint32_t>(position);
  splitmix64(state);
  fill_normal(state, q);
  fill_normal(state, k);
  fill_normal(state, v);
}

}  // namespace kvc
