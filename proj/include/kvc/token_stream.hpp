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

#ifndef KVC_TOKEN_STREAM_HPP_
#define KVC_TOKEN_STREAM_HPP_

#include <cstdint>
#include <span>

#include "kvc/attention.hpp"
#include "kvc/cache.hpp"

namespace kvc {

struct ModelShape {
  int layers = 4;
  int query_heads = 8;
  int kv_heads = 2;
  int head_dim = 16;

  AttentionConfig attention() const {
    return {query_heads, kv_heads, head_dim, layers};
  }
};

// Synthetic activations standing in for a model. Each (sequence, layer,
// position) maps to a fixed set of standard-normal Q/K/V components, so a
// sequence recomputed after preemption sees exactly the same tensors.
class TokenStream {
 public:
  TokenStream(std::uint64_t seed, ModelShape shape) : seed_(seed), shape_(shape) {}

  std::uint64_t seed() const { return seed_; }
  const ModelShape& shape() const { return shape_; }

  // q: query_heads * head_dim, k and v: kv_heads * head_dim, head-major.
  void fill(SeqId seq, int layer, int position, std::span<double> q,
            std::span<double> k, std::span<double> v) const;

 private:
  std::uint64_t seed_;
  ModelShape shape_;
};

}  // namespace kvc

#endif  // KVC_TOKEN_STREAM_HPP_
