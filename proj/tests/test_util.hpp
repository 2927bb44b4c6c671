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

#ifndef KVC_TESTS_TEST_UTIL_HPP_
#define KVC_TESTS_TEST_UTIL_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "kvc/block_manager.hpp"
#include "kvc/cache.hpp"
#include "kvc/error.hpp"
#include "kvc/tensor.hpp"
#include "oracles.hpp"

namespace testutil {

using Rng = std::mt19937_64;

inline double normal(Rng& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

inline int uniform(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline kvc::Tensor3 random_tensor(Rng& rng, std::size_t h, std::size_t l,
                                  std::size_t d) {
  kvc::Tensor3 t(h, l, d);
  for (double& x : t.data()) x = normal(rng);
  return t;
}

inline oracle::Cube to_cube(const kvc::Tensor3& t) {
  oracle::Cube c(t.heads(), oracle::Mat(t.rows()));
  for (std::size_t h = 0; h < t.heads(); ++h) {
    for (std::size_t i = 0; i < t.rows(); ++i) {
      const auto r = t.row(h, i);
      c[h][i].assign(r.begin(), r.end());
    }
  }
  return c;
}

inline oracle::Vec to_vec(std::span<const double> s) { return {s.begin(), s.end()}; }

// Expects `fn` to throw kvc::Error with `code`.
template <class Fn>
bool throws_code(Fn&& fn, kvc::ErrorCode code) {
  try {
    fn();
  } catch (const kvc::Error& e) {
    return e.code() == code;
  }
  return false;
}

// Allocates a prefill-shaped sequence and appends random KVs to every head
// so that head k of layer m ends with lengths[m * H + k] KVs. Returns the
// keys and values written, per head index.
struct WrittenHead {
  oracle::Mat keys;
  oracle::Mat values;
};

inline std::vector<WrittenHead> fill_sequence(Rng& rng, kvc::BlockTables& tables,
                                              kvc::UnifiedKVCache& cache,
                                              kvc::BlockManager& mgr, kvc::SeqId seq,
                                              std::span<const int> lengths) {
  const int heads = tables.heads_per_sequence();
  const int b = tables.block_size();
  const int longest = *std::max_element(lengths.begin(), lengths.end());
  if (!mgr.allocate_prefill(tables, {seq, kvc::AllocationRequest::Kind::kPrefill,
                                     std::max(1, longest)})) {
    throw kvc::Error(kvc::ErrorCode::kInfeasible, "test pool too small");
  }
  // Trim each head to the blocks its length needs.
  for (int h = 0; h < heads; ++h) {
    auto& t = tables.head(seq, h);
    const int keep = (lengths[static_cast<std::size_t>(h)] + b - 1) / b;
    std::vector<kvc::BlockNumber> extra(t.blocks.begin() + keep, t.blocks.end());
    mgr.free_blocks(tables, extra);
  }
  std::vector<WrittenHead> out(static_cast<std::size_t>(heads));
  const auto d = static_cast<std::size_t>(cache.head_dim());
  for (int layer = 0; layer < tables.num_layers(); ++layer) {
    for (int kv = 0; kv < tables.num_kv_heads(); ++kv) {
      const int h = tables.head_index(layer, kv);
      for (int i = 0; i < lengths[static_cast<std::size_t>(h)]; ++i) {
        oracle::Vec k(d), v(d);
        for (auto& x : k) x = normal(rng);
        for (auto& x : v) x = normal(rng);
        kvc::append_kv(tables, cache, seq, layer, kv, k, v);
        out[static_cast<std::size_t>(h)].keys.push_back(k);
        out[static_cast<std::size_t>(h)].values.push_back(v);
      }
    }
  }
  return out;
}

}  // namespace testutil

#endif  // KVC_TESTS_TEST_UTIL_HPP_
