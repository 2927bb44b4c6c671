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

// Reference attention: causal MHA, grouped-query attention without repeated
// KV storage, and single-query paged attention over per-head block tables.
//
// The default entry points parallelise over (head, query row) with OpenMP.
// Each row is computed by one thread in a fixed order, so results are
// bit-identical for any thread count. `reference::` holds plain serial
// versions kept for cross-checking and benchmarking.

#ifndef KVC_ATTENTION_HPP_
#define KVC_ATTENTION_HPP_

#include <vector>

#include "kvc/cache.hpp"
#include "kvc/exec.hpp"
#include "kvc/tensor.hpp"

namespace kvc {

struct AttentionConfig {
  int query_heads = 1;
  int kv_heads = 1;
  int head_dim = 1;
  int layers = 1;

  int group_size() const { return query_heads / kv_heads; }
  // Query head h reads kv head h / r.
  int kv_head_of(int query_head) const { return query_head / group_size(); }
  void validate() const;
};

struct AttentionResult {
  Tensor3 output;   // heads x L x d
  Tensor3 weights;  // heads x L x L, lower-triangular, rows sum to 1
};

struct PagedAttentionResult {
  Matrix output;  // n_q x d
  // weights[h][i]: probability query head h assigns to logical position i of
  // its kv head, for i in [0, C).
  std::vector<std::vector<double>> weights;
};

// Q, K, V: H x L x d.
AttentionResult dense_attention(const Tensor3& q, const Tensor3& k,
                                const Tensor3& v, Exec exec = Exec::kParallel);

// Q: n_q x L x d; K, V: n_k x L x d.
AttentionResult gqa_attention(const Tensor3& q, const Tensor3& k,
                              const Tensor3& v, const AttentionConfig& cfg,
                              Exec exec = Exec::kParallel);

// One query per query head against the live KVs of (seq, layer). Heads may
// hold different numbers of KVs.
PagedAttentionResult paged_attention(const Matrix& queries,
                                     const UnifiedKVCache& cache,
                                     const BlockTables& tables, SeqId seq,
                                     int layer, const AttentionConfig& cfg,
                                     Exec exec = Exec::kParallel);

namespace reference {

AttentionResult gqa_attention(const Tensor3& q, const Tensor3& k,
                              const Tensor3& v, const AttentionConfig& cfg);

PagedAttentionResult paged_attention(const Matrix& queries,
                                     const UnifiedKVCache& cache,
                                     const BlockTables& tables, SeqId seq,
                                     int layer, const AttentionConfig& cfg);

}  // namespace reference
}  // namespace kvc

#endif  // KVC_ATTENTION_HPP_
