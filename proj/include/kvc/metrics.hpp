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

// Eviction metrics: aggregated past attention per key, grouped over the
// query heads that share a kv head.
//
// For kv head g with query group H_g = {r*g, ..., r*g + r - 1} and
// f(x) = x (L1) or x^2 (L2):
//
//   window: M[g][j] = sum_{h in H_g} sum_{i = L-w}^{L-1} f(A[h][i][j]),
//           then max-pooled over j with a centred window of width p that is
//           truncated at the sequence edges. Keys j >= L-w are protected.
//   full:   M[g][j] = sum_{h in H_g} sum_{i = j+v}^{L-1} f(A[h][i][j]).
//
// The per-query-head partial sums are formed first and then added across
// the group, so a grouped metric is bit-identical to summing per-head
// metrics computed on an explicitly repeated cache.

#ifndef KVC_METRICS_HPP_
#define KVC_METRICS_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "kvc/cache.hpp"
#include "kvc/exec.hpp"
#include "kvc/tensor.hpp"

namespace kvc {

enum class MetricMode { kFull, kWindow };
enum class Aggregation { kL1, kL2 };

struct MetricConfig {
  MetricMode mode = MetricMode::kWindow;
  Aggregation aggregation = Aggregation::kL2;
  int window = 8;           // w: observation window (window mode)
  int pool = 7;             // p: odd max-pool width (window mode)
  int excluded_window = 10; // v: excluded query window (full mode)
  // Off selects the reading where observation-window keys are left to
  // compete on their (naturally low) metrics.
  bool protect_window = true;

  void validate() const;
};

struct KeyMetrics {
  Matrix values;                            // kv_heads x L
  std::vector<std::uint8_t> protected_keys; // per key, shared by all heads
};

// attention: n_q x L x L causal weights of one layer.
KeyMetrics window_metrics(const Tensor3& attention, int kv_heads,
                          const MetricConfig& cfg, Exec exec = Exec::kParallel);
KeyMetrics full_metrics(const Tensor3& attention, int kv_heads,
                        const MetricConfig& cfg, Exec exec = Exec::kParallel);
KeyMetrics prefill_metrics(const Tensor3& attention, int kv_heads,
                           const MetricConfig& cfg, Exec exec = Exec::kParallel);

namespace reference {
KeyMetrics window_metrics(const Tensor3& attention, int kv_heads,
                          const MetricConfig& cfg);
KeyMetrics full_metrics(const Tensor3& attention, int kv_heads,
                        const MetricConfig& cfg);
}  // namespace reference

enum ProtectionFlag : std::uint8_t {
  kUnprotected = 0,
  kWindowProtected = 1,  // prompt key inside the observation window
  kFreshProtected = 2,   // decode key created during the current step
};

struct SlotMetric {
  double metric = 0.0;
  // Position of the KV in its head's ordering; live slots of a head hold a
  // permutation of 0..C-1.
  std::int32_t logical_index = -1;
  // Token position the KV was generated at. Never changes.
  std::int32_t token_position = -1;
  std::uint8_t protection = kUnprotected;

  bool is_protected() const { return protection != kUnprotected; }
};

// Per-slot metrics in the same N x b layout as the KV store.
class MetricsStore {
 public:
  MetricsStore(int num_blocks, int block_size);

  std::size_t size() const { return slots_.size(); }
  int block_size() const { return block_size_; }

  SlotMetric& at(std::size_t slot) { return slots_[slot]; }
  const SlotMetric& at(std::size_t slot) const { return slots_[slot]; }
  SlotMetric& at(SlotHandle h) {
    return slots_[static_cast<std::size_t>(h.block) * block_size_ + h.offset];
  }
  const SlotMetric& at(SlotHandle h) const {
    return slots_[static_cast<std::size_t>(h.block) * block_size_ + h.offset];
  }

  void reset_block(BlockNumber n);
  // Drops kFreshProtected from every slot; called at the start of each step.
  void clear_fresh();

 private:
  int block_size_;
  std::vector<SlotMetric> slots_;
};

// Writes prefill metrics for every kv head of (seq, layer). Position i of
// each head receives logical index i and token position i.
void load_prefill_metrics(MetricsStore& store, const BlockTables& tables,
                          SeqId seq, int layer, const KeyMetrics& metrics);

// Initialises the slot of a freshly appended decode KV: metric 0, logical
// index C-1, fresh protection.
void init_decode_slot(MetricsStore& store, SlotHandle slot, int logical_index,
                      int token_position);

// Adds the attention of one new query token to the live KVs of a kv head.
// group_rows[g][i] is the weight query head g of the group gives position i;
// every row must have length C. In full mode keys whose token position is
// within v of the query are skipped.
void accumulate_decode(MetricsStore& store, const BlockTables& tables,
                       SeqId seq, int layer, int kv_head,
                       std::span<const std::vector<double>> group_rows,
                       int query_position, const MetricConfig& cfg);

}  // namespace kvc

#endif  // KVC_METRICS_HPP_
