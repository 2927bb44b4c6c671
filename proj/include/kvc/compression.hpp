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

// Block-granular eviction with a variable number of evicted blocks per head.
//
// For one sequence the pipeline is:
//
//   M1  slot metrics, grouped by head, each head in block-table order
//   M2  M1 sorted by (head, metric); empty slots first, protected slots last
//   M3  M2 viewed as rows of b slots. Row e-1 of head h holds the next b
//       cheapest KVs once e-1 blocks are gone; its last entry is m(h, e).
//   M4  rows of M3 ordered by last entry across all heads
//   W5  first E_s evictable rows of M4 marked
//   W7  W5 mapped back to the M1 layout
//
// MoveCache then packs the kept KVs of each head into its leading blocks so
// that the trailing e_h blocks hold only evicted or empty slots, and those
// blocks are returned to the free set.

#ifndef KVC_COMPRESSION_HPP_
#define KVC_COMPRESSION_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "kvc/block_manager.hpp"
#include "kvc/cache.hpp"
#include "kvc/metrics.hpp"

namespace kvc {

struct SlotEntry {
  int head = 0;          // layer * H + kv_head
  int position = 0;      // position in the head's block-table layout
  std::size_t slot = 0;  // physical slot index
  double metric = 0.0;
  std::int32_t logical_index = -1;
  bool empty = false;
  bool is_protected = false;

  // Metric used for ordering; protected slots sort after everything.
  double sort_metric() const;
};

struct HeadLayout {
  int head = 0;
  int blocks = 0;
  int context_length = 0;
  std::size_t first_entry = 0;  // offset of the head's first slot in M1
};

struct SequenceSlots {
  SeqId seq = 0;
  std::vector<HeadLayout> heads;  // heads with at least one block
  std::vector<SlotEntry> entries; // M1
};

SequenceSlots gather_slots(const BlockTables& tables, const MetricsStore& store,
                           SeqId seq);

struct SortedSlots {
  std::vector<SlotEntry> entries;         // M2
  std::vector<std::size_t> permutation;   // entries[k] == m1[permutation[k]]
};

// Within each head: empty slots first, then ascending metric, ties by
// ascending logical index. Heads keep their M1 order.
SortedSlots sort_by_head_metric(std::span<const SlotEntry> m1);

struct CandidateBlock {
  int head = 0;
  int row = 0;             // e - 1
  int head_blocks = 0;     // ceil(C_h / b)
  double threshold = 0.0;  // m(h, row + 1)
  bool evictable = false;  // not the head's last block, no protected slot
};

// M3, one entry per b-slot row of M2, head-major.
std::vector<CandidateBlock> eviction_thresholds(const SortedSlots& m2,
                                                int block_size);

// m(h, e) read from an M3 table.
double max_evicted_metric(std::span<const CandidateBlock> m3, int head, int e);

// M4 as indices into `m3`: ascending threshold, ties by (head, row).
std::vector<std::size_t> order_candidate_blocks(
    std::span<const CandidateBlock> m3);

int evictable_blocks(std::span<const CandidateBlock> m3);

struct EvictionMask {
  std::vector<std::uint8_t> sorted_layout;    // W5 over M2
  std::vector<std::uint8_t> original_layout;  // W7 over M1
  std::vector<int> blocks_per_head;           // e_h, indexed by head ordinal
};

// Marks the first `budget` evictable rows of M4. Throws kBudget when fewer
// rows are evictable.
EvictionMask eviction_mask(const SortedSlots& m2,
                           std::span<const CandidateBlock> m3,
                           std::span<const std::size_t> m4, int budget,
                           int block_size, int num_heads);

struct Relocation {
  std::size_t src_slot = 0;
  std::size_t dst_slot = 0;

  friend bool operator==(const Relocation&, const Relocation&) = default;
};

// Two-cursor compaction of one head. `head_slots[i]` is the physical slot of
// table position i and `mask[i]` is set for evicted and empty slots. Kept KVs
// found in the last `evicted_blocks` blocks are copied (key, value, metric
// entry) into the earliest marked positions in front of that range. Kept KVs
// are then relabelled 0..C'-1 preserving their previous relative order.
// Throws kScheduleCorruption unless exactly evicted_blocks * b positions are
// marked.
std::vector<Relocation> move_cache(UnifiedKVCache& cache, MetricsStore& store,
                                   std::span<const std::size_t> head_slots,
                                   std::span<const std::uint8_t> mask,
                                   int evicted_blocks, int block_size);

struct SequenceBudget {
  SeqId seq = 0;
  int blocks = 0;  // E_s
};

struct RelocationRecord {
  SeqId seq = 0;
  int head = 0;
  Relocation move;
};

struct SequenceSchedule {
  SeqId seq = 0;
  int budget = 0;
  std::vector<int> evicted_blocks;  // e_h per head ordinal
  std::int64_t evicted_kvs = 0;     // live KVs dropped (empties excluded)
};

struct CompressionSchedule {
  std::vector<SequenceSchedule> sequences;
  std::vector<BlockNumber> freed_blocks;
  std::vector<RelocationRecord> relocations;

  std::int64_t total_budget() const;
};

// Frees the trailing e_h blocks of every head in `schedule` (after
// move_cache) and sets C'_h = (blocks - e_h) * b. Returns the count freed.
std::int64_t free_schedule_blocks(CompressionSchedule& schedule,
                                  BlockTables& tables, MetricsStore& store,
                                  BlockManager& manager);

// Evictable rows of one sequence in its current state.
int evictable_blocks(const BlockTables& tables, const MetricsStore& store,
                     SeqId seq);

// Runs the whole pipeline for every sequence in `budgets`. Budgets must
// already be clamped to evictable_blocks().
CompressionSchedule compress(std::span<const SequenceBudget> budgets,
                             UnifiedKVCache& cache, MetricsStore& store,
                             BlockTables& tables, BlockManager& manager);

}  // namespace kvc

#endif  // KVC_COMPRESSION_HPP_
