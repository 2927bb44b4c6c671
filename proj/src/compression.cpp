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

#include "kvc/compression.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <tuple>

#include "kvc/error.hpp"

namespace kvc {

double SlotEntry::sort_metric() const {
  return is_protected ? std::numeric_limits<double>::infinity() : metric;
}

SequenceSlots gather_slots(const BlockTables& tables, const MetricsStore& store,
                           SeqId seq) {
  const int b = tables.block_size();
  SequenceSlots out;
  out.seq = seq;
  auto heads = tables.heads(seq);
  for (int h = 0; h < static_cast<int>(heads.size()); ++h) {
    const HeadTable& t = heads[static_cast<std::size_t>(h)];
    if (t.blocks.empty()) continue;
    out.heads.push_back({h, static_cast<int>(t.blocks.size()), t.context_length,
                         out.entries.size()});
    const int n = static_cast<int>(t.blocks.size()) * b;
    for (int i = 0; i < n; ++i) {
      SlotEntry e;
      e.head = h;
      e.position = i;
      e.slot = static_cast<std::size_t>(t.blocks[static_cast<std::size_t>(i / b)]) * b +
               static_cast<std::size_t>(i % b);
      e.empty = i >= t.context_length;
      if (!e.empty) {
        const SlotMetric& m = store.at(e.slot);
        e.metric = m.metric;
        e.logical_index = m.logical_index;
        e.is_protected = m.is_protected();
      }
      out.entries.push_back(e);
    }
  }
  return out;
}

SortedSlots sort_by_head_metric(std::span<const SlotEntry> m1) {
  SortedSlots out;
  out.permutation.resize(m1.size());
  std::iota(out.permutation.begin(), out.permutation.end(), std::size_t{0});
  // Heads are contiguous in M1, so ordering by head keeps their M1 order;
  // the original index settles any remaining tie (between empties).
  std::sort(out.permutation.begin(), out.permutation.end(),
            [&](std::size_t a, std::size_t b) {
              const SlotEntry& x = m1[a];
              const SlotEntry& y = m1[b];
              return std::make_tuple(x.head, !x.empty, x.sort_metric(),
                                     x.logical_index, a) <
                     std::make_tuple(y.head, !y.empty, y.sort_metric(),
                                     y.logical_index, b);
            });
  out.entries.reserve(m1.size());
  for (std::size_t k : out.permutation) out.entries.push_back(m1[k]);
  return out;
}

std::vector<CandidateBlock> eviction_thresholds(const SortedSlots& m2,
                                                int block_size) {
  const auto& e = m2.entries;
  if (e.size() % static_cast<std::size_t>(block_size) != 0) {
    throw Error(ErrorCode::kShape, "sorted metrics are not a whole number of blocks");
  }
  std::vector<CandidateBlock> rows;
  std::size_t start = 0;
  while (start < e.size()) {
    std::size_t end = start;
    while (end < e.size() && e[end].head == e[start].head) ++end;
    const auto n_rows = static_cast<int>((end - start) / block_size);
    for (int r = 0; r < n_rows; ++r) {
      const SlotEntry& last = e[start + static_cast<std::size_t>(r + 1) * block_size - 1];
      CandidateBlock c;
      c.head = e[start].head;
      c.row = r;
      c.head_blocks = n_rows;
      c.threshold = last.sort_metric();
      c.evictable = r < n_rows - 1 && std::isfinite(c.threshold);
      rows.push_back(c);
    }
    start = end;
  }
  return rows;
}

double max_evicted_metric(std::span<const CandidateBlock> m3, int head, int e) {
  for (const CandidateBlock& c : m3) {
    if (c.head == head && c.row == e - 1) return c.threshold;
  }
  throw Error(ErrorCode::kBudget,
              "m(h, e) undefined for head " + std::to_string(head) +
                  ", e = " + std::to_string(e));
}

std::vector<std::size_t> order_candidate_blocks(
    std::span<const CandidateBlock> m3) {
  std::vector<std::size_t> order(m3.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::make_tuple(m3[a].threshold, m3[a].head, m3[a].row) <
           std::make_tuple(m3[b].threshold, m3[b].head, m3[b].row);
  });
  return order;
}

int evictable_blocks(std::span<const CandidateBlock> m3) {
  return static_cast<int>(std::count_if(
      m3.begin(), m3.end(), [](const CandidateBlock& c) { return c.evictable; }));
}

EvictionMask eviction_mask(const SortedSlots& m2,
                           std::span<const CandidateBlock> m3,
                           std::span<const std::size_t> m4, int budget,
                           int block_size, int num_heads) {
  const int available = evictable_blocks(m3);
  if (budget < 0 || budget > available) {
    throw Error(ErrorCode::kBudget,
                "budget of " + std::to_string(budget) + " blocks exceeds " +
                    std::to_string(available) + " evictable blocks");
  }
  // Row index -> first M2 entry of that row.
  std::vector<std::size_t> row_start(m3.size());
  for (std::size_t k = 0; k < m3.size(); ++k) row_start[k] = k * block_size;

  EvictionMask out;
  out.sorted_layout.assign(m2.entries.size(), 0);
  out.original_layout.assign(m2.entries.size(), 0);
  out.blocks_per_head.assign(static_cast<std::size_t>(num_heads), 0);
  int taken = 0;
  for (std::size_t idx : m4) {
    if (taken == budget) break;
    const CandidateBlock& c = m3[idx];
    if (!c.evictable) continue;
    // Within a head rows are nondecreasing and tie-broken by row, so the
    // evictable rows taken from any head always form a prefix.
    if (c.row != out.blocks_per_head[static_cast<std::size_t>(c.head)]) {
      throw Error(ErrorCode::kScheduleCorruption, "candidate rows out of order");
    }
    for (int o = 0; o < block_size; ++o) out.sorted_layout[row_start[idx] + o] = 1;
    ++out.blocks_per_head[static_cast<std::size_t>(c.head)];
    ++taken;
  }
  for (std::size_t k = 0; k < m2.entries.size(); ++k) {
    out.original_layout[m2.permutation[k]] = out.sorted_layout[k];
  }
  return out;
}

std::vector<Relocation> move_cache(UnifiedKVCache& cache, MetricsStore& store,
                                   std::span<const std::size_t> head_slots,
                                   std::span<const std::uint8_t> mask,
                                   int evicted_blocks, int block_size) {
  const auto n = static_cast<std::int64_t>(head_slots.size());
  const std::int64_t range = static_cast<std::int64_t>(evicted_blocks) * block_size;
  const auto marked = std::count(mask.begin(), mask.end(), std::uint8_t{1});
  if (mask.size() != head_slots.size() || n % block_size != 0 ||
      evicted_blocks < 0 || range > n || marked != range) {
    throw Error(ErrorCode::kScheduleCorruption,
                std::to_string(marked) + " marked slots cannot fill " +
                    std::to_string(evicted_blocks) + " blocks of " +
                    std::to_string(block_size));
  }
  std::vector<Relocation> log;
  if (evicted_blocks == 0) return log;

  std::int64_t i = 0;
  std::int64_t j = n - 1;
  const std::int64_t end = j - range;  // positions (end, n) are freed
  while (j > end) {
    while (i <= end && !mask[i]) ++i;  // next marked slot in front of range
    if (!mask[j]) {
      if (i > end) {
        throw Error(ErrorCode::kScheduleCorruption,
                    "kept KV in eviction range has no destination");
      }
      const std::size_t src = head_slots[j];
      const std::size_t dst = head_slots[i];
      cache.copy_slot(dst, src);
      store.at(dst) = store.at(src);
      log.push_back({src, dst});
      ++i;
    }
    --j;
  }

  // Relabel survivors 0..C'-1 in their previous logical order.
  std::vector<std::size_t> kept(head_slots.begin(), head_slots.begin() + (end + 1));
  std::sort(kept.begin(), kept.end(), [&](std::size_t a, std::size_t b) {
    return store.at(a).logical_index < store.at(b).logical_index;
  });
  for (std::size_t r = 0; r < kept.size(); ++r) {
    store.at(kept[r]).logical_index = static_cast<std::int32_t>(r);
  }
  return log;
}

std::int64_t CompressionSchedule::total_budget() const {
  std::int64_t total = 0;
  for (const SequenceSchedule& s : sequences) total += s.budget;
  return total;
}

std::int64_t free_schedule_blocks(CompressionSchedule& schedule,
                                  BlockTables& tables, MetricsStore& store,
                                  BlockManager& manager) {
  const int b = tables.block_size();
  std::int64_t freed = 0;
  for (const SequenceSchedule& s : schedule.sequences) {
    for (int h = 0; h < static_cast<int>(s.evicted_blocks.size()); ++h) {
      const int e = s.evicted_blocks[static_cast<std::size_t>(h)];
      if (e == 0) continue;
      HeadTable& t = tables.head(s.seq, h);
      const int keep = static_cast<int>(t.blocks.size()) - e;
      std::vector<BlockNumber> tail(t.blocks.begin() + keep, t.blocks.end());
      t.context_length = keep * b;
      for (BlockNumber n : tail) store.reset_block(n);
      manager.free_blocks(tables, tail);
      schedule.freed_blocks.insert(schedule.freed_blocks.end(), tail.begin(),
                                   tail.end());
      freed += e;
    }
  }
  return freed;
}

int evictable_blocks(const BlockTables& tables, const MetricsStore& store,
                     SeqId seq) {
  const SequenceSlots m1 = gather_slots(tables, store, seq);
  return evictable_blocks(
      eviction_thresholds(sort_by_head_metric(m1.entries), tables.block_size()));
}

CompressionSchedule compress(std::span<const SequenceBudget> budgets,
                             UnifiedKVCache& cache, MetricsStore& store,
                             BlockTables& tables, BlockManager& manager) {
  const int b = tables.block_size();
  CompressionSchedule schedule;
  for (const SequenceBudget& budget : budgets) {
    SequenceSchedule seq_sched;
    seq_sched.seq = budget.seq;
    seq_sched.budget = budget.blocks;
    seq_sched.evicted_blocks.assign(
        static_cast<std::size_t>(tables.heads_per_sequence()), 0);
    if (budget.blocks == 0) {
      schedule.sequences.push_back(std::move(seq_sched));
      continue;
    }
    const SequenceSlots m1 = gather_slots(tables, store, budget.seq);
    const SortedSlots m2 = sort_by_head_metric(m1.entries);
    const auto m3 = eviction_thresholds(m2, b);
    const auto m4 = order_candidate_blocks(m3);
    const EvictionMask w = eviction_mask(m2, m3, m4, budget.blocks, b,
                                         tables.heads_per_sequence());
    for (const HeadLayout& head : m1.heads) {
      const int e = w.blocks_per_head[static_cast<std::size_t>(head.head)];
      if (e == 0) continue;
      const std::size_t n = static_cast<std::size_t>(head.blocks) * b;
      std::vector<std::size_t> slots(n);
      for (std::size_t i = 0; i < n; ++i) slots[i] = m1.entries[head.first_entry + i].slot;
      const std::span<const std::uint8_t> mask(
          w.original_layout.data() + head.first_entry, n);
      const int empties = head.blocks * b - head.context_length;
      for (const Relocation& r : move_cache(cache, store, slots, mask, e, b)) {
        schedule.relocations.push_back({budget.seq, head.head, r});
      }
      seq_sched.evicted_blocks[static_cast<std::size_t>(head.head)] = e;
      seq_sched.evicted_kvs += static_cast<std::int64_t>(e) * b - empties;
    }
    schedule.sequences.push_back(std::move(seq_sched));
  }
  free_schedule_blocks(schedule, tables, store, manager);
  return schedule;
}

}  // namespace kvc
