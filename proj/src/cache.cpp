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

#include "kvc/cache.hpp"

#include <algorithm>
#include <string>

#include "kvc/error.hpp"

namespace kvc {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kPosition: return "position";
    case ErrorCode::kCorruption: return "corruption";
    case ErrorCode::kAllocationOrder: return "allocation_order";
    case ErrorCode::kOwnership: return "ownership";
    case ErrorCode::kNoVictim: return "no_victim";
    case ErrorCode::kNumeric: return "numeric";
    case ErrorCode::kShape: return "shape";
    case ErrorCode::kEmptyContext: return "empty_context";
    case ErrorCode::kBudget: return "budget";
    case ErrorCode::kScheduleCorruption: return "schedule_corruption";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kInfeasible: return "infeasible";
  }
  return "unknown";
}

UnifiedKVCache::UnifiedKVCache(int num_blocks, int block_size, int head_dim)
    : num_blocks_(num_blocks), block_size_(block_size), head_dim_(head_dim) {
  if (num_blocks < 1 || block_size < 1 || head_dim < 1) {
    throw Error(ErrorCode::kShape, "cache dimensions must be positive");
  }
  keys_.assign(num_slots() * head_dim_, 0.0);
  values_.assign(num_slots() * head_dim_, 0.0);
}

void UnifiedKVCache::copy_slot(std::size_t dst, std::size_t src) {
  std::copy_n(keys_.begin() + src * head_dim_, head_dim_,
              keys_.begin() + dst * head_dim_);
  std::copy_n(values_.begin() + src * head_dim_, head_dim_,
              values_.begin() + dst * head_dim_);
}

BlockTables::BlockTables(int num_layers, int num_kv_heads, int block_size)
    : num_layers_(num_layers),
      num_kv_heads_(num_kv_heads),
      block_size_(block_size) {
  if (num_layers < 1 || num_kv_heads < 1 || block_size < 1) {
    throw Error(ErrorCode::kShape, "block table dimensions must be positive");
  }
}

void BlockTables::add_sequence(SeqId seq) {
  tables_.try_emplace(seq, static_cast<std::size_t>(heads_per_sequence()));
}

void BlockTables::remove_sequence(SeqId seq) { tables_.erase(seq); }

HeadTable& BlockTables::head(SeqId seq, int head_index) {
  auto it = tables_.find(seq);
  if (it == tables_.end()) {
    throw Error(ErrorCode::kCorruption,
                "no block tables for sequence " + std::to_string(seq));
  }
  return it->second.at(static_cast<std::size_t>(head_index));
}

const HeadTable& BlockTables::head(SeqId seq, int head_index) const {
  return const_cast<BlockTables*>(this)->head(seq, head_index);
}

std::span<HeadTable> BlockTables::heads(SeqId seq) {
  auto it = tables_.find(seq);
  if (it == tables_.end()) {
    throw Error(ErrorCode::kCorruption,
                "no block tables for sequence " + std::to_string(seq));
  }
  return it->second;
}

std::span<const HeadTable> BlockTables::heads(SeqId seq) const {
  return const_cast<BlockTables*>(this)->heads(seq);
}

std::vector<SeqId> BlockTables::sequences() const {
  std::vector<SeqId> out;
  out.reserve(tables_.size());
  for (const auto& [seq, _] : tables_) out.push_back(seq);
  return out;
}

SlotHandle BlockTables::locate(SeqId seq, int head_index, int position) const {
  const HeadTable& t = head(seq, head_index);
  if (position < 0 || position >= t.context_length) {
    throw Error(ErrorCode::kPosition,
                "position " + std::to_string(position) +
                    " outside context of length " +
                    std::to_string(t.context_length));
  }
  const auto u = static_cast<std::size_t>(position / block_size_);
  if (u >= t.blocks.size() || t.blocks[u] < 0) {
    throw Error(ErrorCode::kCorruption,
                "context length covers unallocated block entry " +
                    std::to_string(u));
  }
  return {t.blocks[u], position % block_size_};
}

std::int64_t BlockTables::allocated_blocks(SeqId seq) const {
  std::int64_t n = 0;
  for (const HeadTable& t : heads(seq)) n += static_cast<std::int64_t>(t.blocks.size());
  return n;
}

std::int64_t BlockTables::live_kvs(SeqId seq) const {
  std::int64_t n = 0;
  for (const HeadTable& t : heads(seq)) n += t.context_length;
  return n;
}

std::int64_t BlockTables::total_allocated_blocks() const {
  std::int64_t n = 0;
  for (const auto& [seq, heads] : tables_) {
    for (const HeadTable& t : heads) n += static_cast<std::int64_t>(t.blocks.size());
  }
  return n;
}

KVView lookup_kv(const BlockTables& tables, const UnifiedKVCache& cache,
                 SeqId seq, int layer, int kv_head, int position) {
  const SlotHandle h =
      tables.locate(seq, tables.head_index(layer, kv_head), position);
  if (h.block >= cache.num_blocks()) {
    throw Error(ErrorCode::kCorruption,
                "block number " + std::to_string(h.block) + " out of range");
  }
  const std::size_t slot = cache.slot_index(h);
  return {cache.key(slot), cache.value(slot)};
}

SlotHandle append_kv(BlockTables& tables, UnifiedKVCache& cache, SeqId seq,
                     int layer, int kv_head, std::span<const double> key,
                     std::span<const double> value) {
  if (key.size() != static_cast<std::size_t>(cache.head_dim()) ||
      value.size() != key.size()) {
    throw Error(ErrorCode::kShape, "KV vector length does not match head_dim");
  }
  HeadTable& t = tables.head(seq, layer, kv_head);
  const int b = tables.block_size();
  const int position = t.context_length;
  const auto u = static_cast<std::size_t>(position / b);
  if (u >= t.blocks.size()) {
    throw Error(ErrorCode::kAllocationOrder,
                "no block allocated for position " + std::to_string(position));
  }
  const SlotHandle h{t.blocks[u], position % b};
  const std::size_t slot = cache.slot_index(h);
  std::copy(key.begin(), key.end(), cache.key(slot).begin());
  std::copy(value.begin(), value.end(), cache.value(slot).begin());
  ++t.context_length;
  return h;
}

std::int64_t fragmentation(const BlockTables& tables) {
  const std::int64_t b = tables.block_size();
  std::int64_t slack = 0;
  for (SeqId seq : tables.sequences()) {
    for (const HeadTable& t : tables.heads(seq)) {
      const std::int64_t used = (t.context_length + b - 1) / b;
      slack += used * b - t.context_length;
    }
  }
  return slack;
}

}  // namespace kvc
