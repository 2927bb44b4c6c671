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

// Unified paged KV store and per-(sequence, layer, kv-head) block tables.
//
// Every physical block holds `block_size` key/value vectors belonging to
// exactly one head of one layer of one sequence. Slot (n, o) lives at flat
// index n * block_size + o in both the key and value stores.

#ifndef KVC_CACHE_HPP_
#define KVC_CACHE_HPP_

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

namespace kvc {

using SeqId = std::uint32_t;
using BlockNumber = std::int32_t;

struct SlotHandle {
  BlockNumber block = 0;
  int offset = 0;

  friend bool operator==(const SlotHandle&, const SlotHandle&) = default;
};

class UnifiedKVCache {
 public:
  UnifiedKVCache(int num_blocks, int block_size, int head_dim);

  int num_blocks() const { return num_blocks_; }
  int block_size() const { return block_size_; }
  int head_dim() const { return head_dim_; }
  std::size_t num_slots() const {
    return static_cast<std::size_t>(num_blocks_) * block_size_;
  }

  std::size_t slot_index(SlotHandle h) const {
    return static_cast<std::size_t>(h.block) * block_size_ + h.offset;
  }

  std::span<double> key(std::size_t slot) {
    return {keys_.data() + slot * head_dim_, static_cast<std::size_t>(head_dim_)};
  }
  std::span<const double> key(std::size_t slot) const {
    return {keys_.data() + slot * head_dim_, static_cast<std::size_t>(head_dim_)};
  }
  std::span<double> value(std::size_t slot) {
    return {values_.data() + slot * head_dim_, static_cast<std::size_t>(head_dim_)};
  }
  std::span<const double> value(std::size_t slot) const {
    return {values_.data() + slot * head_dim_, static_cast<std::size_t>(head_dim_)};
  }

  // Copies key and value vectors of `src` over `dst`.
  void copy_slot(std::size_t dst, std::size_t src);

 private:
  int num_blocks_;
  int block_size_;
  int head_dim_;
  std::vector<double> keys_;
  std::vector<double> values_;
};

struct HeadTable {
  std::vector<BlockNumber> blocks;
  int context_length = 0;
};

class BlockTables {
 public:
  BlockTables(int num_layers, int num_kv_heads, int block_size);

  int num_layers() const { return num_layers_; }
  int num_kv_heads() const { return num_kv_heads_; }
  int block_size() const { return block_size_; }
  int heads_per_sequence() const { return num_layers_ * num_kv_heads_; }
  int head_index(int layer, int kv_head) const {
    return layer * num_kv_heads_ + kv_head;
  }

  bool contains(SeqId seq) const { return tables_.contains(seq); }
  void add_sequence(SeqId seq);
  void remove_sequence(SeqId seq);

  HeadTable& head(SeqId seq, int head_index);
  const HeadTable& head(SeqId seq, int head_index) const;
  HeadTable& head(SeqId seq, int layer, int kv_head) {
    return head(seq, head_index(layer, kv_head));
  }
  const HeadTable& head(SeqId seq, int layer, int kv_head) const {
    return head(seq, head_index(layer, kv_head));
  }
  std::span<HeadTable> heads(SeqId seq);
  std::span<const HeadTable> heads(SeqId seq) const;

  // Sequences in ascending id order.
  std::vector<SeqId> sequences() const;
  std::size_t num_sequences() const { return tables_.size(); }

  // Physical slot of logical position `position` of a head.
  // Throws kPosition when position >= C, kCorruption when the covering
  // table entry is missing.
  SlotHandle locate(SeqId seq, int head_index, int position) const;

  std::int64_t allocated_blocks(SeqId seq) const;
  std::int64_t live_kvs(SeqId seq) const;
  std::int64_t total_allocated_blocks() const;

 private:
  int num_layers_;
  int num_kv_heads_;
  int block_size_;
  std::map<SeqId, std::vector<HeadTable>> tables_;
};

struct KVView {
  std::span<const double> key;
  std::span<const double> value;
};

KVView lookup_kv(const BlockTables& tables, const UnifiedKVCache& cache,
                 SeqId seq, int layer, int kv_head, int position);

// Writes the next KV of a head at logical position C and increments C.
// Throws kAllocationOrder when the block for position C is not allocated.
SlotHandle append_kv(BlockTables& tables, UnifiedKVCache& cache, SeqId seq,
                     int layer, int kv_head, std::span<const double> key,
                     std::span<const double> value);

// Allocated-but-unused slots, summed over all heads of all sequences.
std::int64_t fragmentation(const BlockTables& tables);

}  // namespace kvc

#endif  // KVC_CACHE_HPP_
