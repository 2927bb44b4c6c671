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

#include "kvc/block_manager.hpp"

#include <algorithm>
#include <string>

#include "kvc/error.hpp"

namespace kvc {

std::int64_t blocks_needed_prefill(int token_count, int layers, int kv_heads,
                                   int block_size) {
  const std::int64_t per_head = (token_count + block_size - 1) / block_size;
  return static_cast<std::int64_t>(layers) * kv_heads * per_head;
}

BlockManager::BlockManager(int num_blocks) {
  if (num_blocks < 1) {
    throw Error(ErrorCode::kConfig, "block pool must be non-empty", "num-blocks");
  }
  owners_.resize(static_cast<std::size_t>(num_blocks));
  for (BlockNumber n = 0; n < num_blocks; ++n) free_.insert(free_.end(), n);
}

void BlockManager::take(BlockTables& tables, SeqId seq, int head, int count) {
  HeadTable& t = tables.head(seq, head);
  for (int k = 0; k < count; ++k) {
    const BlockNumber n = *free_.begin();
    free_.erase(free_.begin());
    owners_[static_cast<std::size_t>(n)] = {true, seq, head};
    t.blocks.push_back(n);
  }
}

AllocationOutcome BlockManager::allocate_prefill(BlockTables& tables,
                                                 const AllocationRequest& req) {
  if (req.kind != AllocationRequest::Kind::kPrefill || req.token_count < 1) {
    throw Error(ErrorCode::kShape, "prefill request needs token_count >= 1");
  }
  if (tables.contains(req.seq) && tables.allocated_blocks(req.seq) > 0) {
    throw Error(ErrorCode::kOwnership,
                "sequence " + std::to_string(req.seq) + " is already allocated");
  }
  const int b = tables.block_size();
  const int per_head = (req.token_count + b - 1) / b;
  AllocationOutcome out;
  out.requested = blocks_needed_prefill(req.token_count, tables.num_layers(),
                                        tables.num_kv_heads(), b);
  if (out.requested > free_count()) {
    out.ok = false;
    out.shortfall = out.requested - free_count();
    return out;
  }
  tables.add_sequence(req.seq);
  for (int h = 0; h < tables.heads_per_sequence(); ++h) {
    take(tables, req.seq, h, per_head);
  }
  out.new_blocks[req.seq] = static_cast<int>(out.requested);
  return out;
}

AllocationOutcome BlockManager::allocate_decode_step(
    BlockTables& tables, std::span<const SeqId> batch) {
  std::vector<SeqId> order(batch.begin(), batch.end());
  std::sort(order.begin(), order.end());
  order.erase(std::unique(order.begin(), order.end()), order.end());

  const int b = tables.block_size();
  AllocationOutcome out;
  for (SeqId seq : order) {
    int needed = 0;
    for (const HeadTable& t : tables.heads(seq)) {
      if (t.context_length == static_cast<int>(t.blocks.size()) * b) ++needed;
    }
    out.new_blocks[seq] = needed;
    out.requested += needed;
  }
  if (out.requested > free_count()) {
    out.ok = false;
    out.shortfall = out.requested - free_count();
    return out;
  }
  for (SeqId seq : order) {
    auto heads = tables.heads(seq);
    for (int h = 0; h < static_cast<int>(heads.size()); ++h) {
      const HeadTable& t = heads[static_cast<std::size_t>(h)];
      if (t.context_length == static_cast<int>(t.blocks.size()) * b) {
        take(tables, seq, h, 1);
      }
    }
  }
  return out;
}

void BlockManager::free_blocks(BlockTables& tables,
                               std::span<const BlockNumber> blocks) {
  std::set<BlockNumber> seen;
  for (BlockNumber n : blocks) {
    if (n < 0 || n >= num_blocks() || !owners_[static_cast<std::size_t>(n)].valid ||
        !seen.insert(n).second) {
      throw Error(ErrorCode::kOwnership,
                  "block " + std::to_string(n) + " is not owned (double free?)");
    }
  }
  const int b = tables.block_size();
  for (BlockNumber n : blocks) {
    Owner& o = owners_[static_cast<std::size_t>(n)];
    HeadTable& t = tables.head(o.seq, o.head);
    auto it = std::find(t.blocks.begin(), t.blocks.end(), n);
    if (it == t.blocks.end()) {
      throw Error(ErrorCode::kCorruption,
                  "owner map and block table disagree on block " +
                      std::to_string(n));
    }
    t.blocks.erase(it);
    t.context_length =
        std::min(t.context_length, static_cast<int>(t.blocks.size()) * b);
    o = {};
    free_.insert(n);
  }
}

std::int64_t BlockManager::release_sequence(BlockTables& tables, SeqId seq) {
  if (!tables.contains(seq)) return 0;
  std::vector<BlockNumber> owned;
  for (const HeadTable& t : tables.heads(seq)) {
    owned.insert(owned.end(), t.blocks.begin(), t.blocks.end());
  }
  free_blocks(tables, owned);
  tables.remove_sequence(seq);
  return static_cast<std::int64_t>(owned.size());
}

void BlockManager::check_invariants(const BlockTables& tables) const {
  std::vector<int> seen(owners_.size(), 0);
  for (SeqId seq : tables.sequences()) {
    auto heads = tables.heads(seq);
    for (int h = 0; h < static_cast<int>(heads.size()); ++h) {
      for (BlockNumber n : heads[static_cast<std::size_t>(h)].blocks) {
        if (n < 0 || n >= num_blocks()) {
          throw Error(ErrorCode::kCorruption, "block number out of range");
        }
        const Owner& o = owners_[static_cast<std::size_t>(n)];
        if (++seen[static_cast<std::size_t>(n)] > 1 || !o.valid ||
            o.seq != seq || o.head != h || free_.contains(n)) {
          throw Error(ErrorCode::kCorruption,
                      "block " + std::to_string(n) + " has inconsistent ownership");
        }
      }
    }
  }
  const auto owned = static_cast<std::int64_t>(
      std::count(seen.begin(), seen.end(), 1));
  if (owned + free_count() != num_blocks()) {
    throw Error(ErrorCode::kCorruption, "free + owned blocks != N");
  }
}

SeqId preempt_select(std::span<const SequenceState> running) {
  if (running.empty()) {
    throw Error(ErrorCode::kNoVictim, "no running sequence to preempt");
  }
  const auto it = std::max_element(
      running.begin(), running.end(),
      [](const SequenceState& a, const SequenceState& b) {
        return a.admission < b.admission;
      });
  return it->id;
}

}  // namespace kvc
