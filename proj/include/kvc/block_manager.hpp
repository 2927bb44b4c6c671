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

#ifndef KVC_BLOCK_MANAGER_HPP_
#define KVC_BLOCK_MANAGER_HPP_

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <vector>

#include "kvc/cache.hpp"
#include "kvc/sequence.hpp"

namespace kvc {

struct AllocationRequest {
  enum class Kind { kPrefill, kDecode };

  SeqId seq = 0;
  Kind kind = Kind::kPrefill;
  int token_count = 1;
};

// Result of an all-or-nothing allocation. On failure nothing was mutated and
// `shortfall` holds the number of missing blocks.
struct AllocationOutcome {
  bool ok = true;
  std::int64_t requested = 0;
  std::int64_t shortfall = 0;
  std::map<SeqId, int> new_blocks;

  explicit operator bool() const { return ok; }
};

// l * H * ceil(L_c / b): every head of a fresh sequence holds the same count.
std::int64_t blocks_needed_prefill(int token_count, int layers, int kv_heads,
                                   int block_size);

// Tracks the free set of the unified cache and the owner of every allocated
// block. New blocks are always handed out lowest-number first.
class BlockManager {
 public:
  explicit BlockManager(int num_blocks);

  int num_blocks() const { return static_cast<int>(owners_.size()); }
  int free_count() const { return static_cast<int>(free_.size()); }
  int allocated_count() const { return num_blocks() - free_count(); }
  bool is_free(BlockNumber n) const { return free_.contains(n); }

  AllocationOutcome allocate_prefill(BlockTables& tables,
                                     const AllocationRequest& req);

  // One block for every head whose context exactly fills its allocation.
  // The result depends only on the context lengths, never on batch order.
  AllocationOutcome allocate_decode_step(BlockTables& tables,
                                         std::span<const SeqId> batch);

  // Returns owned blocks to the free set and removes their table entries.
  // Validates the whole list first; throws kOwnership on any unowned block.
  void free_blocks(BlockTables& tables, std::span<const BlockNumber> blocks);

  // Frees every block of `seq` and drops its tables. Returns the count freed.
  std::int64_t release_sequence(BlockTables& tables, SeqId seq);

  // Throws kCorruption unless free + owned = N disjointly and the owner map
  // agrees with the tables.
  void check_invariants(const BlockTables& tables) const;

 private:
  struct Owner {
    bool valid = false;
    SeqId seq = 0;
    int head = 0;
  };

  void take(BlockTables& tables, SeqId seq, int head, int count);

  std::set<BlockNumber> free_;
  std::vector<Owner> owners_;
};

using PreemptionPolicy =
    std::function<SeqId(std::span<const SequenceState> running)>;

// Most recently admitted sequence. Throws kNoVictim on an empty set.
SeqId preempt_select(std::span<const SequenceState> running);

}  // namespace kvc

#endif  // KVC_BLOCK_MANAGER_HPP_
