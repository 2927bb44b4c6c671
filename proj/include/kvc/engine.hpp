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

// Scheduler loop: admission/prefill, decode allocation with preemption,
// compression triggering, and per-sequence cache budgets.
//
// One step runs, in order:
//   1. admit waiting sequences FIFO while their prefill fits; prefill them
//   2. compress if anything was admitted and on_prefill is set
//   3. allocate decode blocks; on shortage compress (on_preempt) and then
//      preempt LIFO victims until the batch fits
//   4. decode one token per running sequence and accumulate metrics
//   5. compress on the interval / uncompressed-token triggers
//   6. retire finished sequences

#ifndef KVC_ENGINE_HPP_
#define KVC_ENGINE_HPP_

#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kvc/attention.hpp"
#include "kvc/block_manager.hpp"
#include "kvc/cache.hpp"
#include "kvc/compression.hpp"
#include "kvc/metrics.hpp"
#include "kvc/sequence.hpp"
#include "kvc/token_stream.hpp"

namespace kvc {

struct Request {
  SeqId id = 0;
  int prompt_len = 1;
  int output_tokens = 1;
};

struct CompressionPolicy {
  std::optional<int> every;                     // compress every c steps
  std::optional<std::int64_t> token_threshold;  // uncompressed tokens
  bool on_prefill = false;
  bool on_preempt = false;
  // Max live KV pairs (summed over layers and heads) per compression round.
  std::int64_t kv_limit = std::numeric_limits<std::int64_t>::max();

  // "default" (prefill + preempt), "prefill", "preempt", "continual"
  // (every step), "none", "interval:<c>", "threshold:<n>".
  static CompressionPolicy preset(std::string_view name);
};

enum class BudgetMode { kMin, kMax };

struct BudgetConfig {
  double rate = 1.0;
  std::optional<int> max_cache_tokens;  // explicit C overrides rate
  int floor_tokens = 128;
  BudgetMode mode = BudgetMode::kMin;
};

// Target cache tokens for a prompt: floor(min(floor_tokens, L_c / r)), or
// max(...) in kMax mode. r <= 1 returns L_c, which never triggers eviction.
int per_sequence_budget(int prompt_len, double rate, int floor_tokens = 128,
                        BudgetMode mode = BudgetMode::kMin);

// E_s = max(0, A_s - ceil(C_s * l * H / b)).
int budget_to_blocks(std::int64_t cache_tokens, int layers, int kv_heads,
                     int block_size, std::int64_t allocated_blocks);

// Scans `candidates` stalest first (never compressed, then oldest
// compression, ties by admission) and stops at the first sequence whose live
// KVs would push the batch over `kv_limit`.
std::vector<SeqId> select_compression_batch(
    std::span<const SequenceState> candidates, const BlockTables& tables,
    std::int64_t kv_limit);

struct EngineConfig {
  ModelShape model;
  int block_size = 4;
  int num_blocks = 4096;
  MetricConfig metrics;
  CompressionPolicy policy = CompressionPolicy::preset("default");
  BudgetConfig budget;
  Exec exec = Exec::kParallel;
  PreemptionPolicy preemption = preempt_select;

  void validate() const;
};

struct StepReport {
  std::int64_t step = 0;
  int batch_size = 0;  // sequences decoded this step
  int waiting = 0;
  int admitted = 0;
  int finished = 0;
  int preemptions = 0;
  int compression_rounds = 0;
  int sequences_compressed = 0;
  std::int64_t blocks_freed = 0;
  std::int64_t evicted_kvs = 0;
  int free_blocks = 0;
  std::int64_t fragmentation = 0;
  std::int64_t tokens_generated = 0;

  friend bool operator==(const StepReport&, const StepReport&) = default;
};

struct CompressionEvent {
  std::int64_t step = 0;
  std::string trigger;
  int sequences = 0;
  std::int64_t blocks_freed = 0;
  std::int64_t evicted_kvs = 0;
};

class Engine {
 public:
  Engine(EngineConfig cfg, TokenStream stream);

  void submit(const Request& req);
  StepReport step();
  bool idle() const { return waiting_.empty() && running_.empty(); }

  std::int64_t current_step() const { return step_; }
  bool compression_enabled() const;
  // C_s in tokens for a sequence.
  int cache_budget(const SequenceState& s) const;

  const EngineConfig& config() const { return cfg_; }
  const BlockTables& tables() const { return tables_; }
  const BlockManager& blocks() const { return manager_; }
  const MetricsStore& store() const { return store_; }
  const UnifiedKVCache& cache() const { return cache_; }
  std::span<const SequenceState> running() const { return running_; }
  const std::deque<SequenceState>& waiting() const { return waiting_; }
  const std::vector<CompressionEvent>& compression_log() const { return log_; }
  const std::vector<CompressionSchedule>& schedules() const { return schedules_; }
  // Keep every CompressionSchedule (relocation logs included) for debugging.
  void keep_schedules(bool on) { keep_schedules_ = on; }

 private:
  void prefill(SequenceState& s);
  void decode(SequenceState& s);
  void preempt(SeqId victim);
  void compression_round(const char* trigger, StepReport& report);

  EngineConfig cfg_;
  TokenStream stream_;
  UnifiedKVCache cache_;
  BlockTables tables_;
  BlockManager manager_;
  MetricsStore store_;
  std::deque<SequenceState> waiting_;
  std::vector<SequenceState> running_;
  std::vector<CompressionEvent> log_;
  std::vector<CompressionSchedule> schedules_;
  bool keep_schedules_ = false;
  std::int64_t step_ = 0;
  std::int64_t next_admission_ = 0;
};

}  // namespace kvc

#endif  // KVC_ENGINE_HPP_
