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

#ifndef KVC_WORKLOAD_HPP_
#define KVC_WORKLOAD_HPP_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kvc/engine.hpp"

namespace kvc {

// "128" (fixed) or "64:256" (uniform, inclusive).
struct PromptLengths {
  int min = 128;
  int max = 128;

  static PromptLengths parse(std::string_view text);
  std::string str() const;
};

struct WorkloadConfig {
  std::uint64_t seed = 0;
  ModelShape model;
  int block_size = 4;
  int num_blocks = 4096;
  PromptLengths prompt;
  int requests = 32;
  int output_tokens = 64;
  double rate = 1.0;
  std::optional<int> max_cache;
  BudgetMode budget_mode = BudgetMode::kMin;
  std::string policy = "default";
  MetricConfig metric;
  // KV pairs per compression round; unlimited when unset.
  std::optional<std::int64_t> kv_limit;
  std::int64_t max_steps = 1'000'000;
  Exec exec = Exec::kParallel;

  // Throws kConfig naming the offending field.
  void validate() const;
  EngineConfig engine_config() const;
};

struct Workload {
  std::vector<Request> requests;
  TokenStream stream;
};

Workload generate_workload(const WorkloadConfig& cfg);

struct RunSummary {
  int max_batch = 0;
  std::int64_t steps = 0;
  std::int64_t generated_tokens = 0;
  double throughput_proxy = 0.0;  // generated tokens / steps
  std::int64_t peak_fragmentation = 0;
  std::int64_t compression_rounds = 0;
  std::int64_t preemptions = 0;
  std::int64_t blocks_freed = 0;
  std::int64_t evicted_kvs = 0;
};

struct RunReport {
  WorkloadConfig config;
  std::vector<StepReport> steps;
  std::vector<CompressionEvent> compressions;
  RunSummary summary;
};

// Throws kInfeasible before running when a prompt can never be prefilled, and
// when the engine stops making progress.
RunReport run(const WorkloadConfig& cfg);

struct SweepRow {
  double rate = 1.0;
  RunSummary summary;
};

// One run per rate with the same seed. Rate points may run concurrently.
std::vector<SweepRow> sweep(const WorkloadConfig& cfg,
                            std::span<const double> rates,
                            Exec exec = Exec::kParallel);

std::vector<double> parse_rates(std::string_view text);

// Columns: rate,max_batch,steps,throughput_proxy,peak_fragmentation
std::string sweep_csv(std::span<const SweepRow> rows);
// One row per engine step.
std::string steps_csv(const RunReport& report);
// Summary JSON (config, summary, compression events).
std::string report_json(const RunReport& report, bool include_steps = false);

}  // namespace kvc

#endif  // KVC_WORKLOAD_HPP_
