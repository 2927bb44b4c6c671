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

#include "kvc/engine.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <string>
#include <tuple>

#include "kvc/error.hpp"

namespace kvc {
namespace {

template <class T>
T parse_suffix(std::string_view name, std::string_view prefix) {
  const std::string_view digits = name.substr(prefix.size());
  T value{};
  const auto [ptr, ec] =
      std::from_chars(digits.data(), digits.data() + digits.size(), value);
  if (ec != std::errc() || ptr != digits.data() + digits.size() || value < 1) {
    throw Error(ErrorCode::kConfig,
                "bad policy argument in '" + std::string(name) + "'", "policy");
  }
  return value;
}

}  // namespace

CompressionPolicy CompressionPolicy::preset(std::string_view name) {
  CompressionPolicy p;
  if (name == "default") {
    p.on_prefill = true;
    p.on_preempt = true;
  } else if (name == "prefill") {
    p.on_prefill = true;
  } else if (name == "preempt") {
    p.on_preempt = true;
  } else if (name == "continual") {
    p.every = 1;
  } else if (name == "none") {
  } else if (name.starts_with("interval:")) {
    p.every = parse_suffix<int>(name, "interval:");
  } else if (name.starts_with("threshold:")) {
    p.token_threshold = parse_suffix<std::int64_t>(name, "threshold:");
  } else {
    throw Error(ErrorCode::kConfig,
                "unknown policy preset '" + std::string(name) + "'", "policy");
  }
  return p;
}

int per_sequence_budget(int prompt_len, double rate, int floor_tokens,
                        BudgetMode mode) {
  if (rate <= 1.0) return prompt_len;
  const double scaled = static_cast<double>(prompt_len) / rate;
  const double floor = static_cast<double>(floor_tokens);
  const double c = mode == BudgetMode::kMin ? std::min(floor, scaled)
                                            : std::max(floor, scaled);
  return static_cast<int>(std::floor(c));
}

int budget_to_blocks(std::int64_t cache_tokens, int layers, int kv_heads,
                     int block_size, std::int64_t allocated_blocks) {
  const std::int64_t target_kvs = cache_tokens * layers * kv_heads;
  const std::int64_t target_blocks = (target_kvs + block_size - 1) / block_size;
  return static_cast<int>(std::max<std::int64_t>(0, allocated_blocks - target_blocks));
}

std::vector<SeqId> select_compression_batch(
    std::span<const SequenceState> candidates, const BlockTables& tables,
    std::int64_t kv_limit) {
  std::vector<const SequenceState*> order;
  order.reserve(candidates.size());
  for (const SequenceState& s : candidates) order.push_back(&s);
  auto staleness = [](const SequenceState* s) {
    return std::make_tuple(s->last_compressed_at.has_value(),
                           s->last_compressed_at.value_or(0), s->admission);
  };
  std::stable_sort(order.begin(), order.end(),
                   [&](const SequenceState* a, const SequenceState* b) {
                     return staleness(a) < staleness(b);
                   });
  std::vector<SeqId> batch;
  std::int64_t total = 0;
  for (const SequenceState* s : order) {
    const std::int64_t kvs = tables.live_kvs(s->id);
    if (total + kvs > kv_limit) break;
    total += kvs;
    batch.push_back(s->id);
  }
  return batch;
}

void EngineConfig::validate() const {
  auto positive = [](int v, const char* field) {
    if (v < 1) {
      throw Error(ErrorCode::kConfig, std::string(field) + " must be >= 1", field);
    }
  };
  positive(model.layers, "layers");
  positive(model.query_heads, "query-heads");
  positive(model.kv_heads, "kv-heads");
  positive(model.head_dim, "head-dim");
  positive(block_size, "block-size");
  positive(num_blocks, "num-blocks");
  if (model.query_heads % model.kv_heads != 0) {
    throw Error(ErrorCode::kConfig, "query heads must be a multiple of kv heads",
                "kv-heads");
  }
  metrics.validate();
  if (!(budget.rate >= 1.0) || !std::isfinite(budget.rate)) {
    throw Error(ErrorCode::kConfig, "compression rate must be >= 1", "rate");
  }
  if (budget.max_cache_tokens && *budget.max_cache_tokens < 1) {
    throw Error(ErrorCode::kConfig, "max cache tokens must be >= 1", "max-cache");
  }
  if ((policy.every && *policy.every < 1) ||
      (policy.token_threshold && *policy.token_threshold < 1)) {
    throw Error(ErrorCode::kConfig, "policy interval must be >= 1", "policy");
  }
  if (policy.kv_limit < 1) {
    throw Error(ErrorCode::kConfig, "kv limit must be >= 1", "kv-limit");
  }
}

Engine::Engine(EngineConfig cfg, TokenStream stream)
    : cfg_((cfg.validate(), std::move(cfg))),
      stream_(stream),
      cache_(cfg_.num_blocks, cfg_.block_size, cfg_.model.head_dim),
      tables_(cfg_.model.layers, cfg_.model.kv_heads, cfg_.block_size),
      manager_(cfg_.num_blocks),
      store_(cfg_.num_blocks, cfg_.block_size) {}

void Engine::submit(const Request& req) {
  if (req.prompt_len < 1 || req.output_tokens < 1) {
    throw Error(ErrorCode::kConfig, "requests need prompt and output lengths >= 1",
                "prompt-len");
  }
  SequenceState s;
  s.id = req.id;
  s.prompt_len = req.prompt_len;
  s.max_output = req.output_tokens;
  waiting_.push_back(s);
}

bool Engine::compression_enabled() const {
  return cfg_.budget.max_cache_tokens.has_value() || cfg_.budget.rate > 1.0;
}

int Engine::cache_budget(const SequenceState& s) const {
  if (cfg_.budget.max_cache_tokens) return *cfg_.budget.max_cache_tokens;
  return per_sequence_budget(s.prompt_len, cfg_.budget.rate,
                             cfg_.budget.floor_tokens, cfg_.budget.mode);
}

void Engine::prefill(SequenceState& s) {
  const ModelShape& m = cfg_.model;
  const auto L = static_cast<std::size_t>(s.position());
  const auto d = static_cast<std::size_t>(m.head_dim);
  std::vector<double> q(d * m.query_heads);
  std::vector<double> k(d * m.kv_heads);
  std::vector<double> v(d * m.kv_heads);
  for (int layer = 0; layer < m.layers; ++layer) {
    Tensor3 Q(m.query_heads, L, d);
    Tensor3 K(m.kv_heads, L, d);
    Tensor3 V(m.kv_heads, L, d);
    for (std::size_t i = 0; i < L; ++i) {
      stream_.fill(s.id, layer, static_cast<int>(i), q, k, v);
      for (int h = 0; h < m.query_heads; ++h) {
        std::copy_n(q.begin() + h * d, d, Q.row(h, i).begin());
      }
      for (int h = 0; h < m.kv_heads; ++h) {
        std::copy_n(k.begin() + h * d, d, K.row(h, i).begin());
        std::copy_n(v.begin() + h * d, d, V.row(h, i).begin());
      }
    }
    for (int h = 0; h < m.kv_heads; ++h) {
      for (std::size_t i = 0; i < L; ++i) {
        append_kv(tables_, cache_, s.id, layer, h, K.row(h, i), V.row(h, i));
      }
    }
    const AttentionResult attn = gqa_attention(Q, K, V, m.attention(), cfg_.exec);
    load_prefill_metrics(store_, tables_, s.id, layer,
                         prefill_metrics(attn.weights, m.kv_heads, cfg_.metrics,
                                         cfg_.exec));
  }
}

void Engine::decode(SequenceState& s) {
  const ModelShape& m = cfg_.model;
  const auto d = static_cast<std::size_t>(m.head_dim);
  const int r = m.query_heads / m.kv_heads;
  const int pos = s.position();
  std::vector<double> q(d * m.query_heads);
  std::vector<double> k(d * m.kv_heads);
  std::vector<double> v(d * m.kv_heads);
  Matrix queries(static_cast<std::size_t>(m.query_heads), d);
  for (int layer = 0; layer < m.layers; ++layer) {
    stream_.fill(s.id, layer, pos, q, k, v);
    for (int h = 0; h < m.kv_heads; ++h) {
      const std::span<const double> kh(k.data() + h * d, d);
      const std::span<const double> vh(v.data() + h * d, d);
      const SlotHandle slot = append_kv(tables_, cache_, s.id, layer, h, kh, vh);
      init_decode_slot(store_, slot,
                       tables_.head(s.id, layer, h).context_length - 1, pos);
    }
    std::copy(q.begin(), q.end(), queries.data().begin());
    const PagedAttentionResult out = paged_attention(
        queries, cache_, tables_, s.id, layer, m.attention(), cfg_.exec);
    for (int h = 0; h < m.kv_heads; ++h) {
      accumulate_decode(store_, tables_, s.id, layer, h,
                        std::span(out.weights).subspan(
                            static_cast<std::size_t>(h * r),
                            static_cast<std::size_t>(r)),
                        pos, cfg_.metrics);
    }
  }
  ++s.generated;
  ++s.uncompressed_tokens;
}

void Engine::preempt(SeqId victim) {
  auto it = std::find_if(running_.begin(), running_.end(),
                         [&](const SequenceState& s) { return s.id == victim; });
  if (it == running_.end()) {
    throw Error(ErrorCode::kNoVictim, "victim is not running");
  }
  SequenceState s = *it;
  running_.erase(it);
  manager_.release_sequence(tables_, s.id);
  s.status = SeqStatus::kPreempted;
  s.last_compressed_at.reset();
  s.uncompressed_tokens = 0;
  waiting_.push_front(s);
}

void Engine::compression_round(const char* trigger, StepReport& report) {
  if (!compression_enabled()) return;
  const ModelShape& m = cfg_.model;
  std::vector<SequenceState> candidates;
  std::vector<int> wanted;
  for (const SequenceState& s : running_) {
    const int c_s = cache_budget(s);
    if (c_s >= s.prompt_len) continue;
    const int e = std::min(
        budget_to_blocks(c_s, m.layers, m.kv_heads, cfg_.block_size,
                         tables_.allocated_blocks(s.id)),
        evictable_blocks(tables_, store_, s.id));
    if (e > 0) {
      candidates.push_back(s);
      wanted.push_back(e);
    }
  }
  const std::vector<SeqId> batch =
      select_compression_batch(candidates, tables_, cfg_.policy.kv_limit);
  if (batch.empty()) return;

  std::vector<SequenceBudget> budgets;
  for (SeqId id : batch) {
    const auto at = std::find_if(candidates.begin(), candidates.end(),
                                 [&](const SequenceState& s) { return s.id == id; });
    budgets.push_back({id, wanted[static_cast<std::size_t>(at - candidates.begin())]});
  }
  CompressionSchedule schedule = compress(budgets, cache_, store_, tables_, manager_);

  CompressionEvent event{step_, trigger, static_cast<int>(batch.size()),
                         static_cast<std::int64_t>(schedule.freed_blocks.size()), 0};
  for (const SequenceSchedule& s : schedule.sequences) event.evicted_kvs += s.evicted_kvs;
  for (SequenceState& s : running_) {
    if (std::find(batch.begin(), batch.end(), s.id) != batch.end()) {
      s.last_compressed_at = step_;
      s.uncompressed_tokens = 0;
    }
  }
  ++report.compression_rounds;
  report.sequences_compressed += event.sequences;
  report.blocks_freed += event.blocks_freed;
  report.evicted_kvs += event.evicted_kvs;
  log_.push_back(std::move(event));
  if (keep_schedules_) schedules_.push_back(std::move(schedule));
}

StepReport Engine::step() {
  StepReport report;
  report.step = step_;
  store_.clear_fresh();

  while (!waiting_.empty()) {
    SequenceState& s = waiting_.front();
    const AllocationRequest req{s.id, AllocationRequest::Kind::kPrefill, s.position()};
    if (!manager_.allocate_prefill(tables_, req)) break;
    SequenceState admitted = s;
    waiting_.pop_front();
    admitted.status = SeqStatus::kRunning;
    admitted.admission = next_admission_++;
    admitted.uncompressed_tokens = admitted.position();
    prefill(admitted);
    running_.push_back(admitted);
    ++report.admitted;
  }
  if (report.admitted > 0 && cfg_.policy.on_prefill) {
    compression_round("prefill", report);
  }

  if (!running_.empty()) {
    auto ids = [&] {
      std::vector<SeqId> out;
      for (const SequenceState& s : running_) out.push_back(s.id);
      return out;
    };
    AllocationOutcome outcome = manager_.allocate_decode_step(tables_, ids());
    if (!outcome && cfg_.policy.on_preempt) {
      compression_round("preempt", report);
      outcome = manager_.allocate_decode_step(tables_, ids());
    }
    while (!outcome && !running_.empty()) {
      preempt(cfg_.preemption(running_));
      ++report.preemptions;
      outcome = manager_.allocate_decode_step(tables_, ids());
    }
  }

  for (SequenceState& s : running_) decode(s);
  report.batch_size = static_cast<int>(running_.size());
  report.tokens_generated = report.batch_size;

  if (cfg_.policy.every && (step_ + 1) % *cfg_.policy.every == 0) {
    compression_round("interval", report);
  }
  if (cfg_.policy.token_threshold) {
    std::int64_t pending = 0;
    for (const SequenceState& s : running_) pending += s.uncompressed_tokens;
    if (pending >= *cfg_.policy.token_threshold) {
      compression_round("threshold", report);
    }
  }

  for (auto it = running_.begin(); it != running_.end();) {
    if (it->finished()) {
      manager_.release_sequence(tables_, it->id);
      it = running_.erase(it);
      ++report.finished;
    } else {
      ++it;
    }
  }

  report.waiting = static_cast<int>(waiting_.size());
  report.free_blocks = manager_.free_count();
  report.fragmentation = fragmentation(tables_);
  ++step_;
  return report;
}

}  // namespace kvc
