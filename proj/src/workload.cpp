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

#include "kvc/workload.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <exception>
#include <random>

#include <fmt/format.h>
#include "json.hpp"

#include "kvc/error.hpp"

namespace kvc {
namespace {

int parse_int(std::string_view text, const char* field) {
  int value = 0;
  const auto [ptr, ec] =
      std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw Error(ErrorCode::kConfig,
                "expected an integer, got '" + std::string(text) + "'", field);
  }
  return value;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

const char* mode_name(MetricMode m) {
  return m == MetricMode::kFull ? "full" : "window";
}

const char* aggregation_name(Aggregation a) {
  return a == Aggregation::kL1 ? "l1" : "l2";
}

}  // namespace

PromptLengths PromptLengths::parse(std::string_view text) {
  PromptLengths p;
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) {
    p.min = p.max = parse_int(trim(text), "prompt-len");
  } else {
    p.min = parse_int(trim(text.substr(0, colon)), "prompt-len");
    p.max = parse_int(trim(text.substr(colon + 1)), "prompt-len");
  }
  if (p.min < 1 || p.max < p.min) {
    throw Error(ErrorCode::kConfig,
                "prompt length range must satisfy 1 <= lo <= hi", "prompt-len");
  }
  return p;
}

std::string PromptLengths::str() const {
  return min == max ? std::to_string(min)
                    : std::to_string(min) + ":" + std::to_string(max);
}

void WorkloadConfig::validate() const {
  if (prompt.min < 1 || prompt.max < prompt.min) {
    throw Error(ErrorCode::kConfig,
                "prompt length range must satisfy 1 <= lo <= hi", "prompt-len");
  }
  if (requests < 0) {
    throw Error(ErrorCode::kConfig, "requests must be >= 0", "requests");
  }
  if (output_tokens < 1) {
    throw Error(ErrorCode::kConfig, "output tokens must be >= 1", "output-tokens");
  }
  if (max_steps < 1) {
    throw Error(ErrorCode::kConfig, "max steps must be >= 1", "max-steps");
  }
  engine_config().validate();
}

EngineConfig WorkloadConfig::engine_config() const {
  EngineConfig e;
  e.model = model;
  e.block_size = block_size;
  e.num_blocks = num_blocks;
  e.metrics = metric;
  e.policy = CompressionPolicy::preset(policy);
  if (kv_limit) e.policy.kv_limit = *kv_limit;
  e.budget.rate = rate;
  e.budget.max_cache_tokens = max_cache;
  e.budget.mode = budget_mode;
  e.exec = exec;
  return e;
}

Workload generate_workload(const WorkloadConfig& cfg) {
  cfg.validate();
  Workload w{{}, TokenStream(cfg.seed, cfg.model)};
  std::mt19937_64 rng(cfg.seed);
  const auto span = static_cast<std::uint64_t>(cfg.prompt.max - cfg.prompt.min) + 1;
  w.requests.reserve(static_cast<std::size_t>(cfg.requests));
  for (int i = 0; i < cfg.requests; ++i) {
    // Plain modulo instead of uniform_int_distribution keeps lengths
    // identical across standard libraries.
    const auto len = cfg.prompt.min + static_cast<int>(rng() % span);
    w.requests.push_back({static_cast<SeqId>(i), len, cfg.output_tokens});
  }
  return w;
}

RunReport run(const WorkloadConfig& cfg) {
  Workload w = generate_workload(cfg);
  const EngineConfig ec = cfg.engine_config();
  for (const Request& r : w.requests) {
    const std::int64_t need = blocks_needed_prefill(r.prompt_len, ec.model.layers,
                                           ec.model.kv_heads, ec.block_size);
    if (need > ec.num_blocks) {
      throw Error(ErrorCode::kInfeasible,
                  fmt::format("request {} needs {} blocks for prefill but the "
                              "cache holds {}",
                              r.id, need, ec.num_blocks),
                  "num-blocks");
    }
  }

  Engine engine(ec, w.stream);
  for (const Request& r : w.requests) engine.submit(r);

  RunReport report;
  report.config = cfg;
  RunSummary& s = report.summary;
  while (!engine.idle()) {
    if (engine.current_step() >= cfg.max_steps) {
      throw Error(ErrorCode::kInfeasible,
                  fmt::format("workload did not finish within {} steps", cfg.max_steps),
                  "max-steps");
    }
    const StepReport step = engine.step();
    // Nothing decoded while work remains: the cache cannot hold even one
    // sequence's next step, so every later step would repeat this one.
    if (step.batch_size == 0 && !engine.idle()) {
      throw Error(ErrorCode::kInfeasible,
                  "no sequence can make progress with the configured cache",
                  "num-blocks");
    }
    s.max_batch = std::max(s.max_batch, step.batch_size);
    s.generated_tokens += step.tokens_generated;
    s.peak_fragmentation = std::max(s.peak_fragmentation, step.fragmentation);
    s.compression_rounds += step.compression_rounds;
    s.preemptions += step.preemptions;
    s.blocks_freed += step.blocks_freed;
    s.evicted_kvs += step.evicted_kvs;
    report.steps.push_back(step);
  }
  s.steps = static_cast<std::int64_t>(report.steps.size());
  s.throughput_proxy =
      s.steps == 0 ? 0.0
                   : static_cast<double>(s.generated_tokens) / static_cast<double>(s.steps);
  report.compressions = engine.compression_log();
  return report;
}

std::vector<SweepRow> sweep(const WorkloadConfig& cfg,
                            std::span<const double> rates, Exec exec) {
  std::vector<SweepRow> rows(rates.size());
  std::vector<std::exception_ptr> errors(rates.size());
  const auto n = static_cast<std::int64_t>(rates.size());
#pragma omp parallel for schedule(dynamic) if (exec == Exec::kParallel)
  for (std::int64_t i = 0; i < n; ++i) {
    try {
      WorkloadConfig point = cfg;
      point.rate = rates[i];
      // Parallelism goes across points; kernels inside a point run serially.
      if (exec == Exec::kParallel) point.exec = Exec::kSerial;
      rows[i] = {rates[i], run(point).summary};
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return rows;
}

std::vector<double> parse_rates(std::string_view text) {
  std::vector<double> rates;
  while (!text.empty()) {
    const auto comma = text.find(',');
    const std::string_view item = trim(text.substr(0, comma));
    double r = 0.0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), r);
    if (item.empty() || ec != std::errc() || ptr != item.data() + item.size() ||
        !(r >= 1.0) || !std::isfinite(r)) {
      throw Error(ErrorCode::kConfig,
                  "rates must be a comma-separated list of numbers >= 1", "rates");
    }
    rates.push_back(r);
    if (comma == std::string_view::npos) return rates;
    text.remove_prefix(comma + 1);
  }
  throw Error(ErrorCode::kConfig,
              "rates must be a comma-separated list of numbers >= 1", "rates");
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::string out = "rate,max_batch,steps,throughput_proxy,peak_fragmentation\n";
  for (const SweepRow& r : rows) {
    out += fmt::format("{:g},{},{},{:.6f},{}\n", r.rate, r.summary.max_batch,
                       r.summary.steps, r.summary.throughput_proxy,
                       r.summary.peak_fragmentation);
  }
  return out;
}

std::string steps_csv(const RunReport& report) {
  std::string out =
      "step,batch_size,waiting,admitted,finished,preemptions,compression_rounds,"
      "sequences_compressed,blocks_freed,evicted_kvs,free_blocks,fragmentation,"
      "tokens_generated\n";
  for (const StepReport& s : report.steps) {
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{}\n", s.step,
                       s.batch_size, s.waiting, s.admitted, s.finished,
                       s.preemptions, s.compression_rounds, s.sequences_compressed,
                       s.blocks_freed, s.evicted_kvs, s.free_blocks,
                       s.fragmentation, s.tokens_generated);
  }
  return out;
}

std::string report_json(const RunReport& report, bool include_steps) {
  using nlohmann::ordered_json;
  const WorkloadConfig& c = report.config;
  ordered_json config = {
      {"seed", c.seed},
      {"layers", c.model.layers},
      {"query_heads", c.model.query_heads},
      {"kv_heads", c.model.kv_heads},
      {"head_dim", c.model.head_dim},
      {"block_size", c.block_size},
      {"num_blocks", c.num_blocks},
      {"prompt_len", c.prompt.str()},
      {"requests", c.requests},
      {"output_tokens", c.output_tokens},
      {"rate", c.rate},
      {"max_cache", c.max_cache ? ordered_json(*c.max_cache) : ordered_json()},
      {"budget_mode", c.budget_mode == BudgetMode::kMin ? "min" : "max"},
      {"policy", c.policy},
      {"metric_mode", mode_name(c.metric.mode)},
      {"aggregation", aggregation_name(c.metric.aggregation)},
      {"window", c.metric.window},
      {"pool", c.metric.pool},
      {"excluded_window", c.metric.excluded_window},
      {"kv_limit", c.kv_limit ? ordered_json(*c.kv_limit) : ordered_json()},
  };
  const RunSummary& s = report.summary;
  ordered_json summary = {
      {"max_batch", s.max_batch},
      {"steps", s.steps},
      {"generated_tokens", s.generated_tokens},
      {"throughput_proxy", s.throughput_proxy},
      {"peak_fragmentation", s.peak_fragmentation},
      {"compression_rounds", s.compression_rounds},
      {"preemptions", s.preemptions},
      {"blocks_freed", s.blocks_freed},
      {"evicted_kvs", s.evicted_kvs},
  };
  ordered_json events = ordered_json::array();
  for (const CompressionEvent& e : report.compressions) {
    events.push_back({{"step", e.step},
                      {"trigger", e.trigger},
                      {"sequences", e.sequences},
                      {"blocks_freed", e.blocks_freed},
                      {"evicted_kvs", e.evicted_kvs}});
  }
  ordered_json out = {{"config", config}, {"summary", summary}, {"compressions", events}};
  if (include_steps) {
    ordered_json steps = ordered_json::array();
    for (const StepReport& st : report.steps) {
      steps.push_back({{"step", st.step},
                       {"batch_size", st.batch_size},
                       {"waiting", st.waiting},
                       {"admitted", st.admitted},
                       {"finished", st.finished},
                       {"preemptions", st.preemptions},
                       {"compression_rounds", st.compression_rounds},
                       {"blocks_freed", st.blocks_freed},
                       {"free_blocks", st.free_blocks},
                       {"fragmentation", st.fragmentation}});
    }
    out["steps"] = std::move(steps);
  }
  return out.dump(2) + "\n";
}

}  // namespace kvc
