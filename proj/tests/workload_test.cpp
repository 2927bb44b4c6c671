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

#include <gtest/gtest.h>

#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "kvc/workload.hpp"
#include "test_util.hpp"

namespace kvc {
namespace {

using testutil::throws_code;

WorkloadConfig small_workload() {
  WorkloadConfig c;
  c.model = {2, 4, 2, 8};
  c.block_size = 4;
  c.num_blocks = 300;
  c.prompt = {32, 48};
  c.requests = 6;
  c.output_tokens = 16;
  return c;
}

std::string field_of(const WorkloadConfig& c) {
  try {
    c.validate();
  } catch (const Error& e) {
    return e.field();
  }
  return "";
}

TEST(WorkloadTest, GenerationIsDeterministic) {
  const WorkloadConfig c = small_workload();
  const Workload a = generate_workload(c);
  const Workload b = generate_workload(c);
  ASSERT_EQ(a.requests.size(), 6u);
  for (std::size_t i = 0; i < a.requests.size(); ++i) {
    EXPECT_EQ(a.requests[i].prompt_len, b.requests[i].prompt_len);
    EXPECT_GE(a.requests[i].prompt_len, 32);
    EXPECT_LE(a.requests[i].prompt_len, 48);
    EXPECT_EQ(a.requests[i].output_tokens, 16);
  }
}

TEST(WorkloadTest, ZeroRequestsGiveEmptyStream) {
  WorkloadConfig c = small_workload();
  c.requests = 0;
  EXPECT_TRUE(generate_workload(c).requests.empty());
  const RunReport r = run(c);
  EXPECT_EQ(r.summary.steps, 0);
  EXPECT_EQ(r.summary.throughput_proxy, 0.0);
}

TEST(WorkloadTest, SeedsGiveDistinctStreams) {
  WorkloadConfig c = small_workload();
  c.prompt = {1, 1000};
  c.requests = 8;
  std::set<std::vector<int>> seen;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    c.seed = seed;
    std::vector<int> lens;
    for (const Request& r : generate_workload(c).requests) lens.push_back(r.prompt_len);
    seen.insert(lens);
  }
  EXPECT_EQ(seen.size(), 100u);
}

TEST(WorkloadTest, PromptLengthParsing) {
  EXPECT_EQ(PromptLengths::parse("128").min, 128);
  EXPECT_EQ(PromptLengths::parse("128").max, 128);
  const PromptLengths r = PromptLengths::parse("16:64");
  EXPECT_EQ(r.min, 16);
  EXPECT_EQ(r.max, 64);
  EXPECT_EQ(r.str(), "16:64");
  EXPECT_EQ(PromptLengths::parse("7").str(), "7");
  for (const char* bad : {"", "x", "0", "64:16", "3:", "1.5"}) {
    EXPECT_TRUE(throws_code([&] { PromptLengths::parse(bad); }, ErrorCode::kConfig)) << bad;
  }
}

TEST(WorkloadTest, ValidationNamesField) {
  WorkloadConfig c = small_workload();
  EXPECT_EQ(field_of(c), "");
  c.requests = -1;
  EXPECT_EQ(field_of(c), "requests");
  c = small_workload();
  c.output_tokens = 0;
  EXPECT_EQ(field_of(c), "output-tokens");
  c = small_workload();
  c.rate = 0.5;
  EXPECT_EQ(field_of(c), "rate");
  c = small_workload();
  c.policy = "bogus";
  EXPECT_EQ(field_of(c), "policy");
  c = small_workload();
  c.block_size = 0;
  EXPECT_EQ(field_of(c), "block-size");
  c = small_workload();
  c.kv_limit = 0;
  EXPECT_EQ(field_of(c), "kv-limit");
  c = small_workload();
  c.max_steps = 0;
  EXPECT_EQ(field_of(c), "max-steps");
}

TEST(WorkloadTest, CacheTooSmallForPromptIsInfeasible) {
  WorkloadConfig c = small_workload();
  c.num_blocks = 20;
  EXPECT_TRUE(throws_code([&] { run(c); }, ErrorCode::kInfeasible));
}

TEST(WorkloadTest, CacheTooSmallForDecodeIsInfeasible) {
  // The prompt fits but without compression the first decode block does not.
  WorkloadConfig c = small_workload();
  c.prompt = {32, 32};
  c.num_blocks = 32;
  EXPECT_TRUE(throws_code([&] { run(c); }, ErrorCode::kInfeasible));
}

TEST(WorkloadTest, StepLimitIsInfeasible) {
  WorkloadConfig c = small_workload();
  c.max_steps = 3;
  EXPECT_TRUE(throws_code([&] { run(c); }, ErrorCode::kInfeasible));
}

TEST(WorkloadTest, RateOneNeverCompressesOrPreempts) {
  WorkloadConfig c = small_workload();
  c.num_blocks = 4096;
  const RunReport r = run(c);
  EXPECT_EQ(r.summary.compression_rounds, 0);
  EXPECT_EQ(r.summary.preemptions, 0);
  EXPECT_EQ(r.summary.max_batch, 6);
  EXPECT_EQ(r.summary.generated_tokens, 6 * 16);
}

TEST(WorkloadTest, StepAndEventCountersAgree) {
  WorkloadConfig c = small_workload();
  c.rate = 4;
  const RunReport r = run(c);
  std::int64_t step_freed = 0, event_freed = 0, event_kvs = 0;
  for (const StepReport& s : r.steps) step_freed += s.blocks_freed;
  for (const CompressionEvent& e : r.compressions) {
    event_freed += e.blocks_freed;
    event_kvs += e.evicted_kvs;
  }
  EXPECT_GT(event_freed, 0);
  EXPECT_EQ(step_freed, event_freed);
  EXPECT_EQ(r.summary.blocks_freed, event_freed);
  EXPECT_EQ(r.summary.evicted_kvs, event_kvs);
  EXPECT_EQ(r.summary.compression_rounds, static_cast<std::int64_t>(r.compressions.size()));
  EXPECT_EQ(r.summary.generated_tokens, 6 * 16);
}

TEST(WorkloadTest, SweepRowsMatchIndividualRuns) {
  WorkloadConfig c = small_workload();
  const std::vector<double> rates{1, 2, 4};
  const auto rows = sweep(c, rates);
  ASSERT_EQ(rows.size(), 3u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    WorkloadConfig point = c;
    point.rate = rates[i];
    const RunSummary s = run(point).summary;
    EXPECT_EQ(rows[i].rate, rates[i]);
    EXPECT_EQ(rows[i].summary.max_batch, s.max_batch);
    EXPECT_EQ(rows[i].summary.steps, s.steps);
    EXPECT_EQ(rows[i].summary.evicted_kvs, s.evicted_kvs);
  }
  EXPECT_EQ(sweep_csv(rows), sweep_csv(sweep(c, rates, Exec::kSerial)));
}

TEST(WorkloadTest, SweepMaxBatchIsNondecreasingInRate) {
  WorkloadConfig c = small_workload();
  c.num_blocks = 200;
  c.prompt = {64, 64};
  c.requests = 12;
  const std::vector<double> rates{1, 2, 4, 8};
  const auto rows = sweep(c, rates);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_GE(rows[i].summary.max_batch, rows[i - 1].summary.max_batch);
  }
  EXPECT_GT(rows.back().summary.max_batch, rows.front().summary.max_batch);
}

TEST(WorkloadTest, RateParsing) {
  EXPECT_EQ(parse_rates("1,2, 4,8"), (std::vector<double>{1, 2, 4, 8}));
  EXPECT_EQ(parse_rates("1.5"), (std::vector<double>{1.5}));
  for (const char* bad : {"", "0.5", "1,,2", "a", "2,"}) {
    EXPECT_TRUE(throws_code([&] { parse_rates(bad); }, ErrorCode::kConfig)) << bad;
  }
}

TEST(WorkloadTest, SweepCsvHasOneRowPerRate) {
  WorkloadConfig c = small_workload();
  const std::vector<double> rates{1, 2.5};
  const std::string csv = sweep_csv(sweep(c, rates));
  std::istringstream in(csv);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0], "rate,max_batch,steps,throughput_proxy,peak_fragmentation");
  EXPECT_EQ(lines[2].substr(0, 4), "2.5,");
  EXPECT_EQ(std::count(lines[1].begin(), lines[1].end(), ','), 4);
}

TEST(WorkloadTest, ReportJsonSchema) {
  WorkloadConfig c = small_workload();
  c.rate = 2;
  const RunReport r = run(c);
  const auto j = nlohmann::json::parse(report_json(r, true));
  ASSERT_TRUE(j.contains("config"));
  ASSERT_TRUE(j.contains("summary"));
  ASSERT_TRUE(j.contains("compressions"));
  ASSERT_TRUE(j.contains("steps"));
  EXPECT_EQ(j["config"]["prompt_len"], "32:48");
  EXPECT_EQ(j["config"]["rate"], 2.0);
  EXPECT_TRUE(j["config"]["kv_limit"].is_null());
  EXPECT_EQ(j["summary"]["max_batch"], r.summary.max_batch);
  EXPECT_EQ(j["steps"].size(), r.steps.size());
  EXPECT_EQ(j["compressions"].size(), r.compressions.size());
  EXPECT_FALSE(nlohmann::json::parse(report_json(r)).contains("steps"));

  const std::string steps = steps_csv(r);
  EXPECT_EQ(static_cast<std::size_t>(std::count(steps.begin(), steps.end(), '\n')),
            r.steps.size() + 1);
}

}  // namespace
}  // namespace kvc
