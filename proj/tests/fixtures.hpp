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

#ifndef KVC_TESTS_FIXTURES_HPP_
#define KVC_TESTS_FIXTURES_HPP_

#include <algorithm>
#include <cstdint>
#include <vector>

#include "kvc/compression.hpp"
#include "test_util.hpp"

namespace testutil {

using kvc::BlockManager;
using kvc::BlockTables;
using kvc::CompressionSchedule;
using kvc::MetricsStore;
using kvc::SequenceBudget;
using kvc::SlotMetric;
using kvc::UnifiedKVCache;

constexpr int kPool = 1024;
constexpr int kDim = 3;

// One sequence (id 0) with per-head metrics and protection taken from
// oracle head instances.
struct Fixture {
  Fixture(int layers, int kv_heads, int b, const std::vector<oracle::HeadInstance>& inst,
          std::uint64_t seed = 1)
      : tables(layers, kv_heads, b), cache(kPool, b, kDim), store(kPool, b), mgr(kPool),
        heads(inst) {
    Rng rng(seed);
    std::vector<int> lens;
    for (const auto& h : inst) lens.push_back(static_cast<int>(h.metrics.size()));
    written = testutil::fill_sequence(rng, tables, cache, mgr, 0, lens);
    for (int h = 0; h < static_cast<int>(inst.size()); ++h) {
      for (int i = 0; i < lens[static_cast<std::size_t>(h)]; ++i) {
        SlotMetric& s = store.at(tables.locate(0, h, i));
        s.metric = inst[static_cast<std::size_t>(h)].metrics[static_cast<std::size_t>(i)];
        s.logical_index = i;
        s.token_position = i;
        s.protection = inst[static_cast<std::size_t>(h)].protect[static_cast<std::size_t>(i)]
                           ? kvc::kWindowProtected
                           : kvc::kUnprotected;
      }
    }
  }

  CompressionSchedule run(int E) {
    const std::vector<SequenceBudget> budgets{{0, E}};
    return kvc::compress(budgets, cache, store, tables, mgr);
  }

  // Live KVs of a head ordered by logical index.
  struct Kept {
    std::int32_t logical;
    double metric;
    oracle::Vec key;
    oracle::Vec value;
  };
  std::vector<Kept> kept(int h) const {
    std::vector<Kept> out;
    for (int i = 0; i < tables.head(0, h).context_length; ++i) {
      const std::size_t slot = cache.slot_index(tables.locate(0, h, i));
      out.push_back({store.at(slot).logical_index, store.at(slot).metric,
                     testutil::to_vec(cache.key(slot)), testutil::to_vec(cache.value(slot))});
    }
    std::sort(out.begin(), out.end(),
              [](const Kept& a, const Kept& b) { return a.logical < b.logical; });
    return out;
  }

  BlockTables tables;
  UnifiedKVCache cache;
  MetricsStore store;
  BlockManager mgr;
  std::vector<oracle::HeadInstance> heads;
  std::vector<testutil::WrittenHead> written;
};

inline oracle::HeadInstance open_head(oracle::Vec metrics) {
  oracle::HeadInstance h;
  h.protect.assign(metrics.size(), false);
  h.metrics = std::move(metrics);
  return h;
}

}  // namespace testutil

#endif  // KVC_TESTS_FIXTURES_HPP_
