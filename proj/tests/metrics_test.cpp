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

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kvc/attention.hpp"
#include "kvc/block_manager.hpp"
#include "kvc/metrics.hpp"
#include "test_util.hpp"

namespace kvc {
namespace {

using testutil::Rng;
using testutil::random_tensor;
using testutil::throws_code;

// Causal attention weights for random Q/K.
Tensor3 random_attention(Rng& rng, int nq, int nk, std::size_t L, std::size_t d = 4) {
  const Tensor3 q = random_tensor(rng, nq, L, d);
  const Tensor3 k = random_tensor(rng, nk, L, d);
  const Tensor3 v = random_tensor(rng, nk, L, d);
  return gqa_attention(q, k, v, {nq, nk, static_cast<int>(d), 1}).weights;
}

double max_abs_diff(const Matrix& m, const oracle::Mat& o) {
  double worst = 0.0;
  for (std::size_t g = 0; g < m.rows(); ++g) {
    for (std::size_t j = 0; j < m.cols(); ++j) worst = std::max(worst, std::abs(m(g, j) - o[g][j]));
  }
  return worst;
}

oracle::Mat to_mat(const Matrix& m) {
  oracle::Mat o(m.rows());
  for (std::size_t g = 0; g < m.rows(); ++g) o[g].assign(m.row(g).begin(), m.row(g).end());
  return o;
}

MetricConfig window_cfg(int w, int p, Aggregation agg) {
  MetricConfig c;
  c.mode = MetricMode::kWindow;
  c.window = w;
  c.pool = p;
  c.aggregation = agg;
  return c;
}

MetricConfig full_cfg(int v, Aggregation agg) {
  MetricConfig c;
  c.mode = MetricMode::kFull;
  c.excluded_window = v;
  c.aggregation = agg;
  return c;
}

TEST(MetricsTest, DefaultsMatchBaselineConfiguration) {
  const MetricConfig c;
  EXPECT_EQ(c.window, 8);
  EXPECT_EQ(c.pool, 7);
  EXPECT_EQ(c.excluded_window, 10);
  EXPECT_EQ(c.aggregation, Aggregation::kL2);
  EXPECT_TRUE(c.protect_window);
}

TEST(MetricsTest, SingleTokenMetricIsOne) {
  Tensor3 a(1, 1, 1, 1.0);
  for (Aggregation agg : {Aggregation::kL1, Aggregation::kL2}) {
    EXPECT_EQ(window_metrics(a, 1, window_cfg(8, 7, agg)).values(0, 0), 1.0);
    EXPECT_EQ(full_metrics(a, 1, full_cfg(0, agg)).values(0, 0), 1.0);
  }
}

TEST(MetricsTest, WindowMatchesTripleLoop) {
  Rng rng(21);
  for (Aggregation agg : {Aggregation::kL1, Aggregation::kL2}) {
    for (int p : {1, 3, 7}) {
      const Tensor3 a = random_attention(rng, 4, 2, 6);
      const MetricConfig cfg = window_cfg(3, p, agg);
      const KeyMetrics km = window_metrics(a, 2, cfg);
      const oracle::Mat o = oracle::window_metric(testutil::to_cube(a), 2, 3, p,
                                                  agg == Aggregation::kL2);
      EXPECT_LE(max_abs_diff(km.values, o), 1e-12);
    }
  }
}

TEST(MetricsTest, WindowProtectsLastKeys) {
  Rng rng(22);
  const Tensor3 a = random_attention(rng, 2, 1, 12);
  MetricConfig cfg = window_cfg(5, 1, Aggregation::kL2);
  const KeyMetrics km = window_metrics(a, 1, cfg);
  for (int j = 0; j < 12; ++j) EXPECT_EQ(km.protected_keys[j], j >= 7 ? 1 : 0) << j;
  cfg.protect_window = false;
  const KeyMetrics open = window_metrics(a, 1, cfg);
  EXPECT_EQ(std::count(open.protected_keys.begin(), open.protected_keys.end(), 1), 0);
  EXPECT_EQ(open.values, km.values);
}

TEST(MetricsTest, WindowLongerThanPromptUsesAllQueries) {
  Rng rng(23);
  const Tensor3 a = random_attention(rng, 2, 2, 4);
  const KeyMetrics km = window_metrics(a, 2, window_cfg(8, 1, Aggregation::kL1));
  // Every query row sums to one, so the L1 metric of all keys sums to L.
  for (int g = 0; g < 2; ++g) {
    const auto row = km.values.row(g);
    EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 4.0, 1e-12);
  }
  EXPECT_EQ(std::count(km.protected_keys.begin(), km.protected_keys.end(), 1), 4);
}

TEST(MetricsTest, FullMatchesTripleLoop) {
  Rng rng(24);
  for (Aggregation agg : {Aggregation::kL1, Aggregation::kL2}) {
    for (int v : {0, 3, 10}) {
      const Tensor3 a = random_attention(rng, 6, 3, 20);
      const KeyMetrics km = full_metrics(a, 3, full_cfg(v, agg));
      const oracle::Mat o =
          oracle::full_metric(testutil::to_cube(a), 3, v, agg == Aggregation::kL2);
      EXPECT_LE(max_abs_diff(km.values, o), 1e-12);
      EXPECT_EQ(std::count(km.protected_keys.begin(), km.protected_keys.end(), 1), 0);
    }
  }
}

TEST(MetricsTest, FullWithExcludedWindowPastEndIsZero) {
  Rng rng(25);
  const Tensor3 a = random_attention(rng, 2, 1, 7);
  const KeyMetrics km = full_metrics(a, 1, full_cfg(7, Aggregation::kL2));
  for (double x : km.values.data()) EXPECT_EQ(x, 0.0);
}

TEST(MetricsTest, FullL1WithoutExclusionIsColumnSum) {
  Rng rng(26);
  const Tensor3 a = random_attention(rng, 1, 1, 9);
  const KeyMetrics km = full_metrics(a, 1, full_cfg(0, Aggregation::kL1));
  for (std::size_t j = 0; j < 9; ++j) {
    double col = 0.0;
    for (std::size_t i = 0; i < 9; ++i) col += a(0, i, j);
    EXPECT_NEAR(km.values(0, j), col, 1e-12);
  }
}

TEST(MetricsTest, PrefillDispatchesOnMode) {
  Rng rng(27);
  const Tensor3 a = random_attention(rng, 2, 1, 10);
  const MetricConfig w = window_cfg(4, 3, Aggregation::kL2);
  const MetricConfig f = full_cfg(2, Aggregation::kL1);
  EXPECT_EQ(prefill_metrics(a, 1, w).values, window_metrics(a, 1, w).values);
  EXPECT_EQ(prefill_metrics(a, 1, f).values, full_metrics(a, 1, f).values);
}

TEST(MetricsTest, ScalingPreservesArgsort) {
  Rng rng(28);
  const Tensor3 a = random_attention(rng, 2, 1, 15);
  Tensor3 scaled = a;
  for (double& x : scaled.data()) x *= 3.0;
  for (Aggregation agg : {Aggregation::kL1, Aggregation::kL2}) {
    const MetricConfig cfg = full_cfg(0, agg);
    const KeyMetrics base = full_metrics(a, 1, cfg);
    const KeyMetrics big = full_metrics(scaled, 1, cfg);
    const double factor = agg == Aggregation::kL1 ? 3.0 : 9.0;
    std::vector<int> ia(15), ib(15);
    std::iota(ia.begin(), ia.end(), 0);
    std::iota(ib.begin(), ib.end(), 0);
    std::stable_sort(ia.begin(), ia.end(), [&](int x, int y) { return base.values(0, x) < base.values(0, y); });
    std::stable_sort(ib.begin(), ib.end(), [&](int x, int y) { return big.values(0, x) < big.values(0, y); });
    EXPECT_EQ(ia, ib);
    for (std::size_t j = 0; j < 15; ++j) {
      EXPECT_NEAR(big.values(0, j), factor * base.values(0, j), 1e-12);
    }
  }
}

TEST(MetricsTest, GroupedEqualsSumOfPerHeadOnRepeatedCache) {
  Rng rng(29);
  for (int trial = 0; trial < 20; ++trial) {
    const int nk = 2, nq = 6, r = 3;
    const auto L = static_cast<std::size_t>(testutil::uniform(rng, 1, 30));
    const Tensor3 q = random_tensor(rng, nq, L, 4);
    const Tensor3 k = random_tensor(rng, nk, L, 4);
    const Tensor3 v = random_tensor(rng, nk, L, 4);
    const Tensor3 grouped = gqa_attention(q, k, v, {nq, nk, 4, 1}).weights;
    Tensor3 kr(nq, L, 4), vr(nq, L, 4);
    for (int h = 0; h < nq; ++h) {
      for (std::size_t i = 0; i < L; ++i) {
        std::copy_n(k.row(h / r, i).begin(), 4, kr.row(h, i).begin());
        std::copy_n(v.row(h / r, i).begin(), 4, vr.row(h, i).begin());
      }
    }
    const Tensor3 per_head = dense_attention(q, kr, vr).weights;
    for (const MetricConfig& cfg :
         {window_cfg(5, 1, Aggregation::kL2), full_cfg(2, Aggregation::kL1)}) {
      // Pooling is applied after the group sum, so only p = 1 is linear.
      const KeyMetrics g = prefill_metrics(grouped, nk, cfg);
      const KeyMetrics h = prefill_metrics(per_head, nq, cfg);
      for (int kv = 0; kv < nk; ++kv) {
        for (std::size_t j = 0; j < L; ++j) {
          double sum = 0.0;
          for (int t = kv * r; t < (kv + 1) * r; ++t) sum += h.values(t, j);
          EXPECT_EQ(g.values(kv, j), sum);
        }
      }
    }
  }
}

TEST(MetricsTest, SerialParallelAndReferenceAgree) {
  Rng rng(30);
  const Tensor3 a = random_attention(rng, 8, 2, 40);
  const MetricConfig w = window_cfg(8, 7, Aggregation::kL2);
  const MetricConfig f = full_cfg(10, Aggregation::kL2);
  EXPECT_EQ(window_metrics(a, 2, w, Exec::kParallel).values,
            window_metrics(a, 2, w, Exec::kSerial).values);
  // The reference sums in a different order, so it agrees up to rounding.
  EXPECT_LE(max_abs_diff(window_metrics(a, 2, w).values,
                         to_mat(reference::window_metrics(a, 2, w).values)),
            1e-12);
  EXPECT_EQ(window_metrics(a, 2, w).protected_keys,
            reference::window_metrics(a, 2, w).protected_keys);
  EXPECT_EQ(full_metrics(a, 2, f, Exec::kParallel).values,
            full_metrics(a, 2, f, Exec::kSerial).values);
  EXPECT_LE(max_abs_diff(full_metrics(a, 2, f).values,
                         to_mat(reference::full_metrics(a, 2, f).values)),
            1e-12);
}

TEST(MetricsTest, ConfigValidationNamesField) {
  auto field_of = [](MetricConfig c) -> std::string {
    try {
      c.validate();
    } catch (const Error& e) {
      return e.field();
    }
    return "";
  };
  MetricConfig c;
  c.pool = 4;
  EXPECT_EQ(field_of(c), "pool");
  c = {};
  c.pool = 0;
  EXPECT_EQ(field_of(c), "pool");
  c = {};
  c.window = 0;
  EXPECT_EQ(field_of(c), "window");
  c = {};
  c.excluded_window = -1;
  EXPECT_EQ(field_of(c), "excluded-window");
  EXPECT_EQ(field_of(MetricConfig{}), "");
}

TEST(MetricsTest, KvHeadMismatchIsShapeError) {
  Tensor3 a(3, 4, 4, 0.25);
  EXPECT_TRUE(throws_code([&] { window_metrics(a, 2, MetricConfig{}); }, ErrorCode::kShape));
}

// A single-layer, single-kv-head sequence with C prompt KVs.
struct StoreFixture {
  explicit StoreFixture(int C, int b = 4)
      : tables(1, 1, b), cache(64, b, 2), store(64, b), mgr(64) {
    Rng rng(1);
    const std::vector<int> lens{C};
    testutil::fill_sequence(rng, tables, cache, mgr, 0, lens);
  }
  double metric(int i) const { return store.at(tables.locate(0, 0, i)).metric; }
  BlockTables tables;
  UnifiedKVCache cache;
  MetricsStore store;
  BlockManager mgr;
};

TEST(MetricsTest, LoadPrefillSetsIndicesAndProtection) {
  StoreFixture f(6);
  KeyMetrics km{Matrix(1, 6), {0, 0, 0, 0, 1, 1}};
  for (int i = 0; i < 6; ++i) km.values(0, i) = 0.1 * i;
  load_prefill_metrics(f.store, f.tables, 0, 0, km);
  for (int i = 0; i < 6; ++i) {
    const SlotMetric& s = f.store.at(f.tables.locate(0, 0, i));
    EXPECT_EQ(s.metric, 0.1 * i);
    EXPECT_EQ(s.logical_index, i);
    EXPECT_EQ(s.token_position, i);
    EXPECT_EQ(s.is_protected(), i >= 4);
  }
  KeyMetrics wrong{Matrix(1, 5), std::vector<std::uint8_t>(5, 0)};
  EXPECT_TRUE(throws_code([&] { load_prefill_metrics(f.store, f.tables, 0, 0, wrong); },
                          ErrorCode::kShape));
}

TEST(MetricsTest, ZeroAttentionLeavesStoreUnchanged) {
  StoreFixture f(5);
  KeyMetrics km{Matrix(1, 5, 0.5), std::vector<std::uint8_t>(5, 0)};
  load_prefill_metrics(f.store, f.tables, 0, 0, km);
  const std::vector<std::vector<double>> rows{std::vector<double>(5, 0.0),
                                              std::vector<double>(5, 0.0)};
  accumulate_decode(f.store, f.tables, 0, 0, 0, rows, 5, MetricConfig{});
  for (int i = 0; i < 5; ++i) EXPECT_EQ(f.metric(i), 0.5);
}

TEST(MetricsTest, AccumulationIsAdditive) {
  StoreFixture a(7), b(7);
  Rng rng(31);
  std::vector<std::vector<double>> r1(2, std::vector<double>(7)), r2 = r1;
  for (auto* rows : {&r1, &r2}) {
    for (auto& row : *rows) {
      for (double& x : row) x = std::uniform_real_distribution<double>(0, 1)(rng);
    }
  }
  MetricConfig cfg;
  cfg.aggregation = Aggregation::kL1;
  accumulate_decode(a.store, a.tables, 0, 0, 0, r1, 7, cfg);
  accumulate_decode(a.store, a.tables, 0, 0, 0, r2, 8, cfg);
  // One combined accumulation: under L1 the rows simply add.
  std::vector<std::vector<double>> combined = r1;
  for (std::size_t g = 0; g < 2; ++g) {
    for (std::size_t i = 0; i < 7; ++i) combined[g][i] += r2[g][i];
  }
  accumulate_decode(b.store, b.tables, 0, 0, 0, combined, 8, cfg);
  for (int i = 0; i < 7; ++i) EXPECT_NEAR(a.metric(i), b.metric(i), 1e-12);
}

TEST(MetricsTest, FullModeDecodeSkipsRecentKeys) {
  StoreFixture f(6);
  for (int i = 0; i < 6; ++i) f.store.at(f.tables.locate(0, 0, i)).token_position = i;
  const std::vector<std::vector<double>> rows{std::vector<double>(6, 0.5)};
  accumulate_decode(f.store, f.tables, 0, 0, 0, rows, 6, full_cfg(3, Aggregation::kL1));
  // Query at position 6 reaches keys with 6 - j >= 3.
  for (int i = 0; i < 6; ++i) EXPECT_EQ(f.metric(i), i <= 3 ? 0.5 : 0.0) << i;
}

TEST(MetricsTest, DecodeRowLengthMismatchIsShapeError) {
  StoreFixture f(4);
  const std::vector<std::vector<double>> rows{std::vector<double>(3, 0.1)};
  EXPECT_TRUE(throws_code(
      [&] { accumulate_decode(f.store, f.tables, 0, 0, 0, rows, 4, MetricConfig{}); },
      ErrorCode::kShape));
}

TEST(MetricsTest, DecodeSlotStartsFreshAndProtectionClears) {
  MetricsStore store(2, 2);
  init_decode_slot(store, {1, 1}, 3, 9);
  const SlotMetric& s = store.at(SlotHandle{1, 1});
  EXPECT_EQ(s.metric, 0.0);
  EXPECT_EQ(s.logical_index, 3);
  EXPECT_EQ(s.token_position, 9);
  EXPECT_EQ(s.protection, kFreshProtected);
  store.at(SlotHandle{0, 0}).protection = kWindowProtected;
  store.clear_fresh();
  EXPECT_FALSE(store.at(SlotHandle{1, 1}).is_protected());
  EXPECT_EQ(store.at(SlotHandle{0, 0}).protection, kWindowProtected);
  store.reset_block(0);
  EXPECT_FALSE(store.at(SlotHandle{0, 0}).is_protected());
  EXPECT_EQ(store.at(SlotHandle{0, 0}).logical_index, -1);
}

}  // namespace
}  // namespace kvc
