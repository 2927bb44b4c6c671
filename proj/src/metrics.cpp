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

#include "kvc/metrics.hpp"

#include <algorithm>
#include <string>

#include "kvc/error.hpp"

namespace kvc {
namespace {

inline double apply(Aggregation agg, double x) {
  return agg == Aggregation::kL2 ? x * x : x;
}

int group_size_for(const Tensor3& attention, int kv_heads) {
  if (kv_heads < 1 || attention.heads() % static_cast<std::size_t>(kv_heads) != 0 ||
      attention.rows() != attention.cols() || attention.rows() == 0) {
    throw Error(ErrorCode::kShape, "attention tensor does not match kv head count");
  }
  return static_cast<int>(attention.heads()) / kv_heads;
}

// Sum over the group of per-head column sums over queries [lo(j), L).
template <class FirstQuery>
KeyMetrics aggregate(const Tensor3& attention, int kv_heads, Aggregation agg,
                     FirstQuery first_query, Exec exec) {
  const int r = group_size_for(attention, kv_heads);
  const auto L = static_cast<std::int64_t>(attention.rows());
  KeyMetrics out{Matrix(static_cast<std::size_t>(kv_heads), attention.rows()),
                 std::vector<std::uint8_t>(attention.rows(), 0)};
  const std::int64_t total = L * kv_heads;
#pragma omp parallel for schedule(static) if (exec == Exec::kParallel)
  for (std::int64_t task = 0; task < total; ++task) {
    const int g = static_cast<int>(task / L);
    const std::int64_t j = task % L;
    const std::int64_t lo = std::max(first_query(j), j);
    double group_total = 0.0;
    for (int h = g * r; h < (g + 1) * r; ++h) {
      double head_sum = 0.0;
      for (std::int64_t i = lo; i < L; ++i) {
        head_sum += apply(agg, attention(h, i, j));
      }
      group_total += head_sum;
    }
    out.values(g, j) = group_total;
  }
  return out;
}

void max_pool(Matrix& m, int pool) {
  const int half = pool / 2;
  const auto L = static_cast<int>(m.cols());
  std::vector<double> src(m.cols());
  for (std::size_t g = 0; g < m.rows(); ++g) {
    std::copy(m.row(g).begin(), m.row(g).end(), src.begin());
    for (int j = 0; j < L; ++j) {
      const int lo = std::max(0, j - half);
      const int hi = std::min(L - 1, j + half);
      m(g, j) = *std::max_element(src.begin() + lo, src.begin() + hi + 1);
    }
  }
}

void mark_window(KeyMetrics& km, const MetricConfig& cfg) {
  if (!cfg.protect_window) return;
  const auto L = static_cast<int>(km.protected_keys.size());
  for (int j = std::max(0, L - cfg.window); j < L; ++j) km.protected_keys[j] = 1;
}

}  // namespace

void MetricConfig::validate() const {
  if (mode == MetricMode::kWindow && window < 1) {
    throw Error(ErrorCode::kConfig, "observation window must be >= 1", "window");
  }
  if (pool < 1 || pool % 2 == 0) {
    throw Error(ErrorCode::kConfig, "pool size must be odd and >= 1", "pool");
  }
  if (excluded_window < 0) {
    throw Error(ErrorCode::kConfig, "excluded window must be >= 0",
                "excluded-window");
  }
}

KeyMetrics window_metrics(const Tensor3& attention, int kv_heads,
                          const MetricConfig& cfg, Exec exec) {
  cfg.validate();
  const auto L = static_cast<std::int64_t>(attention.rows());
  const std::int64_t first = std::max<std::int64_t>(0, L - cfg.window);
  KeyMetrics km = aggregate(
      attention, kv_heads, cfg.aggregation,
      [first](std::int64_t) { return first; }, exec);
  if (cfg.pool > 1) max_pool(km.values, cfg.pool);
  mark_window(km, cfg);
  return km;
}

KeyMetrics full_metrics(const Tensor3& attention, int kv_heads,
                        const MetricConfig& cfg, Exec exec) {
  cfg.validate();
  const std::int64_t v = cfg.excluded_window;
  return aggregate(
      attention, kv_heads, cfg.aggregation,
      [v](std::int64_t j) { return j + v; }, exec);
}

KeyMetrics prefill_metrics(const Tensor3& attention, int kv_heads,
                           const MetricConfig& cfg, Exec exec) {
  return cfg.mode == MetricMode::kWindow
             ? window_metrics(attention, kv_heads, cfg, exec)
             : full_metrics(attention, kv_heads, cfg, exec);
}

namespace reference {

KeyMetrics window_metrics(const Tensor3& attention, int kv_heads,
                          const MetricConfig& cfg) {
  cfg.validate();
  const int r = group_size_for(attention, kv_heads);
  const auto L = static_cast<int>(attention.rows());
  Matrix raw(static_cast<std::size_t>(kv_heads), attention.rows());
  for (int i = std::max(0, L - cfg.window); i < L; ++i) {
    for (int h = 0; h < static_cast<int>(attention.heads()); ++h) {
      for (int j = 0; j <= i; ++j) {
        raw(h / r, j) += apply(cfg.aggregation, attention(h, i, j));
      }
    }
  }
  KeyMetrics km{raw, std::vector<std::uint8_t>(attention.rows(), 0)};
  const int half = cfg.pool / 2;
  for (int g = 0; g < kv_heads; ++g) {
    for (int j = 0; j < L; ++j) {
      double best = raw(g, j);
      for (int t = j - half; t <= j + half; ++t) {
        if (t >= 0 && t < L) best = std::max(best, raw(g, t));
      }
      km.values(g, j) = best;
    }
  }
  mark_window(km, cfg);
  return km;
}

KeyMetrics full_metrics(const Tensor3& attention, int kv_heads,
                        const MetricConfig& cfg) {
  cfg.validate();
  const int r = group_size_for(attention, kv_heads);
  const auto L = static_cast<int>(attention.rows());
  KeyMetrics km{Matrix(static_cast<std::size_t>(kv_heads), attention.rows()),
                std::vector<std::uint8_t>(attention.rows(), 0)};
  for (int i = 0; i < L; ++i) {
    for (int h = 0; h < static_cast<int>(attention.heads()); ++h) {
      for (int j = 0; j + cfg.excluded_window <= i; ++j) {
        km.values(h / r, j) += apply(cfg.aggregation, attention(h, i, j));
      }
    }
  }
  return km;
}

}  // namespace reference

MetricsStore::MetricsStore(int num_blocks, int block_size)
    : block_size_(block_size),
      slots_(static_cast<std::size_t>(num_blocks) * block_size) {}

void MetricsStore::reset_block(BlockNumber n) {
  const auto first = static_cast<std::size_t>(n) * block_size_;
  std::fill_n(slots_.begin() + static_cast<std::ptrdiff_t>(first), block_size_,
              SlotMetric{});
}

void MetricsStore::clear_fresh() {
  for (SlotMetric& s : slots_) {
    s.protection = static_cast<std::uint8_t>(s.protection & ~kFreshProtected);
  }
}

void load_prefill_metrics(MetricsStore& store, const BlockTables& tables,
                          SeqId seq, int layer, const KeyMetrics& metrics) {
  if (metrics.values.rows() != static_cast<std::size_t>(tables.num_kv_heads())) {
    throw Error(ErrorCode::kShape, "metrics rows != kv heads");
  }
  for (int kh = 0; kh < tables.num_kv_heads(); ++kh) {
    const int hi = tables.head_index(layer, kh);
    const int C = tables.head(seq, hi).context_length;
    if (static_cast<std::size_t>(C) != metrics.values.cols()) {
      throw Error(ErrorCode::kShape, "metrics length != head context length");
    }
    for (int i = 0; i < C; ++i) {
      SlotMetric& s = store.at(tables.locate(seq, hi, i));
      s.metric = metrics.values(kh, i);
      s.logical_index = i;
      s.token_position = i;
      s.protection = metrics.protected_keys[i] ? kWindowProtected : kUnprotected;
    }
  }
}

void init_decode_slot(MetricsStore& store, SlotHandle slot, int logical_index,
                      int token_position) {
  store.at(slot) = {0.0, logical_index, token_position, kFreshProtected};
}

void accumulate_decode(MetricsStore& store, const BlockTables& tables,
                       SeqId seq, int layer, int kv_head,
                       std::span<const std::vector<double>> group_rows,
                       int query_position, const MetricConfig& cfg) {
  const int hi = tables.head_index(layer, kv_head);
  const int C = tables.head(seq, hi).context_length;
  for (const auto& row : group_rows) {
    if (row.size() != static_cast<std::size_t>(C)) {
      throw Error(ErrorCode::kShape,
                  "attention row has " + std::to_string(row.size()) +
                      " entries for " + std::to_string(C) + " live KVs");
    }
  }
  const bool skip_near = cfg.mode == MetricMode::kFull;
  for (int i = 0; i < C; ++i) {
    SlotMetric& s = store.at(tables.locate(seq, hi, i));
    if (skip_near && query_position - s.token_position < cfg.excluded_window) {
      continue;
    }
    double inc = 0.0;
    for (const auto& row : group_rows) inc += apply(cfg.aggregation, row[i]);
    s.metric += inc;
  }
}

}  // namespace kvc
