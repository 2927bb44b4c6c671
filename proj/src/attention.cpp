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

#include "kvc/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "kvc/error.hpp"

namespace kvc {
namespace {

void require_finite(std::span<const double> xs, const char* what) {
  for (double x : xs) {
    if (!std::isfinite(x)) {
      throw Error(ErrorCode::kNumeric, std::string("non-finite value in ") + what);
    }
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) s += a[t] * b[t];
  return s;
}

// Turns raw scores into probabilities in place (max-subtracted softmax).
void softmax_inplace(std::span<double> scores) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double s : scores) mx = std::max(mx, s);
  double total = 0.0;
  for (double& s : scores) {
    s = std::exp(s - mx);
    total += s;
  }
  for (double& s : scores) s /= total;
}

void check_shapes(const Tensor3& q, const Tensor3& k, const Tensor3& v,
                  const AttentionConfig& cfg) {
  cfg.validate();
  const auto nq = static_cast<std::size_t>(cfg.query_heads);
  const auto nk = static_cast<std::size_t>(cfg.kv_heads);
  const auto d = static_cast<std::size_t>(cfg.head_dim);
  if (q.heads() != nq || k.heads() != nk || v.heads() != nk ||
      q.cols() != d || k.cols() != d || v.cols() != d ||
      k.rows() != q.rows() || v.rows() != q.rows() || q.rows() == 0) {
    throw Error(ErrorCode::kShape, "Q/K/V shapes do not match attention config");
  }
  require_finite(q.data(), "Q");
  require_finite(k.data(), "K");
  require_finite(v.data(), "V");
}

// One causal row: query (h, i) over keys 0..i of kv head kh.
void causal_row(const Tensor3& q, const Tensor3& k, const Tensor3& v, int h,
                int kh, std::size_t i, double scale, AttentionResult& out) {
  std::span<double> w = out.weights.row(h, i);
  const auto qi = q.row(h, i);
  for (std::size_t j = 0; j <= i; ++j) w[j] = dot(qi, k.row(kh, j)) * scale;
  softmax_inplace(w.first(i + 1));
  std::span<double> o = out.output.row(h, i);
  for (std::size_t j = 0; j <= i; ++j) {
    const auto vj = v.row(kh, j);
    for (std::size_t t = 0; t < o.size(); ++t) o[t] += w[j] * vj[t];
  }
}

}  // namespace

void AttentionConfig::validate() const {
  if (query_heads < 1 || kv_heads < 1 || head_dim < 1 || layers < 1) {
    throw Error(ErrorCode::kShape, "attention dimensions must be positive");
  }
  if (query_heads % kv_heads != 0) {
    throw Error(ErrorCode::kShape, "query heads must be a multiple of kv heads");
  }
}

AttentionResult gqa_attention(const Tensor3& q, const Tensor3& k,
                              const Tensor3& v, const AttentionConfig& cfg,
                              Exec exec) {
  check_shapes(q, k, v, cfg);
  const std::size_t L = q.rows();
  const int nq = cfg.query_heads;
  AttentionResult out{Tensor3(q.heads(), L, q.cols()), Tensor3(q.heads(), L, L)};
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim));
  const auto rows = static_cast<std::int64_t>(L);
  const std::int64_t total = rows * nq;
#pragma omp parallel for schedule(static) if (exec == Exec::kParallel)
  for (std::int64_t task = 0; task < total; ++task) {
    const int h = static_cast<int>(task / rows);
    const auto i = static_cast<std::size_t>(task % rows);
    causal_row(q, k, v, h, cfg.kv_head_of(h), i, scale, out);
  }
  return out;
}

AttentionResult dense_attention(const Tensor3& q, const Tensor3& k,
                                const Tensor3& v, Exec exec) {
  const AttentionConfig cfg{static_cast<int>(q.heads()),
                            static_cast<int>(q.heads()),
                            static_cast<int>(q.cols()), 1};
  return gqa_attention(q, k, v, cfg, exec);
}

PagedAttentionResult paged_attention(const Matrix& queries,
                                     const UnifiedKVCache& cache,
                                     const BlockTables& tables, SeqId seq,
                                     int layer, const AttentionConfig& cfg,
                                     Exec exec) {
  cfg.validate();
  if (queries.rows() != static_cast<std::size_t>(cfg.query_heads) ||
      queries.cols() != static_cast<std::size_t>(cache.head_dim()) ||
      cfg.head_dim != cache.head_dim() || cfg.kv_heads != tables.num_kv_heads()) {
    throw Error(ErrorCode::kShape, "paged attention shape mismatch");
  }
  require_finite(queries.data(), "queries");
  const int b = tables.block_size();
  // Validate up front: nothing may throw inside the parallel region.
  for (int kh = 0; kh < cfg.kv_heads; ++kh) {
    const HeadTable& t = tables.head(seq, layer, kh);
    if (t.context_length < 1) {
      throw Error(ErrorCode::kEmptyContext,
                  "kv head " + std::to_string(kh) + " of layer " +
                      std::to_string(layer) + " holds no KVs");
    }
    const auto covered = static_cast<int>(t.blocks.size()) * b;
    const bool bad_block = std::any_of(
        t.blocks.begin(), t.blocks.end(),
        [&](BlockNumber n) { return n < 0 || n >= cache.num_blocks(); });
    if (covered < t.context_length || bad_block) {
      throw Error(ErrorCode::kCorruption,
                  "block table does not cover the context of kv head " +
                      std::to_string(kh));
    }
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim));
  PagedAttentionResult out{Matrix(queries.rows(), queries.cols()),
                           std::vector<std::vector<double>>(queries.rows())};
#pragma omp parallel for schedule(static) if (exec == Exec::kParallel)
  for (int h = 0; h < cfg.query_heads; ++h) {
    const HeadTable& t = tables.head(seq, layer, cfg.kv_head_of(h));
    const auto C = static_cast<std::size_t>(t.context_length);
    std::vector<double>& w = out.weights[static_cast<std::size_t>(h)];
    w.resize(C);
    std::vector<std::size_t> slots(C);
    for (std::size_t i = 0; i < C; ++i) {
      slots[i] = cache.slot_index({t.blocks[i / b], static_cast<int>(i % b)});
      w[i] = dot(queries.row(h), cache.key(slots[i])) * scale;
    }
    softmax_inplace(w);
    std::span<double> o = out.output.row(h);
    for (std::size_t i = 0; i < C; ++i) {
      const auto vi = cache.value(slots[i]);
      for (std::size_t x = 0; x < o.size(); ++x) o[x] += w[i] * vi[x];
    }
  }
  return out;
}

namespace reference {

AttentionResult gqa_attention(const Tensor3& q, const Tensor3& k,
                              const Tensor3& v, const AttentionConfig& cfg) {
  check_shapes(q, k, v, cfg);
  const std::size_t L = q.rows();
  const std::size_t d = q.cols();
  const double root_d = std::sqrt(static_cast<double>(d));
  AttentionResult out{Tensor3(q.heads(), L, d), Tensor3(q.heads(), L, L)};
  for (int h = 0; h < cfg.query_heads; ++h) {
    const int kh = h / cfg.group_size();
    for (std::size_t i = 0; i < L; ++i) {
      std::vector<double> s(i + 1);
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j <= i; ++j) {
        double acc = 0.0;
        for (std::size_t t = 0; t < d; ++t) acc += q(h, i, t) * k(kh, j, t);
        s[j] = acc / root_d;
        mx = std::max(mx, s[j]);
      }
      double z = 0.0;
      for (double& x : s) z += (x = std::exp(x - mx));
      for (std::size_t j = 0; j <= i; ++j) {
        out.weights(h, i, j) = s[j] / z;
        for (std::size_t t = 0; t < d; ++t) {
          out.output(h, i, t) += out.weights(h, i, j) * v(kh, j, t);
        }
      }
    }
  }
  return out;
}

PagedAttentionResult paged_attention(const Matrix& queries,
                                     const UnifiedKVCache& cache,
                                     const BlockTables& tables, SeqId seq,
                                     int layer, const AttentionConfig& cfg) {
  cfg.validate();
  if (queries.rows() != static_cast<std::size_t>(cfg.query_heads) ||
      queries.cols() != static_cast<std::size_t>(cache.head_dim())) {
    throw Error(ErrorCode::kShape, "paged attention shape mismatch");
  }
  const std::size_t d = queries.cols();
  const double root_d = std::sqrt(static_cast<double>(d));
  PagedAttentionResult out{Matrix(queries.rows(), d),
                           std::vector<std::vector<double>>(queries.rows())};
  for (int h = 0; h < cfg.query_heads; ++h) {
    const int kh = h / cfg.group_size();
    const int C = tables.head(seq, layer, kh).context_length;
    if (C < 1) throw Error(ErrorCode::kEmptyContext, "kv head holds no KVs");
    auto& w = out.weights[static_cast<std::size_t>(h)];
    w.resize(static_cast<std::size_t>(C));
    double mx = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < C; ++i) {
      const KVView kv = lookup_kv(tables, cache, seq, layer, kh, i);
      double acc = 0.0;
      for (std::size_t t = 0; t < d; ++t) acc += queries(h, t) * kv.key[t];
      w[i] = acc / root_d;
      mx = std::max(mx, w[i]);
    }
    double z = 0.0;
    for (double& x : w) z += (x = std::exp(x - mx));
    for (int i = 0; i < C; ++i) {
      w[i] /= z;
      const KVView kv = lookup_kv(tables, cache, seq, layer, kh, i);
      for (std::size_t t = 0; t < d; ++t) out.output(h, t) += w[i] * kv.value[t];
    }
  }
  return out;
}

}  // namespace reference
}  // namespace kvc
