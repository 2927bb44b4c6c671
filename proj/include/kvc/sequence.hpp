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

#ifndef KVC_SEQUENCE_HPP_
#define KVC_SEQUENCE_HPP_

#include <cstdint>
#include <optional>

#include "kvc/cache.hpp"

namespace kvc {

enum class SeqStatus { kWaiting, kRunning, kPreempted, kFinished };

struct SequenceState {
  SeqId id = 0;
  int prompt_len = 0;
  int generated = 0;
  int max_output = 0;
  SeqStatus status = SeqStatus::kWaiting;
  // Engine step of the most recent compression round that included this
  // sequence; empty while uncompressed since (re)admission.
  std::optional<std::int64_t> last_compressed_at;
  // Monotonic admission ticket; re-admission after preemption draws a new one.
  std::int64_t admission = -1;
  // Tokens cached since the last compression round.
  std::int64_t uncompressed_tokens = 0;

  int position() const { return prompt_len + generated; }
  bool finished() const { return generated >= max_output; }
};

}  // namespace kvc

#endif  // KVC_SEQUENCE_HPP_
