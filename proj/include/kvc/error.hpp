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

#ifndef KVC_ERROR_HPP_
#define KVC_ERROR_HPP_

#include <stdexcept>
#include <string>
#include <string_view>

namespace kvc {

enum class ErrorCode {
  kPosition,            // logical position outside the live context
  kCorruption,          // block table references a missing/invalid block
  kAllocationOrder,     // write issued before its block was allocated
  kOwnership,           // double free or freeing an unowned block
  kNoVictim,            // preemption requested with nothing running
  kNumeric,             // non-finite attention inputs
  kShape,               // tensor/config shape mismatch
  kEmptyContext,        // attention over a head with no live KVs
  kBudget,              // eviction budget exceeds evictable blocks
  kScheduleCorruption,  // MoveCache precondition violated
  kConfig,              // invalid configuration field
  kInfeasible,          // workload can never be scheduled
};

std::string_view to_string(ErrorCode code);

// All library failures are reported through this exception type. `field`
// names the offending configuration key for kConfig errors.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string field = {})
      : std::runtime_error(message), code_(code), field_(std::move(field)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& field() const noexcept { return field_; }

 private:
  ErrorCode code_;
  std::string field_;
};

}  // namespace kvc

#endif  // KVC_ERROR_HPP_
