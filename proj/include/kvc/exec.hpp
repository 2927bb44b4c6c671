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

#ifndef KVC_EXEC_HPP_
#define KVC_EXEC_HPP_

namespace kvc {

// Whether a kernel may open an OpenMP parallel region.
enum class Exec { kSerial, kParallel };

}  // namespace kvc

#endif  // KVC_EXEC_HPP_
