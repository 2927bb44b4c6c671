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

#ifndef KVC_TENSOR_HPP_
#define KVC_TENSOR_HPP_

#include <cstddef>
#include <span>
#include <vector>

namespace kvc {

// Dense row-major heads x rows x cols array of doubles.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t heads, std::size_t rows, std::size_t cols,
          double fill = 0.0)
      : heads_(heads), rows_(rows), cols_(cols),
        data_(heads * rows * cols, fill) {}

  std::size_t heads() const { return heads_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t h, std::size_t i, std::size_t j) {
    return data_[(h * rows_ + i) * cols_ + j];
  }
  double operator()(std::size_t h, std::size_t i, std::size_t j) const {
    return data_[(h * rows_ + i) * cols_ + j];
  }

  std::span<double> row(std::size_t h, std::size_t i) {
    return {data_.data() + (h * rows_ + i) * cols_, cols_};
  }
  std::span<const double> row(std::size_t h, std::size_t i) const {
    return {data_.data() + (h * rows_ + i) * cols_, cols_};
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  std::size_t heads_ = 0;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Row-major rows x cols array.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t i, std::size_t j) {
    return data_[i * cols_ + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    return data_[i * cols_ + j];
  }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

}  // namespace kvc

#endif  // KVC_TENSOR_HPP_
