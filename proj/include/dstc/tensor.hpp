// Copyright 2026 The DSTC Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace dstc {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

/**
 * Dense row-major tensor of doubles.
 *
 * Feature maps are stored channel-first, (C, H, W) in 2D and (C, H, W, D)
 * in 3D. Weights, offsets, scores and gradients use the same storage.
 * There is no broadcasting and no views: every operation that takes two
 * tensors requires identical shapes.
 *
 * A default-constructed Tensor is "unset" (rank 0, no elements); it exists
 * so that tensors can be members of aggregates and be moved from. All
 * constructors taking a shape reject zero extents.
 */
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const;
  bool is_set() const { return !shape_.empty(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  /// Bounds-checked multi-index access.
  double& at(std::span<const std::size_t> index);
  double at(std::span<const std::size_t> index) const;
  double& at(std::initializer_list<std::size_t> index) {
    return at(std::span<const std::size_t>(index.begin(), index.size()));
  }
  double at(std::initializer_list<std::size_t> index) const {
    return at(std::span<const std::size_t>(index.begin(), index.size()));
  }

  std::size_t flat_index(std::span<const std::size_t> index) const;

  void fill(double v);
  bool all_finite() const;

  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double s);

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

Tensor zeros(const Shape& shape);

/// Adds v to t[index]. Throws IndexError when index is out of range.
void accumulate_at(Tensor& t, std::span<const std::size_t> index, double v);
inline void accumulate_at(Tensor& t, std::initializer_list<std::size_t> index, double v) {
  accumulate_at(t, std::span<const std::size_t>(index.begin(), index.size()), v);
}

/// out[i] = f(t[i]). Throws NumericError if f produces a non-finite value.
Tensor map_elementwise(const Tensor& t, const std::function<double(double)>& f);

double dot(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);
double max_abs(const Tensor& t);
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

// Binary form: u64 rank, u64 extents, then f64 values; all little-endian.
void write_binary(std::ostream& os, const Tensor& t);
Tensor read_binary(std::istream& is);
std::size_t binary_size(const Tensor& t);

// Text form for small golden files: {"shape": [...], "data": [...]}.
nlohmann::json to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j);

}  // namespace dstc
