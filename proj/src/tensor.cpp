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

#include "dstc/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

#include "dstc/errors.hpp"

namespace dstc {

namespace {

std::size_t checked_count(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor rank must be at least 1");
  std::size_t n = 1;
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("zero extent in " + shape_str(shape));
    n *= e;
  }
  return n;
}

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return r;
  }
}

void put_u64(std::ostream& os, std::uint64_t v) {
  v = to_le(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw IoError("truncated tensor header");
  }
  return to_le(v);
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  data_.assign(checked_count(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
  if (checked_count(shape_) != data.size()) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match " +
                     shape_str(shape_));
  }
  data_ = std::move(data);
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= shape_.size()) throw IndexError("axis " + std::to_string(axis) + " of rank " +
                                              std::to_string(shape_.size()));
  return shape_[axis];
}

std::size_t Tensor::flat_index(std::span<const std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw IndexError("index rank " + std::to_string(index.size()) + " for shape " +
                     shape_str(shape_));
  }
  std::size_t flat = 0;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= shape_[i]) {
      throw IndexError("coordinate " + std::to_string(index[i]) + " on axis " + std::to_string(i) +
                       " of " + shape_str(shape_));
    }
    flat = flat * shape_[i] + index[i];
  }
  return flat;
}

double& Tensor::at(std::span<const std::size_t> index) { return data_[flat_index(index)]; }
double Tensor::at(std::span<const std::size_t> index) const { return data_[flat_index(index)]; }

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Tensor zeros(const Shape& shape) { return Tensor(shape); }

void accumulate_at(Tensor& t, std::span<const std::size_t> index, double v) {
  t[t.flat_index(index)] += v;
}

Tensor map_elementwise(const Tensor& t, const std::function<double(double)>& f) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) {
    out[i] = f(t[i]);
    if (!std::isfinite(out[i])) throw NumericError("map_elementwise produced a non-finite value");
  }
  return out;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

void write_binary(std::ostream& os, const Tensor& t) {
  put_u64(os, t.rank());
  for (std::size_t e : t.shape()) put_u64(os, e);
  for (double v : t.data()) put_u64(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw IoError("failed writing tensor");
}

Tensor read_binary(std::istream& is) {
  const std::uint64_t rank = get_u64(is);
  if (rank == 0 || rank > 16) throw IoError("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) e = get_u64(is);
  Tensor t(shape);
  for (double& v : t.data()) {
    std::uint64_t bits = 0;
    if (!is.read(reinterpret_cast<char*>(&bits), sizeof bits)) throw IoError("truncated tensor data");
    v = std::bit_cast<double>(to_le(bits));
  }
  return t;
}

std::size_t binary_size(const Tensor& t) { return 8 * (1 + t.rank() + t.size()); }

nlohmann::json to_json(const Tensor& t) {
  return nlohmann::json{{"shape", t.shape()},
                        {"data", std::vector<double>(t.data().begin(), t.data().end())}};
}

Tensor tensor_from_json(const nlohmann::json& j) {
  try {
    return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad tensor json: ") + e.what());
  }
}

}  // namespace dstc
