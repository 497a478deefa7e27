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

#include <array>
#include <cstddef>
#include <vector>

#include "dstc/tensor.hpp"

namespace dstc {

inline constexpr int kMaxDim = 3;

// Coordinates are stored in fixed arrays; components past `dim` are zero.
using IVec = std::array<long, kMaxDim>;
using RVec = std::array<double, kMaxDim>;

void check_dim(int dim);

/// Spatial extents of a feature map, row-major.
struct Extents {
  int dim = 2;
  IVec n{1, 1, 1};

  long count() const;
  bool contains(const IVec& p) const;
  long flat(const IVec& p) const;
  IVec unflat(long i) const;
  Shape shape_with_channels(std::size_t channels) const;
  std::vector<long> to_vector() const;

  /// Spatial part of a (C, spatial...) tensor shape.
  static Extents of_feature_map(const Shape& shape);
  static Extents from_vector(const std::vector<long>& v);
  bool operator==(const Extents&) const = default;
};

/// The K^D integer kernel offsets, lexicographic order. Point index n ties
/// weights, offsets and scores together.
struct RefGrid {
  int dim = 2;
  int kernel_size = 1;
  std::vector<IVec> points;

  std::size_t size() const { return points.size(); }
};

RefGrid make_ref_grid(int kernel_size, int dim);

/// Input-to-output placement parameters of a transposed convolution.
struct LocationMap {
  int dim = 2;
  IVec stride{1, 1, 1};
  IVec padding{0, 0, 0};
  IVec output_padding{0, 0, 0};
  IVec base_dilation{1, 1, 1};

  void validate() const;
};

/// stride * p0 - padding, the anchor to which base_dilation * p_n is added.
IVec base_location(const LocationMap& map, const IVec& p0);

/// Output-frame origin: the array index of anchor coordinate 0 is
/// base_dilation * floor(K/2). With this shift the zero-offset scatter
/// footprint of input index 0 starts at index -padding, which makes the
/// placement identical to the usual framework transposed convolution.
IVec output_origin(const LocationMap& map, int kernel_size);

/// (H_i - 1) * stride - 2 * padding + base_dilation * (K - 1) + output_padding + 1.
Extents output_shape(const LocationMap& map, const Extents& input, int kernel_size);

/// Inclusive integer range on one axis; empty when hi < lo.
struct AxisRange {
  long lo = 0;
  long hi = -1;
  long length() const { return hi >= lo ? hi - lo + 1 : 0; }
};

/// The K_sigma nearest integers to q on one axis, clipped to [0, bound).
/// Even widths take floor(q) - K/2 + 1 .. floor(q) + K/2, odd widths are
/// centred on floor(q + 0.5).
AxisRange window_axis(double q, int k_sigma, long bound);

/// Cartesian product of window_axis over the dimensions, lexicographic.
std::vector<IVec> interp_window(const RVec& q, int k_sigma, const Extents& bounds);

}  // namespace dstc
