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

#include "dstc/grid.hpp"

#include <cmath>
#include <string>

#include "dstc/errors.hpp"

namespace dstc {

void check_dim(int dim) {
  if (dim != 2 && dim != 3) throw ConfigError("dimension must be 2 or 3, got " + std::to_string(dim));
}

long Extents::count() const {
  long c = 1;
  for (int d = 0; d < dim; ++d) c *= n[d];
  return c;
}

bool Extents::contains(const IVec& p) const {
  for (int d = 0; d < dim; ++d) {
    if (p[d] < 0 || p[d] >= n[d]) return false;
  }
  return true;
}

long Extents::flat(const IVec& p) const {
  long f = 0;
  for (int d = 0; d < dim; ++d) f = f * n[d] + p[d];
  return f;
}

IVec Extents::unflat(long i) const {
  IVec p{0, 0, 0};
  for (int d = dim - 1; d >= 0; --d) {
    p[d] = i % n[d];
    i /= n[d];
  }
  return p;
}

Shape Extents::shape_with_channels(std::size_t channels) const {
  Shape s{channels};
  for (int d = 0; d < dim; ++d) s.push_back(static_cast<std::size_t>(n[d]));
  return s;
}

std::vector<long> Extents::to_vector() const { return {n.begin(), n.begin() + dim}; }

Extents Extents::of_feature_map(const Shape& shape) {
  if (shape.size() != 3 && shape.size() != 4) {
    throw ShapeError("feature map must have shape (C, spatial...) with 2 or 3 spatial axes, got " +
                     shape_str(shape));
  }
  Extents e;
  e.dim = static_cast<int>(shape.size()) - 1;
  e.n = {1, 1, 1};
  for (int d = 0; d < e.dim; ++d) e.n[d] = static_cast<long>(shape[d + 1]);
  return e;
}

Extents Extents::from_vector(const std::vector<long>& v) {
  Extents e;
  e.dim = static_cast<int>(v.size());
  check_dim(e.dim);
  e.n = {1, 1, 1};
  for (int d = 0; d < e.dim; ++d) {
    if (v[d] < 1) throw ShapeError("spatial extent must be positive");
    e.n[d] = v[d];
  }
  return e;
}

RefGrid make_ref_grid(int kernel_size, int dim) {
  check_dim(dim);
  if (kernel_size < 1) throw ConfigError("kernel_size must be >= 1");
  const long lo = -(kernel_size / 2);
  const long k = kernel_size;
  RefGrid g;
  g.dim = dim;
  g.kernel_size = kernel_size;
  long total = 1;
  for (int d = 0; d < dim; ++d) total *= k;
  g.points.reserve(static_cast<std::size_t>(total));
  for (long i = 0; i < total; ++i) {
    IVec p{0, 0, 0};
    long rem = i;
    for (int d = dim - 1; d >= 0; --d) {
      p[d] = lo + rem % k;
      rem /= k;
    }
    g.points.push_back(p);
  }
  return g;
}

void LocationMap::validate() const {
  check_dim(dim);
  for (int d = 0; d < dim; ++d) {
    if (stride[d] < 1) throw ConfigError("stride must be >= 1");
    if (padding[d] < 0) throw ConfigError("padding must be >= 0");
    if (output_padding[d] < 0 || output_padding[d] >= stride[d]) {
      throw ConfigError("output_padding must satisfy 0 <= output_padding < stride");
    }
    if (base_dilation[d] < 1) throw ConfigError("base_dilation must be >= 1");
  }
}

IVec base_location(const LocationMap& map, const IVec& p0) {
  IVec r{0, 0, 0};
  for (int d = 0; d < map.dim; ++d) r[d] = map.stride[d] * p0[d] - map.padding[d];
  return r;
}

IVec output_origin(const LocationMap& map, int kernel_size) {
  IVec o{0, 0, 0};
  for (int d = 0; d < map.dim; ++d) o[d] = map.base_dilation[d] * (kernel_size / 2);
  return o;
}

Extents output_shape(const LocationMap& map, const Extents& input, int kernel_size) {
  map.validate();
  if (input.dim != map.dim) throw ShapeError("input dimension does not match location map");
  if (kernel_size < 1) throw ConfigError("kernel_size must be >= 1");
  Extents out;
  out.dim = map.dim;
  out.n = {1, 1, 1};
  for (int d = 0; d < map.dim; ++d) {
    const long h = (input.n[d] - 1) * map.stride[d] - 2 * map.padding[d] +
                   map.base_dilation[d] * (kernel_size - 1) + map.output_padding[d] + 1;
    if (h < 1) throw ConfigError("computed output extent " + std::to_string(h) + " is not positive");
    out.n[d] = h;
  }
  return out;
}

AxisRange window_axis(double q, int k_sigma, long bound) {
  long lo = 0;
  if (k_sigma % 2 == 0) {
    lo = static_cast<long>(std::floor(q)) - k_sigma / 2 + 1;
  } else {
    lo = static_cast<long>(std::floor(q + 0.5)) - (k_sigma - 1) / 2;
  }
  AxisRange r{lo, lo + k_sigma - 1};
  if (r.lo < 0) r.lo = 0;
  if (r.hi > bound - 1) r.hi = bound - 1;
  return r;
}

std::vector<IVec> interp_window(const RVec& q, int k_sigma, const Extents& bounds) {
  if (k_sigma < 1) throw ConfigError("K_sigma must be >= 1");
  std::array<AxisRange, kMaxDim> ranges{};
  long total = 1;
  for (int d = 0; d < bounds.dim; ++d) {
    ranges[d] = window_axis(q[d], k_sigma, bounds.n[d]);
    total *= ranges[d].length();
  }
  std::vector<IVec> pts;
  if (total == 0) return pts;
  pts.reserve(static_cast<std::size_t>(total));
  for (long i = 0; i < total; ++i) {
    IVec p{0, 0, 0};
    long rem = i;
    for (int d = bounds.dim - 1; d >= 0; --d) {
      p[d] = ranges[d].lo + rem % ranges[d].length();
      rem /= ranges[d].length();
    }
    pts.push_back(p);
  }
  return pts;
}

}  // namespace dstc
