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


// Helpers shared by the unit and acceptance suites.

#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "dstc/layer.hpp"

namespace dstc::testing {

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data()) v = u(rng);
  return t;
}

inline int pick(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

/// A desk-scale configuration plus an input extent that gives a non-empty
/// output.
struct RandomCase {
  DstcConfig cfg;
  Extents input;
};

/// Random geometry for a variant (redrawn until the output is non-empty): K 1..4, stride 1..3, small padding,
/// base dilation 1..2, 1..3 channels, inputs of 2..5 (2D) or 2..3 (3D).
inline RandomCase random_case(Variant v, int dim, std::mt19937_64& rng) {
  RandomCase rc;
  DstcConfig& c = rc.cfg;
  c = DstcConfig::for_variant(v, dim);
  c.in_channels = static_cast<std::size_t>(pick(rng, 1, 3));
  c.out_channels = static_cast<std::size_t>(pick(rng, 1, 3));
  c.kernel_size = pick(rng, 1, 4);
  rc.input.dim = dim;
  for (int d = 0; d < dim; ++d) {
    c.stride[d] = pick(rng, 1, 3);
    c.padding[d] = pick(rng, 0, 1);
    c.output_padding[d] = pick(rng, 0, static_cast<int>(c.stride[d]) - 1);
    c.base_dilation[d] = pick(rng, 1, 2);
    rc.input.n[d] = dim == 2 ? pick(rng, 2, 5) : pick(rng, 2, 3);
  }
  for (int d = 0; d < dim; ++d) {
    const long out = (rc.input.n[d] - 1) * c.stride[d] - 2 * c.padding[d] +
                     c.base_dilation[d] * (c.kernel_size - 1) + c.output_padding[d] + 1;
    if (out < 1) return random_case(v, dim, rng);
  }
  if (c.gaussian()) {
    static const std::vector<std::vector<double>> banks{
        {0.25, 1, 4, 16}, {1.0 / 30, 0.5, 1, 2}, {0.25}, {1}, {0.5, 2}};
    c.gaussian_variances = banks[static_cast<std::size_t>(pick(rng, 0, static_cast<int>(banks.size()) - 1))];
    c.K_sigma = pick(rng, 2, 7);
  }
  if (v == Variant::dstc_parametrized) c.dilation_base = std::uniform_real_distribution<double>(0.5, 3.5)(rng);
  return rc;
}

/// Fills head weights from U(-scale, scale) so offsets and scores vary.
inline void randomize_heads(LayerParams& p, std::mt19937_64& rng, double scale) {
  if (p.offset_head) p.offset_head->weights = random_tensor(p.offset_head->weights.shape(), rng, -scale, scale);
  if (p.score_head) p.score_head->weights = random_tensor(p.score_head->weights.shape(), rng, -scale, scale);
}

}  // namespace dstc::testing
