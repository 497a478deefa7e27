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

#include <variant>
#include <vector>

#include "dstc/grid.hpp"
#include "dstc/heads.hpp"
#include "dstc/kernels.hpp"
#include "dstc/tensor.hpp"

namespace dstc {

/// Transposed-convolution weights (C_i, C_o, K, K[, K]) and bias (C_o).
struct WeightKernel {
  Tensor w;
  Tensor bias;

  std::size_t in_channels() const { return w.extent(0); }
  std::size_t out_channels() const { return w.extent(1); }
  int dim() const { return static_cast<int>(w.rank()) - 2; }
  int kernel_size() const { return static_cast<int>(w.extent(2)); }

  static WeightKernel zeros(std::size_t in_channels, std::size_t out_channels, int kernel_size, int dim);
};

struct BilinearKernel {};

/// Gaussian-mixture interpolation; both pointers must be set.
struct GaussianKernel {
  const ScoreField* scores = nullptr;
  const GaussianBank* bank = nullptr;
};

using Interpolation = std::variant<BilinearKernel, GaussianKernel>;

struct ScatterOptions {
  /// Input locations processed per batch of precomputed stencils; 0 means
  /// all at once. Has no effect on results.
  std::size_t chunk_size = 0;
  /// 0 picks DSTC_NUM_THREADS.
  int threads = 0;
};

/// Plain transposed convolution: every input location l scatters
/// x(:, l) . W(:, :, n) onto base_location(l) + base_dilation * p_n.
Tensor tc_forward(const Tensor& x, const WeightKernel& w, const LocationMap& map, const RefGrid& grid);

/// Strided correlation, the exact adjoint of tc_forward without bias:
/// out(c_i, l) = sum_{n, c_o} y(c_o, target(l, n)) * W(c_i, c_o, n).
Tensor tc_adjoint(const Tensor& y, const Tensor& w, const LocationMap& map, const RefGrid& grid,
                  const Extents& input);

/**
 * Fractional landing points q(n, l) for all n, in anchor coordinates:
 * base_location(l) + base_dilation * p_n + dp(n, l) for dense offsets,
 * base_location(l) + dilation(l) * p_n + shift(l) for parametrized ones and
 * the plain grid when offsets are off. The array index of a point is
 * q + output_origin(map, K).
 */
std::vector<RVec> offset_locations(const Extents& input, long l, const RefGrid& grid, const LocationMap& map,
                                   const OffsetField& offsets);

/// offset_locations shifted into output array coordinates, written to out.
void target_locations(const Extents& input, long l, const RefGrid& grid, const LocationMap& map,
                      const OffsetField& offsets, std::vector<RVec>& out);

/**
 * Deformable scatter. For each (l, n): v = x(:, l) . W(:, :, n) is spread
 * over the interpolation window of q(n, l) with bilinear or Gaussian
 * mixture weights, accumulating in l, n, window-point order. Window points
 * outside the output are dropped; Gaussian weights renormalize over what
 * remains, bilinear weights do not. Bias is added last.
 */
Tensor dstc_forward(const Tensor& x, const WeightKernel& w, const LocationMap& map, const RefGrid& grid,
                    const OffsetField& offsets, const Interpolation& interp, const ScatterOptions& opts = {});

/// Naive reference for dstc_forward: direct nested loops, unfactored
/// kernel weights from gaussian_mixture_weight / bilinear_weight.
Tensor scatter_oracle(const Tensor& x, const WeightKernel& w, const LocationMap& map, const RefGrid& grid,
                      const OffsetField& offsets, const Interpolation& interp);

/// Nearest-neighbour upsampling of x to `out`, index p -> min(p / stride, H_i - 1).
Tensor nearest_upsample(const Tensor& x, const Extents& out, const IVec& stride);

// Shared argument validation for the scatter engines.
void check_scatter_args(const Tensor& x, const WeightKernel& w, const LocationMap& map, const RefGrid& grid,
                        const OffsetField& offsets, const Interpolation& interp);

}  // namespace dstc
