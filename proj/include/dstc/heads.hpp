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

#include <string>
#include <vector>

#include "dstc/grid.hpp"
#include "dstc/tensor.hpp"

namespace dstc {

/// Bias-free 3x3 (3x3x3) convolution, weights (out, in, 3, 3[, 3]).
struct ConvHead {
  Tensor weights;

  std::size_t out_channels() const { return weights.extent(0); }
  std::size_t in_channels() const { return weights.extent(1); }
  int dim() const { return static_cast<int>(weights.rank()) - 2; }

  static ConvHead zeros(std::size_t out_channels, std::size_t in_channels, int dim);
};

/// Stride-1, zero-padded correlation with a 3^D kernel; spatial shape is
/// preserved.
Tensor conv_same(const Tensor& x, const ConvHead& head);

enum class OffsetMode { off, dense, parametrized };
enum class ScoreMode { none, dense, shared };

std::string to_string(OffsetMode m);
std::string to_string(ScoreMode m);
OffsetMode offset_mode_from_string(const std::string& s);
ScoreMode score_mode_from_string(const std::string& s);

/// Output channels a head needs for a mode: dense offsets D*K^D,
/// parametrized offsets 1+D, dense scores s*K^D, shared scores s.
std::size_t offset_channels(OffsetMode mode, int dim, int kernel_size);
std::size_t score_channels(ScoreMode mode, int dim, int kernel_size, std::size_t s);

/**
 * Per-input-location displacement field.
 *
 * Dense: channel n*D + d is the displacement of kernel point n on axis d.
 * Parametrized: channel 0 is the dilation channel (effective dilation is
 * dilation_base + value) and channels 1..D are a rigid shift.
 */
struct OffsetField {
  OffsetMode mode = OffsetMode::off;
  Tensor values;
  double dilation_base = 3.0;

  double dilation_at(long l) const;
};

/// Raw score maps and their normalization. Dense: channel n*s + j holds
/// variance j of kernel point n. Shared: channel j, reused for every n.
struct ScoreField {
  ScoreMode mode = ScoreMode::none;
  std::size_t s = 1;
  Tensor raw;
  Tensor normalized;

  /// The s normalized scores for kernel point n at input location l.
  std::span<const double> slice(std::size_t n, long l, std::vector<double>& scratch) const;
};

OffsetField compute_offsets(const Tensor& x, const ConvHead& head, OffsetMode mode, const RefGrid& grid,
                            double dilation_base);

ScoreField compute_scores(const Tensor& x, const ConvHead& head, ScoreMode mode, std::size_t s,
                          const RefGrid& grid);

/// Sigmoid when s == 1, otherwise a max-subtracted softmax over each
/// contiguous group of s channels at every location.
Tensor normalize_scores(const Tensor& raw, std::size_t s);

/// For a parametrized field: per kernel point n, the displacement of
/// q(n, l) from its plain transposed-convolution location,
/// (dilation - base_dilation) * p_n + shift.
std::vector<RVec> expand_parametrized_offsets(const OffsetField& f, const RefGrid& grid, long l,
                                              const LocationMap& map);

}  // namespace dstc
