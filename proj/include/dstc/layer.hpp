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

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dstc/grid.hpp"
#include "dstc/heads.hpp"
#include "dstc/kernels.hpp"
#include "dstc/scatter.hpp"
#include "dstc/tensor.hpp"

namespace dstc {

enum class Variant { tc, dstc_bilinear, dstc_gaussian_dense, dstc_parametrized };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

/**
 * Full layer configuration. Field names match the JSON form.
 *
 * Variant consistency:
 *   tc                   offsets off, scores none
 *   dstc_bilinear        offsets dense or parametrized, scores none
 *   dstc_gaussian_dense  offsets dense, scores dense
 *   dstc_parametrized    offsets parametrized, scores shared (or none,
 *                        which selects the bilinear kernel)
 *
 * When module_channels is set, the layer compresses C_i -> module_channels
 * with a 1x1 convolution, runs heads and scatter at that width, and expands
 * back to C_o.
 */
struct DstcConfig {
  int dimension = 2;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  int kernel_size = 3;
  IVec stride{1, 1, 1};
  IVec padding{0, 0, 0};
  IVec output_padding{0, 0, 0};
  IVec base_dilation{1, 1, 1};
  Variant variant = Variant::tc;
  OffsetMode offset_mode = OffsetMode::off;
  ScoreMode score_mode = ScoreMode::none;
  std::vector<double> gaussian_variances;
  int K_sigma = 5;
  double dilation_base = 3.0;
  std::optional<std::size_t> module_channels;
  bool skip = false;
  std::size_t chunk_size = 0;

  /// Defaults for a variant: its offset/score modes and, for Gaussian
  /// variants, the intermediate-layer variance bank.
  static DstcConfig for_variant(Variant v, int dimension = 2);

  void validate() const;
  bool gaussian() const { return score_mode != ScoreMode::none; }
  LocationMap location_map() const;
  RefGrid ref_grid() const;
  GaussianBank bank() const;
  std::size_t scatter_in_channels() const { return module_channels.value_or(in_channels); }
  std::size_t scatter_out_channels() const { return module_channels.value_or(out_channels); }
  Extents output_extents(const Extents& input) const;
};

nlohmann::json to_json(const DstcConfig& cfg);
/// Missing fields take the variant's defaults; "gaussian_variances" may be
/// a list or one of the presets "intermediate" and "final".
DstcConfig config_from_json(const nlohmann::json& j);

struct LayerParams {
  WeightKernel kernel;
  std::optional<ConvHead> offset_head;
  std::optional<ConvHead> score_head;
  std::optional<Tensor> compress;  // (module_channels, C_i)
  std::optional<Tensor> expand;    // (C_o, module_channels)

  /// Stored tensors in a fixed order: w, bias, offset_head, score_head,
  /// compress, expand (absent ones skipped).
  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;
};

/// W ~ U(-1/sqrt(C_i K^D), +1/sqrt(C_i K^D)) from a seeded mt19937_64,
/// 1x1 plumbing weights likewise by their fan-in; bias and heads zero.
LayerParams init_layer(const DstcConfig& cfg, std::uint64_t seed);

/// Checks that every stored tensor has the shape cfg implies.
void check_params(const LayerParams& params, const DstcConfig& cfg);

/// Intermediate values of one forward pass, kept for backward.
struct LayerTrace {
  Tensor scatter_input;  // x, or the compressed map
  OffsetField offsets;
  ScoreField scores;
  Tensor scatter_output;  // before expand and skip
  Tensor output;
};

LayerTrace forward_traced(const Tensor& x, const LayerParams& params, const DstcConfig& cfg);
Tensor forward(const Tensor& x, const LayerParams& params, const DstcConfig& cfg);

/// 1x1 convolution: out(o, p) = sum_i w(o, i) x(i, p).
Tensor channel_mix(const Tensor& w, const Tensor& x);

struct ParamBreakdown {
  std::size_t w = 0;
  std::size_t offsets = 0;
  std::size_t scores = 0;
  /// Dense score head read with an extra factor D, 3^D C_i s D K^D.
  std::size_t scores_table_literal = 0;
  std::size_t plumbing = 0;
  std::size_t table_total = 0;  // w + offsets + scores
  std::size_t total = 0;        // table_total + plumbing

  bool operator==(const ParamBreakdown&) const = default;
};

nlohmann::json to_json(const ParamBreakdown& b);

/// Closed-form parameter counts per column of the layer's parameter table.
ParamBreakdown parameter_count(const DstcConfig& cfg);

/// The same breakdown counted from stored tensors.
ParamBreakdown parameter_census(const LayerParams& params, const DstcConfig& cfg);

/// Writes params as consecutive tensor binary records plus a JSON manifest
/// [{name, shape, offset}] where offset is the record's byte position.
void save_params(const LayerParams& params, const std::filesystem::path& bin_path,
                 const std::filesystem::path& manifest_path);
LayerParams load_params(const DstcConfig& cfg, const std::filesystem::path& bin_path,
                        const std::filesystem::path& manifest_path);

}  // namespace dstc
