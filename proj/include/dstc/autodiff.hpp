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
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dstc/layer.hpp"

namespace dstc {

// ---------------------------------------------------------------------------
// Component adjoints. Each accumulates into (or returns) gradients of
// <upstream, f(inputs)>.

/// Gradients of conv_same. d_x and d_w may be null; non-null ones are
/// accumulated into and must already have the right shape.
void conv_same_backward(const Tensor& x, const ConvHead& head, const Tensor& d_out, Tensor* d_x, Tensor* d_w);

/// Pulls d(normalized) back through the sigmoid (s == 1) or the per-group
/// softmax (s >= 2).
Tensor normalize_scores_backward(const Tensor& normalized, const Tensor& d_normalized, std::size_t s);

struct ScatterGrads {
  Tensor d_x;
  Tensor d_w;
  Tensor d_bias;
  Tensor d_offsets;  // set when offsets are on
  Tensor d_scores;   // w.r.t. normalized scores, set in Gaussian mode
};

/**
 * Reverse pass of dstc_forward (and of tc_forward, with offsets off and the
 * bilinear kernel). Window membership is held fixed; the Gaussian
 * normalizers are differentiated. Bilinear kinks get subgradient 0.
 */
ScatterGrads scatter_backward(const Tensor& x, const WeightKernel& w, const LocationMap& map, const RefGrid& grid,
                              const OffsetField& offsets, const Interpolation& interp, const Tensor& upstream);

// ---------------------------------------------------------------------------
// Whole-layer gradients.

enum class ParamGroup { x, w, bias, offset_head, score_head, compress, expand };

std::string to_string(ParamGroup g);
ParamGroup param_group_from_string(const std::string& s);

struct GradBundle {
  Tensor d_x;
  Tensor d_w;
  Tensor d_bias;
  std::optional<Tensor> d_offset_head;
  std::optional<Tensor> d_score_head;
  std::optional<Tensor> d_compress;
  std::optional<Tensor> d_expand;

  /// The gradient for a group, or null when the layer has no such group.
  Tensor* get(ParamGroup g);
  const Tensor* get(ParamGroup g) const;
};

/// Groups present for a configuration, in a fixed order starting with x.
std::vector<ParamGroup> param_groups(const DstcConfig& cfg);

/// Exact gradients of <upstream, forward(x)> w.r.t. x and all parameters.
GradBundle backward(const Tensor& x, const LayerParams& params, const DstcConfig& cfg, const Tensor& upstream);
/// Same, reusing the trace of a forward pass over the same x and params.
GradBundle backward(const Tensor& x, const LayerParams& params, const DstcConfig& cfg, const Tensor& upstream,
                    const LayerTrace& trace);

// ---------------------------------------------------------------------------
// Finite-difference oracle.

/// (f(theta + h) - f(theta - h)) / 2h
double central_difference(const std::function<double(double)>& f, double theta, double h);

/// Central differences of <upstream, forward(x)> for every scalar in one
/// parameter group. Probes run on DSTC_NUM_THREADS workers.
Tensor fd_gradient(const Tensor& x, const LayerParams& params, const DstcConfig& cfg, const Tensor& upstream,
                   ParamGroup which, double h);

/// |a - b| / max(|a|, |b|, floor)
double relative_error(double a, double b, double floor);
double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor);

struct GradcheckTolerances {
  double linear = 1e-5;     // x, w, bias, expand
  double nonlinear = 1e-4;  // offset_head, score_head, compress
  double h = 1e-5;
  double floor = 1e-3;
  /// Fractional landing points closer than this to a kernel kink or a
  /// window-membership boundary cause the draw to be rejected.
  double kink_margin = 1e-3;
};

struct GradcheckOptions {
  /// Spatial input extents; empty picks 4 per axis in 2D, 3 in 3D.
  std::vector<long> input_spatial;
  /// Head weights drawn from U(-head_scale, head_scale) so offsets and
  /// scores are non-trivial.
  double head_scale = 0.1;
  /// Test hook: doubles the largest-magnitude entry of this group's
  /// analytic gradient before comparison.
  std::optional<ParamGroup> corrupt;
  int max_attempts = 64;
};

struct GradcheckGroup {
  std::string name;
  double max_rel_err = 0.0;
  double tol = 0.0;
  bool pass = false;
};

struct GradcheckReport {
  DstcConfig config;
  std::uint64_t seed = 0;
  std::vector<long> input_spatial;
  int attempts = 0;
  std::vector<GradcheckGroup> groups;
  bool pass = false;
};

nlohmann::json to_json(const GradcheckReport& r);

/// True when every landing point of the traced forward pass is at least
/// `margin` away from the kinks of the configured interpolation kernel.
bool kink_free(const LayerTrace& trace, const DstcConfig& cfg, const Extents& input, double margin);

/// Randomized analytic-vs-finite-difference comparison over every group.
GradcheckReport gradcheck(const DstcConfig& cfg, std::uint64_t seed, const GradcheckTolerances& tol = {},
                          const GradcheckOptions& opts = {});

}  // namespace dstc
