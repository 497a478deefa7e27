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

#include "dstc/heads.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dstc/errors.hpp"

namespace dstc {

ConvHead ConvHead::zeros(std::size_t out_channels, std::size_t in_channels, int dim) {
  check_dim(dim);
  Shape s{out_channels, in_channels};
  for (int d = 0; d < dim; ++d) s.push_back(3);
  return ConvHead{Tensor(s)};
}

Tensor conv_same(const Tensor& x, const ConvHead& head) {
  const Extents ext = Extents::of_feature_map(x.shape());
  if (head.weights.rank() != static_cast<std::size_t>(ext.dim) + 2) {
    throw ShapeError("head kernel rank does not match feature map");
  }
  for (int d = 0; d < ext.dim; ++d) {
    if (head.weights.extent(static_cast<std::size_t>(d) + 2) != 3) {
      throw ShapeError("head kernel must be 3 wide on every axis");
    }
  }
  const std::size_t cin = x.extent(0);
  if (head.in_channels() != cin) {
    throw ShapeError("head expects " + std::to_string(head.in_channels()) + " input channels, got " +
                     std::to_string(cin));
  }
  const std::size_t cout = head.out_channels();
  const RefGrid taps = make_ref_grid(3, ext.dim);
  const long npix = ext.count();
  Tensor out(ext.shape_with_channels(cout));
  for (std::size_t c = 0; c < cout; ++c) {
    for (std::size_t ci = 0; ci < cin; ++ci) {
      for (std::size_t t = 0; t < taps.size(); ++t) {
        const double w = head.weights[(c * cin + ci) * taps.size() + t];
        if (w == 0.0) continue;
        for (long i = 0; i < npix; ++i) {
          IVec p = ext.unflat(i);
          for (int d = 0; d < ext.dim; ++d) p[d] += taps.points[t][d];
          if (!ext.contains(p)) continue;
          out[c * static_cast<std::size_t>(npix) + static_cast<std::size_t>(i)] +=
              x[ci * static_cast<std::size_t>(npix) + static_cast<std::size_t>(ext.flat(p))] * w;
        }
      }
    }
  }
  return out;
}

std::string to_string(OffsetMode m) {
  switch (m) {
    case OffsetMode::off: return "off";
    case OffsetMode::dense: return "dense";
    case OffsetMode::parametrized: return "parametrized";
  }
  return "?";
}

std::string to_string(ScoreMode m) {
  switch (m) {
    case ScoreMode::none: return "none";
    case ScoreMode::dense: return "dense";
    case ScoreMode::shared: return "shared";
  }
  return "?";
}

OffsetMode offset_mode_from_string(const std::string& s) {
  if (s == "off") return OffsetMode::off;
  if (s == "dense" || s == "unparametrized") return OffsetMode::dense;
  if (s == "parametrized") return OffsetMode::parametrized;
  throw ConfigError("unknown offset_mode '" + s + "'");
}

ScoreMode score_mode_from_string(const std::string& s) {
  if (s == "none") return ScoreMode::none;
  if (s == "dense" || s == "unparametrized") return ScoreMode::dense;
  if (s == "shared" || s == "parametrized") return ScoreMode::shared;
  throw ConfigError("unknown score_mode '" + s + "'");
}

namespace {
std::size_t ipow(std::size_t b, int e) {
  std::size_t r = 1;
  for (int i = 0; i < e; ++i) r *= b;
  return r;
}
}  // namespace

std::size_t offset_channels(OffsetMode mode, int dim, int kernel_size) {
  switch (mode) {
    case OffsetMode::off: return 0;
    case OffsetMode::dense: return static_cast<std::size_t>(dim) * ipow(static_cast<std::size_t>(kernel_size), dim);
    case OffsetMode::parametrized: return static_cast<std::size_t>(dim) + 1;
  }
  return 0;
}

std::size_t score_channels(ScoreMode mode, int dim, int kernel_size, std::size_t s) {
  switch (mode) {
    case ScoreMode::none: return 0;
    case ScoreMode::dense: return s * ipow(static_cast<std::size_t>(kernel_size), dim);
    case ScoreMode::shared: return s;
  }
  return 0;
}

double OffsetField::dilation_at(long l) const {
  return dilation_base + values[static_cast<std::size_t>(l)];
}

std::span<const double> ScoreField::slice(std::size_t n, long l, std::vector<double>& scratch) const {
  const std::size_t npix = normalized.size() / normalized.extent(0);
  const std::size_t first = mode == ScoreMode::dense ? n * s : 0;
  scratch.resize(s);
  for (std::size_t j = 0; j < s; ++j) {
    scratch[j] = normalized[(first + j) * npix + static_cast<std::size_t>(l)];
  }
  return scratch;
}

OffsetField compute_offsets(const Tensor& x, const ConvHead& head, OffsetMode mode, const RefGrid& grid,
                            double dilation_base) {
  if (mode == OffsetMode::off) throw ConfigError("compute_offsets called with offset_mode off");
  const std::size_t want = offset_channels(mode, grid.dim, grid.kernel_size);
  if (head.out_channels() != want) {
    throw ConfigError("offset head has " + std::to_string(head.out_channels()) +
                      " output channels, mode " + to_string(mode) + " needs " + std::to_string(want));
  }
  return OffsetField{mode, conv_same(x, head), dilation_base};
}

Tensor normalize_scores(const Tensor& raw, std::size_t s) {
  if (s == 0 || raw.extent(0) % s != 0) throw ShapeError("score channels are not a multiple of s");
  Tensor out(raw.shape());
  const std::size_t npix = raw.size() / raw.extent(0);
  const std::size_t groups = raw.extent(0) / s;
  if (s == 1) {
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-raw[i]));
    return out;
  }
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t i = 0; i < npix; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s; ++j) m = std::max(m, raw[(g * s + j) * npix + i]);
      double z = 0.0;
      for (std::size_t j = 0; j < s; ++j) {
        const double e = std::exp(raw[(g * s + j) * npix + i] - m);
        out[(g * s + j) * npix + i] = e;
        z += e;
      }
      for (std::size_t j = 0; j < s; ++j) out[(g * s + j) * npix + i] /= z;
    }
  }
  return out;
}

ScoreField compute_scores(const Tensor& x, const ConvHead& head, ScoreMode mode, std::size_t s,
                          const RefGrid& grid) {
  if (mode == ScoreMode::none) throw ConfigError("compute_scores called with score_mode none");
  if (s < 1) throw ConfigError("need at least one Gaussian variance");
  const std::size_t want = score_channels(mode, grid.dim, grid.kernel_size, s);
  if (head.out_channels() != want) {
    throw ConfigError("score head has " + std::to_string(head.out_channels()) +
                      " output channels, mode " + to_string(mode) + " needs " + std::to_string(want));
  }
  ScoreField f;
  f.mode = mode;
  f.s = s;
  f.raw = conv_same(x, head);
  f.normalized = normalize_scores(f.raw, s);
  return f;
}

std::vector<RVec> expand_parametrized_offsets(const OffsetField& f, const RefGrid& grid, long l,
                                              const LocationMap& map) {
  if (f.mode != OffsetMode::parametrized) throw ConfigError("offset field is not parametrized");
  const std::size_t npix = f.values.size() / f.values.extent(0);
  const double delta = f.dilation_at(l);
  RVec shift{0.0, 0.0, 0.0};
  for (int d = 0; d < grid.dim; ++d) {
    shift[d] = f.values[(1 + static_cast<std::size_t>(d)) * npix + static_cast<std::size_t>(l)];
  }
  std::vector<RVec> out(grid.size());
  for (std::size_t n = 0; n < grid.size(); ++n) {
    for (int d = 0; d < grid.dim; ++d) {
      const double pn = static_cast<double>(grid.points[n][d]);
      out[n][d] = (delta - static_cast<double>(map.base_dilation[d])) * pn + shift[d];
    }
  }
  return out;
}

}  // namespace dstc
