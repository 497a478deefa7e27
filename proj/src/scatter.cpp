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

#include "dstc/scatter.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>

#include "dstc/errors.hpp"
#include "dstc/parallel.hpp"

namespace dstc {

int default_thread_count() {
  if (const char* env = std::getenv("DSTC_NUM_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

WeightKernel WeightKernel::zeros(std::size_t in_channels, std::size_t out_channels, int kernel_size, int dim) {
  check_dim(dim);
  Shape s{in_channels, out_channels};
  for (int d = 0; d < dim; ++d) s.push_back(static_cast<std::size_t>(kernel_size));
  return WeightKernel{Tensor(s), Tensor(Shape{out_channels})};
}

namespace {

void check_kernel(const Tensor& x, const WeightKernel& w, const LocationMap& map, const RefGrid& grid) {
  map.validate();
  const Extents in = Extents::of_feature_map(x.shape());
  if (in.dim != map.dim || grid.dim != map.dim) throw ShapeError("dimension mismatch between input, map and grid");
  if (w.w.rank() != static_cast<std::size_t>(map.dim) + 2) throw ShapeError("weight rank does not match dimension");
  for (int d = 0; d < map.dim; ++d) {
    if (w.w.extent(static_cast<std::size_t>(d) + 2) != static_cast<std::size_t>(grid.kernel_size)) {
      throw ShapeError("weight spatial extent does not match kernel_size");
    }
  }
  if (w.in_channels() != x.extent(0)) {
    throw ShapeError("input has " + std::to_string(x.extent(0)) + " channels, weights expect " +
                     std::to_string(w.in_channels()));
  }
  if (w.bias.shape() != Shape{w.out_channels()}) throw ShapeError("bias must have shape (C_o)");
}

void add_bias(Tensor& y, const Tensor& bias) {
  const std::size_t co = y.extent(0);
  const std::size_t npix = y.size() / co;
  for (std::size_t c = 0; c < co; ++c) {
    for (std::size_t i = 0; i < npix; ++i) y[c * npix + i] += bias[c];
  }
}

// v(c_o) = sum_{c_i} x(c_i, l) W(c_i, c_o, n)
void contribution(const Tensor& x, const Tensor& w, std::size_t npix_in, long l, std::size_t n, std::size_t kpts,
                  double* v) {
  const std::size_t ci_n = w.extent(0);
  const std::size_t co_n = w.extent(1);
  for (std::size_t co = 0; co < co_n; ++co) {
    double s = 0.0;
    for (std::size_t ci = 0; ci < ci_n; ++ci) {
      s += x[ci * npix_in + static_cast<std::size_t>(l)] * w[(ci * co_n + co) * kpts + n];
    }
    v[co] = s;
  }
}

}  // namespace

void check_scatter_args(const Tensor& x, const WeightKernel& w, const LocationMap& map, const RefGrid& grid,
                        const OffsetField& offsets, const Interpolation& interp) {
  check_kernel(x, w, map, grid);
  const Extents in = Extents::of_feature_map(x.shape());
  if (offsets.mode != OffsetMode::off) {
    const Shape want = in.shape_with_channels(offset_channels(offsets.mode, grid.dim, grid.kernel_size));
    if (offsets.values.shape() != want) {
      throw ShapeError("offset field shape " + shape_str(offsets.values.shape()) + ", expected " +
                       shape_str(want));
    }
  }
  if (const auto* g = std::get_if<GaussianKernel>(&interp)) {
    if (g->bank == nullptr) throw ConfigError("Gaussian interpolation requires a Gaussian bank");
    if (g->scores == nullptr) throw ConfigError("Gaussian interpolation requires a score field");
    g->bank->validate();
    if (g->scores->s != g->bank->size()) throw ConfigError("score field s does not match the Gaussian bank");
    const Shape want = in.shape_with_channels(score_channels(g->scores->mode, grid.dim, grid.kernel_size, g->scores->s));
    if (g->scores->mode == ScoreMode::none || g->scores->normalized.shape() != want) {
      throw ShapeError("score field shape does not match input and kernel");
    }
  }
}

Tensor tc_forward(const Tensor& x, const WeightKernel& w, const LocationMap& map, const RefGrid& grid) {
  check_kernel(x, w, map, grid);
  const Extents in = Extents::of_feature_map(x.shape());
  const Extents out = output_shape(map, in, grid.kernel_size);
  const IVec origin = output_origin(map, grid.kernel_size);
  const std::size_t co_n = w.out_channels();
  const std::size_t npix_in = static_cast<std::size_t>(in.count());
  const std::size_t npix_out = static_cast<std::size_t>(out.count());
  Tensor y(out.shape_with_channels(co_n));
  std::vector<double> v(co_n);
  for (long l = 0; l < in.count(); ++l) {
    const IVec base = base_location(map, in.unflat(l));
    for (std::size_t n = 0; n < grid.size(); ++n) {
      IVec t{0, 0, 0};
      for (int d = 0; d < map.dim; ++d) t[d] = base[d] + origin[d] + map.base_dilation[d] * grid.points[n][d];
      if (!out.contains(t)) continue;
      contribution(x, w.w, npix_in, l, n, grid.size(), v.data());
      const std::size_t idx = static_cast<std::size_t>(out.flat(t));
      for (std::size_t co = 0; co < co_n; ++co) y[co * npix_out + idx] += v[co];
    }
  }
  add_bias(y, w.bias);
  return y;
}

Tensor tc_adjoint(const Tensor& y, const Tensor& w, const LocationMap& map, const RefGrid& grid,
                  const Extents& input) {
  map.validate();
  const Extents out = output_shape(map, input, grid.kernel_size);
  if (y.shape() != out.shape_with_channels(w.extent(1))) {
    throw ShapeError("tc_adjoint: y has shape " + shape_str(y.shape()) + ", expected " +
                     shape_str(out.shape_with_channels(w.extent(1))));
  }
  const IVec origin = output_origin(map, grid.kernel_size);
  const std::size_t ci_n = w.extent(0);
  const std::size_t co_n = w.extent(1);
  const std::size_t npix_in = static_cast<std::size_t>(input.count());
  const std::size_t npix_out = static_cast<std::size_t>(out.count());
  Tensor x(input.shape_with_channels(ci_n));
  for (long l = 0; l < input.count(); ++l) {
    const IVec base = base_location(map, input.unflat(l));
    for (std::size_t n = 0; n < grid.size(); ++n) {
      IVec t{0, 0, 0};
      for (int d = 0; d < map.dim; ++d) t[d] = base[d] + origin[d] + map.base_dilation[d] * grid.points[n][d];
      if (!out.contains(t)) continue;
      const std::size_t idx = static_cast<std::size_t>(out.flat(t));
      for (std::size_t ci = 0; ci < ci_n; ++ci) {
        double s = 0.0;
        for (std::size_t co = 0; co < co_n; ++co) s += y[co * npix_out + idx] * w[(ci * co_n + co) * grid.size() + n];
        x[ci * npix_in + static_cast<std::size_t>(l)] += s;
      }
    }
  }
  return x;
}

namespace {

void locations_in_frame(const Extents& input, long l, const RefGrid& grid, const LocationMap& map,
                        const OffsetField& offsets, const IVec& origin, std::vector<RVec>& out) {
  const IVec base = base_location(map, input.unflat(l));
  const std::size_t npix = static_cast<std::size_t>(input.count());
  const int dim = map.dim;
  out.resize(grid.size());
  double delta = 0.0;
  RVec shift{0.0, 0.0, 0.0};
  if (offsets.mode == OffsetMode::parametrized) {
    delta = offsets.dilation_at(l);
    for (int d = 0; d < dim; ++d) {
      shift[d] = offsets.values[(1 + static_cast<std::size_t>(d)) * npix + static_cast<std::size_t>(l)];
    }
  }
  for (std::size_t n = 0; n < grid.size(); ++n) {
    for (int d = 0; d < dim; ++d) {
      const double anchor = static_cast<double>(base[d] + origin[d]);
      const double pn = static_cast<double>(grid.points[n][d]);
      switch (offsets.mode) {
        case OffsetMode::off:
          out[n][d] = anchor + static_cast<double>(map.base_dilation[d]) * pn;
          break;
        case OffsetMode::dense:
          out[n][d] = anchor + static_cast<double>(map.base_dilation[d]) * pn +
                      offsets.values[(n * static_cast<std::size_t>(dim) + static_cast<std::size_t>(d)) * npix +
                                     static_cast<std::size_t>(l)];
          break;
        case OffsetMode::parametrized:
          out[n][d] = anchor + delta * pn + shift[d];
          break;
      }
    }
    for (int d = dim; d < kMaxDim; ++d) out[n][d] = 0.0;
  }
}

}  // namespace

std::vector<RVec> offset_locations(const Extents& input, long l, const RefGrid& grid, const LocationMap& map,
                                   const OffsetField& offsets) {
  std::vector<RVec> q;
  locations_in_frame(input, l, grid, map, offsets, IVec{0, 0, 0}, q);
  return q;
}

void target_locations(const Extents& input, long l, const RefGrid& grid, const LocationMap& map,
                      const OffsetField& offsets, std::vector<RVec>& out) {
  locations_in_frame(input, l, grid, map, offsets, output_origin(map, grid.kernel_size), out);
}

Tensor dstc_forward(const Tensor& x, const WeightKernel& w, const LocationMap& map, const RefGrid& grid,
                    const OffsetField& offsets, const Interpolation& interp, const ScatterOptions& opts) {
  check_scatter_args(x, w, map, grid, offsets, interp);
  const Extents in = Extents::of_feature_map(x.shape());
  const Extents out = output_shape(map, in, grid.kernel_size);
  const std::size_t co_n = w.out_channels();
  const std::size_t kpts = grid.size();
  const std::size_t npix_in = static_cast<std::size_t>(in.count());
  const std::size_t npix_out = static_cast<std::size_t>(out.count());
  const auto* gauss = std::get_if<GaussianKernel>(&interp);
  const std::size_t chunk = opts.chunk_size == 0 ? npix_in : opts.chunk_size;

  Tensor y(out.shape_with_channels(co_n));

  // Per (l, n) in the chunk: contribution vector, and a run of
  // (output index, kernel weight) pairs.
  std::vector<double> v;
  std::vector<std::size_t> run_begin;
  std::vector<std::size_t> idx;
  std::vector<double> wt;
  std::vector<RVec> q;
  std::vector<double> scratch;
  Stencil st;

  for (std::size_t l0 = 0; l0 < npix_in; l0 += chunk) {
    const std::size_t l1 = std::min(npix_in, l0 + chunk);
    const std::size_t pairs = (l1 - l0) * kpts;
    v.assign(pairs * co_n, 0.0);
    run_begin.assign(pairs + 1, 0);
    idx.clear();
    wt.clear();
    for (std::size_t l = l0; l < l1; ++l) {
      target_locations(in, static_cast<long>(l), grid, map, offsets, q);
      for (std::size_t n = 0; n < kpts; ++n) {
        const std::size_t pair = (l - l0) * kpts + n;
        run_begin[pair] = idx.size();
        if (gauss) {
          st.build_gaussian(q[n], out, *gauss->bank);
        } else {
          st.build_bilinear(q[n], out);
        }
        if (st.empty()) continue;
        std::span<const double> scores;
        if (gauss) scores = gauss->scores->slice(n, static_cast<long>(l), scratch);
        st.for_each_point([&](const IVec& p, const IVec& k) {
          double g = 0.0;
          if (gauss) {
            for (int j = 0; j < st.terms(); ++j) g += scores[static_cast<std::size_t>(j)] * st.term_value(j, k);
          } else {
            g = st.term_value(0, k);
          }
          if (g == 0.0) return;
          idx.push_back(static_cast<std::size_t>(out.flat(p)));
          wt.push_back(g);
        });
        contribution(x, w.w, npix_in, static_cast<long>(l), n, kpts, &v[pair * co_n]);
      }
    }
    run_begin[pairs] = idx.size();
    // Channels are independent, so each worker reproduces the serial order.
    parallel_for(co_n, opts.threads, [&](std::size_t co) {
      double* yc = &y[co * npix_out];
      for (std::size_t pair = 0; pair < pairs; ++pair) {
        const double vc = v[pair * co_n + co];
        for (std::size_t r = run_begin[pair]; r < run_begin[pair + 1]; ++r) yc[idx[r]] += wt[r] * vc;
      }
    });
  }
  add_bias(y, w.bias);
  return y;
}

Tensor scatter_oracle(const Tensor& x, const WeightKernel& w, const LocationMap& map, const RefGrid& grid,
                      const OffsetField& offsets, const Interpolation& interp) {
  check_scatter_args(x, w, map, grid, offsets, interp);
  const Extents in = Extents::of_feature_map(x.shape());
  const Extents out = output_shape(map, in, grid.kernel_size);
  const IVec origin = output_origin(map, grid.kernel_size);
  const auto* gauss = std::get_if<GaussianKernel>(&interp);
  const std::size_t ci_n = w.in_channels();
  const std::size_t co_n = w.out_channels();
  Tensor y(out.shape_with_channels(co_n));
  std::vector<double> scores;
  for (long l = 0; l < in.count(); ++l) {
    const IVec p0 = in.unflat(l);
    const std::vector<RVec> qs = offset_locations(in, l, grid, map, offsets);
    for (std::size_t n = 0; n < grid.size(); ++n) {
      RVec q = qs[n];
      for (int d = 0; d < map.dim; ++d) q[d] += static_cast<double>(origin[d]);
      const int width = gauss ? gauss->bank->k_sigma : 2;
      const std::vector<IVec> window = interp_window(q, width, out);
      if (gauss) {
        scores.clear();
        for (std::size_t j = 0; j < gauss->scores->s; ++j) {
          const std::size_t ch = gauss->scores->mode == ScoreMode::dense ? n * gauss->scores->s + j : j;
          std::vector<std::size_t> at{ch};
          for (int d = 0; d < map.dim; ++d) at.push_back(static_cast<std::size_t>(p0[d]));
          scores.push_back(gauss->scores->normalized.at(at));
        }
      }
      for (std::size_t co = 0; co < co_n; ++co) {
        double v = 0.0;
        for (std::size_t ci = 0; ci < ci_n; ++ci) {
          std::vector<std::size_t> xi{ci};
          std::vector<std::size_t> wi{ci, co};
          for (int d = 0; d < map.dim; ++d) {
            xi.push_back(static_cast<std::size_t>(p0[d]));
            wi.push_back(static_cast<std::size_t>(grid.points[n][d] + grid.kernel_size / 2));
          }
          v += x.at(xi) * w.w.at(wi);
        }
        for (const IVec& p : window) {
          const double g = gauss ? gaussian_mixture_weight(q, p, map.dim, scores, *gauss->bank, window)
                                 : bilinear_weight(q, p, map.dim);
          std::vector<std::size_t> yi{co};
          for (int d = 0; d < map.dim; ++d) yi.push_back(static_cast<std::size_t>(p[d]));
          accumulate_at(y, yi, g * v);
        }
      }
    }
  }
  for (std::size_t co = 0; co < co_n; ++co) {
    for (long i = 0; i < out.count(); ++i) {
      const IVec p = out.unflat(i);
      std::vector<std::size_t> yi{co};
      for (int d = 0; d < map.dim; ++d) yi.push_back(static_cast<std::size_t>(p[d]));
      accumulate_at(y, yi, w.bias[co]);
    }
  }
  return y;
}

Tensor nearest_upsample(const Tensor& x, const Extents& out, const IVec& stride) {
  const Extents in = Extents::of_feature_map(x.shape());
  if (in.dim != out.dim) throw ShapeError("nearest_upsample dimension mismatch");
  const std::size_t c_n = x.extent(0);
  Tensor y(out.shape_with_channels(c_n));
  const std::size_t npix_in = static_cast<std::size_t>(in.count());
  const std::size_t npix_out = static_cast<std::size_t>(out.count());
  for (long i = 0; i < out.count(); ++i) {
    IVec p = out.unflat(i);
    for (int d = 0; d < in.dim; ++d) p[d] = std::min(p[d] / stride[d], in.n[d] - 1);
    const std::size_t src = static_cast<std::size_t>(in.flat(p));
    for (std::size_t c = 0; c < c_n; ++c) y[c * npix_out + static_cast<std::size_t>(i)] = x[c * npix_in + src];
  }
  return y;
}

}  // namespace dstc
