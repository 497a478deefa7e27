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

#include "dstc/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "dstc/errors.hpp"
#include "dstc/parallel.hpp"

namespace dstc {

using nlohmann::json;

void conv_same_backward(const Tensor& x, const ConvHead& head, const Tensor& d_out, Tensor* d_x, Tensor* d_w) {
  const Extents ext = Extents::of_feature_map(x.shape());
  const std::size_t cin = head.in_channels();
  const std::size_t cout = head.out_channels();
  if (d_out.shape() != ext.shape_with_channels(cout)) throw ShapeError("conv_same_backward: upstream shape");
  if (d_x && d_x->shape() != x.shape()) throw ShapeError("conv_same_backward: d_x shape");
  if (d_w && d_w->shape() != head.weights.shape()) throw ShapeError("conv_same_backward: d_w shape");
  const RefGrid taps = make_ref_grid(3, ext.dim);
  const std::size_t npix = static_cast<std::size_t>(ext.count());
  // Source index of every (tap, pixel), -1 where the tap falls outside.
  std::vector<long> src(taps.size() * npix);
  for (std::size_t t = 0; t < taps.size(); ++t) {
    for (std::size_t i = 0; i < npix; ++i) {
      IVec p = ext.unflat(static_cast<long>(i));
      for (int d = 0; d < ext.dim; ++d) p[d] += taps.points[t][d];
      src[t * npix + i] = ext.contains(p) ? ext.flat(p) : -1;
    }
  }
  for (std::size_t c = 0; c < cout; ++c) {
    for (std::size_t ci = 0; ci < cin; ++ci) {
      for (std::size_t t = 0; t < taps.size(); ++t) {
        const std::size_t widx = (c * cin + ci) * taps.size() + t;
        const double w = head.weights[widx];
        double gw = 0.0;
        for (std::size_t i = 0; i < npix; ++i) {
          const long s = src[t * npix + i];
          if (s < 0) continue;
          const double g = d_out[c * npix + i];
          gw += g * x[ci * npix + static_cast<std::size_t>(s)];
          if (d_x) (*d_x)[ci * npix + static_cast<std::size_t>(s)] += g * w;
        }
        if (d_w) (*d_w)[widx] += gw;
      }
    }
  }
}

Tensor normalize_scores_backward(const Tensor& normalized, const Tensor& d_normalized, std::size_t s) {
  require_same_shape(normalized, d_normalized, "normalize_scores_backward");
  Tensor d_raw(normalized.shape());
  const std::size_t npix = normalized.size() / normalized.extent(0);
  if (s == 1) {
    for (std::size_t i = 0; i < normalized.size(); ++i) {
      d_raw[i] = d_normalized[i] * normalized[i] * (1.0 - normalized[i]);
    }
    return d_raw;
  }
  const std::size_t groups = normalized.extent(0) / s;
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t i = 0; i < npix; ++i) {
      double inner = 0.0;
      for (std::size_t j = 0; j < s; ++j) {
        const std::size_t k = (g * s + j) * npix + i;
        inner += normalized[k] * d_normalized[k];
      }
      for (std::size_t j = 0; j < s; ++j) {
        const std::size_t k = (g * s + j) * npix + i;
        d_raw[k] = normalized[k] * (d_normalized[k] - inner);
      }
    }
  }
  return d_raw;
}

ScatterGrads scatter_backward(const Tensor& x, const WeightKernel& w, const LocationMap& map, const RefGrid& grid,
                              const OffsetField& offsets, const Interpolation& interp, const Tensor& upstream) {
  check_scatter_args(x, w, map, grid, offsets, interp);
  const Extents in = Extents::of_feature_map(x.shape());
  const Extents out = output_shape(map, in, grid.kernel_size);
  const std::size_t ci_n = w.in_channels();
  const std::size_t co_n = w.out_channels();
  const std::size_t kpts = grid.size();
  const std::size_t npix_in = static_cast<std::size_t>(in.count());
  const std::size_t npix_out = static_cast<std::size_t>(out.count());
  const int dim = map.dim;
  if (upstream.shape() != out.shape_with_channels(co_n)) {
    throw ShapeError("upstream shape " + shape_str(upstream.shape()) + " does not match output " +
                     shape_str(out.shape_with_channels(co_n)));
  }
  const auto* gauss = std::get_if<GaussianKernel>(&interp);

  ScatterGrads g;
  g.d_x = Tensor(x.shape());
  g.d_w = Tensor(w.w.shape());
  g.d_bias = Tensor(w.bias.shape());
  if (offsets.mode != OffsetMode::off) g.d_offsets = Tensor(offsets.values.shape());
  if (gauss) g.d_scores = Tensor(gauss->scores->normalized.shape());

  for (std::size_t co = 0; co < co_n; ++co) {
    double s = 0.0;
    for (std::size_t i = 0; i < npix_out; ++i) s += upstream[co * npix_out + i];
    g.d_bias[co] = s;
  }

  std::vector<RVec> q;
  std::vector<double> scratch;
  std::vector<double> v(co_n), u(co_n), d_s;
  std::vector<double> terms;
  Stencil st;
  for (std::size_t l = 0; l < npix_in; ++l) {
    target_locations(in, static_cast<long>(l), grid, map, offsets, q);
    for (std::size_t n = 0; n < kpts; ++n) {
      if (gauss) {
        st.build_gaussian(q[n], out, *gauss->bank);
      } else {
        st.build_bilinear(q[n], out);
      }
      if (st.empty()) continue;
      const int nt = st.terms();
      std::span<const double> scores;
      if (gauss) scores = gauss->scores->slice(n, static_cast<long>(l), scratch);
      for (std::size_t co = 0; co < co_n; ++co) {
        double s = 0.0;
        for (std::size_t ci = 0; ci < ci_n; ++ci) s += x[ci * npix_in + l] * w.w[(ci * co_n + co) * kpts + n];
        v[co] = s;
      }
      std::fill(u.begin(), u.end(), 0.0);
      d_s.assign(static_cast<std::size_t>(nt), 0.0);
      terms.assign(static_cast<std::size_t>(nt), 0.0);
      RVec dq{0.0, 0.0, 0.0};
      st.for_each_point([&](const IVec& p, const IVec& k) {
        const std::size_t pi = static_cast<std::size_t>(out.flat(p));
        double a = 0.0;  // dL/dG(p)
        for (std::size_t co = 0; co < co_n; ++co) a += upstream[co * npix_out + pi] * v[co];
        double gval = 0.0;
        for (int t = 0; t < nt; ++t) {
          terms[static_cast<std::size_t>(t)] = st.term_value(t, k);
          const double coef = gauss ? scores[static_cast<std::size_t>(t)] : 1.0;
          gval += coef * terms[static_cast<std::size_t>(t)];
          d_s[static_cast<std::size_t>(t)] += a * terms[static_cast<std::size_t>(t)];
        }
        for (std::size_t co = 0; co < co_n; ++co) u[co] += gval * upstream[co * npix_out + pi];
        if (a == 0.0) return;
        for (int d = 0; d < dim; ++d) {
          double dg = 0.0;
          for (int t = 0; t < nt; ++t) {
            double prod = st.dweight(t, d, k[d]);
            for (int e = 0; e < dim; ++e) {
              if (e != d) prod *= st.weight(t, e, k[e]);
            }
            dg += (gauss ? scores[static_cast<std::size_t>(t)] : 1.0) * prod;
          }
          dq[d] += a * dg;
        }
      });
      for (std::size_t ci = 0; ci < ci_n; ++ci) {
        const double xv = x[ci * npix_in + l];
        double dx = 0.0;
        for (std::size_t co = 0; co < co_n; ++co) {
          const std::size_t wi = (ci * co_n + co) * kpts + n;
          g.d_w[wi] += xv * u[co];
          dx += w.w[wi] * u[co];
        }
        g.d_x[ci * npix_in + l] += dx;
      }
      switch (offsets.mode) {
        case OffsetMode::off:
          break;
        case OffsetMode::dense:
          for (int d = 0; d < dim; ++d) {
            g.d_offsets[(n * static_cast<std::size_t>(dim) + static_cast<std::size_t>(d)) * npix_in + l] += dq[d];
          }
          break;
        case OffsetMode::parametrized:
          for (int d = 0; d < dim; ++d) {
            g.d_offsets[l] += dq[d] * static_cast<double>(grid.points[n][d]);
            g.d_offsets[(1 + static_cast<std::size_t>(d)) * npix_in + l] += dq[d];
          }
          break;
      }
      if (gauss) {
        const std::size_t s = gauss->scores->s;
        const std::size_t first = gauss->scores->mode == ScoreMode::dense ? n * s : 0;
        for (std::size_t j = 0; j < s; ++j) g.d_scores[(first + j) * npix_in + l] += d_s[j];
      }
    }
  }
  return g;
}

std::string to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::x: return "x";
    case ParamGroup::w: return "w";
    case ParamGroup::bias: return "bias";
    case ParamGroup::offset_head: return "offset_head";
    case ParamGroup::score_head: return "score_head";
    case ParamGroup::compress: return "compress";
    case ParamGroup::expand: return "expand";
  }
  return "?";
}

ParamGroup param_group_from_string(const std::string& s) {
  for (ParamGroup g : {ParamGroup::x, ParamGroup::w, ParamGroup::bias, ParamGroup::offset_head,
                       ParamGroup::score_head, ParamGroup::compress, ParamGroup::expand}) {
    if (to_string(g) == s) return g;
  }
  throw ConfigError("unknown parameter group '" + s + "'");
}

Tensor* GradBundle::get(ParamGroup g) {
  switch (g) {
    case ParamGroup::x: return &d_x;
    case ParamGroup::w: return &d_w;
    case ParamGroup::bias: return &d_bias;
    case ParamGroup::offset_head: return d_offset_head ? &*d_offset_head : nullptr;
    case ParamGroup::score_head: return d_score_head ? &*d_score_head : nullptr;
    case ParamGroup::compress: return d_compress ? &*d_compress : nullptr;
    case ParamGroup::expand: return d_expand ? &*d_expand : nullptr;
  }
  return nullptr;
}

const Tensor* GradBundle::get(ParamGroup g) const { return const_cast<GradBundle*>(this)->get(g); }

std::vector<ParamGroup> param_groups(const DstcConfig& cfg) {
  std::vector<ParamGroup> out{ParamGroup::x, ParamGroup::w, ParamGroup::bias};
  if (cfg.offset_mode != OffsetMode::off) out.push_back(ParamGroup::offset_head);
  if (cfg.score_mode != ScoreMode::none) out.push_back(ParamGroup::score_head);
  if (cfg.module_channels) {
    out.push_back(ParamGroup::compress);
    out.push_back(ParamGroup::expand);
  }
  return out;
}

namespace {

Tensor* param_slot(LayerParams& p, ParamGroup g) {
  switch (g) {
    case ParamGroup::x: return nullptr;
    case ParamGroup::w: return &p.kernel.w;
    case ParamGroup::bias: return &p.kernel.bias;
    case ParamGroup::offset_head: return p.offset_head ? &p.offset_head->weights : nullptr;
    case ParamGroup::score_head: return p.score_head ? &p.score_head->weights : nullptr;
    case ParamGroup::compress: return p.compress ? &*p.compress : nullptr;
    case ParamGroup::expand: return p.expand ? &*p.expand : nullptr;
  }
  return nullptr;
}

// d/dW of channel_mix(W, z) paired with upstream, and d/dz.
void channel_mix_backward(const Tensor& w, const Tensor& z, const Tensor& d_out, Tensor& d_w, Tensor& d_z) {
  const std::size_t out_c = w.extent(0);
  const std::size_t in_c = w.extent(1);
  const std::size_t npix = z.size() / in_c;
  for (std::size_t o = 0; o < out_c; ++o) {
    for (std::size_t i = 0; i < in_c; ++i) {
      double s = 0.0;
      const double wv = w[o * in_c + i];
      for (std::size_t p = 0; p < npix; ++p) {
        s += d_out[o * npix + p] * z[i * npix + p];
        d_z[i * npix + p] += wv * d_out[o * npix + p];
      }
      d_w[o * in_c + i] += s;
    }
  }
}

}  // namespace

GradBundle backward(const Tensor& x, const LayerParams& params, const DstcConfig& cfg, const Tensor& upstream) {
  return backward(x, params, cfg, upstream, forward_traced(x, params, cfg));
}

GradBundle backward(const Tensor& x, const LayerParams& params, const DstcConfig& cfg, const Tensor& upstream,
                    const LayerTrace& t) {
  if (upstream.shape() != t.output.shape()) {
    throw ShapeError("upstream shape " + shape_str(upstream.shape()) + " does not match output " +
                     shape_str(t.output.shape()));
  }
  const LocationMap map = cfg.location_map();
  const RefGrid grid = cfg.ref_grid();
  const GaussianBank bank = cfg.bank();

  GradBundle gb;
  gb.d_x = Tensor(x.shape());

  if (cfg.skip) {
    const Extents in = Extents::of_feature_map(x.shape());
    const Extents out = Extents::of_feature_map(upstream.shape());
    const std::size_t npix_in = static_cast<std::size_t>(in.count());
    const std::size_t npix_out = static_cast<std::size_t>(out.count());
    for (long i = 0; i < out.count(); ++i) {
      IVec p = out.unflat(i);
      for (int d = 0; d < in.dim; ++d) p[d] = std::min(p[d] / cfg.stride[d], in.n[d] - 1);
      const std::size_t src = static_cast<std::size_t>(in.flat(p));
      for (std::size_t c = 0; c < x.extent(0); ++c) {
        gb.d_x[c * npix_in + src] += upstream[c * npix_out + static_cast<std::size_t>(i)];
      }
    }
  }

  Tensor d_z;
  if (params.expand) {
    gb.d_expand = Tensor(params.expand->shape());
    d_z = Tensor(t.scatter_output.shape());
    channel_mix_backward(*params.expand, t.scatter_output, upstream, *gb.d_expand, d_z);
  } else {
    d_z = upstream;
  }

  Interpolation interp = BilinearKernel{};
  if (cfg.gaussian()) interp = GaussianKernel{&t.scores, &bank};
  ScatterGrads sg = scatter_backward(t.scatter_input, params.kernel, map, grid, t.offsets, interp, d_z);
  gb.d_w = std::move(sg.d_w);
  gb.d_bias = std::move(sg.d_bias);
  Tensor d_xs = std::move(sg.d_x);

  if (params.offset_head) {
    gb.d_offset_head = Tensor(params.offset_head->weights.shape());
    conv_same_backward(t.scatter_input, *params.offset_head, sg.d_offsets, &d_xs, &*gb.d_offset_head);
  }
  if (params.score_head) {
    gb.d_score_head = Tensor(params.score_head->weights.shape());
    const Tensor d_raw = normalize_scores_backward(t.scores.normalized, sg.d_scores, t.scores.s);
    conv_same_backward(t.scatter_input, *params.score_head, d_raw, &d_xs, &*gb.d_score_head);
  }
  if (params.compress) {
    gb.d_compress = Tensor(params.compress->shape());
    channel_mix_backward(*params.compress, x, d_xs, *gb.d_compress, gb.d_x);
  } else {
    gb.d_x += d_xs;
  }
  return gb;
}

double central_difference(const std::function<double(double)>& f, double theta, double h) {
  if (!(h > 0.0)) throw ConfigError("finite-difference step must be positive");
  return (f(theta + h) - f(theta - h)) / (2.0 * h);
}

Tensor fd_gradient(const Tensor& x, const LayerParams& params, const DstcConfig& cfg, const Tensor& upstream,
                   ParamGroup which, double h) {
  if (!(h > 0.0)) throw ConfigError("finite-difference step must be positive");
  LayerParams probe_shape = params;
  const Tensor* target = which == ParamGroup::x ? &x : param_slot(probe_shape, which);
  if (!target) throw ConfigError("layer has no parameter group " + to_string(which));
  Tensor grad(target->shape());
  parallel_for(grad.size(), 0, [&](std::size_t i) {
    Tensor xp = x;
    LayerParams pp = params;
    Tensor& slot = which == ParamGroup::x ? xp : *param_slot(pp, which);
    const double theta = slot[i];
    grad[i] = central_difference(
        [&](double v) {
          slot[i] = v;
          return dot(upstream, forward(xp, pp, cfg));
        },
        theta, h);
  });
  return grad;
}

double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor) {
  require_same_shape(analytic, numeric, "max_relative_error");
  double m = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) m = std::max(m, relative_error(analytic[i], numeric[i], floor));
  return m;
}

json to_json(const GradcheckReport& r) {
  json groups = json::array();
  for (const auto& g : r.groups) {
    groups.push_back({{"name", g.name}, {"max_rel_err", g.max_rel_err}, {"tol", g.tol}, {"pass", g.pass}});
  }
  return json{{"config", to_json(r.config)}, {"seed", r.seed},        {"input_spatial", r.input_spatial},
              {"attempts", r.attempts},      {"groups", groups},      {"pass", r.pass}};
}

bool kink_free(const LayerTrace& trace, const DstcConfig& cfg, const Extents& input, double margin) {
  if (cfg.offset_mode == OffsetMode::off) return true;
  const LocationMap map = cfg.location_map();
  const RefGrid grid = cfg.ref_grid();
  // Kinks sit on integers for bilinear weights and even window widths, on
  // half-integers for odd widths.
  const double kink_phase = cfg.gaussian() && cfg.K_sigma % 2 == 1 ? 0.5 : 0.0;
  std::vector<RVec> q;
  for (long l = 0; l < input.count(); ++l) {
    target_locations(input, l, grid, map, trace.offsets, q);
    for (const RVec& p : q) {
      for (int d = 0; d < cfg.dimension; ++d) {
        const double shifted = p[d] - kink_phase;
        const double dist = std::abs(shifted - std::round(shifted));
        if (dist < margin) return false;
      }
    }
  }
  return true;
}

namespace {

void fill_uniform(Tensor& t, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& v : t.data()) v = u(rng);
}

}  // namespace

GradcheckReport gradcheck(const DstcConfig& cfg, std::uint64_t seed, const GradcheckTolerances& tol,
                          const GradcheckOptions& opts) {
  cfg.validate();
  GradcheckReport report;
  report.config = cfg;
  report.seed = seed;
  report.input_spatial = opts.input_spatial;
  if (report.input_spatial.empty()) report.input_spatial.assign(static_cast<std::size_t>(cfg.dimension), cfg.dimension == 2 ? 4 : 3);
  const Extents in = Extents::from_vector(report.input_spatial);
  if (in.dim != cfg.dimension) throw ConfigError("gradcheck input_spatial rank does not match dimension");

  std::mt19937_64 rng(seed);
  Tensor x;
  LayerParams params;
  LayerTrace trace;
  bool found = false;
  for (int attempt = 0; attempt < opts.max_attempts && !found; ++attempt) {
    report.attempts = attempt + 1;
    x = Tensor(in.shape_with_channels(cfg.in_channels));
    fill_uniform(x, 1.0, rng);
    params = init_layer(cfg, rng());
    fill_uniform(params.kernel.bias, 0.5, rng);
    if (params.offset_head) fill_uniform(params.offset_head->weights, opts.head_scale, rng);
    if (params.score_head) fill_uniform(params.score_head->weights, 10.0 * opts.head_scale, rng);
    trace = forward_traced(x, params, cfg);
    found = kink_free(trace, cfg, in, tol.kink_margin);
  }
  if (!found) throw ConfigError("could not draw a kink-free gradcheck configuration");
  if (static_cast<std::size_t>(trace.output.size()) > 10000) {
    throw ConfigError("gradcheck is limited to outputs of at most 10000 elements");
  }
  Tensor upstream(trace.output.shape());
  fill_uniform(upstream, 1.0, rng);

  GradBundle analytic = backward(x, params, cfg, upstream);
  if (opts.corrupt) {
    Tensor* g = analytic.get(*opts.corrupt);
    if (!g) throw ConfigError("cannot corrupt absent group " + to_string(*opts.corrupt));
    std::size_t arg = 0;
    for (std::size_t i = 1; i < g->size(); ++i) {
      if (std::abs((*g)[i]) > std::abs((*g)[arg])) arg = i;
    }
    (*g)[arg] *= 2.0;
  }

  report.pass = true;
  for (ParamGroup group : param_groups(cfg)) {
    const Tensor numeric = fd_gradient(x, params, cfg, upstream, group, tol.h);
    GradcheckGroup row;
    row.name = to_string(group);
    const bool linear = group == ParamGroup::x || group == ParamGroup::w || group == ParamGroup::bias ||
                        group == ParamGroup::expand;
    row.tol = linear ? tol.linear : tol.nonlinear;
    row.max_rel_err = max_relative_error(*analytic.get(group), numeric, tol.floor);
    row.pass = row.max_rel_err < row.tol;
    report.pass = report.pass && row.pass;
    report.groups.push_back(row);
  }
  return report;
}

}  // namespace dstc
