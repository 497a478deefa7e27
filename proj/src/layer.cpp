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

#include "dstc/layer.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "dstc/errors.hpp"

namespace dstc {

using nlohmann::json;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::tc: return "tc";
    case Variant::dstc_bilinear: return "dstc_bilinear";
    case Variant::dstc_gaussian_dense: return "dstc_gaussian_dense";
    case Variant::dstc_parametrized: return "dstc_parametrized";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  if (s == "tc") return Variant::tc;
  if (s == "dstc_bilinear") return Variant::dstc_bilinear;
  if (s == "dstc_gaussian_dense") return Variant::dstc_gaussian_dense;
  if (s == "dstc_parametrized") return Variant::dstc_parametrized;
  throw ConfigError("unknown variant '" + s + "'");
}

DstcConfig DstcConfig::for_variant(Variant v, int dimension) {
  DstcConfig c;
  c.dimension = dimension;
  c.variant = v;
  switch (v) {
    case Variant::tc:
      break;
    case Variant::dstc_bilinear:
      c.offset_mode = OffsetMode::dense;
      break;
    case Variant::dstc_gaussian_dense:
      c.offset_mode = OffsetMode::dense;
      c.score_mode = ScoreMode::dense;
      c.gaussian_variances = GaussianBank::intermediate().variances;
      break;
    case Variant::dstc_parametrized:
      c.offset_mode = OffsetMode::parametrized;
      c.score_mode = ScoreMode::shared;
      c.gaussian_variances = GaussianBank::intermediate().variances;
      break;
  }
  return c;
}

void DstcConfig::validate() const {
  check_dim(dimension);
  if (in_channels < 1 || out_channels < 1) throw ConfigError("channel counts must be positive");
  if (kernel_size < 1) throw ConfigError("kernel_size must be >= 1");
  location_map().validate();
  auto bad = [&](const std::string& why) {
    throw ConfigError("variant " + to_string(variant) + " with offset_mode " + to_string(offset_mode) +
                      " and score_mode " + to_string(score_mode) + ": " + why);
  };
  switch (variant) {
    case Variant::tc:
      if (offset_mode != OffsetMode::off || score_mode != ScoreMode::none) bad("tc takes no offsets or scores");
      break;
    case Variant::dstc_bilinear:
      if (offset_mode == OffsetMode::off) bad("offsets must be on");
      if (score_mode != ScoreMode::none) bad("bilinear interpolation takes no scores");
      break;
    case Variant::dstc_gaussian_dense:
      if (offset_mode != OffsetMode::dense || score_mode != ScoreMode::dense) bad("needs dense offsets and scores");
      break;
    case Variant::dstc_parametrized:
      if (offset_mode != OffsetMode::parametrized) bad("needs parametrized offsets");
      if (score_mode == ScoreMode::dense) bad("scores must be shared (or none for bilinear)");
      break;
  }
  if (gaussian()) bank().validate();
  if (!std::isfinite(dilation_base)) throw ConfigError("dilation_base must be finite");
  if (module_channels && *module_channels < 1) throw ConfigError("module_channels must be positive");
  if (skip && in_channels != out_channels) throw ConfigError("skip connection requires in_channels == out_channels");
}

LocationMap DstcConfig::location_map() const {
  LocationMap m;
  m.dim = dimension;
  m.stride = stride;
  m.padding = padding;
  m.output_padding = output_padding;
  m.base_dilation = base_dilation;
  return m;
}

RefGrid DstcConfig::ref_grid() const { return make_ref_grid(kernel_size, dimension); }

GaussianBank DstcConfig::bank() const { return GaussianBank{gaussian_variances, K_sigma}; }

Extents DstcConfig::output_extents(const Extents& input) const {
  return output_shape(location_map(), input, kernel_size);
}

namespace {

json ivec_json(const IVec& v, int dim) {
  bool uniform = true;
  for (int d = 1; d < dim; ++d) uniform = uniform && v[d] == v[0];
  if (uniform) return v[0];
  return std::vector<long>(v.begin(), v.begin() + dim);
}

IVec ivec_from_json(const json& j, int dim, const char* name) {
  IVec v{0, 0, 0};
  if (j.is_number_integer()) {
    for (int d = 0; d < dim; ++d) v[d] = j.get<long>();
    return v;
  }
  if (j.is_array() && static_cast<int>(j.size()) == dim) {
    for (int d = 0; d < dim; ++d) v[d] = j[static_cast<std::size_t>(d)].get<long>();
    return v;
  }
  throw ConfigError(std::string(name) + " must be an integer or a list of one integer per dimension");
}

}  // namespace

json to_json(const DstcConfig& c) {
  json j;
  j["dimension"] = c.dimension;
  j["in_channels"] = c.in_channels;
  j["out_channels"] = c.out_channels;
  j["kernel_size"] = c.kernel_size;
  j["stride"] = ivec_json(c.stride, c.dimension);
  j["padding"] = ivec_json(c.padding, c.dimension);
  j["output_padding"] = ivec_json(c.output_padding, c.dimension);
  j["base_dilation"] = ivec_json(c.base_dilation, c.dimension);
  j["variant"] = to_string(c.variant);
  j["offset_mode"] = to_string(c.offset_mode);
  j["score_mode"] = to_string(c.score_mode);
  j["gaussian_variances"] = c.gaussian_variances;
  j["K_sigma"] = c.K_sigma;
  j["dilation_base"] = c.dilation_base;
  j["module_channels"] = c.module_channels ? json(*c.module_channels) : json(nullptr);
  j["skip"] = c.skip;
  j["chunk_size"] = c.chunk_size;
  return j;
}

DstcConfig config_from_json(const json& j) {
  static const std::set<std::string> known{
      "dimension", "in_channels", "out_channels", "kernel_size", "stride", "padding", "output_padding",
      "base_dilation", "variant", "offset_mode", "score_mode", "gaussian_variances", "K_sigma", "dilation_base",
      "module_channels", "skip", "chunk_size",
      // sibling blocks of a full run configuration
      "task", "optimizer", "gradcheck", "train", "input_spatial"};
  if (!j.is_object()) throw ConfigError("layer configuration must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown configuration field '" + key + "'");
  }
  try {
    const int dim = j.value("dimension", 2);
    check_dim(dim);
    const Variant variant = variant_from_string(j.value("variant", std::string("tc")));
    DstcConfig c = DstcConfig::for_variant(variant, dim);
    c.in_channels = j.value("in_channels", c.in_channels);
    c.out_channels = j.value("out_channels", c.out_channels);
    c.kernel_size = j.value("kernel_size", c.kernel_size);
    if (j.contains("stride")) c.stride = ivec_from_json(j["stride"], dim, "stride");
    if (j.contains("padding")) c.padding = ivec_from_json(j["padding"], dim, "padding");
    if (j.contains("output_padding")) c.output_padding = ivec_from_json(j["output_padding"], dim, "output_padding");
    if (j.contains("base_dilation")) c.base_dilation = ivec_from_json(j["base_dilation"], dim, "base_dilation");
    if (j.contains("offset_mode")) c.offset_mode = offset_mode_from_string(j["offset_mode"].get<std::string>());
    if (j.contains("score_mode")) c.score_mode = score_mode_from_string(j["score_mode"].get<std::string>());
    if (j.contains("gaussian_variances")) {
      const json& gv = j["gaussian_variances"];
      if (gv.is_string()) {
        const std::string preset = gv.get<std::string>();
        if (preset == "intermediate") {
          c.gaussian_variances = GaussianBank::intermediate().variances;
        } else if (preset == "final") {
          c.gaussian_variances = GaussianBank::final_layer().variances;
        } else {
          throw ConfigError("unknown variance preset '" + preset + "'");
        }
      } else {
        c.gaussian_variances = gv.get<std::vector<double>>();
      }
    }
    if (!c.gaussian()) c.gaussian_variances.clear();
    c.K_sigma = j.value("K_sigma", c.K_sigma);
    c.dilation_base = j.value("dilation_base", c.dilation_base);
    if (j.contains("module_channels") && !j["module_channels"].is_null()) {
      c.module_channels = j["module_channels"].get<std::size_t>();
    }
    c.skip = j.value("skip", c.skip);
    c.chunk_size = j.value("chunk_size", c.chunk_size);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad configuration value: ") + e.what());
  }
}

std::vector<std::pair<std::string, Tensor*>> LayerParams::named() {
  std::vector<std::pair<std::string, Tensor*>> out{{"w", &kernel.w}, {"bias", &kernel.bias}};
  if (offset_head) out.emplace_back("offset_head", &offset_head->weights);
  if (score_head) out.emplace_back("score_head", &score_head->weights);
  if (compress) out.emplace_back("compress", &*compress);
  if (expand) out.emplace_back("expand", &*expand);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> LayerParams::named() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<LayerParams*>(this)->named()) out.emplace_back(name, t);
  return out;
}

namespace {

std::size_t ipow(std::size_t b, int e) {
  std::size_t r = 1;
  for (int i = 0; i < e; ++i) r *= b;
  return r;
}

void fill_uniform(Tensor& t, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& v : t.data()) v = u(rng);
}

}  // namespace

LayerParams init_layer(const DstcConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t cin = cfg.scatter_in_channels();
  const std::size_t cout = cfg.scatter_out_channels();
  const std::size_t kd = ipow(static_cast<std::size_t>(cfg.kernel_size), cfg.dimension);
  std::mt19937_64 rng(seed);
  LayerParams p{WeightKernel::zeros(cin, cout, cfg.kernel_size, cfg.dimension), {}, {}, {}, {}};
  fill_uniform(p.kernel.w, 1.0 / std::sqrt(static_cast<double>(cin * kd)), rng);
  if (cfg.offset_mode != OffsetMode::off) {
    p.offset_head = ConvHead::zeros(offset_channels(cfg.offset_mode, cfg.dimension, cfg.kernel_size), cin, cfg.dimension);
  }
  if (cfg.score_mode != ScoreMode::none) {
    p.score_head = ConvHead::zeros(
        score_channels(cfg.score_mode, cfg.dimension, cfg.kernel_size, cfg.gaussian_variances.size()), cin,
        cfg.dimension);
  }
  if (cfg.module_channels) {
    const std::size_t m = *cfg.module_channels;
    p.compress = Tensor(Shape{m, cfg.in_channels});
    fill_uniform(*p.compress, 1.0 / std::sqrt(static_cast<double>(cfg.in_channels)), rng);
    p.expand = Tensor(Shape{cfg.out_channels, m});
    fill_uniform(*p.expand, 1.0 / std::sqrt(static_cast<double>(m)), rng);
  }
  return p;
}

void check_params(const LayerParams& params, const DstcConfig& cfg) {
  const LayerParams ref = [&] {
    LayerParams r{WeightKernel::zeros(cfg.scatter_in_channels(), cfg.scatter_out_channels(), cfg.kernel_size,
                                      cfg.dimension),
                  {}, {}, {}, {}};
    const std::size_t cin = cfg.scatter_in_channels();
    if (cfg.offset_mode != OffsetMode::off) {
      r.offset_head = ConvHead::zeros(offset_channels(cfg.offset_mode, cfg.dimension, cfg.kernel_size), cin, cfg.dimension);
    }
    if (cfg.score_mode != ScoreMode::none) {
      r.score_head = ConvHead::zeros(
          score_channels(cfg.score_mode, cfg.dimension, cfg.kernel_size, cfg.gaussian_variances.size()), cin,
          cfg.dimension);
    }
    if (cfg.module_channels) {
      r.compress = Tensor(Shape{*cfg.module_channels, cfg.in_channels});
      r.expand = Tensor(Shape{cfg.out_channels, *cfg.module_channels});
    }
    return r;
  }();
  const auto want = ref.named();
  const auto have = params.named();
  if (want.size() != have.size()) throw ConfigError("parameter set does not match configuration");
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (want[i].first != have[i].first || want[i].second->shape() != have[i].second->shape()) {
      throw ShapeError("parameter " + have[i].first + " has shape " + shape_str(have[i].second->shape()) +
                       ", configuration needs " + want[i].first + " " + shape_str(want[i].second->shape()));
    }
  }
}

Tensor channel_mix(const Tensor& w, const Tensor& x) {
  if (w.rank() != 2 || w.extent(1) != x.extent(0)) throw ShapeError("channel_mix weight does not match input");
  const std::size_t out_c = w.extent(0);
  const std::size_t in_c = w.extent(1);
  const std::size_t npix = x.size() / in_c;
  Shape s = x.shape();
  s[0] = out_c;
  Tensor y(s);
  for (std::size_t o = 0; o < out_c; ++o) {
    for (std::size_t i = 0; i < in_c; ++i) {
      const double wv = w[o * in_c + i];
      for (std::size_t p = 0; p < npix; ++p) y[o * npix + p] += wv * x[i * npix + p];
    }
  }
  return y;
}

LayerTrace forward_traced(const Tensor& x, const LayerParams& params, const DstcConfig& cfg) {
  cfg.validate();
  check_params(params, cfg);
  const Extents in = Extents::of_feature_map(x.shape());
  if (in.dim != cfg.dimension) throw ShapeError("input dimension does not match configuration");
  if (x.extent(0) != cfg.in_channels) {
    throw ShapeError("input has " + std::to_string(x.extent(0)) + " channels, layer expects " +
                     std::to_string(cfg.in_channels));
  }
  const LocationMap map = cfg.location_map();
  const RefGrid grid = cfg.ref_grid();
  LayerTrace t;
  t.scatter_input = params.compress ? channel_mix(*params.compress, x) : x;
  if (cfg.offset_mode != OffsetMode::off) {
    t.offsets = compute_offsets(t.scatter_input, *params.offset_head, cfg.offset_mode, grid, cfg.dilation_base);
  } else {
    t.offsets.mode = OffsetMode::off;
  }
  const GaussianBank bank = cfg.bank();
  if (cfg.score_mode != ScoreMode::none) {
    t.scores = compute_scores(t.scatter_input, *params.score_head, cfg.score_mode, bank.size(), grid);
  }
  if (cfg.variant == Variant::tc) {
    t.scatter_output = tc_forward(t.scatter_input, params.kernel, map, grid);
  } else {
    Interpolation interp = BilinearKernel{};
    if (cfg.gaussian()) interp = GaussianKernel{&t.scores, &bank};
    t.scatter_output = dstc_forward(t.scatter_input, params.kernel, map, grid, t.offsets, interp,
                                    ScatterOptions{cfg.chunk_size, 0});
  }
  t.output = params.expand ? channel_mix(*params.expand, t.scatter_output) : t.scatter_output;
  if (cfg.skip) t.output += nearest_upsample(x, Extents::of_feature_map(t.output.shape()), cfg.stride);
  return t;
}

Tensor forward(const Tensor& x, const LayerParams& params, const DstcConfig& cfg) {
  return std::move(forward_traced(x, params, cfg).output);
}

json to_json(const ParamBreakdown& b) {
  return json{{"w", b.w},
              {"offsets", b.offsets},
              {"scores", b.scores},
              {"scores_table_literal", b.scores_table_literal},
              {"plumbing", b.plumbing},
              {"table_total", b.table_total},
              {"total", b.total}};
}

ParamBreakdown parameter_count(const DstcConfig& cfg) {
  cfg.validate();
  const std::size_t ci = cfg.scatter_in_channels();
  const std::size_t co = cfg.scatter_out_channels();
  const std::size_t dim = static_cast<std::size_t>(cfg.dimension);
  const std::size_t kd = ipow(static_cast<std::size_t>(cfg.kernel_size), cfg.dimension);
  const std::size_t head = ipow(3, cfg.dimension) * ci;
  const std::size_t s = cfg.gaussian_variances.size();
  ParamBreakdown b;
  b.w = kd * ci * co + co;
  switch (cfg.offset_mode) {
    case OffsetMode::off: b.offsets = 0; break;
    case OffsetMode::dense: b.offsets = head * dim * kd; break;
    case OffsetMode::parametrized: b.offsets = head * (dim + 1); break;
  }
  switch (cfg.score_mode) {
    case ScoreMode::none:
      b.scores = b.scores_table_literal = 0;
      break;
    case ScoreMode::dense:
      b.scores = head * s * kd;
      b.scores_table_literal = head * s * dim * kd;
      break;
    case ScoreMode::shared:
      b.scores = b.scores_table_literal = head * s;
      break;
  }
  if (cfg.module_channels) b.plumbing = *cfg.module_channels * cfg.in_channels + cfg.out_channels * *cfg.module_channels;
  b.table_total = b.w + b.offsets + b.scores;
  b.total = b.table_total + b.plumbing;
  return b;
}

ParamBreakdown parameter_census(const LayerParams& params, const DstcConfig& cfg) {
  ParamBreakdown b;
  b.w = params.kernel.w.size() + params.kernel.bias.size();
  b.offsets = params.offset_head ? params.offset_head->weights.size() : 0;
  b.scores = params.score_head ? params.score_head->weights.size() : 0;
  b.scores_table_literal = cfg.score_mode == ScoreMode::dense ? b.scores * static_cast<std::size_t>(cfg.dimension)
                                                              : b.scores;
  b.plumbing = (params.compress ? params.compress->size() : 0) + (params.expand ? params.expand->size() : 0);
  b.table_total = b.w + b.offsets + b.scores;
  b.total = b.table_total + b.plumbing;
  return b;
}

void save_params(const LayerParams& params, const std::filesystem::path& bin_path,
                 const std::filesystem::path& manifest_path) {
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw IoError("cannot open " + bin_path.string());
  json manifest = json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : params.named()) {
    write_binary(bin, *t);
    manifest.push_back({{"name", name}, {"shape", t->shape()}, {"offset", offset}});
    offset += binary_size(*t);
  }
  std::ofstream mf(manifest_path);
  if (!mf) throw IoError("cannot open " + manifest_path.string());
  mf << manifest.dump(2) << '\n';
}

LayerParams load_params(const DstcConfig& cfg, const std::filesystem::path& bin_path,
                        const std::filesystem::path& manifest_path) {
  std::ifstream mf(manifest_path);
  if (!mf) throw IoError("cannot open " + manifest_path.string());
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw IoError(std::string("bad parameter manifest: ") + e.what());
  }
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw IoError("cannot open " + bin_path.string());
  LayerParams p = init_layer(cfg, 0);
  auto slots = p.named();
  if (manifest.size() != slots.size()) throw IoError("parameter manifest does not match configuration");
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const json& e = manifest[i];
    if (e.at("name").get<std::string>() != slots[i].first) throw IoError("unexpected parameter " + e.at("name").dump());
    bin.seekg(static_cast<std::streamoff>(e.at("offset").get<std::size_t>()));
    Tensor t = read_binary(bin);
    if (t.shape() != slots[i].second->shape()) throw ShapeError("stored " + slots[i].first + " has wrong shape");
    *slots[i].second = std::move(t);
  }
  return p;
}

}  // namespace dstc
