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


#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "../common/testing.hpp"
#include "dstc/errors.hpp"
#include "dstc/layer.hpp"

using namespace dstc;

namespace {

const Variant kVariants[] = {Variant::tc, Variant::dstc_bilinear, Variant::dstc_gaussian_dense,
                             Variant::dstc_parametrized};

std::size_t stored(const LayerParams& p) {
  std::size_t n = 0;
  for (const auto& [_, t] : p.named()) n += t->size();
  return n;
}

}  // namespace

TEST_CASE("init is deterministic per seed") {
  DstcConfig c = DstcConfig::for_variant(Variant::dstc_gaussian_dense, 2);
  c.in_channels = 3;
  c.out_channels = 2;
  c.module_channels = 2;
  const LayerParams a = init_layer(c, 42), b = init_layer(c, 42), d = init_layer(c, 43);
  CHECK(a.kernel.w == b.kernel.w);
  CHECK(*a.compress == *b.compress);
  CHECK(*a.expand == *b.expand);
  CHECK_FALSE(a.kernel.w == d.kernel.w);
  const double bound = 1.0 / std::sqrt(2.0 * 9.0);
  CHECK(max_abs(a.kernel.w) <= bound);
  CHECK(max_abs(a.kernel.bias) == 0.0);
  CHECK(max_abs(a.offset_head->weights) == 0.0);
  CHECK(max_abs(a.score_head->weights) == 0.0);
}

TEST_CASE("variant consistency") {
  DstcConfig c = DstcConfig::for_variant(Variant::tc, 2);
  CHECK_NOTHROW(c.validate());
  c.offset_mode = OffsetMode::dense;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = DstcConfig::for_variant(Variant::dstc_bilinear, 2);
  c.score_mode = ScoreMode::dense;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = DstcConfig::for_variant(Variant::dstc_gaussian_dense, 2);
  c.offset_mode = OffsetMode::parametrized;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = DstcConfig::for_variant(Variant::dstc_parametrized, 3);
  CHECK_NOTHROW(c.validate());
  c.gaussian_variances = {4, 1};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = DstcConfig::for_variant(Variant::tc, 2);
  c.in_channels = 2;
  c.skip = true;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("fresh dstc layers reduce to tc") {
  std::mt19937_64 rng(1);
  for (int dim = 2; dim <= 3; ++dim) {
    testing::RandomCase rc = testing::random_case(Variant::tc, dim, rng);
    const DstcConfig tc = rc.cfg;
    const LayerParams ptc = init_layer(tc, 9);
    const Tensor x = testing::random_tensor(rc.input.shape_with_channels(tc.in_channels), rng);
    const Tensor ytc = forward(x, ptc, tc);
    CHECK(ytc == tc_forward(x, ptc.kernel, tc.location_map(), tc.ref_grid()));

    DstcConfig bil = tc;
    bil.variant = Variant::dstc_bilinear;
    bil.offset_mode = OffsetMode::dense;
    LayerParams pb = init_layer(bil, 9);
    CHECK(pb.kernel.w == ptc.kernel.w);
    CHECK(forward(x, pb, bil) == ytc);

    DstcConfig par = tc;
    par.variant = Variant::dstc_parametrized;
    par.offset_mode = OffsetMode::parametrized;
    par.dilation_base = static_cast<double>(tc.base_dilation[0]);
    for (int d = 1; d < dim; ++d) par.base_dilation[d] = tc.base_dilation[0];
    DstcConfig tc_same = tc;
    tc_same.base_dilation = par.base_dilation;
    const LayerParams pp = init_layer(par, 9);
    CHECK(forward(x, pp, par) == forward(x, init_layer(tc_same, 9), tc_same));
  }
}

TEST_CASE("output shape follows the location map for every variant") {
  std::mt19937_64 rng(2);
  for (Variant v : kVariants) {
    for (int dim = 2; dim <= 3; ++dim) {
      testing::RandomCase rc = testing::random_case(v, dim, rng);
      LayerParams p = init_layer(rc.cfg, 1);
      testing::randomize_heads(p, rng, 0.3);
      const Tensor x = testing::random_tensor(rc.input.shape_with_channels(rc.cfg.in_channels), rng);
      CHECK(forward(x, p, rc.cfg).shape() == rc.cfg.output_extents(rc.input).shape_with_channels(rc.cfg.out_channels));
    }
  }
}

TEST_CASE("zero input gives the broadcast bias") {
  std::mt19937_64 rng(3);
  for (Variant v : kVariants) {
    for (int dim = 2; dim <= 3; ++dim) {
      testing::RandomCase rc = testing::random_case(v, dim, rng);
      LayerParams p = init_layer(rc.cfg, 2);
      testing::randomize_heads(p, rng, 0.5);
      p.kernel.bias = testing::random_tensor(p.kernel.bias.shape(), rng);
      const Tensor y = forward(Tensor(rc.input.shape_with_channels(rc.cfg.in_channels)), p, rc.cfg);
      const std::size_t npix = y.size() / y.extent(0);
      for (std::size_t c = 0; c < y.extent(0); ++c) {
        for (std::size_t i = 0; i < npix; ++i) CHECK(y[c * npix + i] == p.kernel.bias[c]);
      }
    }
  }
}

TEST_CASE("module channels narrow the scatter") {
  DstcConfig c = DstcConfig::for_variant(Variant::dstc_parametrized, 2);
  c.in_channels = 256;
  c.out_channels = 256;
  c.module_channels = 64;
  c.stride = {2, 2, 1};
  const LayerParams p = init_layer(c, 5);
  CHECK(p.compress->shape() == Shape{64, 256});
  CHECK(p.expand->shape() == Shape{256, 64});
  CHECK(p.kernel.w.shape() == Shape{64, 64, 3, 3});
  CHECK(p.offset_head->in_channels() == 64);
  std::mt19937_64 rng(4);
  const Tensor x = testing::random_tensor({256, 3, 3}, rng);
  const LayerTrace t = forward_traced(x, p, c);
  CHECK(t.scatter_input.extent(0) == 64);
  CHECK(t.scatter_output.extent(0) == 64);
  CHECK(t.output.extent(0) == 256);
}

TEST_CASE("skip adds the input") {
  DstcConfig c = DstcConfig::for_variant(Variant::tc, 2);
  c.in_channels = c.out_channels = 2;
  c.padding = {1, 1, 0};
  std::mt19937_64 rng(5);
  const Tensor x = testing::random_tensor({2, 4, 4}, rng);
  const LayerParams p = init_layer(c, 1);
  Tensor plain = forward(x, p, c);
  c.skip = true;
  plain += x;
  CHECK(forward(x, p, c) == plain);
}

TEST_CASE("parameter counts") {
  DstcConfig c = DstcConfig::for_variant(Variant::tc, 2);
  c.in_channels = c.out_channels = 64;
  ParamBreakdown b = parameter_count(c);
  CHECK(b.w == 36928);
  CHECK(b.offsets == 0);
  CHECK(b.scores == 0);
  CHECK(b.total == 36928);

  c = DstcConfig::for_variant(Variant::dstc_parametrized, 2);
  c.in_channels = c.out_channels = 64;
  b = parameter_count(c);
  CHECK(b.offsets == 1728);
  CHECK(b.scores == 2304);
  CHECK(b.scores_table_literal == 2304);

  c = DstcConfig::for_variant(Variant::dstc_bilinear, 3);
  c.kernel_size = 2;
  c.in_channels = 16;
  c.out_channels = 16;
  CHECK(parameter_count(c).offsets == 10368);

  c = DstcConfig::for_variant(Variant::dstc_gaussian_dense, 2);
  c.in_channels = c.out_channels = 64;
  b = parameter_count(c);
  CHECK(b.scores == 9 * 64 * 4 * 9);
  CHECK(b.scores_table_literal == 9 * 64 * 4 * 2 * 9);

  c.module_channels = 16;
  b = parameter_count(c);
  CHECK(b.plumbing == 2 * 16 * 64);
  CHECK(b.w == 9 * 16 * 16 + 16);
  CHECK(b.total == b.table_total + b.plumbing);
}

TEST_CASE("parameter count equals the stored census") {
  for (Variant v : kVariants) {
    for (int dim = 2; dim <= 3; ++dim) {
      for (int k = 1; k <= 4; ++k) {
        for (auto [ci, co] : {std::pair<int, int>{8, 8}, {16, 32}}) {
          DstcConfig c = DstcConfig::for_variant(v, dim);
          c.kernel_size = k;
          c.in_channels = static_cast<std::size_t>(ci);
          c.out_channels = static_cast<std::size_t>(co);
          const LayerParams p = init_layer(c, 0);
          const ParamBreakdown b = parameter_count(c);
          CHECK(parameter_census(p, c) == b);
          CHECK(stored(p) == b.total);
        }
      }
    }
  }
}

TEST_CASE("config JSON") {
  DstcConfig c = DstcConfig::for_variant(Variant::dstc_parametrized, 3);
  c.in_channels = 4;
  c.stride = {2, 1, 2};
  c.module_channels = 2;
  c.K_sigma = 7;
  const DstcConfig r = config_from_json(to_json(c));
  CHECK(to_json(r) == to_json(c));

  const auto j = nlohmann::json::parse(R"({"variant": "dstc_gaussian_dense", "gaussian_variances": "final",
                                           "stride": 2, "offset_mode": "unparametrized"})");
  const DstcConfig g = config_from_json(j);
  CHECK(g.gaussian_variances == GaussianBank::final_layer().variances);
  CHECK(g.stride[1] == 2);
  CHECK(g.offset_mode == OffsetMode::dense);

  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"kernal_size": 3})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"variant": "fancy"})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"stride": [1, 2, 3]})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"kernel_size": "three"})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"variant": "tc", "offset_mode": "dense"})")),
                  ConfigError);
}

TEST_CASE("parameter files round trip") {
  DstcConfig c = DstcConfig::for_variant(Variant::dstc_gaussian_dense, 2);
  c.in_channels = 3;
  c.out_channels = 2;
  c.module_channels = 2;
  std::mt19937_64 rng(6);
  LayerParams p = init_layer(c, 3);
  testing::randomize_heads(p, rng, 1.0);
  const auto dir = std::filesystem::temp_directory_path() / "dstc_test_layer";
  std::filesystem::create_directories(dir);
  save_params(p, dir / "params.bin", dir / "params.json");
  const LayerParams q = load_params(c, dir / "params.bin", dir / "params.json");
  const auto a = p.named();
  const auto b = q.named();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(*a[i].second == *b[i].second);
  }
  std::ifstream man(dir / "params.json");
  const auto j = nlohmann::json::parse(man);
  CHECK(j[0]["name"] == "w");
  CHECK(j[0]["offset"] == 0);
  DstcConfig other = c;
  other.in_channels = 4;
  CHECK_THROWS_AS(load_params(other, dir / "params.bin", dir / "params.json"), Error);
  CHECK_THROWS_AS(load_params(c, dir / "missing.bin", dir / "params.json"), IoError);
}
