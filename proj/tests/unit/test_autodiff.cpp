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

#include <cmath>
#include <random>

#include "../common/testing.hpp"
#include "dstc/autodiff.hpp"
#include "dstc/errors.hpp"

using namespace dstc;

namespace {

DstcConfig small(Variant v, int dim, std::size_t ci = 2, std::size_t co = 2) {
  DstcConfig c = DstcConfig::for_variant(v, dim);
  c.in_channels = ci;
  c.out_channels = co;
  c.kernel_size = 2;
  for (int d = 0; d < dim; ++d) c.stride[d] = 2;
  return c;
}

const GradcheckGroup* group(const GradcheckReport& r, const std::string& name) {
  for (const auto& g : r.groups) {
    if (g.name == name) return &g;
  }
  return nullptr;
}

}  // namespace

TEST_CASE("central difference of a quadratic") {
  CHECK(std::abs(central_difference([](double t) { return t * t; }, 3.0, 1e-5) - 6.0) < 1e-8);
}

TEST_CASE("relative error uses the floor") {
  CHECK(relative_error(1.0, 1.0, 1e-3) == 0.0);
  CHECK(relative_error(1e-9, 0.0, 1e-3) == doctest::Approx(1e-6));
  CHECK(relative_error(2.0, 1.0, 1e-3) == 0.5);
}

TEST_CASE("tc gradients: d_x is the adjoint, d_bias sums the upstream") {
  std::mt19937_64 rng(1);
  const DstcConfig c = small(Variant::tc, 2);
  const LayerParams p = init_layer(c, 3);
  const Tensor x = testing::random_tensor({2, 4, 4}, rng);
  const Tensor up = testing::random_tensor({2, 8, 8}, rng);
  const GradBundle g = backward(x, p, c, up);
  CHECK(max_abs_diff(g.d_x, tc_adjoint(up, p.kernel.w, c.location_map(), c.ref_grid(),
                                       Extents::from_vector({4, 4}))) < 1e-13);
  for (std::size_t co = 0; co < 2; ++co) {
    double s = 0.0;
    for (std::size_t i = 0; i < 64; ++i) s += up[co * 64 + i];
    CHECK(g.d_bias[co] == doctest::Approx(s).epsilon(1e-14));
  }
  const Tensor fd = fd_gradient(x, p, c, up, ParamGroup::x, 1e-5);
  CHECK(max_relative_error(g.d_x, fd, 1e-3) < 1e-6);
}

TEST_CASE("zero upstream gives zero gradients") {
  std::mt19937_64 rng(2);
  for (Variant v : {Variant::dstc_bilinear, Variant::dstc_gaussian_dense, Variant::dstc_parametrized}) {
    DstcConfig c = small(v, 2);
    c.module_channels = 2;
    LayerParams p = init_layer(c, 1);
    testing::randomize_heads(p, rng, 0.3);
    const Tensor x = testing::random_tensor({2, 3, 3}, rng);
    const Tensor up(forward(x, p, c).shape());
    GradBundle g = backward(x, p, c, up);
    for (ParamGroup pg : param_groups(c)) CHECK(max_abs(*g.get(pg)) == 0.0);
  }
}

TEST_CASE("backward is linear in the upstream") {
  std::mt19937_64 rng(3);
  for (Variant v : {Variant::dstc_bilinear, Variant::dstc_gaussian_dense, Variant::dstc_parametrized}) {
    const DstcConfig c = small(v, 2);
    LayerParams p = init_layer(c, 1);
    testing::randomize_heads(p, rng, 0.3);
    const Tensor x = testing::random_tensor({2, 3, 3}, rng);
    const Tensor up = testing::random_tensor(forward(x, p, c).shape(), rng);
    Tensor up3 = up;
    up3 *= -2.5;
    GradBundle a = backward(x, p, c, up);
    GradBundle b = backward(x, p, c, up3);
    for (ParamGroup pg : param_groups(c)) {
      const Tensor& ga = *a.get(pg);
      const Tensor& gb = *b.get(pg);
      for (std::size_t i = 0; i < ga.size(); ++i) {
        CHECK(std::abs(gb[i] + 2.5 * ga[i]) <= 1e-12 * std::max(1.0, std::abs(gb[i])));
      }
    }
  }
}

TEST_CASE("gradcheck: tc, 2D, (2,4,4) -> (2,8,8)") {
  const GradcheckReport r = gradcheck(small(Variant::tc, 2), 7);
  CHECK(r.pass);
  CHECK(r.groups.size() == 3);
  for (const auto& g : r.groups) CHECK(g.tol == 1e-5);
}

TEST_CASE("gradcheck: parametrized, 3D, (1,3,3,3)") {
  DstcConfig c = DstcConfig::for_variant(Variant::dstc_parametrized, 3);
  GradcheckOptions o;
  o.input_spatial = {3, 3, 3};
  const GradcheckReport r = gradcheck(c, 8, {}, o);
  CHECK(r.pass);
  for (const auto& g : r.groups) CHECK(g.max_rel_err < g.tol);
}

TEST_CASE("gradcheck: dense Gaussian on (1,3,5,5) over every group") {
  DstcConfig c = DstcConfig::for_variant(Variant::dstc_gaussian_dense, 2);
  c.in_channels = 3;
  GradcheckOptions o;
  o.input_spatial = {5, 5};
  const GradcheckReport r = gradcheck(c, 9, {}, o);
  CHECK(r.pass);
  REQUIRE(group(r, "score_head"));
  CHECK(group(r, "score_head")->max_rel_err < 1e-4);
  CHECK(group(r, "offset_head")->max_rel_err < 1e-4);
}

TEST_CASE("gradcheck: bilinear offsets away from kinks") {
  DstcConfig c = small(Variant::dstc_bilinear, 2);
  c.kernel_size = 3;
  c.padding = {1, 1, 0};
  const GradcheckReport r = gradcheck(c, 10);
  CHECK(r.pass);
}

TEST_CASE("gradcheck: compress and expand plumbing") {
  DstcConfig c = small(Variant::dstc_gaussian_dense, 2, 3, 2);
  c.module_channels = 2;
  const GradcheckReport r = gradcheck(c, 11);
  CHECK(r.pass);
  CHECK(group(r, "compress"));
  CHECK(group(r, "expand"));
}

TEST_CASE("gradcheck: skip connection") {
  DstcConfig c = small(Variant::dstc_parametrized, 2);
  c.kernel_size = 3;
  c.stride = {1, 1, 1};
  c.padding = {1, 1, 0};
  c.skip = true;
  CHECK(gradcheck(c, 12).pass);
}

TEST_CASE("corrupted weight gradient fails on the w group") {
  GradcheckOptions o;
  o.corrupt = ParamGroup::w;
  const GradcheckReport r = gradcheck(small(Variant::tc, 2), 7, {}, o);
  CHECK_FALSE(r.pass);
  CHECK_FALSE(group(r, "w")->pass);
  CHECK(group(r, "x")->pass);
  CHECK(group(r, "bias")->pass);
}

TEST_CASE("gradcheck report JSON") {
  const GradcheckReport r = gradcheck(small(Variant::tc, 2), 7);
  const auto j = to_json(r);
  CHECK(j["pass"] == true);
  CHECK(j["groups"].size() == 3);
  CHECK(j["groups"][0]["name"] == "x");
  CHECK(j["config"]["variant"] == "tc");
}

TEST_CASE("gradcheck refuses oversized outputs") {
  DstcConfig c = small(Variant::tc, 2, 8, 8);
  GradcheckOptions o;
  o.input_spatial = {20, 20};
  CHECK_THROWS_AS(gradcheck(c, 1, {}, o), ConfigError);
}

TEST_CASE("upstream shape is checked") {
  const DstcConfig c = small(Variant::tc, 2);
  const LayerParams p = init_layer(c, 1);
  CHECK_THROWS_AS(backward(Tensor({2, 4, 4}), p, c, Tensor({2, 7, 8})), ShapeError);
}
