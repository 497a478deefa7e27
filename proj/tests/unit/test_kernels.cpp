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

#include "dstc/errors.hpp"
#include "dstc/grid.hpp"
#include "dstc/kernels.hpp"

using namespace dstc;

namespace {

Extents ext(std::vector<long> v) { return Extents::from_vector(v); }

double mixture_sum(const RVec& q, int dim, const std::vector<double>& scores, const GaussianBank& bank,
                   const Extents& bounds) {
  const auto win = interp_window(q, bank.k_sigma, bounds);
  double s = 0.0;
  for (const IVec& p : win) s += gaussian_mixture_weight(q, p, dim, scores, bank, win);
  return s;
}

// dG/dq without the normalizer term: what a naive derivation produces.
RVec grad_without_normalizer(const RVec& q, const IVec& p, int dim, const std::vector<double>& scores,
                             const GaussianBank& bank, const std::vector<IVec>& win) {
  RVec g{0, 0, 0};
  for (std::size_t j = 0; j < bank.size(); ++j) {
    const double var = bank.variances[j];
    double z = 0.0;
    for (const IVec& w : win) {
      double r = 0.0;
      for (int d = 0; d < dim; ++d) r += (w[d] - q[d]) * (w[d] - q[d]);
      z += std::exp(-r / (2 * var));
    }
    double r = 0.0;
    for (int d = 0; d < dim; ++d) r += (p[d] - q[d]) * (p[d] - q[d]);
    const double e = std::exp(-r / (2 * var)) / z;
    for (int d = 0; d < dim; ++d) g[d] += scores[j] * e * (p[d] - q[d]) / var;
  }
  return g;
}

}  // namespace

TEST_CASE("bilinear weight") {
  CHECK(bilinear_weight({0.5, 0.5, 0}, {0, 0, 0}, 2) == 0.25);
  CHECK(bilinear_weight({2.0, 3.0, 0}, {2, 3, 0}, 2) == 1.0);
  CHECK(bilinear_weight({2.0, 3.0, 0}, {2, 4, 0}, 2) == 0.0);
  CHECK(bilinear_weight({2.0, 3.0, 0}, {1, 3, 0}, 2) == 0.0);
  CHECK(bilinear_weight({0.3, 0.0, 0.0}, {1, 0, 0}, 3) == doctest::Approx(0.3).epsilon(1e-15));
}

TEST_CASE("bilinear mass over the bracket") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(1.0, 5.0);
  for (int dim = 2; dim <= 3; ++dim) {
    for (int trial = 0; trial < 50; ++trial) {
      RVec q{u(rng), u(rng), dim == 3 ? u(rng) : 0.0};
      const auto win = interp_window(q, 2, ext(std::vector<long>(dim, 8)));
      double s = 0.0;
      for (const IVec& p : win) s += bilinear_weight(q, p, dim);
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("variance presets") {
  CHECK(GaussianBank::intermediate().variances == std::vector<double>{0.25, 1, 4, 16});
  CHECK(GaussianBank::final_layer().variances == std::vector<double>{1.0 / 30, 0.5, 1, 2});
  CHECK(GaussianBank::intermediate().k_sigma == 5);
  CHECK_THROWS_AS((GaussianBank{{1, 0.5}, 5}).validate(), ConfigError);
  CHECK_THROWS_AS((GaussianBank{{}, 5}).validate(), ConfigError);
  CHECK_THROWS_AS((GaussianBank{{-1}, 5}).validate(), ConfigError);
}

TEST_CASE("gaussian weight is symmetric and normalized at a centred window") {
  for (double var : {0.1, 1.0, 7.0}) {
    const GaussianBank bank{{var}, 5};
    const RVec q{4, 4, 0};
    const auto win = interp_window(q, 5, ext({9, 9}));
    const std::vector<double> one{1.0};
    double s = 0.0;
    for (const IVec& p : win) {
      const double w = gaussian_mixture_weight(q, p, 2, one, bank, win);
      const IVec r{8 - p[0], 8 - p[1], 0};
      CHECK(w == doctest::Approx(gaussian_mixture_weight(q, r, 2, one, bank, win)).epsilon(1e-14));
      s += w;
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("softmax-weighted mixture conserves mass") {
  const std::vector<double> scores{0.1, 0.2, 0.3, 0.4};
  CHECK(std::abs(mixture_sum({3.3, 2.7, 0}, 2, scores, GaussianBank::intermediate(), ext({10, 10})) - 1.0) < 1e-12);
  CHECK(std::abs(mixture_sum({3.3, 2.7, 3.1}, 3, scores, GaussianBank::final_layer(), ext({8, 8, 8})) - 1.0) <
        1e-12);
  // clipped windows renormalize too
  CHECK(std::abs(mixture_sum({0.2, 0.9, 0}, 2, scores, GaussianBank::intermediate(), ext({10, 10})) - 1.0) < 1e-12);
}

TEST_CASE("tiny variance approaches a delta") {
  const GaussianBank bank{{1e-6}, 5};
  const RVec q{3, 2, 0};
  const auto win = interp_window(q, 5, ext({8, 8}));
  const std::vector<double> one{1.0};
  for (const IVec& p : win) {
    const double want = (p[0] == 3 && p[1] == 2) ? 1.0 : 0.0;
    CHECK(std::abs(gaussian_mixture_weight(q, p, 2, one, bank, win) - want) < 1e-9);
  }
}

TEST_CASE("empty window gives zero weight") {
  const std::vector<IVec> none;
  const std::vector<double> one{1.0};
  CHECK(gaussian_mixture_weight({-9, -9, 0}, {0, 0, 0}, 2, one, GaussianBank{{1}, 5}, none) == 0.0);
}

TEST_CASE("entropy is nondecreasing in the variance") {
  const RVec q{3.3, 2.8, 0};
  const auto win = interp_window(q, 5, ext({8, 8}));
  const std::vector<double> one{1.0};
  double prev = -1.0;
  for (double var = 0.05; var < 40; var *= 1.5) {
    const GaussianBank bank{{var}, 5};
    double h = 0.0;
    for (const IVec& p : win) {
      const double w = gaussian_mixture_weight(q, p, 2, one, bank, win);
      if (w > 0) h -= w * std::log(w);
    }
    CHECK(h >= prev - 1e-12);
    prev = h;
  }
}

TEST_CASE("analytic dG/dq matches central differences") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.1, 0.4);
  const std::vector<double> scores{0.4, 0.3, 0.2, 0.1};
  const GaussianBank bank = GaussianBank::intermediate();
  for (int dim = 2; dim <= 3; ++dim) {
    for (int trial = 0; trial < 20; ++trial) {
      // fractional parts kept away from the odd-window switch at .5
      RVec q{2 + u(rng), 1 + u(rng), dim == 3 ? 3 + u(rng) : 0.0};
      const Extents b = ext(std::vector<long>(dim, 6));
      const auto win = interp_window(q, 5, b);
      for (const IVec& p : win) {
        const RVec g = gaussian_mixture_grad_q(q, p, dim, scores, bank, win);
        for (int d = 0; d < dim; ++d) {
          const double h = 1e-6;
          RVec qp = q, qm = q;
          qp[d] += h;
          qm[d] -= h;
          const double fd = (gaussian_mixture_weight(qp, p, dim, scores, bank, win) -
                             gaussian_mixture_weight(qm, p, dim, scores, bank, win)) /
                            (2 * h);
          CHECK(std::abs(g[d] - fd) <= 1e-5 * std::max({std::abs(g[d]), std::abs(fd), 1e-3}));
        }
      }
    }
  }
}

TEST_CASE("normalizer term is part of the gradient") {
  // Near the border the clipped window is asymmetric, so dN/dq is large.
  const GaussianBank bank{{1.0, 4.0}, 5};
  const std::vector<double> scores{0.5, 0.5};
  const RVec q{0.3, 2.2, 0};
  const auto win = interp_window(q, 5, ext({6, 6}));
  double gap = 0.0;
  for (const IVec& p : win) {
    const RVec full = gaussian_mixture_grad_q(q, p, 2, scores, bank, win);
    const RVec naive = grad_without_normalizer(q, p, 2, scores, bank, win);
    RVec qp = q, qm = q;
    qp[0] += 1e-6;
    qm[0] -= 1e-6;
    const double fd =
        (gaussian_mixture_weight(qp, p, 2, scores, bank, win) - gaussian_mixture_weight(qm, p, 2, scores, bank, win)) /
        2e-6;
    CHECK(std::abs(full[0] - fd) < 1e-7);
    gap = std::max(gap, std::abs(naive[0] - fd));
  }
  CHECK(gap > 1e-2);
}

TEST_CASE("stencil factors agree with the unfactored weights") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.5, 7.5);
  const std::vector<double> scores{0.1, 0.2, 0.3, 0.4};
  for (int dim = 2; dim <= 3; ++dim) {
    const Extents b = ext(std::vector<long>(dim, 6));
    for (int ks : {2, 3, 5}) {
      const GaussianBank bank{GaussianBank::intermediate().variances, ks};
      for (int trial = 0; trial < 20; ++trial) {
        RVec q{u(rng), u(rng), dim == 3 ? u(rng) : 0.0};
        Stencil sg, sb;
        sg.build_gaussian(q, b, bank);
        sb.build_bilinear(q, b);
        const auto win = interp_window(q, ks, b);
        CHECK(static_cast<std::size_t>(sg.point_count()) == win.size());
        std::size_t i = 0;
        sg.for_each_point([&](const IVec& p, const IVec& k) {
          REQUIRE(i < win.size());
          CHECK(p == win[i++]);
          double g = 0.0;
          for (int t = 0; t < sg.terms(); ++t) g += scores[static_cast<std::size_t>(t)] * sg.term_value(t, k);
          CHECK(std::abs(g - gaussian_mixture_weight(q, p, dim, scores, bank, win)) < 1e-15);
        });
        sb.for_each_point([&](const IVec& p, const IVec& k) {
          CHECK(std::abs(sb.term_value(0, k) - bilinear_weight(q, p, dim)) < 1e-15);
        });
      }
    }
  }
}
