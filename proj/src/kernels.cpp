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

#include "dstc/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dstc/errors.hpp"

namespace dstc {

void GaussianBank::validate() const {
  if (variances.empty()) throw ConfigError("Gaussian bank needs at least one variance");
  if (k_sigma < 1) throw ConfigError("K_sigma must be >= 1");
  for (std::size_t j = 0; j < variances.size(); ++j) {
    if (!(variances[j] > 0.0) || !std::isfinite(variances[j])) {
      throw ConfigError("Gaussian variances must be positive and finite");
    }
    if (j > 0 && !(variances[j] > variances[j - 1])) {
      throw ConfigError("Gaussian variances must be strictly increasing");
    }
  }
}

GaussianBank GaussianBank::intermediate(int k_sigma) {
  return {{0.25, 1.0, 4.0, 16.0}, k_sigma};
}

GaussianBank GaussianBank::final_layer(int k_sigma) {
  return {{1.0 / 30.0, 0.5, 1.0, 2.0}, k_sigma};
}

double bilinear_weight(const RVec& q, const IVec& p, int dim) {
  double w = 1.0;
  for (int d = 0; d < dim; ++d) {
    w *= std::max(0.0, 1.0 - std::abs(q[d] - static_cast<double>(p[d])));
  }
  return w;
}

namespace {

double sq_dist(const RVec& q, const IVec& p, int dim) {
  double s = 0.0;
  for (int d = 0; d < dim; ++d) {
    const double t = static_cast<double>(p[d]) - q[d];
    s += t * t;
  }
  return s;
}

// exp(-(|p-q|^2 - shift) / (2 var)) with shift = min over the window, so
// that the largest term is exactly 1 and the normalizer cannot underflow.
struct WindowGaussian {
  double min_sq = 0.0;
  double z = 0.0;
  RVec zq{0.0, 0.0, 0.0};  // sum e(p') * (p' - q)

  WindowGaussian(const RVec& q, int dim, double var, std::span<const IVec> window) {
    min_sq = std::numeric_limits<double>::infinity();
    for (const IVec& w : window) min_sq = std::min(min_sq, sq_dist(q, w, dim));
    for (const IVec& w : window) {
      const double e = std::exp(-(sq_dist(q, w, dim) - min_sq) / (2.0 * var));
      z += e;
      for (int d = 0; d < dim; ++d) zq[d] += e * (static_cast<double>(w[d]) - q[d]);
    }
  }
  double unnormalized(const RVec& q, const IVec& p, int dim, double var) const {
    return std::exp(-(sq_dist(q, p, dim) - min_sq) / (2.0 * var));
  }
};

}  // namespace

double gaussian_mixture_weight(const RVec& q, const IVec& p, int dim, std::span<const double> scores,
                               const GaussianBank& bank, std::span<const IVec> window) {
  if (window.empty()) return 0.0;
  if (scores.size() != bank.size()) throw ShapeError("score count does not match Gaussian bank");
  double g = 0.0;
  for (std::size_t j = 0; j < bank.size(); ++j) {
    const double var = bank.variances[j];
    WindowGaussian wg(q, dim, var, window);
    g += scores[j] * wg.unnormalized(q, p, dim, var) / wg.z;
  }
  return g;
}

RVec gaussian_mixture_grad_q(const RVec& q, const IVec& p, int dim, std::span<const double> scores,
                             const GaussianBank& bank, std::span<const IVec> window) {
  RVec grad{0.0, 0.0, 0.0};
  if (window.empty()) return grad;
  if (scores.size() != bank.size()) throw ShapeError("score count does not match Gaussian bank");
  for (std::size_t j = 0; j < bank.size(); ++j) {
    const double var = bank.variances[j];
    WindowGaussian wg(q, dim, var, window);
    const double w = wg.unnormalized(q, p, dim, var) / wg.z;
    // d/dq_d of e(p)/Z = w * ((p_d - q_d) - sum_p' w(p') (p'_d - q_d)) / var
    for (int d = 0; d < dim; ++d) {
      const double centred = (static_cast<double>(p[d]) - q[d]) - wg.zq[d] / wg.z;
      grad[d] += scores[j] * w * centred / var;
    }
  }
  return grad;
}

void Stencil::reset(const Extents& bounds, int terms, int kmax) {
  dim_ = bounds.dim;
  terms_ = terms;
  kmax_ = static_cast<std::size_t>(kmax);
  const std::size_t n = static_cast<std::size_t>(terms) * kMaxDim * kmax_;
  w_.assign(n, 0.0);
  dw_.assign(n, 0.0);
  ranges_ = {};
}

long Stencil::point_count() const {
  long c = 1;
  for (int d = 0; d < dim_; ++d) c *= ranges_[d].length();
  return c;
}

void Stencil::build_bilinear(const RVec& q, const Extents& bounds) {
  reset(bounds, 1, 2);
  for (int d = 0; d < dim_; ++d) {
    ranges_[d] = window_axis(q[d], 2, bounds.n[d]);
    for (long k = 0; k < ranges_[d].length(); ++k) {
      const double diff = q[d] - static_cast<double>(ranges_[d].lo + k);
      const double a = std::abs(diff);
      w_[slot(0, d, k)] = std::max(0.0, 1.0 - a);
      // Subgradient 0 at the kinks |diff| in {0, 1}.
      dw_[slot(0, d, k)] = (a > 0.0 && a < 1.0) ? (diff > 0.0 ? -1.0 : 1.0) : 0.0;
    }
  }
}

void Stencil::build_gaussian(const RVec& q, const Extents& bounds, const GaussianBank& bank) {
  const int s = static_cast<int>(bank.size());
  reset(bounds, s, bank.k_sigma);
  for (int d = 0; d < dim_; ++d) ranges_[d] = window_axis(q[d], bank.k_sigma, bounds.n[d]);
  if (empty()) return;
  for (int j = 0; j < s; ++j) {
    const double var = bank.variances[static_cast<std::size_t>(j)];
    for (int d = 0; d < dim_; ++d) {
      const AxisRange& r = ranges_[d];
      double min_sq = std::numeric_limits<double>::infinity();
      for (long k = 0; k < r.length(); ++k) {
        const double t = static_cast<double>(r.lo + k) - q[d];
        min_sq = std::min(min_sq, t * t);
      }
      double z = 0.0;
      for (long k = 0; k < r.length(); ++k) {
        const double t = static_cast<double>(r.lo + k) - q[d];
        const double e = std::exp(-(t * t - min_sq) / (2.0 * var));
        w_[slot(j, d, k)] = e;
        z += e;
      }
      double mean = 0.0;
      for (long k = 0; k < r.length(); ++k) {
        w_[slot(j, d, k)] /= z;
        mean += w_[slot(j, d, k)] * static_cast<double>(r.lo + k);
      }
      for (long k = 0; k < r.length(); ++k) {
        dw_[slot(j, d, k)] = w_[slot(j, d, k)] * (static_cast<double>(r.lo + k) - mean) / var;
      }
    }
  }
}

}  // namespace dstc
