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

#include <span>
#include <vector>

#include "dstc/grid.hpp"

namespace dstc {

/// Fixed Gaussian variances mixed by the learned scores, plus the window
/// width K_sigma (integer points per axis).
struct GaussianBank {
  std::vector<double> variances;
  int k_sigma = 5;

  std::size_t size() const { return variances.size(); }
  void validate() const;

  /// {2^-2, 2^0, 2^2, 2^4}, for layers inside a network.
  static GaussianBank intermediate(int k_sigma = 5);
  /// {1/30, 1/2, 1, 2}, sharper, for a network's last layer.
  static GaussianBank final_layer(int k_sigma = 5);
};

/// prod_d max(0, 1 - |q_d - p_d|)
double bilinear_weight(const RVec& q, const IVec& p, int dim);

/**
 * Gaussian mixture interpolation weight of integer point p for a
 * contribution landing at q:
 *
 *   G(p, q) = sum_j N_j * scores[j] * exp(-|p - q|^2 / (2 var_j))
 *
 * with N_j = 1 / sum_{p' in window} exp(-|p' - q|^2 / (2 var_j)), so every
 * variance spreads unit mass over the window. Returns 0 for an empty window.
 * This is the direct, unfactored definition; the scatter engine uses the
 * separable Stencil below.
 */
double gaussian_mixture_weight(const RVec& q, const IVec& p, int dim, std::span<const double> scores,
                               const GaussianBank& bank, std::span<const IVec> window);

/// Analytic dG/dq of gaussian_mixture_weight, including the dependence of
/// the normalizers N_j on q. Window membership is held fixed.
RVec gaussian_mixture_grad_q(const RVec& q, const IVec& p, int dim, std::span<const double> scores,
                             const GaussianBank& bank, std::span<const IVec> window);

/**
 * Per-axis interpolation weights around one fractional location.
 *
 * Both kernels factor over axes: bilinear has one term, the Gaussian
 * mixture has one term per variance, each normalized over its clipped
 * window axis by axis. weight(t, d, k) is the factor for term t on axis d
 * at the k-th window coordinate; dweight is its derivative in q_d.
 */
class Stencil {
 public:
  void build_bilinear(const RVec& q, const Extents& bounds);
  void build_gaussian(const RVec& q, const Extents& bounds, const GaussianBank& bank);

  int dim() const { return dim_; }
  int terms() const { return terms_; }
  const AxisRange& range(int d) const { return ranges_[d]; }
  long point_count() const;
  bool empty() const { return point_count() == 0; }

  double weight(int term, int d, long k) const { return w_[slot(term, d, k)]; }
  double dweight(int term, int d, long k) const { return dw_[slot(term, d, k)]; }

  /// Calls f(p, k) for every window point in lexicographic order, where k
  /// holds the per-axis offsets into the window.
  template <class F>
  void for_each_point(F&& f) const {
    const long total = point_count();
    IVec k{0, 0, 0};
    IVec p{0, 0, 0};
    for (long i = 0; i < total; ++i) {
      long rem = i;
      for (int d = dim_ - 1; d >= 0; --d) {
        const long len = ranges_[d].length();
        k[d] = rem % len;
        rem /= len;
        p[d] = ranges_[d].lo + k[d];
      }
      f(p, k);
    }
  }

  /// Product over axes of term t's factors.
  double term_value(int term, const IVec& k) const {
    double v = 1.0;
    for (int d = 0; d < dim_; ++d) v *= weight(term, d, k[d]);
    return v;
  }

 private:
  std::size_t slot(int term, int d, long k) const {
    return (static_cast<std::size_t>(term) * kMaxDim + static_cast<std::size_t>(d)) * kmax_ +
           static_cast<std::size_t>(k);
  }
  void reset(const Extents& bounds, int terms, int kmax);

  int dim_ = 2;
  int terms_ = 0;
  std::size_t kmax_ = 0;
  std::array<AxisRange, kMaxDim> ranges_{};
  std::vector<double> w_;
  std::vector<double> dw_;
};

}  // namespace dstc
