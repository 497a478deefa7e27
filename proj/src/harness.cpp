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


#include "dstc/harness.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

#include "dstc/errors.hpp"

namespace dstc {

using nlohmann::json;

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::dilation_recovery: return "dilation_recovery";
    case TaskKind::ellipse_superres: return "ellipse_superres";
    case TaskKind::checkerboard_probe: return "checkerboard_probe";
  }
  return "?";
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "dilation_recovery") return TaskKind::dilation_recovery;
  if (s == "ellipse_superres") return TaskKind::ellipse_superres;
  if (s == "checkerboard_probe") return TaskKind::checkerboard_probe;
  throw ConfigError("unknown task kind '" + s + "'");
}

void ToyTask::validate() const {
  check_dim(dimension);
  if (channels < 1) throw ConfigError("task channels must be positive");
  if (samples < 1) throw ConfigError("task needs at least one training sample");
  const auto check_spatial = [&](const std::vector<long>& v, const char* name) {
    if (static_cast<int>(v.size()) != dimension) {
      throw ConfigError(std::string(name) + " must list one extent per dimension");
    }
    for (long n : v) {
      if (n < 1) throw ConfigError(std::string(name) + " extents must be positive");
    }
  };
  check_spatial(input_spatial, "input_spatial");
  check_spatial(output_spatial, "output_spatial");
  if (kind == TaskKind::ellipse_superres) {
    for (int d = 0; d < dimension; ++d) {
      if (output_spatial[d] != 2 * input_spatial[d]) {
        throw ConfigError("ellipse_superres output_spatial must be twice input_spatial");
      }
    }
  }
  if (!std::isfinite(true_dilation)) throw ConfigError("true_dilation must be finite");
}

json to_json(const ToyTask& t) {
  return json{{"kind", to_string(t.kind)},
              {"seed", t.seed},
              {"samples", t.samples},
              {"eval_samples", t.eval_samples},
              {"dimension", t.dimension},
              {"channels", t.channels},
              {"input_spatial", t.input_spatial},
              {"output_spatial", t.output_spatial},
              {"true_dilation", t.true_dilation}};
}

ToyTask task_from_json(const json& j) {
  static const std::set<std::string> known{"kind",     "seed",          "samples",        "eval_samples", "dimension",
                                           "channels", "input_spatial", "output_spatial", "true_dilation"};
  if (!j.is_object()) throw ConfigError("task must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown task field '" + key + "'");
  }
  try {
    ToyTask t;
    t.kind = task_kind_from_string(j.value("kind", to_string(t.kind)));
    t.seed = j.value("seed", t.seed);
    t.samples = j.value("samples", t.samples);
    t.eval_samples = j.value("eval_samples", t.eval_samples);
    t.dimension = j.value("dimension", t.dimension);
    t.channels = j.value("channels", t.channels);
    if (t.dimension != 2 && !j.contains("input_spatial")) t.input_spatial.assign(t.dimension, 4);
    if (t.dimension != 2 && !j.contains("output_spatial")) t.output_spatial.assign(t.dimension, 8);
    t.input_spatial = j.value("input_spatial", t.input_spatial);
    t.output_spatial = j.value("output_spatial", t.output_spatial);
    t.true_dilation = j.value("true_dilation", t.true_dilation);
    t.validate();
    return t;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad task field: ") + e.what());
  }
}

DstcConfig dilation_truth_config(const ToyTask& task) {
  DstcConfig c = DstcConfig::for_variant(Variant::dstc_parametrized, task.dimension);
  c.in_channels = task.channels;
  c.out_channels = task.channels;
  c.kernel_size = 3;
  for (int d = 0; d < task.dimension; ++d) {
    c.stride[d] = 2;
    c.padding[d] = 1;
    c.output_padding[d] = 1;
  }
  c.dilation_base = task.true_dilation;
  return c;
}

namespace {

// One independent stream per (task seed, split, sample).
std::mt19937_64 sample_rng(const ToyTask& task, int split, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(task.seed), static_cast<std::uint32_t>(task.seed >> 32),
                    static_cast<std::uint32_t>(task.kind), static_cast<std::uint32_t>(split),
                    static_cast<std::uint32_t>(index)};
  return std::mt19937_64(seq);
}

Tensor uniform_map(std::size_t channels, const Extents& ext, std::mt19937_64& rng) {
  Tensor t(ext.shape_with_channels(channels));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Up to three ellipses per channel in normalized [0,1]^D coordinates,
// 4 samples per axis per pixel, clipped to [0, 1].
Tensor render_ellipses(std::size_t channels, const Extents& ext, std::mt19937_64& rng) {
  constexpr int kSuper = 4;
  std::uniform_real_distribution<double> centre(0.2, 0.8), radius(0.1, 0.35), angle(0.0, 3.141592653589793),
      level(0.4, 1.0);
  std::uniform_int_distribution<int> count(1, 3);
  Tensor img(ext.shape_with_channels(channels));
  const std::size_t npix = static_cast<std::size_t>(ext.count());
  long subs = 1;
  for (int d = 0; d < ext.dim; ++d) subs *= kSuper;
  for (std::size_t c = 0; c < channels; ++c) {
    struct Ellipse {
      RVec centre, radius;
      double cos_t, sin_t, level;
    };
    std::vector<Ellipse> shapes(static_cast<std::size_t>(count(rng)));
    for (auto& e : shapes) {
      for (int d = 0; d < ext.dim; ++d) {
        e.centre[d] = centre(rng);
        e.radius[d] = radius(rng);
      }
      const double th = angle(rng);
      e.cos_t = std::cos(th);
      e.sin_t = std::sin(th);
      e.level = level(rng);
    }
    for (std::size_t i = 0; i < npix; ++i) {
      const IVec p = ext.unflat(static_cast<long>(i));
      double acc = 0.0;
      for (long s = 0; s < subs; ++s) {
        RVec u{0.0, 0.0, 0.0};
        long rem = s;
        for (int d = ext.dim - 1; d >= 0; --d) {
          u[d] = (static_cast<double>(p[d]) + (static_cast<double>(rem % kSuper) + 0.5) / kSuper) /
                 static_cast<double>(ext.n[d]);
          rem /= kSuper;
        }
        double v = 0.0;
        for (const auto& e : shapes) {
          RVec r{0.0, 0.0, 0.0};
          for (int d = 0; d < ext.dim; ++d) r[d] = u[d] - e.centre[d];
          // rotation in the first two axes only
          const double a = e.cos_t * r[0] + e.sin_t * r[1];
          const double b = -e.sin_t * r[0] + e.cos_t * r[1];
          r[0] = a;
          r[1] = b;
          double rr = 0.0;
          for (int d = 0; d < ext.dim; ++d) rr += (r[d] / e.radius[d]) * (r[d] / e.radius[d]);
          if (rr <= 1.0) v += e.level;
        }
        acc += std::min(v, 1.0);
      }
      img[c * npix + i] = acc / static_cast<double>(subs);
    }
  }
  return img;
}

Tensor box_downsample2(const Tensor& y, const Extents& in) {
  const Extents out = Extents::of_feature_map(y.shape());
  const std::size_t channels = y.extent(0);
  Tensor x(in.shape_with_channels(channels));
  const std::size_t nin = static_cast<std::size_t>(in.count());
  const std::size_t nout = static_cast<std::size_t>(out.count());
  const double inv = 1.0 / static_cast<double>(1L << in.dim);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < nout; ++i) {
      IVec p = out.unflat(static_cast<long>(i));
      for (int d = 0; d < in.dim; ++d) p[d] /= 2;
      x[c * nin + static_cast<std::size_t>(in.flat(p))] += inv * y[c * nout + i];
    }
  }
  return x;
}

Sample make_sample(const ToyTask& task, int split, std::size_t index, const Extents& in, const Extents& out,
                   const Dataset& ds) {
  std::mt19937_64 rng = sample_rng(task, split, index);
  Sample s;
  switch (task.kind) {
    case TaskKind::dilation_recovery:
      s.input = uniform_map(task.channels, in, rng);
      s.target = forward(s.input, *ds.truth_params, *ds.truth_config);
      break;
    case TaskKind::ellipse_superres:
      s.target = render_ellipses(task.channels, out, rng);
      s.input = box_downsample2(s.target, in);
      break;
    case TaskKind::checkerboard_probe:
      s.input = Tensor(in.shape_with_channels(task.channels));
      s.input.fill(1.0);
      s.target = Tensor(out.shape_with_channels(task.channels));
      s.target.fill(1.0);
      break;
  }
  return s;
}

}  // namespace

Dataset gen_task(const ToyTask& task) {
  task.validate();
  const Extents in = Extents::from_vector(task.input_spatial);
  const Extents out = Extents::from_vector(task.output_spatial);
  Dataset ds;
  if (task.kind == TaskKind::dilation_recovery) {
    DstcConfig truth = dilation_truth_config(task);
    if (truth.output_extents(in) != out) {
      throw ConfigError("dilation_recovery output_spatial must be " + shape_str(truth.output_extents(in).shape_with_channels(task.channels)) +
                        " for the given input_spatial");
    }
    ds.truth_params = init_layer(truth, task.seed ^ 0x9e3779b97f4a7c15ULL);
    ds.truth_config = std::move(truth);
  }
  for (std::size_t i = 0; i < task.samples; ++i) ds.train.push_back(make_sample(task, 0, i, in, out, ds));
  for (std::size_t i = 0; i < task.eval_samples; ++i) ds.eval.push_back(make_sample(task, 1, i, in, out, ds));
  return ds;
}

std::string to_string(OptimAlgorithm a) { return a == OptimAlgorithm::sgd ? "sgd" : "adam"; }

namespace {

std::vector<const Tensor*> grads_in_order(const GradBundle& g) {
  std::vector<const Tensor*> out{&g.d_w, &g.d_bias};
  for (const auto* t : {&g.d_offset_head, &g.d_score_head, &g.d_compress, &g.d_expand}) {
    if (t->has_value()) out.push_back(&**t);
  }
  return out;
}

}  // namespace

void OptimState::step(LayerParams& params, const GradBundle& grads) {
  auto named = params.named();
  const auto g = grads_in_order(grads);
  if (g.size() != named.size()) throw ShapeError("optimizer: gradient groups do not match parameters");
  if (m.empty()) {
    for (const auto& [_, p] : named) {
      m.push_back(zeros(p->shape()));
      v.push_back(zeros(p->shape()));
    }
  }
  if (m.size() != named.size()) throw ShapeError("optimizer: moment count does not match parameters");
  ++t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t k = 0; k < named.size(); ++k) {
    Tensor& p = *named[k].second;
    const Tensor& gk = *g[k];
    require_same_shape(p, gk, "optimizer step");
    require_same_shape(p, m[k], "optimizer moments");
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (algorithm == OptimAlgorithm::sgd) {
        p[i] -= lr * gk[i];
        continue;
      }
      m[k][i] = beta1 * m[k][i] + (1.0 - beta1) * gk[i];
      v[k][i] = beta2 * v[k][i] + (1.0 - beta2) * gk[i] * gk[i];
      p[i] -= lr * (m[k][i] / c1) / (std::sqrt(v[k][i] / c2) + epsilon);
    }
  }
}

json to_json(const OptimState& o) {
  return json{{"algorithm", to_string(o.algorithm)},
              {"lr", o.lr},
              {"beta1", o.beta1},
              {"beta2", o.beta2},
              {"epsilon", o.epsilon}};
}

OptimState optim_from_json(const json& j) {
  static const std::set<std::string> known{"algorithm", "lr", "beta1", "beta2", "epsilon"};
  if (!j.is_object()) throw ConfigError("optimizer must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown optimizer field '" + key + "'");
  }
  try {
    OptimState o;
    const std::string algo = j.value("algorithm", std::string("adam"));
    if (algo == "sgd") {
      o.algorithm = OptimAlgorithm::sgd;
    } else if (algo != "adam") {
      throw ConfigError("unknown optimizer algorithm '" + algo + "'");
    }
    o.lr = j.value("lr", o.lr);
    o.beta1 = j.value("beta1", o.beta1);
    o.beta2 = j.value("beta2", o.beta2);
    o.epsilon = j.value("epsilon", o.epsilon);
    if (!(o.lr >= 0.0) || !(o.beta1 >= 0.0 && o.beta1 < 1.0) || !(o.beta2 >= 0.0 && o.beta2 < 1.0) ||
        !(o.epsilon > 0.0)) {
      throw ConfigError("optimizer settings out of range");
    }
    return o;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad optimizer field: ") + e.what());
  }
}

double mse(const Tensor& y, const Tensor& target) {
  require_same_shape(y, target, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y[i] - target[i];
    s += d * d;
  }
  return s / static_cast<double>(y.size());
}

double evaluate(const DstcConfig& cfg, const LayerParams& params, const std::vector<Sample>& samples) {
  if (samples.empty()) return 0.0;
  double s = 0.0;
  for (const auto& smp : samples) s += mse(forward(smp.input, params, cfg), smp.target);
  return s / static_cast<double>(samples.size());
}

TrainResult train(const DstcConfig& cfg, const Dataset& data, OptimState opt, const TrainOptions& opts) {
  cfg.validate();
  if (data.train.empty()) throw ConfigError("training set is empty");
  for (const auto& smp : data.train) {
    const Extents in = Extents::of_feature_map(smp.input.shape());
    if (smp.input.extent(0) != cfg.in_channels || in.dim != cfg.dimension) {
      throw ConfigError("task input " + shape_str(smp.input.shape()) + " does not fit the layer");
    }
    const Shape want = cfg.output_extents(in).shape_with_channels(cfg.out_channels);
    if (want != smp.target.shape()) {
      throw ConfigError("task target " + shape_str(smp.target.shape()) + " does not match layer output " +
                        shape_str(want));
    }
  }
  TrainResult r;
  r.params = opts.init ? *opts.init : init_layer(cfg, opts.seed);
  check_params(r.params, cfg);
  const std::size_t every = opts.eval_every ? opts.eval_every : std::max<std::size_t>(1, opts.steps / 20);
  const auto t0 = std::chrono::steady_clock::now();
  const auto elapsed = [&] {
    if (!opts.record_wall_time) return 0.0;
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  };
  const double scale = 1.0 / static_cast<double>(data.train.size());
  for (std::size_t step = 0; step < opts.steps; ++step) {
    GradBundle total;
    double loss = 0.0;
    for (std::size_t b = 0; b < data.train.size(); ++b) {
      const Sample& smp = data.train[b];
      const LayerTrace tr = forward_traced(smp.input, r.params, cfg);
      loss += scale * mse(tr.output, smp.target);
      Tensor up(tr.output.shape());
      const double k = 2.0 * scale / static_cast<double>(up.size());
      for (std::size_t i = 0; i < up.size(); ++i) up[i] = k * (tr.output[i] - smp.target[i]);
      GradBundle g = backward(smp.input, r.params, cfg, up, tr);
      if (b == 0) {
        total = std::move(g);
        continue;
      }
      total.d_w += g.d_w;
      total.d_bias += g.d_bias;
      if (g.d_offset_head) *total.d_offset_head += *g.d_offset_head;
      if (g.d_score_head) *total.d_score_head += *g.d_score_head;
      if (g.d_compress) *total.d_compress += *g.d_compress;
      if (g.d_expand) *total.d_expand += *g.d_expand;
    }
    if (!std::isfinite(loss)) throw NumericError("training loss became non-finite at step " + std::to_string(step));
    if (step % every == 0) r.history.push_back({step, loss, elapsed()});
    opt.step(r.params, total);
  }
  r.final_train_loss = evaluate(cfg, r.params, data.train);
  r.final_eval_loss = evaluate(cfg, r.params, data.eval);
  r.history.push_back({opts.steps, r.final_train_loss, elapsed()});
  return r;
}

TrainResult train(const DstcConfig& cfg, const ToyTask& task, OptimState opt, std::size_t steps, std::uint64_t seed) {
  TrainOptions o;
  o.steps = steps;
  o.seed = seed;
  return train(cfg, gen_task(task), std::move(opt), o);
}

double highfreq_energy(const Tensor& y, int stride) {
  if (stride < 2) throw ConfigError("highfreq_energy needs stride >= 2");
  const Extents ext = Extents::of_feature_map(y.shape());
  const std::size_t channels = y.extent(0);
  const std::size_t npix = static_cast<std::size_t>(ext.count());
  Extents blocks = ext;
  for (int d = 0; d < ext.dim; ++d) blocks.n[d] = (ext.n[d] + stride - 1) / stride;
  const std::size_t nblk = static_cast<std::size_t>(blocks.count());
  std::vector<double> sum(nblk), cnt(nblk);
  std::vector<std::size_t> owner(npix);
  for (std::size_t i = 0; i < npix; ++i) {
    IVec p = ext.unflat(static_cast<long>(i));
    for (int d = 0; d < ext.dim; ++d) p[d] /= stride;
    owner[i] = static_cast<std::size_t>(blocks.flat(p));
  }
  double energy = 0.0;
  for (std::size_t c = 0; c < channels; ++c) {
    std::fill(sum.begin(), sum.end(), 0.0);
    std::fill(cnt.begin(), cnt.end(), 0.0);
    for (std::size_t i = 0; i < npix; ++i) {
      sum[owner[i]] += y[c * npix + i];
      cnt[owner[i]] += 1.0;
    }
    for (std::size_t i = 0; i < npix; ++i) {
      const double d = y[c * npix + i] - sum[owner[i]] / cnt[owner[i]];
      energy += d * d;
    }
  }
  return energy / static_cast<double>(y.size());
}

double checkerboard_energy(const DstcConfig& cfg, const std::vector<long>& input_spatial, std::uint64_t seed) {
  const Extents in = Extents::from_vector(input_spatial);
  Tensor x(in.shape_with_channels(cfg.in_channels));
  x.fill(1.0);
  const LayerParams params = init_layer(cfg, seed);
  return highfreq_energy(forward(x, params, cfg), static_cast<int>(cfg.stride[0]));
}

std::string history_csv(const std::vector<HistoryRow>& history) {
  std::ostringstream os;
  os << "step,loss,wall_ms\n" << std::setprecision(17);
  for (const auto& h : history) os << h.step << ',' << h.loss << ',' << h.wall_ms << '\n';
  return os.str();
}

}  // namespace dstc
