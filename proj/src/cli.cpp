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


#include "dstc/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "dstc/autodiff.hpp"
#include "dstc/errors.hpp"
#include "dstc/harness.hpp"
#include "dstc/layer.hpp"
#include "dstc/parallel.hpp"

namespace dstc {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

// Sibling blocks of a run file, checked for unknown keys.
json block(const json& j, const char* name, const std::set<std::string>& known) {
  if (!j.contains(name)) return json::object();
  const json& b = j[name];
  if (!b.is_object()) throw ConfigError(std::string(name) + " must be a JSON object");
  for (const auto& [key, _] : b.items()) {
    if (!known.count(key)) throw ConfigError("unknown " + std::string(name) + " field '" + key + "'");
  }
  return b;
}

template <class T>
T field(const json& b, const char* key, T fallback) {
  try {
    return b.value(key, fallback);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad field '") + key + "': " + e.what());
  }
}

/// Output directory plus the record of what a run wrote.
class RunDir {
 public:
  RunDir(std::string command, const std::string& out) : command_(std::move(command)), dir_(out), started_(utc_now()) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec || !fs::is_directory(dir_)) throw IoError("cannot create output directory '" + out + "'");
  }

  void write(const std::string& name, const std::string& content) {
    std::ofstream os(dir_ / name, std::ios::binary);
    os << content;
    if (!os) throw IoError("cannot write '" + (dir_ / name).string() + "'");
    outputs_.push_back(name);
  }
  void write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }
  fs::path path(const std::string& name) {
    outputs_.push_back(name);
    return dir_ / name;
  }

  void finish(const json& config, const json& seeds) {
    json m;
    m["command"] = command_;
    m["tool_version"] = kToolVersion;
    m["config"] = config;
    m["seeds"] = seeds;
    m["threads"] = default_thread_count();
    m["started"] = started_;
    m["finished"] = utc_now();
    m["outputs"] = outputs_;
    std::ofstream os(dir_ / "manifest.json");
    os << m.dump(2) << "\n";
    if (!os) throw IoError("cannot write manifest");
  }

 private:
  std::string command_;
  fs::path dir_;
  std::string started_;
  std::vector<std::string> outputs_;
};

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// ---------------------------------------------------------------------------

int cmd_gradcheck(const std::string& config_path, std::optional<std::uint64_t> seed_flag,
                  std::optional<double> tol_flag, const std::string& corrupt, const std::string& out) {
  const json file = read_json_file(config_path);
  const DstcConfig cfg = config_from_json(file);
  cfg.validate();
  const json gb = block(file, "gradcheck", {"seed", "tol", "h", "head_scale"});
  const std::uint64_t seed = seed_flag.value_or(field<std::uint64_t>(gb, "seed", 0));
  GradcheckTolerances tol;
  tol.h = field(gb, "h", tol.h);
  if (gb.contains("tol")) tol.linear = tol.nonlinear = field(gb, "tol", 0.0);
  if (tol_flag) tol.linear = tol.nonlinear = *tol_flag;
  if (!(tol.linear > 0.0) || !(tol.h > 0.0)) throw ConfigError("tolerance and step must be positive");
  GradcheckOptions opts;
  opts.head_scale = field(gb, "head_scale", opts.head_scale);
  if (file.contains("input_spatial")) opts.input_spatial = field(file, "input_spatial", std::vector<long>{});
  if (!corrupt.empty()) opts.corrupt = param_group_from_string(corrupt);

  RunDir run("gradcheck", out);
  const GradcheckReport r = gradcheck(cfg, seed, tol, opts);
  run.write_json("gradcheck.json", to_json(r));
  json resolved = to_json(cfg);
  resolved["input_spatial"] = r.input_spatial;
  resolved["gradcheck"] = {{"seed", seed}, {"h", tol.h}, {"tol_linear", tol.linear}, {"tol_nonlinear", tol.nonlinear}};
  run.finish(resolved, {{"gradcheck", seed}});
  for (const auto& g : r.groups) {
    std::cout << std::left << std::setw(12) << g.name << " max_rel_err " << std::setw(12) << g.max_rel_err << " tol "
              << g.tol << (g.pass ? "  pass" : "  FAIL") << "\n";
  }
  std::cout << "gradcheck " << (r.pass ? "passed" : "FAILED") << "\n";
  return r.pass ? kExitOk : kExitCheckFailed;
}

// ---------------------------------------------------------------------------

int cmd_params(const std::string& config_path, bool all_variants, const std::string& out) {
  DstcConfig base;
  if (!config_path.empty()) base = config_from_json(read_json_file(config_path));
  base.validate();
  std::vector<DstcConfig> rows{base};
  if (all_variants) {
    rows.clear();
    for (Variant v : {Variant::tc, Variant::dstc_bilinear, Variant::dstc_gaussian_dense, Variant::dstc_parametrized}) {
      DstcConfig c = DstcConfig::for_variant(v, base.dimension);
      c.in_channels = base.in_channels;
      c.out_channels = base.out_channels;
      c.kernel_size = base.kernel_size;
      c.module_channels = base.module_channels;
      if (c.gaussian() && !base.gaussian_variances.empty()) c.gaussian_variances = base.gaussian_variances;
      c.K_sigma = base.K_sigma;
      rows.push_back(c);
    }
  }
  RunDir run("params", out);
  json table = json::array();
  bool ok = true;
  std::cout << std::left << std::setw(22) << "variant" << std::right << std::setw(12) << "w" << std::setw(12)
            << "offsets" << std::setw(12) << "scores" << std::setw(12) << "plumbing" << std::setw(12) << "total"
            << std::setw(10) << "census" << "\n";
  for (const DstcConfig& c : rows) {
    const ParamBreakdown b = parameter_count(c);
    const ParamBreakdown census = parameter_census(init_layer(c, 0), c);
    const bool match = census == b;
    ok = ok && match;
    table.push_back({{"variant", to_string(c.variant)},
                     {"config", to_json(c)},
                     {"breakdown", to_json(b)},
                     {"census", to_json(census)},
                     {"census_matches", match}});
    std::cout << std::left << std::setw(22) << to_string(c.variant) << std::right << std::setw(12) << b.w
              << std::setw(12) << b.offsets << std::setw(12) << b.scores << std::setw(12) << b.plumbing
              << std::setw(12) << b.total << std::setw(10) << (match ? "ok" : "MISMATCH") << "\n";
  }
  run.write_json("params.json", {{"rows", table}, {"pass", ok}});
  run.finish(to_json(base), json::object());
  return ok ? kExitOk : kExitCheckFailed;
}

// ---------------------------------------------------------------------------

struct TrainSetup {
  DstcConfig cfg;
  ToyTask task;
  OptimState opt;
  TrainOptions opts;
};

TrainSetup train_setup(const std::string& config_path, const std::string& task_path,
                       std::optional<std::size_t> steps, std::optional<std::uint64_t> seed,
                       std::optional<double> lr, std::size_t default_steps) {
  const json file = read_json_file(config_path);
  TrainSetup s;
  s.cfg = config_from_json(file);
  s.cfg.validate();
  if (!task_path.empty()) {
    s.task = task_from_json(read_json_file(task_path));
  } else if (file.contains("task")) {
    s.task = task_from_json(file["task"]);
  } else {
    throw ConfigError("no task: pass a task file or add a \"task\" block to the config");
  }
  if (file.contains("optimizer")) s.opt = optim_from_json(file["optimizer"]);
  const json tb = block(file, "train", {"steps", "seed", "eval_every"});
  s.opts.steps = steps.value_or(field<std::size_t>(tb, "steps", default_steps));
  s.opts.seed = seed.value_or(field<std::uint64_t>(tb, "seed", 0));
  s.opts.eval_every = field<std::size_t>(tb, "eval_every", 0);
  if (seed) s.task.seed = *seed;
  if (lr) {
    if (!(*lr >= 0.0)) throw ConfigError("learning rate must be >= 0");
    s.opt.lr = *lr;
  }
  return s;
}

json resolved_train_config(const TrainSetup& s) {
  json j = to_json(s.cfg);
  j["task"] = to_json(s.task);
  j["optimizer"] = to_json(s.opt);
  j["train"] = {{"steps", s.opts.steps}, {"seed", s.opts.seed}, {"eval_every", s.opts.eval_every}};
  return j;
}

json metrics_json(const DstcConfig& cfg, const TrainResult& r) {
  return {{"variant", to_string(cfg.variant)},
          {"steps", r.history.back().step},
          {"initial_loss", r.history.front().loss},
          {"final_train_loss", r.final_train_loss},
          {"final_eval_loss", r.final_eval_loss}};
}

/// Same geometry and channels, plain transposed convolution.
DstcConfig tc_baseline(const DstcConfig& c) {
  DstcConfig b = DstcConfig::for_variant(Variant::tc, c.dimension);
  b.in_channels = c.in_channels;
  b.out_channels = c.out_channels;
  b.kernel_size = c.kernel_size;
  b.stride = c.stride;
  b.padding = c.padding;
  b.output_padding = c.output_padding;
  b.base_dilation = c.base_dilation;
  b.module_channels = c.module_channels;
  b.skip = c.skip;
  b.chunk_size = c.chunk_size;
  return b;
}

int cmd_train(const std::string& config_path, const std::string& task_path, std::optional<std::size_t> steps,
              std::optional<std::uint64_t> seed, std::optional<double> lr, const std::string& baseline,
              bool wall_time, const std::string& out) {
  TrainSetup s = train_setup(config_path, task_path, steps, seed, lr, 200);
  if (!baseline.empty() && baseline != "tc") throw ConfigError("unknown baseline '" + baseline + "' (only tc)");
  s.opts.record_wall_time = wall_time;
  const Dataset data = gen_task(s.task);
  RunDir run("train", out);
  json seeds{{"train", s.opts.seed}, {"task", s.task.seed}};
  json resolved = resolved_train_config(s);

  const TrainResult r = train(s.cfg, data, s.opt, s.opts);
  if (baseline.empty()) {
    run.write("history.csv", history_csv(r.history));
    run.write_json("metrics.json", metrics_json(s.cfg, r));
    save_params(r.params, run.path("params.bin"), run.path("params.json"));
    std::cout << to_string(s.cfg.variant) << ": loss " << r.history.front().loss << " -> " << r.final_train_loss
              << " (eval " << r.final_eval_loss << ")\n";
  } else {
    const DstcConfig bc = tc_baseline(s.cfg);
    const TrainResult rb = train(bc, data, s.opt, s.opts);
    const std::string main_name = to_string(s.cfg.variant);
    run.write("history_" + main_name + ".csv", history_csv(r.history));
    run.write("history_tc.csv", history_csv(rb.history));
    const double ratio = rb.final_train_loss > 0.0 ? r.final_train_loss / rb.final_train_loss : 0.0;
    run.write_json("summary.json", {{"runs", {metrics_json(s.cfg, r), metrics_json(bc, rb)}},
                                    {"final_loss_ratio", ratio},
                                    {"ratio_definition", main_name + " final_train_loss / tc final_train_loss"}});
    resolved["baseline"] = to_json(bc);
    std::cout << main_name << " final loss " << r.final_train_loss << ", tc final loss " << rb.final_train_loss
              << ", ratio " << ratio << "\n";
  }
  run.finish(resolved, seeds);
  return kExitOk;
}

// ---------------------------------------------------------------------------

std::vector<double> parse_number_list(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double x = 0.0;
    try {
      x = std::stod(item, &used);
    } catch (const std::exception&) {
      throw ConfigError("'" + item + "' is not a number");
    }
    if (used != item.size()) throw ConfigError("'" + item + "' is not a number");
    v.push_back(x);
  }
  if (v.empty()) throw ConfigError("empty value '" + s + "'");
  return v;
}

int cmd_sweep(const std::string& config_path, const std::string& axis, std::vector<std::string> values,
              std::optional<std::size_t> steps, std::optional<std::uint64_t> seed, const std::string& out) {
  if (axis != "K_sigma" && axis != "variances") throw ConfigError("--axis must be K_sigma or variances");
  std::erase(values, std::string());
  if (values.empty()) throw ConfigError("--values needs at least one setting");
  TrainSetup s = train_setup(config_path, "", steps, seed, std::nullopt, 50);
  if (!s.cfg.gaussian()) {
    throw ConfigError("axis " + axis + " needs a Gaussian interpolation kernel; variant " + to_string(s.cfg.variant) +
                      " has none");
  }
  // Validate every setting before any training.
  std::vector<DstcConfig> settings;
  for (const std::string& v : values) {
    DstcConfig c = s.cfg;
    const std::vector<double> nums = parse_number_list(v);
    if (axis == "K_sigma") {
      if (nums.size() != 1 || nums[0] != std::floor(nums[0]) || nums[0] < 1) {
        throw ConfigError("K_sigma value '" + v + "' must be a positive integer");
      }
      c.K_sigma = static_cast<int>(nums[0]);
    } else {
      c.gaussian_variances = nums;
    }
    c.validate();
    settings.push_back(c);
  }
  const Dataset data = gen_task(s.task);
  RunDir run("sweep", out);
  std::ostringstream csv;
  csv << "axis,setting,final_train_loss,final_eval_loss\n";
  for (std::size_t i = 0; i < settings.size(); ++i) {
    const TrainResult r = train(settings[i], data, s.opt, s.opts);
    csv << axis << ",\"" << values[i] << "\"," << fmt(r.final_train_loss) << ',' << fmt(r.final_eval_loss) << '\n';
    std::cout << axis << " = " << values[i] << ": final loss " << r.final_train_loss << "\n";
  }
  run.write("sweep.csv", csv.str());
  json resolved = resolved_train_config(s);
  resolved["sweep"] = {{"axis", axis}, {"values", values}};
  run.finish(resolved, {{"train", s.opts.seed}, {"task", s.task.seed}});
  return kExitOk;
}

// ---------------------------------------------------------------------------

/// Deterministic grid: every variant, both dimensions, K 1..3, stride 1..2,
/// each with seeded weights, inputs and non-trivial heads.
int cmd_oracle_compare(std::uint64_t seed, const std::string& out) {
  RunDir run("oracle-compare", out);
  constexpr double kTol = 1e-12;
  json cases = json::array();
  bool ok = true;
  double worst = 0.0;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto fill = [&](Tensor& t, double scale) {
    for (double& v : t.data()) v = scale * u(rng);
  };
  for (Variant v : {Variant::tc, Variant::dstc_bilinear, Variant::dstc_gaussian_dense, Variant::dstc_parametrized}) {
    for (int dim = 2; dim <= 3; ++dim) {
      for (int k = 1; k <= 3; ++k) {
        for (long stride = 1; stride <= 2; ++stride) {
          DstcConfig c = DstcConfig::for_variant(v, dim);
          c.in_channels = 2;
          c.out_channels = 2;
          c.kernel_size = k;
          for (int d = 0; d < dim; ++d) {
            c.stride[d] = stride;
            c.output_padding[d] = stride - 1;
          }
          const Extents in = Extents::from_vector(std::vector<long>(static_cast<std::size_t>(dim), dim == 2 ? 4 : 3));
          LayerParams p = init_layer(c, rng());
          fill(p.kernel.bias, 1.0);
          if (p.offset_head) fill(p.offset_head->weights, 0.3);
          if (p.score_head) fill(p.score_head->weights, 1.0);
          Tensor x(in.shape_with_channels(c.in_channels));
          fill(x, 1.0);
          const LayerTrace t = forward_traced(x, p, c);
          const GaussianBank bank = c.bank();
          Interpolation ip = BilinearKernel{};
          if (c.gaussian()) ip = GaussianKernel{&t.scores, &bank};
          const Tensor ref = scatter_oracle(t.scatter_input, p.kernel, c.location_map(), c.ref_grid(), t.offsets, ip);
          const double diff = max_abs_diff(t.scatter_output, ref);
          worst = std::max(worst, diff);
          ok = ok && diff < kTol;
          cases.push_back({{"variant", to_string(v)},
                           {"dimension", dim},
                           {"kernel_size", k},
                           {"stride", stride},
                           {"max_abs_diff", diff},
                           {"pass", diff < kTol}});
        }
      }
    }
  }
  run.write_json("oracle.json", {{"tolerance", kTol}, {"max_abs_diff", worst}, {"cases", cases}, {"pass", ok}});
  run.finish(json::object(), {{"oracle", seed}});
  std::cout << cases.size() << " configurations, worst max abs diff " << worst << (ok ? ", pass" : ", FAIL") << "\n";
  return ok ? kExitOk : kExitCheckFailed;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Deformably-scaled transposed convolution toolkit", "dstc"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  std::string out = ".";
  std::string config;
  std::string task;
  std::optional<std::uint64_t> seed;
  std::optional<double> tol;
  std::optional<double> lr;
  std::optional<std::size_t> steps;
  std::string corrupt;
  std::string baseline;
  bool wall_time = false;
  bool all_variants = false;
  std::string axis;
  std::vector<std::string> values;

  auto* gc = app.add_subcommand("gradcheck", "Analytic gradients versus central differences");
  gc->add_option("config", config, "Layer configuration (JSON)")->required();
  gc->add_option("--seed", seed, "Random draw seed");
  gc->add_option("--tol", tol, "Relative-error tolerance for every group");
  gc->add_option("--corrupt-gradient", corrupt, "Test hook: corrupt one group's gradient")->group("");
  gc->add_option("--out", out, "Output directory");

  auto* pc = app.add_subcommand("params", "Parameter breakdown per layer-table column");
  pc->add_option("config", config, "Layer configuration (JSON); defaults when omitted");
  pc->add_flag("--all-variants", all_variants, "One row per variant with this geometry");
  pc->add_option("--out", out, "Output directory");

  auto* tr = app.add_subcommand("train", "Train on a synthetic task");
  tr->add_option("config", config, "Run configuration (JSON)")->required();
  tr->add_option("task", task, "Task file (JSON); else the config's task block");
  tr->add_option("--steps", steps, "Optimizer steps");
  tr->add_option("--seed", seed, "Seed for initialization and task generation");
  tr->add_option("--lr", lr, "Learning rate");
  tr->add_option("--baseline", baseline, "Also train this baseline (tc)");
  tr->add_flag("--wall-time", wall_time, "Record elapsed milliseconds in the history");
  tr->add_option("--out", out, "Output directory");

  auto* sw = app.add_subcommand("sweep", "Interpolation-kernel ablation sweep");
  sw->add_option("config", config, "Run configuration (JSON)")->required();
  sw->add_option("--axis", axis, "K_sigma or variances")->required();
  sw->add_option("--values", values, "Settings; variance subsets as comma lists")->expected(0, -1);
  sw->add_option("--steps", steps, "Optimizer steps per setting");
  sw->add_option("--seed", seed, "Seed for initialization and task generation");
  sw->add_option("--out", out, "Output directory");

  std::uint64_t oracle_seed = 0;
  auto* oc = app.add_subcommand("oracle-compare", "Scatter engine versus the naive oracle");
  oc->add_option("--seed", oracle_seed, "Seed for weights and inputs");
  oc->add_option("--out", out, "Output directory");

  std::vector<std::string> argv_store{"dstc"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gc->parsed()) return cmd_gradcheck(config, seed, tol, corrupt, out);
    if (pc->parsed()) return cmd_params(config, all_variants, out);
    if (tr->parsed()) return cmd_train(config, task, steps, seed, lr, baseline, wall_time, out);
    if (sw->parsed()) return cmd_sweep(config, axis, values, steps, seed, out);
    if (oc->parsed()) return cmd_oracle_compare(oracle_seed, out);
  } catch (const NumericError& e) {
    std::cerr << "dstc: " << e.what() << "\n";
    return kExitCheckFailed;
  } catch (const Error& e) {
    std::cerr << "dstc: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace dstc
