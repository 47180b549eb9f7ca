// Copyright 2026 The thermofield Authors
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

// Command-line front end: train, render, eval, synth, precision.
//
// Exit codes: 0 success, 2 usage, 3 data error, 4 numeric failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <CLI11.hpp>

#include "thermofield/dataset.hpp"
#include "thermofield/image_io.hpp"
#include "thermofield/trainer.hpp"

namespace fs = std::filesystem;
using namespace thermofield;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

// Writes everything to two streams.
class TeeBuf : public std::streambuf {
 public:
  TeeBuf(std::streambuf* a, std::streambuf* b) : a_(a), b_(b) {}

 protected:
  int overflow(int c) override {
    if (traits_type::eq_int_type(c, traits_type::eof())) return traits_type::not_eof(c);
    const auto ch = traits_type::to_char_type(c);
    const bool ok = a_->sputc(ch) != traits_type::eof() &&
                    (b_ == nullptr || b_->sputc(ch) != traits_type::eof());
    return ok ? c : traits_type::eof();
  }
  int sync() override {
    const int r1 = a_->pubsync();
    const int r2 = b_ ? b_->pubsync() : 0;
    return r1 == 0 && r2 == 0 ? 0 : -1;
  }

 private:
  std::streambuf* a_;
  std::streambuf* b_;
};

struct TrainArgs {
  fs::path scene, out = "run", config, resume;
  std::string mode, preset = "paper";
  std::optional<std::uint64_t> seed;
  std::optional<int> iterations;
  bool no_warmup = false;
  bool mask_invalid = false;
  bool quiet = false;
};

struct RenderArgs {
  fs::path checkpoint, scene, out = "renders", pose_file;
  std::string poses = "test";
  int orbit_n = 12;
  bool jitter = false;
  std::uint64_t seed = 0;
};

struct EvalArgs {
  fs::path renders, scene, out;
  std::string roi_side = "auto";
  std::string mode;
  bool mask_invalid = false;
  bool no_error_maps = false;
};

struct SynthArgs {
  std::string preset = "hot-sphere";
  fs::path out = "scene";
  std::uint64_t seed = 0;
  std::optional<int> views;
  std::optional<int> size;
  std::optional<double> noise;
};

struct PrecisionArgs {
  fs::path scene;
  std::vector<fs::path> files;
  std::optional<double> t_min, t_max;
};

int run_train(const TrainArgs& a) {
  TrainConfig cfg = TrainConfig::preset(a.preset);
  if (!a.config.empty()) cfg = TrainConfig::from_file(a.config, cfg);
  if (!a.mode.empty()) cfg.field.mode = parse_field_mode(a.mode);
  if (a.seed) cfg.seed = *a.seed;
  if (a.iterations) cfg.iterations = *a.iterations;
  if (a.no_warmup) cfg.warmup_iterations = 0;
  if (a.mask_invalid) cfg.mask_invalid = true;
  cfg.validate();

  LoadOptions lo;
  lo.mask_invalid = cfg.mask_invalid;
  const SceneDataset data = load_scene(a.scene, lo);
  fs::create_directories(a.out);
  {
    std::ofstream c(a.out / "config.json");
    c << cfg.to_json() << '\n';
  }
  std::ofstream file(a.out / "train_log.jsonl");
  TeeBuf tee(file.rdbuf(), a.quiet ? nullptr : std::cout.rdbuf());
  std::ostream log(&tee);

  if (!a.resume.empty()) {
    Trainer t = Trainer::resume(data, a.resume, &std::cerr);
    if (a.iterations && *a.iterations != t.config().iterations) {
      std::cerr << "note: --iterations is ignored on resume; the checkpoint schedule is kept\n";
    }
    t.run(a.out, &log);
  } else {
    Trainer t(data, cfg);
    t.run(a.out, &log);
  }
  return 0;
}

int run_render(const RenderArgs& a) {
  PoseSet poses;
  std::optional<SceneDataset> data;
  if (a.poses == "file") {
    if (a.pose_file.empty()) throw ConfigError("--poses file needs --pose-file");
    poses = poses_from_file(a.pose_file);
  } else if (a.poses == "test" || a.poses == "train" || a.poses == "orbit") {
    if (a.scene.empty()) throw ConfigError("--poses " + a.poses + " needs --scene");
    data = load_scene(a.scene);
    poses = a.poses == "test"    ? test_poses(*data)
            : a.poses == "train" ? train_poses(*data)
                                 : orbit_poses(*data, a.orbit_n);
  } else {
    throw ConfigError("unknown pose source '" + a.poses + "' (test, train, file, orbit)");
  }
  const CheckpointData ck = load_checkpoint(a.checkpoint);
  if (data && ck.manifest_digest != data->digest) {
    std::cerr << "warning: checkpoint was trained on a different scene manifest\n";
  }
  const NeuralField<float> field(ck.model);
  RenderOptions ro;
  ro.sampler = ck.config.sampler;
  ro.jitter = a.jitter;
  ro.seed = a.seed;
  write_renders(a.out, field, poses, ro);
  std::cout << "rendered " << poses.ids.size() << " views to " << a.out.string() << '\n';
  return 0;
}

int run_eval(const EvalArgs& a) {
  EvalOptions eo;
  eo.roi_side = parse_roi_side(a.roi_side);
  eo.load.mask_invalid = a.mask_invalid;
  eo.write_error_maps = !a.no_error_maps;
  const SceneDataset gt = load_scene(a.scene, eo.load);
  std::vector<std::string> unmatched;
  MetricsReport report = evaluate_renders(a.renders, gt, eo, &unmatched);
  report.mode = a.mode;
  const fs::path out = a.out.empty() ? a.renders : a.out;
  fs::create_directories(out);
  std::ofstream(out / "metrics.json") << report.to_json() << '\n';
  const std::string table = report.to_table();
  std::ofstream(out / "metrics.txt") << table;
  std::cout << table;
  if (!unmatched.empty()) {
    std::cerr << "unmatched renders (no ground-truth frame):";
    for (const auto& id : unmatched) std::cerr << ' ' << id;
    std::cerr << '\n';
    return kExitData;
  }
  return 0;
}

int run_synth(const SynthArgs& a) {
  SynthSceneSpec spec = SynthSceneSpec::preset(a.preset);
  if (a.views) spec.num_cameras = *a.views;
  if (a.size) spec.width = spec.height = *a.size;
  if (a.noise) spec.thermal_noise_std = *a.noise;
  generate_synthetic_scene(spec, a.out, a.seed);
  std::cout << "wrote " << spec.num_cameras << " views to " << a.out.string() << '\n';
  return 0;
}

int run_precision(const PrecisionArgs& a) {
  std::vector<ThermalMap> stack;
  if (!a.scene.empty()) {
    const SceneDataset data = load_scene(a.scene);
    for (const auto& f : data.frames) stack.push_back(f.thermal);
  }
  for (const auto& p : a.files) {
    if (p.extension() == ".csv") {
      Image<float> g = read_csv_grid(p);
      ThermalMap m(g.width, g.height);
      m.celsius = std::move(g);
      stack.push_back(std::move(m));
    } else {
      if (!a.t_min || !a.t_max) throw ConfigError("16-bit PNG input needs --t-min and --t-max");
      stack.push_back(decode_thermal_map(read_png16(p), *a.t_min, *a.t_max));
    }
  }
  if (stack.size() < 2) throw ConfigError("precision needs at least two thermal maps");
  const double p = estimate_precision(stack);
  std::cout << "{\"frames\": " << stack.size() << ", \"precision_c\": " << p << "}\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Training allocates and frees the same large tape buffers every step;
  // keep them in the heap instead of round-tripping through mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"thermofield: joint RGB and thermal radiance fields"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a field on a scene directory");
  train->add_option("--scene", ta.scene, "Scene directory with manifest.json")->required();
  train->add_option("--out", ta.out, "Output directory for logs and checkpoints");
  train->add_option("--mode", ta.mode, "thermo, rgb, thermal-only or concat4");
  train->add_option("--config", ta.config, "JSON config overriding the preset");
  train->add_option("--preset", ta.preset, "paper or synth-small");
  train->add_option("--seed", ta.seed, "Random seed");
  train->add_option("--iterations", ta.iterations, "Number of optimiser steps");
  train->add_option("--resume", ta.resume, "Continue from a checkpoint");
  train->add_flag("--no-warmup", ta.no_warmup, "Disable the reduced-lr warmup");
  train->add_flag("--mask-invalid", ta.mask_invalid, "Drop out-of-range thermal pixels");
  train->add_flag("--quiet", ta.quiet, "Log to the output directory only");

  RenderArgs ra;
  auto* render = app.add_subcommand("render", "Render views from a checkpoint");
  render->add_option("--checkpoint", ra.checkpoint, "Checkpoint file")->required();
  render->add_option("--scene", ra.scene, "Scene directory (for test, train and orbit poses)");
  render->add_option("--out", ra.out, "Output directory");
  render->add_option("--poses", ra.poses, "test, train, file or orbit");
  render->add_option("--pose-file", ra.pose_file, "Pose JSON for --poses file");
  render->add_option("--orbit-n", ra.orbit_n, "Number of orbit views");
  render->add_flag("--jitter", ra.jitter, "Stratified jitter while sampling");
  render->add_option("--seed", ra.seed, "Seed for --jitter");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Score renders against a scene");
  eval->add_option("--renders", ea.renders, "Directory written by render")->required();
  eval->add_option("--scene", ea.scene, "Ground-truth scene directory")->required();
  eval->add_option("--out", ea.out, "Report directory (default: the render directory)");
  eval->add_option("--roi-side", ea.roi_side, "auto, above or below");
  eval->add_option("--mode", ea.mode, "Label stored in the report");
  eval->add_flag("--mask-invalid", ea.mask_invalid, "Skip out-of-range thermal pixels");
  eval->add_flag("--no-error-maps", ea.no_error_maps, "Do not write error maps");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic scene");
  synth->add_option("--preset", sa.preset, "hot-sphere or checker-sphere");
  synth->add_option("--out", sa.out, "Output scene directory");
  synth->add_option("--seed", sa.seed, "Seed for sensor noise");
  synth->add_option("--views", sa.views, "Number of cameras");
  synth->add_option("--size", sa.size, "Image width and height");
  synth->add_option("--noise", sa.noise, "Thermal noise std in degrees Celsius");

  PrecisionArgs pa;
  auto* precision = app.add_subcommand("precision", "Estimate thermal sensor precision");
  precision->add_option("--scene", pa.scene, "Use every frame of a scene");
  precision->add_option("files", pa.files, "Thermal maps (.csv in Celsius or 16-bit .png)");
  precision->add_option("--t-min", pa.t_min, "Lower bound for 16-bit input");
  precision->add_option("--t-max", pa.t_max, "Upper bound for 16-bit input");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*train) return run_train(ta);
    if (*render) return run_render(ra);
    if (*eval) return run_eval(ea);
    if (*synth) return run_synth(sa);
    if (*precision) return run_precision(pa);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const TrainingError& e) {
    std::cerr << "numeric failure in '" << e.culprit() << "': " << e.what() << '\n';
    return kExitNumeric;
  } catch (const DomainError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
