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

// Optimisation loop, checkpoints, and the render / eval pipelines used by
// the command-line tool.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "thermofield/autodiff.hpp"
#include "thermofield/dataset.hpp"
#include "thermofield/field.hpp"
#include "thermofield/losses.hpp"
#include "thermofield/metrics.hpp"
#include "thermofield/rendering.hpp"

namespace thermofield {

struct TrainConfig {
  int iterations = 30000;
  int rays_per_batch = 4096;
  double base_lr = 1e-2;
  double final_lr = 1e-3;
  int warmup_iterations = 200;  // steps at warmup_scale * lr; 0 disables
  double warmup_scale = 0.1;
  FieldConfig field{};
  LossWeights loss{};
  SamplerOptions sampler{};
  std::uint64_t seed = 0;
  int eval_every = 0;        // 0 = never
  int checkpoint_every = 0;  // 0 = only at the end
  int log_every = 100;
  int chunk_rays = 256;      // rays per parallel work item
  bool mask_invalid = false;
  std::vector<std::string> frozen_groups;  // gradients zeroed before each update

  void validate() const;
  /// "paper" (the defaults) or "synth-small" (desk scale).
  static TrainConfig preset(const std::string& name);
  std::string to_json() const;
  /// Keys present in `text` override `base`; unknown keys throw ConfigError.
  static TrainConfig from_json(const std::string& text, const TrainConfig& base);
  static TrainConfig from_json(const std::string& text);
  static TrainConfig from_file(const std::filesystem::path& file, const TrainConfig& base);
  static TrainConfig from_file(const std::filesystem::path& file);
};

struct StepStats {
  std::int64_t iteration = 0;  // index of the update just applied
  LossParts parts;
  double loss = 0.0;
  double lr = 0.0;
  double rays_per_second = 0.0;
  bool thermal_skipped = false;
};

/// Owns the model, optimiser state and sampling stream of one run.
class Trainer {
 public:
  Trainer(const SceneDataset& data, const TrainConfig& config);

  /// Restores a run from a checkpoint. A manifest digest different from the
  /// scene's produces a warning on `warn` (when given) but is not fatal.
  static Trainer resume(const SceneDataset& data, const std::filesystem::path& checkpoint,
                        std::ostream* warn = nullptr);

  /// One optimiser update. Throws TrainingError (parameters untouched) on a
  /// non-finite loss term or gradient.
  StepStats step();

  /// Runs until config().iterations. Writes JSON lines to `log` and
  /// checkpoints into `out_dir` (checkpoint.ckpt at the end, plus
  /// checkpoint_latest.ckpt every checkpoint_every steps). On a numeric
  /// failure the current (last good) state is saved to
  /// checkpoint_last_good.ckpt before rethrowing.
  StepStats run(const std::filesystem::path& out_dir, std::ostream* log);

  void save(const std::filesystem::path& file) const;

  const TrainConfig& config() const { return config_; }
  const FieldModel<float>& model() const { return model_; }
  const ad::OptimizerState<float>& optimizer() const { return opt_; }
  std::int64_t iteration() const { return iteration_; }
  const std::mt19937_64& rng() const { return rng_; }
  double lr_at(std::int64_t step) const;

 private:
  Trainer(const SceneDataset& data, const TrainConfig& config, FieldModel<float> model);

  const SceneDataset* data_;
  TrainConfig config_;
  FieldModel<float> model_;
  ad::OptimizerState<float> opt_;
  std::int64_t iteration_ = 0;
  std::mt19937_64 rng_;
  std::vector<std::size_t> frozen_blocks_;
  ad::GradientBuffer<float> grads_;               // chunk 0 and the merged total
  std::vector<ad::GradientBuffer<float>> spare_;  // chunks 1..n-1
};

/// Everything stored in a checkpoint file.
struct CheckpointData {
  TrainConfig config;
  std::int64_t iteration = 0;
  std::string rng_state;
  std::uint64_t manifest_digest = 0;
  FieldModel<float> model;
  ad::OptimizerState<float> optimizer;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& file, const CheckpointData& data);
/// Throws DatasetError for unreadable, truncated or foreign files.
CheckpointData load_checkpoint(const std::filesystem::path& file);

// ---------------------------------------------------------------------------
// Rendering and evaluation

struct PoseSet {
  std::vector<std::string> ids;
  std::vector<Camera> cameras;
};

PoseSet test_poses(const SceneDataset& data);
PoseSet train_poses(const SceneDataset& data);
/// Manifest-style JSON: shared or per-frame intrinsics and transform_matrix.
PoseSet poses_from_file(const std::filesystem::path& file);
/// `n` cameras evenly spaced in azimuth around the scene box centre at the
/// mean horizontal distance and height of the dataset cameras, looking at
/// the centre, with the intrinsics of the first frame.
PoseSet orbit_poses(const SceneDataset& data, int n);

/// Writes rgb/<id>.png, thermal/<id>.png (16-bit by `bounds`),
/// thermal_raw/<id>.csv, depth/<id>.csv and renders.json under `out_dir`.
void write_renders(const std::filesystem::path& out_dir, const RadianceField& field,
                   const PoseSet& poses, const RenderOptions& opts);

struct EvalOptions {
  RoiSide roi_side = RoiSide::Auto;
  LoadOptions load{};
  bool write_error_maps = true;
};

/// Compares renders against the ground-truth scene by frame id. Ids without
/// a counterpart are returned in `unmatched`; no match at all throws
/// DatasetError. Error maps go to <render_dir>/error_maps/.
MetricsReport evaluate_renders(const std::filesystem::path& render_dir,
                               const SceneDataset& gt, const EvalOptions& opts,
                               std::vector<std::string>* unmatched = nullptr);

/// Metrics of in-memory renders against frames of `gt` (by index).
ViewMetrics evaluate_view(const RenderedView& view, const Frame& gt,
                          const TemperatureBounds& bounds, RoiSide side);

}  // namespace thermofield
