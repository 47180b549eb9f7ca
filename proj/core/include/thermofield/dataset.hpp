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

// Posed RGB + thermal scenes on disk.
//
// Layout: manifest.json, rgb/*.png (8-bit), thermal/*.png (16-bit,
// normalised by the scene bounds), optionally thermal_raw/*.csv (float
// degrees Celsius). The manifest follows the transforms-file convention
// (fl_x, fl_y, cx, cy, w, h, frames[].file_path, frames[].transform_matrix)
// plus thermal_path, t_min, t_max and sensor_range.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "thermofield/common.hpp"
#include "thermofield/field.hpp"
#include "thermofield/rendering.hpp"

namespace thermofield {

inline constexpr double kThermalFloor = -20.0;
inline constexpr int kDefaultTestStride = 8;

struct FrameRecord {
  std::string id;
  std::filesystem::path rgb_path;      // relative to the scene root
  std::filesystem::path thermal_path;  // relative to the scene root
  std::filesystem::path thermal_raw_path;  // optional
  Camera camera;
  std::optional<bool> is_test;  // explicit split when present
};

struct SceneManifest {
  std::vector<FrameRecord> frames;
  double t_min = 0.0;
  double t_max = 1.0;
  SensorRange sensor_range{};
  int test_stride = kDefaultTestStride;
  std::optional<Aabb> aabb;

  static SceneManifest read(const std::filesystem::path& file);
  void write(const std::filesystem::path& file) const;
  void validate() const;
  /// Frame i is a test frame if marked so, or (without explicit marks) when
  /// i % test_stride == 0.
  std::vector<bool> test_flags() const;
};

/// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::uint64_t file_digest(const std::filesystem::path& file);

/// 16-bit codes: raw = round((t - t_min) / (t_max - t_min) * 65535), clamped.
std::uint16_t encode_thermal(double celsius, double t_min, double t_max);
double decode_thermal(std::uint16_t raw, double t_min, double t_max);
Image<std::uint16_t> encode_thermal_map(const ThermalMap& map, double t_min, double t_max);
ThermalMap decode_thermal_map(const Image<std::uint16_t>& raw, double t_min, double t_max);

/// Values below `floor` are raised to it; the mask is untouched. Returns the
/// number of changed pixels through `changed` when given.
ThermalMap clamp_thermal(const ThermalMap& map, double floor = kThermalFloor,
                         std::size_t* changed = nullptr);

/// 1 where the reading lies inside the sensor range.
std::vector<std::uint8_t> sensor_range_mask(const ThermalMap& map, const SensorRange& range);

/// Mean over pixels valid in every map of the per-pixel sample standard
/// deviation (n - 1 denominator). Needs at least two maps of equal shape.
double estimate_precision(std::span<const ThermalMap> stack);

struct Frame {
  std::string id;
  Camera camera;
  Image<float> rgb;     // 3 channels in [0, 1]
  ThermalMap thermal;   // clamped, degrees Celsius
  std::vector<std::uint8_t> in_range;  // reading inside the sensor range before clamping
  bool is_test = false;
  int appearance = -1;  // index among training frames, -1 for test frames
};

struct LoadOptions {
  bool mask_invalid = false;   // drop out-of-range pixels from losses and metrics
  bool prefer_raw_csv = false; // read thermal_raw_path instead of the 16-bit PNG
  double clamp_floor = kThermalFloor;
};

struct SceneDataset {
  std::filesystem::path root;
  SceneManifest manifest;
  std::vector<Frame> frames;
  std::vector<int> train;
  std::vector<int> test;
  TemperatureBounds bounds;  // clamped manifest bounds, used for normalisation
  Aabb box;
  std::array<double, 3> mean_rgb{0.5, 0.5, 0.5};
  double mean_t_unit = 0.5;
  std::uint64_t digest = 0;  // of manifest.json
};

/// Loads and preprocesses a scene directory. Throws DatasetError naming the
/// frame for missing or mismatched files.
SceneDataset load_scene(const std::filesystem::path& dir, const LoadOptions& opts = {});

/// Cube around the camera centres with half-size 1.5x their largest
/// half-extent (at least `min_half`).
Aabb scene_box_from_cameras(std::span<const Camera> cameras, double min_half = 1.0);

// ---------------------------------------------------------------------------
// Ray batches

struct RayBatch {
  std::vector<Ray> rays;  // clipped to the scene box
  std::vector<int> frame;
  std::vector<int> appearance;
  std::vector<int> px, py;
  std::vector<float> rgb;         // 3 per ray
  std::vector<float> t_unit;      // 1 per ray
  std::vector<std::uint8_t> t_valid;

  std::size_t size() const { return rays.size(); }
};

/// Rays drawn uniformly over all (training frame, pixel) pairs through pixel
/// centres. Throws DatasetError when the training split is empty.
RayBatch sample_ray_batch(const SceneDataset& data, int n_rays, std::mt19937_64& rng,
                          double near_plane = 0.05);

// ---------------------------------------------------------------------------
// Synthetic scenes

struct SynthPrimitive {
  enum class Kind { Sphere, Box };
  Kind kind = Kind::Sphere;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d half_size = Eigen::Vector3d::Constant(0.5);  // sphere radius = x
  std::array<double, 3> albedo{0.8, 0.3, 0.2};
  std::array<double, 3> albedo_alt{0.2, 0.3, 0.8};  // second checker colour
  double checker_frequency = 0.0;  // cells per world unit; 0 = constant albedo
  double temperature = 40.0;       // at the centre, degrees Celsius
  Eigen::Vector3d temperature_gradient = Eigen::Vector3d::Zero();  // degrees per unit

  double temperature_at(const Eigen::Vector3d& p) const;
  std::array<double, 3> albedo_at(const Eigen::Vector3d& p) const;
};

struct SynthSceneSpec {
  std::vector<SynthPrimitive> primitives;
  std::array<double, 3> background_rgb{0.1, 0.1, 0.1};
  double background_temperature = 10.0;
  int num_cameras = 20;
  double ring_radius = 4.0;
  double ring_height = 1.0;
  Eigen::Vector3d look_at_point = Eigen::Vector3d::Zero();
  int width = 64;
  int height = 64;
  double fov_y_degrees = 40.0;
  double t_min = 0.0;
  double t_max = 100.0;
  int test_stride = kDefaultTestStride;
  int supersample = 1;  // s x s samples per pixel
  double ambient = 0.3;
  Eigen::Vector3d light_direction = Eigen::Vector3d(0.4, 1.0, 0.6);
  double thermal_noise_std = 0.0;  // degrees Celsius, seeded
  /// Written to the manifest as "aabb" so rays are clipped to the content
  /// rather than to the camera-derived box.
  std::optional<Aabb> scene_box;

  void validate() const;
  std::vector<Camera> cameras() const;

  /// "hot-sphere" and "checker-sphere".
  static SynthSceneSpec preset(const std::string& name);
};

struct SynthHit {
  int primitive = -1;
  double t = 0.0;
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  Eigen::Vector3d normal = Eigen::Vector3d::Zero();
};

/// Nearest primitive hit with t > 0.
std::optional<SynthHit> intersect_scene(const SynthSceneSpec& spec, const Ray& ray);

struct SynthFrame {
  Image<float> rgb;
  ThermalMap thermal;
  Image<std::uint8_t> coverage;  // 1 where the pixel centre hits a primitive
};

/// Closed-form shading of one view, independent of the neural renderer.
SynthFrame render_synthetic_frame(const SynthSceneSpec& spec, const Camera& cam);

/// Writes manifest.json, rgb/, thermal/ and thermal_raw/ under `dir`.
void generate_synthetic_scene(const SynthSceneSpec& spec, const std::filesystem::path& dir,
                              std::uint64_t seed);

}  // namespace thermofield
