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

// The scene function: position -> density and shared features; features +
// view direction + appearance -> color; features alone -> temperature.
//
//   hash(x) -> density MLP -> [sigma_raw, f]     sigma = softplus(sigma_raw)
//   [f, SH(d), A] -> color MLP -> rgb
//   f -> thermal MLP -> t_unit,   t = t_min + t_unit * (t_max - t_min)
//
// The baselines reuse the same trunk and swap the heads (see FieldMode).

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "thermofield/autodiff.hpp"
#include "thermofield/common.hpp"
#include "thermofield/encodings.hpp"

namespace thermofield {

enum class FieldMode {
  Thermo,       // shared density, separate color and temperature heads
  RgbOnly,      // color head only
  ThermalOnly,  // one grayscale head over [f, SH(d), A] predicting temperature
  Concat4,      // one 4-channel head over [f, SH(d), A]: rgb + temperature
};

std::string_view field_mode_name(FieldMode mode);
/// Accepts "thermo", "rgb", "thermal-only", "concat4".
FieldMode parse_field_mode(std::string_view name);

/// Axis-aligned scene bounds in world units.
struct Aabb {
  Eigen::Vector3d lo = Eigen::Vector3d::Zero();
  Eigen::Vector3d hi = Eigen::Vector3d::Ones();

  void validate() const;
  Eigen::Vector3d center() const { return 0.5 * (lo + hi); }
  Eigen::Vector3d extent() const { return hi - lo; }
};

/// Affine map of the box onto [0, 1]^3; points outside are clamped.
Eigen::Vector3d contract_to_unit_cube(const Eigen::Vector3d& x_world, const Aabb& box);

struct FieldConfig {
  FieldMode mode = FieldMode::Thermo;
  HashGridConfig grid{};
  HashGridConfig proposal_grid{5, 16, 128, 2, 17};
  int proposal_hidden_width = 16;
  int hidden_width = 64;
  int sh_degree = 4;
  int appearance_dim = 32;

  void validate() const;
};

/// Learnable parameters of one scene plus the metadata needed to evaluate
/// them (scene box, temperature bounds).
template <typename Real>
class FieldModel {
 public:
  FieldModel(const FieldConfig& config, int num_appearance, const Aabb& box,
             const TemperatureBounds& bounds, std::uint64_t seed);

  /// Initial background colour (components in (0,1)) and normalised
  /// temperature; stored as logits.
  void set_background(const std::array<double, 3>& rgb, double t_unit);

  const FieldConfig& config() const { return config_; }
  FieldMode mode() const { return config_.mode; }
  bool has_rgb() const { return config_.mode != FieldMode::ThermalOnly; }
  bool has_thermal() const { return config_.mode != FieldMode::RgbOnly; }
  int num_appearance() const { return num_appearance_; }
  const Aabb& scene_box() const { return box_; }
  const TemperatureBounds& bounds() const { return bounds_; }

  ad::ParamSet<Real>& params() { return params_; }
  const ad::ParamSet<Real>& params() const { return params_; }

  const HashGridLayout& grid_layout() const { return grid_layout_; }
  const HashGridLayout& proposal_layout() const { return proposal_layout_; }
  const ad::MlpSpec& density_spec() const { return density_spec_; }
  const ad::MlpSpec& proposal_spec() const { return proposal_spec_; }
  const ad::MlpSpec& color_spec() const { return color_spec_; }
  const ad::MlpSpec& thermal_spec() const { return thermal_spec_; }
  ShConfig sh_config() const { return ShConfig{config_.sh_degree}; }

  std::size_t grid_block() const { return grid_block_; }
  std::size_t proposal_grid_block() const { return proposal_grid_block_; }
  const ad::MlpBlocks& density_blocks() const { return density_blocks_; }
  const ad::MlpBlocks& proposal_blocks() const { return proposal_blocks_; }
  const ad::MlpBlocks& color_blocks() const { return color_blocks_; }
  /// Empty unless mode == Thermo.
  const ad::MlpBlocks& thermal_blocks() const { return thermal_blocks_; }
  std::size_t appearance_block() const { return appearance_block_; }
  std::size_t background_rgb_block() const { return bg_rgb_block_; }
  std::size_t background_temp_block() const { return bg_temp_block_; }

  std::array<double, 3> background_rgb() const;
  double background_t_unit() const;
  std::vector<Real> mean_appearance() const;

  /// Same model with parameters converted to another precision.
  template <typename Other>
  FieldModel<Other> cast() const;

 private:
  template <typename>
  friend class FieldModel;

  FieldConfig config_;
  int num_appearance_ = 0;
  Aabb box_;
  TemperatureBounds bounds_;
  ad::ParamSet<Real> params_;
  HashGridLayout grid_layout_;
  HashGridLayout proposal_layout_;
  ad::MlpSpec density_spec_, proposal_spec_, color_spec_, thermal_spec_;
  std::size_t grid_block_ = 0, proposal_grid_block_ = 0;
  ad::MlpBlocks density_blocks_, proposal_blocks_, color_blocks_, thermal_blocks_;
  std::size_t appearance_block_ = 0, bg_rgb_block_ = 0, bg_temp_block_ = 0;
};

/// Tape handles produced by one field evaluation over M sample rows.
struct FieldGraph {
  ad::Var sigma;     // M x 1, >= 0
  ad::Var features;  // M x hidden_width
  ad::Var rgb;       // M x 3 in (0,1); invalid when the mode has no colour
  ad::Var t_unit;    // M x 1 in (0,1); invalid when the mode has no temperature
};

/// Records the field over `positions_unit` (M x 3 in the unit cube).
/// `view_sh` is M x sh_dim. `appearance` holds one row index per sample, or
/// is empty to use the mean embedding (evaluation convention). With
/// `grads == nullptr` parameters are constants.
template <typename Real>
FieldGraph build_field_graph(const FieldModel<Real>& model, ad::Tape<Real>& tape,
                             ad::GradientBuffer<Real>* grads, ad::Var positions_unit,
                             ad::Var view_sh, const std::vector<int>& appearance);

/// Density of the proposal network, M x 1.
template <typename Real>
ad::Var build_proposal_graph(const FieldModel<Real>& model, ad::Tape<Real>& tape,
                             ad::GradientBuffer<Real>* grads, ad::Var positions_unit);

/// 1 x 3 background colour and 1 x 1 normalised background temperature.
template <typename Real>
ad::Var background_rgb_var(const FieldModel<Real>& model, ad::Tape<Real>& tape,
                           ad::GradientBuffer<Real>* grads);
template <typename Real>
ad::Var background_temp_var(const FieldModel<Real>& model, ad::Tape<Real>& tape,
                            ad::GradientBuffer<Real>* grads);

struct FieldOutput {
  double sigma = 0.0;
  std::vector<double> features;
  std::optional<std::array<double, 3>> color;
  std::optional<double> temperature;  // degrees Celsius
};

/// Evaluates a single point. `x_unit` must lie in the unit cube, `d` must be
/// unit length. `appearance == nullopt` uses the mean embedding; an index
/// outside the table throws LookupError.
template <typename Real>
FieldOutput field_eval(const FieldModel<Real>& model, const Eigen::Vector3d& x_unit,
                       const Eigen::Vector3d& d, std::optional<int> appearance);

/// Row-wise SH encoding of unit directions.
template <typename Real>
ad::Matrix<Real> sh_rows(const std::vector<Eigen::Vector3d>& dirs, const ShConfig& cfg);

}  // namespace thermofield
