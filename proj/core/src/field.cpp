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

#include "thermofield/field.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace thermofield {

std::string_view field_mode_name(FieldMode mode) {
  switch (mode) {
    case FieldMode::Thermo: return "thermo";
    case FieldMode::RgbOnly: return "rgb";
    case FieldMode::ThermalOnly: return "thermal-only";
    case FieldMode::Concat4: return "concat4";
  }
  return "thermo";
}

FieldMode parse_field_mode(std::string_view name) {
  if (name == "thermo") return FieldMode::Thermo;
  if (name == "rgb") return FieldMode::RgbOnly;
  if (name == "thermal-only") return FieldMode::ThermalOnly;
  if (name == "concat4") return FieldMode::Concat4;
  throw ConfigError("unknown field mode '" + std::string(name) + "'");
}

void Aabb::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (!(hi[a] > lo[a]) || !std::isfinite(lo[a]) || !std::isfinite(hi[a])) {
      throw ConfigError("scene box is degenerate along axis " + std::to_string(a));
    }
  }
}

Eigen::Vector3d contract_to_unit_cube(const Eigen::Vector3d& x_world, const Aabb& box) {
  box.validate();
  Eigen::Vector3d u = (x_world - box.lo).cwiseQuotient(box.extent());
  return u.cwiseMax(0.0).cwiseMin(1.0);
}

void FieldConfig::validate() const {
  grid.validate();
  proposal_grid.validate();
  ShConfig{sh_degree}.validate();
  if (hidden_width < 1 || proposal_hidden_width < 1 || appearance_dim < 1) {
    throw ConfigError("field widths must be positive");
  }
}

namespace {

double logit(double p) {
  p = std::clamp(p, 1e-4, 1.0 - 1e-4);
  return std::log(p / (1.0 - p));
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

int color_head_outputs(FieldMode mode) {
  switch (mode) {
    case FieldMode::ThermalOnly: return 1;
    case FieldMode::Concat4: return 4;
    default: return 3;
  }
}

}  // namespace

template <typename Real>
FieldModel<Real>::FieldModel(const FieldConfig& config, int num_appearance, const Aabb& box,
                             const TemperatureBounds& bounds, std::uint64_t seed)
    : config_(config),
      num_appearance_(num_appearance),
      box_(box),
      bounds_(bounds),
      grid_layout_(config.grid),
      proposal_layout_(config.proposal_grid) {
  config_.validate();
  box_.validate();
  bounds_.validate();
  if (num_appearance_ < 1) throw ConfigError("appearance table needs at least one row");

  const int w = config_.hidden_width;
  const int sh_dim = config_.sh_degree * config_.sh_degree;
  density_spec_ = {{config_.grid.output_dim(), w, 1}, ad::Activation::Relu,
                   ad::Activation::None};
  proposal_spec_ = {{config_.proposal_grid.output_dim(), config_.proposal_hidden_width, 1},
                    ad::Activation::Relu, ad::Activation::None};
  color_spec_ = {{w + sh_dim + config_.appearance_dim, w, w, color_head_outputs(config_.mode)},
                 ad::Activation::Relu, ad::Activation::Sigmoid};
  thermal_spec_ = {{w, w, 1}, ad::Activation::Relu, ad::Activation::Sigmoid};

  // Block order is fixed and mode-independent up to the thermal head so that
  // the same seed gives the same shared parameters in every mode.
  std::mt19937_64 rng(seed);
  const int F = config_.grid.features_per_level;
  grid_block_ = params_.add("grid.table", "grid",
                            static_cast<int>(grid_layout_.entry_count()), F, true);
  init_hash_table<Real>(params_.block(grid_block_).values, rng);
  const int PF = config_.proposal_grid.features_per_level;
  proposal_grid_block_ = params_.add("proposal_grid.table", "proposal_grid",
                                     static_cast<int>(proposal_layout_.entry_count()), PF, true);
  init_hash_table<Real>(params_.block(proposal_grid_block_).values, rng);

  proposal_blocks_ = ad::add_mlp(params_, "proposal_mlp", proposal_spec_);
  ad::init_mlp(params_, proposal_blocks_, proposal_spec_, rng);
  density_blocks_ = ad::add_mlp(params_, "dens_mlp", density_spec_);
  ad::init_mlp(params_, density_blocks_, density_spec_, rng);
  color_blocks_ = ad::add_mlp(params_, "rgb_mlp", color_spec_);
  ad::init_mlp(params_, color_blocks_, color_spec_, rng);

  appearance_block_ =
      params_.add("appearance", "appearance", num_appearance_, config_.appearance_dim);
  std::normal_distribution<double> embed(0.0, 0.01);
  for (auto& v : params_.block(appearance_block_).values) v = static_cast<Real>(embed(rng));

  bg_rgb_block_ = params_.add("background.rgb", "background", 1, 3);
  bg_temp_block_ = params_.add("background.temp", "background", 1, 1);
  set_background({0.5, 0.5, 0.5}, 0.5);

  if (config_.mode == FieldMode::Thermo) {
    thermal_blocks_ = ad::add_mlp(params_, "th_mlp", thermal_spec_);
    ad::init_mlp(params_, thermal_blocks_, thermal_spec_, rng);
  }
}

template <typename Real>
void FieldModel<Real>::set_background(const std::array<double, 3>& rgb, double t_unit) {
  auto& c = params_.block(bg_rgb_block_).values;
  for (int i = 0; i < 3; ++i) c[i] = static_cast<Real>(logit(rgb[i]));
  params_.block(bg_temp_block_).values[0] = static_cast<Real>(logit(t_unit));
}

template <typename Real>
std::array<double, 3> FieldModel<Real>::background_rgb() const {
  const auto& c = params_.block(bg_rgb_block_).values;
  return {sigmoid(c[0]), sigmoid(c[1]), sigmoid(c[2])};
}

template <typename Real>
double FieldModel<Real>::background_t_unit() const {
  return sigmoid(params_.block(bg_temp_block_).values[0]);
}

template <typename Real>
std::vector<Real> FieldModel<Real>::mean_appearance() const {
  const auto& b = params_.block(appearance_block_);
  std::vector<double> acc(b.cols, 0.0);
  for (int r = 0; r < b.rows; ++r) {
    for (int c = 0; c < b.cols; ++c) acc[c] += b.values[r * b.cols + c];
  }
  std::vector<Real> mean(b.cols);
  for (int c = 0; c < b.cols; ++c) mean[c] = static_cast<Real>(acc[c] / b.rows);
  return mean;
}

template <typename Real>
template <typename Other>
FieldModel<Other> FieldModel<Real>::cast() const {
  FieldModel<Other> out(config_, num_appearance_, box_, bounds_, 0);
  for (std::size_t b = 0; b < params_.size(); ++b) {
    const auto& src = params_.block(b).values;
    auto& dst = out.params_.block(b).values;
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<Other>(src[i]);
  }
  return out;
}

template <typename Real>
ad::Matrix<Real> sh_rows(const std::vector<Eigen::Vector3d>& dirs, const ShConfig& cfg) {
  ad::Matrix<Real> out(static_cast<Eigen::Index>(dirs.size()), cfg.output_dim());
  std::vector<Real> row(cfg.output_dim());
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    const std::array<Real, 3> d{static_cast<Real>(dirs[i].x()), static_cast<Real>(dirs[i].y()),
                                static_cast<Real>(dirs[i].z())};
    sh_encode<Real>(std::span<const Real, 3>(d), cfg, row);
    for (int k = 0; k < cfg.output_dim(); ++k) out(static_cast<Eigen::Index>(i), k) = row[k];
  }
  return out;
}

template <typename Real>
FieldGraph build_field_graph(const FieldModel<Real>& model, ad::Tape<Real>& tape,
                             ad::GradientBuffer<Real>* grads, ad::Var positions_unit,
                             ad::Var view_sh, const std::vector<int>& appearance) {
  const auto rows = tape.value(positions_unit).rows();
  const auto& P = model.params();

  FieldGraph g;
  ad::Var enc = hash_encode(tape, model.grid_layout(), P, model.grid_block(), grads,
                            positions_unit);
  const auto dens = ad::mlp_forward(model.density_spec(), P, model.density_blocks(), enc, tape,
                                    grads);
  g.features = dens.hidden.back();
  g.sigma = tape.softplus(dens.output);

  if (tape.value(view_sh).rows() != rows) {
    throw ConfigError("view encoding rows do not match positions");
  }
  ad::Var embed;
  if (appearance.empty()) {
    const auto mean = model.mean_appearance();
    ad::Matrix<Real> m(rows, static_cast<Eigen::Index>(mean.size()));
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < mean.size(); ++c) m(r, static_cast<Eigen::Index>(c)) = mean[c];
    }
    embed = tape.constant(std::move(m));
  } else {
    if (static_cast<Eigen::Index>(appearance.size()) != rows) {
      throw ConfigError("need one appearance index per sample row");
    }
    ad::Var table = tape.parameter(P, model.appearance_block(), grads);
    embed = tape.gather_rows(table, appearance);
  }
  ad::Var head_in = tape.concat_cols({g.features, view_sh, embed});
  ad::Var head = ad::mlp_forward(model.color_spec(), P, model.color_blocks(), head_in, tape,
                                 grads)
                     .output;

  switch (model.mode()) {
    case FieldMode::Thermo: {
      g.rgb = head;
      g.t_unit = ad::mlp_forward(model.thermal_spec(), P, model.thermal_blocks(), g.features,
                                 tape, grads)
                     .output;
      break;
    }
    case FieldMode::RgbOnly: g.rgb = head; break;
    case FieldMode::ThermalOnly: g.t_unit = head; break;
    case FieldMode::Concat4: {
      g.rgb = tape.slice_cols(head, 0, 3);
      g.t_unit = tape.slice_cols(head, 3, 1);
      break;
    }
  }
  return g;
}

template <typename Real>
ad::Var build_proposal_graph(const FieldModel<Real>& model, ad::Tape<Real>& tape,
                             ad::GradientBuffer<Real>* grads, ad::Var positions_unit) {
  const auto& P = model.params();
  ad::Var enc = hash_encode(tape, model.proposal_layout(), P, model.proposal_grid_block(), grads,
                            positions_unit);
  const auto mlp = ad::mlp_forward(model.proposal_spec(), P, model.proposal_blocks(), enc, tape,
                                   grads);
  return tape.softplus(mlp.output);
}

template <typename Real>
ad::Var background_rgb_var(const FieldModel<Real>& model, ad::Tape<Real>& tape,
                           ad::GradientBuffer<Real>* grads) {
  return tape.sigmoid(tape.parameter(model.params(), model.background_rgb_block(), grads));
}

template <typename Real>
ad::Var background_temp_var(const FieldModel<Real>& model, ad::Tape<Real>& tape,
                            ad::GradientBuffer<Real>* grads) {
  return tape.sigmoid(tape.parameter(model.params(), model.background_temp_block(), grads));
}

template <typename Real>
FieldOutput field_eval(const FieldModel<Real>& model, const Eigen::Vector3d& x_unit,
                       const Eigen::Vector3d& d, std::optional<int> appearance) {
  if (appearance && (*appearance < 0 || *appearance >= model.num_appearance())) {
    throw LookupError("appearance index " + std::to_string(*appearance) + " outside [0, " +
                      std::to_string(model.num_appearance()) + ")");
  }
  ad::Tape<Real> tape;
  ad::Matrix<Real> pos(1, 3);
  for (int a = 0; a < 3; ++a) pos(0, a) = static_cast<Real>(x_unit[a]);
  ad::Var p = tape.constant(std::move(pos));
  ad::Var sh = tape.constant(sh_rows<Real>({d}, model.sh_config()));
  std::vector<int> rows;
  if (appearance) rows.push_back(*appearance);
  const FieldGraph g = build_field_graph<Real>(model, tape, nullptr, p, sh, rows);

  FieldOutput out;
  out.sigma = static_cast<double>(tape.value(g.sigma)(0, 0));
  const auto& f = tape.value(g.features);
  out.features.assign(f.data(), f.data() + f.size());
  if (g.rgb.valid()) {
    const auto& c = tape.value(g.rgb);
    out.color = std::array<double, 3>{c(0, 0), c(0, 1), c(0, 2)};
  }
  if (g.t_unit.valid()) {
    out.temperature = model.bounds().denormalize(tape.value(g.t_unit)(0, 0));
  }
  return out;
}

#define THERMOFIELD_INSTANTIATE(Real)                                                         \
  template class FieldModel<Real>;                                                           \
  template FieldGraph build_field_graph<Real>(const FieldModel<Real>&, ad::Tape<Real>&,      \
                                              ad::GradientBuffer<Real>*, ad::Var, ad::Var,    \
                                              const std::vector<int>&);                       \
  template ad::Var build_proposal_graph<Real>(const FieldModel<Real>&, ad::Tape<Real>&,      \
                                              ad::GradientBuffer<Real>*, ad::Var);            \
  template ad::Var background_rgb_var<Real>(const FieldModel<Real>&, ad::Tape<Real>&,        \
                                            ad::GradientBuffer<Real>*);                       \
  template ad::Var background_temp_var<Real>(const FieldModel<Real>&, ad::Tape<Real>&,       \
                                             ad::GradientBuffer<Real>*);                      \
  template FieldOutput field_eval<Real>(const FieldModel<Real>&, const Eigen::Vector3d&,     \
                                        const Eigen::Vector3d&, std::optional<int>);          \
  template ad::Matrix<Real> sh_rows<Real>(const std::vector<Eigen::Vector3d>&, const ShConfig&);

THERMOFIELD_INSTANTIATE(float)
THERMOFIELD_INSTANTIATE(double)

#undef THERMOFIELD_INSTANTIATE

template FieldModel<double> FieldModel<float>::cast<double>() const;
template FieldModel<float> FieldModel<double>::cast<float>() const;
template FieldModel<float> FieldModel<float>::cast<float>() const;
template FieldModel<double> FieldModel<double>::cast<double>() const;

}  // namespace thermofield
