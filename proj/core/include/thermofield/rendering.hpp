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

// Cameras, ray sampling and volumetric compositing.
//
// Camera space follows the transforms-file convention: x right, y up, the
// camera looks down -z. Pixel (u, v) has v growing downwards, so
//   d_cam = ((u - cx) / fx, -(v - cy) / fy, -1).
//
// Samples along a ray are described by interval edges t_0 < ... < t_N.
// Sample i covers [t_i, t_{i+1}] with density sigma_i, and
//   alpha_i = 1 - exp(-sigma_i * delta_i)
//   T_i     = exp(-sum_{j<i} sigma_j * delta_j)
//   w_i     = T_i * alpha_i
//   value   = sum_i w_i v_i + (1 - sum_i w_i) * v_background

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "thermofield/autodiff.hpp"
#include "thermofield/common.hpp"
#include "thermofield/field.hpp"

namespace thermofield {

struct Camera {
  int width = 0;
  int height = 0;
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  Eigen::Matrix<double, 3, 4> cam_to_world = Eigen::Matrix<double, 3, 4>::Identity();

  /// Rotation orthonormal within 1e-6, positive focal lengths, non-empty image.
  void validate() const;
  Eigen::Matrix3d rotation() const { return cam_to_world.leftCols<3>(); }
  Eigen::Vector3d center() const { return cam_to_world.col(3); }
  /// Continuous pixel coordinates of a world point; nullopt behind the camera.
  std::optional<Eigen::Vector2d> project(const Eigen::Vector3d& world) const;
};

/// Camera at `eye` looking at `target` with world `up`.
Eigen::Matrix<double, 3, 4> look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                                    const Eigen::Vector3d& up);

struct Ray {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d direction = -Eigen::Vector3d::UnitZ();
  double near = 0.05;
  double far = 1000.0;
};

/// Back-projects continuous pixel coordinates (pixel centre of (i, j) is
/// (i + 0.5, j + 0.5)). Throws DomainError outside [0, width] x [0, height].
Ray generate_ray(const Camera& cam, double u, double v);

/// Restricts the ray to the part inside `box`, starting no closer than
/// `near_plane`. nullopt when the ray misses.
std::optional<Ray> clip_to_box(const Ray& ray, const Aabb& box, double near_plane);

/// Piecewise spacing: s in [0, 1/2] is linear in distance over [near, mid],
/// s in [1/2, 1] is linear in disparity over [mid, far], mid = (near+far)/2.
double spacing_to_distance(const Ray& ray, double s);
double distance_to_spacing(const Ray& ray, double t);

struct RaySamples {
  std::vector<double> edges;

  int size() const { return static_cast<int>(edges.size()) - 1; }
  double center(int i) const { return 0.5 * (edges[i] + edges[i + 1]); }
  double delta(int i) const { return edges[i + 1] - edges[i]; }
  /// Strictly increasing with at least one interval.
  void validate() const;
};

/// n intervals from the piecewise spacing; with `rng` each edge is jittered
/// uniformly between the neighbouring bin midpoints.
RaySamples sample_stratified(const Ray& ray, int n, std::mt19937_64* rng);

/// Inverse-CDF resampling of `n_final` intervals from the piecewise-constant
/// density given by `weights` over `proposal`, mixed with a uniform density
/// of mass `eps_pdf`. Falls back to sample_stratified when the weights sum
/// to zero; `fell_back` reports which path ran.
RaySamples resample_proposal(const Ray& ray, const RaySamples& proposal,
                             std::span<const double> weights, int n_final, double eps_pdf,
                             std::mt19937_64* rng, bool* fell_back = nullptr);

struct CompositeResult {
  std::vector<double> value;  // per channel, background included
  std::vector<double> weights;
  std::vector<double> transmittance;
  double depth = 0.0;
  double accumulation = 0.0;
};

/// `values` holds samples.size() rows of `background.size()` channels.
CompositeResult composite(const RaySamples& samples, std::span<const double> sigma,
                          std::span<const double> values, std::span<const double> background);

/// Density-only field used by the proposal sampler.
using DensityFn = std::function<void(std::span<const Eigen::Vector3d>, std::span<double>)>;

struct ProposalSamples {
  RaySamples proposal;
  std::vector<double> proposal_weights;
  RaySamples final;
  bool fell_back = false;
};

ProposalSamples sample_proposal(const Ray& ray, const DensityFn& density, int n_init,
                                int n_final, double eps_pdf, std::mt19937_64* rng);

// ---------------------------------------------------------------------------
// Differentiable compositing over ray bundles. Rays are stored as
// consecutive blocks of `n` rows.

/// sigma: (R*n) x 1, deltas: R x n. Returns weights (R*n) x 1.
template <typename Real>
ad::Var composite_weights(ad::Tape<Real>& tape, ad::Var sigma, const ad::Matrix<Real>& deltas);

/// weights: (R*n) x 1, values: (R*n) x C. Returns R x C.
template <typename Real>
ad::Var composite_values(ad::Tape<Real>& tape, ad::Var weights, ad::Var values, int n);

/// rendered + (1 - sum w) * background, background 1 x C.
template <typename Real>
ad::Var blend_background(ad::Tape<Real>& tape, ad::Var weights, ad::Var rendered,
                         ad::Var background, int n);

struct SamplerOptions {
  int proposal_samples = 128;
  int final_samples = 48;
  double eps_pdf = 0.01;
  double near_plane = 0.05;
};

/// Per-ray interval edges, row-major R x (n+1).
struct RaySampling {
  std::vector<double> proposal_edges;
  std::vector<double> final_edges;
};

template <typename Real>
struct RayGraph {
  int proposal_count = 0;
  int final_count = 0;
  RaySampling sampling;
  ad::Var proposal_weights;  // (R*np) x 1
  ad::Var weights;           // (R*nf) x 1
  ad::Var rgb;               // R x 3 incl. background, invalid without colour
  ad::Var t_unit;            // R x 1 incl. background, invalid without temperature
};

/// Records proposal sampling, resampling and the main field for a bundle of
/// rays already clipped to the scene box. `appearance` has one entry per ray
/// (empty = mean embedding). With `fixed` the given edges are used verbatim
/// instead of sampling.
template <typename Real>
RayGraph<Real> trace_rays(const FieldModel<Real>& model, ad::Tape<Real>& tape,
                          ad::GradientBuffer<Real>* grads, std::span<const Ray> rays,
                          const std::vector<int>& appearance, const SamplerOptions& opts,
                          std::mt19937_64* rng, const RaySampling* fixed = nullptr);

// ---------------------------------------------------------------------------
// Whole-image rendering

/// Read-only scene function consumed by render_view. Positions are in world
/// units; t_unit is the normalised temperature.
class RadianceField {
 public:
  struct Samples {
    std::vector<double> sigma;
    std::vector<double> rgb;  // 3 per sample when has_rgb()
    std::vector<double> t_unit;
  };

  virtual ~RadianceField() = default;
  virtual const Aabb& scene_box() const = 0;
  virtual TemperatureBounds temperature_bounds() const = 0;
  virtual bool has_rgb() const = 0;
  virtual bool has_thermal() const = 0;
  virtual std::array<double, 3> background_rgb() const = 0;
  virtual double background_t_unit() const = 0;
  virtual void proposal_density(std::span<const Eigen::Vector3d> x,
                                std::span<double> sigma) const = 0;
  virtual void evaluate(std::span<const Eigen::Vector3d> x,
                        std::span<const Eigen::Vector3d> dirs, Samples& out) const = 0;
};

/// RadianceField view of a trained model; evaluates with the mean
/// appearance embedding unless an index is given.
template <typename Real>
class NeuralField final : public RadianceField {
 public:
  explicit NeuralField(const FieldModel<Real>& model, std::optional<int> appearance = {})
      : model_(model), appearance_(appearance) {}

  const Aabb& scene_box() const override { return model_.scene_box(); }
  TemperatureBounds temperature_bounds() const override { return model_.bounds(); }
  bool has_rgb() const override { return model_.has_rgb(); }
  bool has_thermal() const override { return model_.has_thermal(); }
  std::array<double, 3> background_rgb() const override { return model_.background_rgb(); }
  double background_t_unit() const override { return model_.background_t_unit(); }
  void proposal_density(std::span<const Eigen::Vector3d> x,
                        std::span<double> sigma) const override;
  void evaluate(std::span<const Eigen::Vector3d> x, std::span<const Eigen::Vector3d> dirs,
                Samples& out) const override;

 private:
  const FieldModel<Real>& model_;
  std::optional<int> appearance_;
};

struct RenderOptions {
  SamplerOptions sampler{};
  bool jitter = false;
  std::uint64_t seed = 0;
  int chunk_rays = 256;
};

struct RenderedView {
  Image<float> rgb;  // empty when the field has no colour
  ThermalMap thermal;  // degrees Celsius; empty when the field has no temperature
  Image<float> depth;
  Image<float> accumulation;
};

/// Renders every pixel of `cam`. Colour and temperature of a ray are
/// composited with the same weights. Deterministic for fixed options.
RenderedView render_view(const RadianceField& field, const Camera& cam,
                         const RenderOptions& opts);

}  // namespace thermofield
