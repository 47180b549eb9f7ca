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

// Training objective:
//   L = lambda_r * L_rgb + lambda_t * L_th + L_dist + L_interl
// with
//   L_dist   = lambda_dist * (sum_ij w_i w_j |s_i - s_j| + 1/3 sum_i w_i^2 ds_i)
//   L_interl = lambda_interl * sum_bins max(0, w_final - w_prop)^2 / (w_prop + eps)
// Distortion uses interval midpoints s in the normalised ray coordinate.
// The interlevel term sees the final weights re-binned onto the proposal
// intervals and treats them as constants.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "thermofield/autodiff.hpp"
#include "thermofield/rendering.hpp"

namespace thermofield {

struct LossWeights {
  double lambda_r = 1.0;
  double lambda_t = 1.0;
  double lambda_dist = 0.002;
  double lambda_interl = 1.0;
  double interlevel_eps = 1e-6;

  void validate() const;
};

/// Term values; distortion and interlevel already carry their internal weights.
struct LossParts {
  double rgb = 0.0;
  double thermal = 0.0;
  double distortion = 0.0;
  double interlevel = 0.0;
};

/// Mean squared error over all entries. Throws DomainError on an empty batch.
double loss_rgb(std::span<const double> pred, std::span<const double> target);

/// Masked mean squared error in normalised temperature units; an empty mask
/// means all valid. Returns 0 when nothing is valid.
double loss_thermal(std::span<const double> pred, std::span<const double> target,
                    std::span<const std::uint8_t> mask);

/// Unweighted distortion of one ray; `s_edges` has weights.size() + 1 entries.
double loss_distortion(std::span<const double> weights, std::span<const double> s_edges);

/// Redistributes interval masses onto `dst_edges` proportionally to overlap.
/// Mass outside [dst_edges.front(), dst_edges.back()] is dropped.
std::vector<double> resample_weights_to_bins(std::span<const double> src_edges,
                                             std::span<const double> src_weights,
                                             std::span<const double> dst_edges);

/// Unweighted interlevel penalty for one ray over matching histograms.
/// Throws ConfigError when the sizes differ.
double loss_interlevel(std::span<const double> final_hist, std::span<const double> prop_hist,
                       double eps = 1e-6);

/// lambda_r * rgb + lambda_t * thermal + distortion + interlevel.
/// Throws TrainingError naming the first non-finite term.
double total_loss(const LossParts& parts, const LossWeights& weights);

// ---------------------------------------------------------------------------
// Tape versions over ray bundles

/// Mean of (pred - target)^2 over rows with mask != 0 (empty = all rows) and
/// all columns; 1 x 1. Zero with no gradient when no row is valid.
template <typename Real>
ad::Var mse_loss(ad::Tape<Real>& tape, ad::Var pred, const ad::Matrix<Real>& target,
                 const std::vector<std::uint8_t>& mask = {});

/// Mean over rays of the unweighted distortion. weights (R*n) x 1,
/// s_edges R x (n+1).
template <typename Real>
ad::Var distortion_loss(ad::Tape<Real>& tape, ad::Var weights, const ad::Matrix<Real>& s_edges);

/// Mean over rays of the unweighted interlevel penalty. `final_hist` holds
/// the detached final weights already re-binned onto the proposal
/// intervals, (R*np) x 1.
template <typename Real>
ad::Var interlevel_loss(ad::Tape<Real>& tape, ad::Var proposal_weights,
                        const ad::Matrix<Real>& final_hist, int np, double eps);

/// Per-ray supervision for a traced bundle.
template <typename Real>
struct RayTargets {
  ad::Matrix<Real> rgb;                // R x 3, may be empty when unused
  ad::Matrix<Real> t_unit;             // R x 1, may be empty when unused
  std::vector<std::uint8_t> t_valid;   // R entries or empty
};

template <typename Real>
struct LossGraph {
  ad::Var rgb, thermal, distortion, interlevel, total;
  LossParts parts;
  bool thermal_skipped = false;  // no valid thermal pixel in the batch
};

/// Records all four terms for `graph`. Terms without a matching head (or
/// with a zero lambda on rgb/thermal) are left out of the total.
template <typename Real>
LossGraph<Real> build_loss_graph(ad::Tape<Real>& tape, std::span<const Ray> rays,
                                 const RayGraph<Real>& graph, const RayTargets<Real>& targets,
                                 const LossWeights& weights);

}  // namespace thermofield
