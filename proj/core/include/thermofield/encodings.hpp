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

// Input featurisations: a multiresolution hash grid over positions in the
// unit cube and real spherical harmonics over unit view directions.

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "thermofield/autodiff.hpp"

namespace thermofield {

struct HashGridConfig {
  int num_levels = 16;
  int min_resolution = 16;
  int max_resolution = 1024;
  int features_per_level = 2;
  int table_size_log2 = 19;

  void validate() const;
  /// b = exp(ln(max/min) / (L - 1)); 1 for a single level.
  double growth_factor() const;
  int output_dim() const { return num_levels * features_per_level; }
};

/// Derived per-level geometry of a hash grid. Levels whose (N+1)^3 vertex
/// lattice fits in the table are indexed densely and only store that many
/// entries; the rest hash into 2^table_size_log2 entries.
class HashGridLayout {
 public:
  struct Level {
    int resolution = 0;        // cells per axis, N_l = floor(min * b^l)
    std::uint32_t offset = 0;  // first entry of this level in the flat table
    std::uint32_t size = 0;    // entries in this level
    bool dense = false;
  };

  HashGridLayout() = default;
  explicit HashGridLayout(const HashGridConfig& cfg);

  const HashGridConfig& config() const { return cfg_; }
  const std::vector<Level>& levels() const { return levels_; }
  std::size_t entry_count() const { return entries_; }
  std::size_t parameter_count() const {
    return entries_ * static_cast<std::size_t>(cfg_.features_per_level);
  }
  /// Entry index (within the whole table) of lattice vertex (i, j, k).
  std::uint32_t entry_index(int level, std::uint32_t i, std::uint32_t j, std::uint32_t k) const;

 private:
  HashGridConfig cfg_;
  std::vector<Level> levels_;
  std::size_t entries_ = 0;
};

/// Spatial hash of a lattice vertex: XOR of coordinates times fixed primes.
std::uint32_t spatial_hash(std::uint32_t i, std::uint32_t j, std::uint32_t k);

/// The eight vertices of the enclosing voxel at one level with their
/// trilinear weights. Corner c has offset (c & 1, (c >> 1) & 1, (c >> 2) & 1).
template <typename Real>
struct VoxelCorners {
  std::array<std::uint32_t, 8> entry{};
  std::array<Real, 8> weight{};
  std::array<Real, 3> frac{};
};

template <typename Real>
VoxelCorners<Real> voxel_corners(const HashGridLayout& layout, int level,
                                 std::span<const Real, 3> x);

/// Encodes one position. `table` is the flat parameter vector
/// (entry-major, features contiguous). Throws DomainError when x leaves
/// [0, 1]^3.
template <typename Real>
void hash_encode(const HashGridLayout& layout, std::span<const Real> table,
                 std::span<const Real, 3> x, std::span<Real> out);

/// d(sum_k upstream_k * out_k) / dx for one position.
template <typename Real>
std::array<Real, 3> hash_encode_input_grad(const HashGridLayout& layout,
                                           std::span<const Real> table,
                                           std::span<const Real, 3> x,
                                           std::span<const Real> upstream);

/// Table init: uniform in [-1e-4, 1e-4].
template <typename Real>
void init_hash_table(std::span<Real> table, std::mt19937_64& rng);

/// Records the encoding of every row of `positions` (M x 3, unit cube) on
/// the tape. Table gradients go to `grads` block `block`; position
/// gradients flow when `positions` requires them.
template <typename Real>
ad::Var hash_encode(ad::Tape<Real>& tape, const HashGridLayout& layout,
                    const ad::ParamSet<Real>& params, std::size_t block,
                    ad::GradientBuffer<Real>* grads, ad::Var positions);

struct ShConfig {
  int degree = 4;  // number of bands; output dimension degree^2

  void validate() const;
  int output_dim() const { return degree * degree; }
};

/// Real spherical harmonics without the Condon-Shortley phase, band-major
/// with m running from -l to l:
///   Y_1^{-1} = c y,  Y_1^0 = c z,  Y_1^1 = c x,  ...
/// Supported degrees: 1..4. Throws DomainError for non-unit directions.
template <typename Real>
void sh_encode(std::span<const Real, 3> d, const ShConfig& cfg, std::span<Real> out);

}  // namespace thermofield
