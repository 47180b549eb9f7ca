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

#include "thermofield/encodings.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace thermofield {

void HashGridConfig::validate() const {
  if (num_levels < 1) throw ConfigError("hash grid needs at least one level");
  if (min_resolution < 1) throw ConfigError("hash grid min_resolution must be >= 1");
  if (max_resolution < min_resolution) {
    throw ConfigError("hash grid max_resolution must be >= min_resolution");
  }
  if (features_per_level < 1) throw ConfigError("hash grid needs >= 1 feature per level");
  if (table_size_log2 < 10 || table_size_log2 > 24) {
    throw ConfigError("hash grid table_size_log2 must lie in [10, 24]");
  }
}

double HashGridConfig::growth_factor() const {
  if (num_levels == 1) return 1.0;
  return std::exp((std::log(static_cast<double>(max_resolution)) -
                   std::log(static_cast<double>(min_resolution))) /
                  (num_levels - 1));
}

HashGridLayout::HashGridLayout(const HashGridConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const double b = cfg_.growth_factor();
  const std::uint64_t table = 1ull << cfg_.table_size_log2;
  std::uint64_t offset = 0;
  for (int l = 0; l < cfg_.num_levels; ++l) {
    Level level;
    level.resolution =
        static_cast<int>(std::floor(cfg_.min_resolution * std::pow(b, l) + 1e-9));
    const std::uint64_t side = static_cast<std::uint64_t>(level.resolution) + 1;
    const std::uint64_t dense_size = side * side * side;
    level.dense = dense_size <= table;
    level.size = static_cast<std::uint32_t>(level.dense ? dense_size : table);
    level.offset = static_cast<std::uint32_t>(offset);
    offset += level.size;
    levels_.push_back(level);
  }
  entries_ = static_cast<std::size_t>(offset);
}

std::uint32_t spatial_hash(std::uint32_t i, std::uint32_t j, std::uint32_t k) {
  return (i * 1u) ^ (j * 2654435761u) ^ (k * 805459861u);
}

std::uint32_t HashGridLayout::entry_index(int level, std::uint32_t i, std::uint32_t j,
                                          std::uint32_t k) const {
  const Level& lv = levels_[level];
  if (lv.dense) {
    const std::uint32_t side = static_cast<std::uint32_t>(lv.resolution) + 1;
    return lv.offset + i + side * (j + side * k);
  }
  return lv.offset + (spatial_hash(i, j, k) & (lv.size - 1));
}

template <typename Real>
VoxelCorners<Real> voxel_corners(const HashGridLayout& layout, int level,
                                 std::span<const Real, 3> x) {
  const int n = layout.levels()[level].resolution;
  std::array<std::uint32_t, 3> base{};
  VoxelCorners<Real> vc;
  for (int a = 0; a < 3; ++a) {
    const Real scaled = x[a] * static_cast<Real>(n);
    int idx = static_cast<int>(std::floor(scaled));
    idx = std::clamp(idx, 0, n - 1);
    base[a] = static_cast<std::uint32_t>(idx);
    vc.frac[a] = scaled - static_cast<Real>(idx);
  }
  for (int c = 0; c < 8; ++c) {
    const std::uint32_t di = c & 1, dj = (c >> 1) & 1, dk = (c >> 2) & 1;
    vc.entry[c] = layout.entry_index(level, base[0] + di, base[1] + dj, base[2] + dk);
    vc.weight[c] = (di ? vc.frac[0] : Real(1) - vc.frac[0]) *
                   (dj ? vc.frac[1] : Real(1) - vc.frac[1]) *
                   (dk ? vc.frac[2] : Real(1) - vc.frac[2]);
  }
  return vc;
}

namespace {

template <typename Real>
void check_unit_cube(std::span<const Real, 3> x) {
  for (int a = 0; a < 3; ++a) {
    if (!(x[a] >= Real(0) && x[a] <= Real(1))) {
      throw DomainError("hash_encode: coordinate " + std::to_string(static_cast<double>(x[a])) +
                        " lies outside [0, 1]");
    }
  }
}

void check_table(const HashGridLayout& layout, std::size_t table_size) {
  if (table_size != layout.parameter_count()) {
    throw ConfigError("hash table has " + std::to_string(table_size) + " values, layout needs " +
                      std::to_string(layout.parameter_count()));
  }
}

// d weight_c / d frac_a
template <typename Real>
Real weight_partial(const VoxelCorners<Real>& vc, int c, int a) {
  Real w = ((c >> a) & 1) ? Real(1) : Real(-1);
  for (int b = 0; b < 3; ++b) {
    if (b == a) continue;
    w *= ((c >> b) & 1) ? vc.frac[b] : Real(1) - vc.frac[b];
  }
  return w;
}

}  // namespace

template <typename Real>
void hash_encode(const HashGridLayout& layout, std::span<const Real> table,
                 std::span<const Real, 3> x, std::span<Real> out) {
  check_unit_cube(x);
  check_table(layout, table.size());
  const int F = layout.config().features_per_level;
  if (out.size() != static_cast<std::size_t>(layout.config().output_dim())) {
    throw ConfigError("hash_encode: output span has the wrong size");
  }
  for (int l = 0; l < layout.config().num_levels; ++l) {
    const auto vc = voxel_corners<Real>(layout, l, x);
    for (int f = 0; f < F; ++f) {
      Real acc = 0;
      for (int c = 0; c < 8; ++c) acc += vc.weight[c] * table[vc.entry[c] * F + f];
      out[l * F + f] = acc;
    }
  }
}

template <typename Real>
std::array<Real, 3> hash_encode_input_grad(const HashGridLayout& layout,
                                           std::span<const Real> table,
                                           std::span<const Real, 3> x,
                                           std::span<const Real> upstream) {
  check_unit_cube(x);
  check_table(layout, table.size());
  const int F = layout.config().features_per_level;
  std::array<Real, 3> g{};
  for (int l = 0; l < layout.config().num_levels; ++l) {
    const auto vc = voxel_corners<Real>(layout, l, x);
    const Real n = static_cast<Real>(layout.levels()[l].resolution);
    for (int c = 0; c < 8; ++c) {
      Real dot = 0;
      for (int f = 0; f < F; ++f) dot += upstream[l * F + f] * table[vc.entry[c] * F + f];
      for (int a = 0; a < 3; ++a) g[a] += n * weight_partial(vc, c, a) * dot;
    }
  }
  return g;
}

template <typename Real>
void init_hash_table(std::span<Real> table, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1e-4, 1e-4);
  for (auto& v : table) v = static_cast<Real>(dist(rng));
}

namespace {

template <typename Real>
struct HashEncodeNode final : ad::Node<Real> {
  const HashGridLayout* layout = nullptr;
  const Real* table = nullptr;
  ad::GradientBuffer<Real>* grads = nullptr;
  std::size_t block = 0;
  ad::Var positions;
  std::vector<VoxelCorners<Real>> corners;  // rows x levels

  void backward(ad::Tape<Real>& tape) override {
    const int L = layout->config().num_levels;
    const int F = layout->config().features_per_level;
    const auto rows = this->grad.rows();
    const bool want_x = tape.requires_grad(positions);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const Real* g = this->grad.data() + r * this->grad.cols();
      std::array<Real, 3> gx{};
      for (int l = 0; l < L; ++l) {
        const auto& vc = corners[static_cast<std::size_t>(r) * L + l];
        if (grads != nullptr) {
          for (int c = 0; c < 8; ++c) {
            for (int f = 0; f < F; ++f) {
              grads->add(block, static_cast<std::size_t>(vc.entry[c]) * F + f,
                         vc.weight[c] * g[l * F + f]);
            }
          }
        }
        if (want_x) {
          const Real n = static_cast<Real>(layout->levels()[l].resolution);
          for (int c = 0; c < 8; ++c) {
            Real dot = 0;
            for (int f = 0; f < F; ++f) dot += g[l * F + f] * table[vc.entry[c] * F + f];
            for (int a = 0; a < 3; ++a) gx[a] += n * weight_partial(vc, c, a) * dot;
          }
        }
      }
      if (want_x) {
        auto& adj = tape.adjoint(positions);
        for (int a = 0; a < 3; ++a) adj(r, a) += gx[a];
      }
    }
  }
};

}  // namespace

template <typename Real>
ad::Var hash_encode(ad::Tape<Real>& tape, const HashGridLayout& layout,
                    const ad::ParamSet<Real>& params, std::size_t block,
                    ad::GradientBuffer<Real>* grads, ad::Var positions) {
  const auto& b = params.block(block);
  check_table(layout, b.values.size());
  const auto& pos = tape.value(positions);
  if (pos.cols() != 3) throw ConfigError("hash_encode: positions must have 3 columns");
  const int L = layout.config().num_levels;
  const int F = layout.config().features_per_level;

  auto node = std::make_unique<HashEncodeNode<Real>>();
  node->layout = &layout;
  node->table = b.values.data();
  node->grads = grads;
  node->block = block;
  node->positions = positions;
  node->corners.resize(static_cast<std::size_t>(pos.rows()) * L);
  node->value.resize(pos.rows(), L * F);
  for (Eigen::Index r = 0; r < pos.rows(); ++r) {
    const std::array<Real, 3> x{pos(r, 0), pos(r, 1), pos(r, 2)};
    check_unit_cube(std::span<const Real, 3>(x));
    for (int l = 0; l < L; ++l) {
      auto& vc = node->corners[static_cast<std::size_t>(r) * L + l];
      vc = voxel_corners<Real>(layout, l, std::span<const Real, 3>(x));
      for (int f = 0; f < F; ++f) {
        Real acc = 0;
        for (int c = 0; c < 8; ++c) acc += vc.weight[c] * node->table[vc.entry[c] * F + f];
        node->value(r, l * F + f) = acc;
      }
    }
  }
  node->requires_grad = grads != nullptr || tape.requires_grad(positions);
  return tape.push(std::move(node));
}

void ShConfig::validate() const {
  if (degree < 1 || degree > 4) throw ConfigError("spherical harmonics degree must be in 1..4");
}

template <typename Real>
void sh_encode(std::span<const Real, 3> d, const ShConfig& cfg, std::span<Real> out) {
  cfg.validate();
  if (out.size() != static_cast<std::size_t>(cfg.output_dim())) {
    throw ConfigError("sh_encode: output span has the wrong size");
  }
  const double x = d[0], y = d[1], z = d[2];
  const double norm = std::sqrt(x * x + y * y + z * z);
  if (!(std::abs(norm - 1.0) <= 1e-6)) {
    throw DomainError("sh_encode: direction is not unit length (norm " + std::to_string(norm) +
                      ")");
  }
  std::array<double, 16> y_lm{};
  y_lm[0] = 0.28209479177387814;
  if (cfg.degree > 1) {
    y_lm[1] = 0.4886025119029199 * y;
    y_lm[2] = 0.4886025119029199 * z;
    y_lm[3] = 0.4886025119029199 * x;
  }
  if (cfg.degree > 2) {
    y_lm[4] = 1.0925484305920792 * x * y;
    y_lm[5] = 1.0925484305920792 * y * z;
    y_lm[6] = 0.31539156525252005 * (3.0 * z * z - 1.0);
    y_lm[7] = 1.0925484305920792 * x * z;
    y_lm[8] = 0.5462742152960396 * (x * x - y * y);
  }
  if (cfg.degree > 3) {
    y_lm[9] = 0.5900435899266435 * y * (3.0 * x * x - y * y);
    y_lm[10] = 2.890611442640554 * x * y * z;
    y_lm[11] = 0.4570457994644658 * y * (5.0 * z * z - 1.0);
    y_lm[12] = 0.3731763325901154 * z * (5.0 * z * z - 3.0);
    y_lm[13] = 0.4570457994644658 * x * (5.0 * z * z - 1.0);
    y_lm[14] = 1.445305721320277 * z * (x * x - y * y);
    y_lm[15] = 0.5900435899266435 * x * (x * x - 3.0 * y * y);
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<Real>(y_lm[i]);
}

#define THERMOFIELD_INSTANTIATE(Real)                                                       \
  template VoxelCorners<Real> voxel_corners<Real>(const HashGridLayout&, int,              \
                                                  std::span<const Real, 3>);               \
  template void hash_encode<Real>(const HashGridLayout&, std::span<const Real>,            \
                                  std::span<const Real, 3>, std::span<Real>);              \
  template std::array<Real, 3> hash_encode_input_grad<Real>(                               \
      const HashGridLayout&, std::span<const Real>, std::span<const Real, 3>,              \
      std::span<const Real>);                                                              \
  template void init_hash_table<Real>(std::span<Real>, std::mt19937_64&);                  \
  template ad::Var hash_encode<Real>(ad::Tape<Real>&, const HashGridLayout&,               \
                                     const ad::ParamSet<Real>&, std::size_t,               \
                                     ad::GradientBuffer<Real>*, ad::Var);                  \
  template void sh_encode<Real>(std::span<const Real, 3>, const ShConfig&, std::span<Real>);

THERMOFIELD_INSTANTIATE(float)
THERMOFIELD_INSTANTIATE(double)

#undef THERMOFIELD_INSTANTIATE

}  // namespace thermofield
