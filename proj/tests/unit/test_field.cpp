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

#include <cmath>
#include <random>

#include <doctest.h>

#include "thermofield/field.hpp"
#include "thermofield/losses.hpp"
#include "thermofield/rendering.hpp"

using namespace thermofield;

namespace {

const Aabb kBox{Eigen::Vector3d::Constant(-1.0), Eigen::Vector3d::Constant(1.0)};

FieldConfig small(FieldMode mode) {
  FieldConfig c;
  c.mode = mode;
  c.grid = {4, 4, 64, 2, 12};
  c.proposal_grid = {2, 4, 16, 2, 10};
  c.hidden_width = 16;
  c.appearance_dim = 5;
  return c;
}

void randomize(FieldModel<double>& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& b : m.params().blocks()) {
    for (auto& v : b.values) v = b.group == "grid" ? 2.0 * u(rng) : u(rng);
  }
}

Eigen::Vector3d random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  return Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized();
}

std::vector<double> dense_layer(const ad::ParamBlock<double>& W, const ad::ParamBlock<double>& B,
                                const std::vector<double>& x) {
  std::vector<double> y(W.rows);
  for (int o = 0; o < W.rows; ++o) {
    double s = B.values[o];
    for (int i = 0; i < W.cols; ++i) s += W.values[o * W.cols + i] * x[i];
    y[o] = s;
  }
  return y;
}

// Plain evaluation of an MLP; returns {hidden activations of the last
// hidden layer, raw output}.
std::pair<std::vector<double>, std::vector<double>> run_mlp(const ad::ParamSet<double>& P,
                                                            const ad::MlpBlocks& b,
                                                            std::vector<double> x) {
  std::vector<double> hidden;
  for (std::size_t l = 0; l < b.weights.size(); ++l) {
    x = dense_layer(P.block(b.weights[l]), P.block(b.biases[l]), x);
    if (l + 1 < b.weights.size()) {
      for (auto& v : x) v = std::max(0.0, v);
      hidden = x;
    }
  }
  return {hidden, x};
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

TEST_SUITE("field") {

TEST_CASE("network shapes follow the configuration") {
  FieldModel<float> m(FieldConfig{}, 7, kBox, {0.0, 50.0}, 1);
  CHECK(m.density_spec().layer_widths == std::vector<int>{32, 64, 1});
  CHECK(m.thermal_spec().layer_widths == std::vector<int>{64, 64, 1});
  CHECK(m.color_spec().layer_widths == std::vector<int>{64 + 16 + 32, 64, 64, 3});
  CHECK(m.params().block(m.appearance_block()).rows == 7);
  FieldModel<float> c4(small(FieldMode::Concat4), 2, kBox, {0.0, 1.0}, 1);
  CHECK(c4.color_spec().output_dim() == 4);
  CHECK(c4.thermal_blocks().weights.empty());
  FieldModel<float> th(small(FieldMode::ThermalOnly), 2, kBox, {0.0, 1.0}, 1);
  CHECK(th.color_spec().output_dim() == 1);
  CHECK_THROWS_AS(FieldModel<float>(FieldConfig{}, 1, kBox, {5.0, 5.0}, 1), ConfigError);
}

TEST_CASE("temperature ignores direction and appearance bit for bit") {
  FieldModel<double> m(small(FieldMode::Thermo), 4, kBox, {-20.0, 80.0}, 2);
  randomize(m, 3);
  std::mt19937_64 rng(4);
  for (int p = 0; p < 20; ++p) {
    const Eigen::Vector3d x = 0.5 * (random_unit(rng) + Eigen::Vector3d::Ones()) * 0.9;
    const double t0 = *field_eval(m, x, random_unit(rng), 0).temperature;
    for (int k = 0; k < 10; ++k) {
      const std::optional<int> a = k % 3 == 0 ? std::nullopt : std::optional<int>(k % 4);
      CHECK(*field_eval(m, x, random_unit(rng), a).temperature == t0);
    }
  }
}

TEST_CASE("zero thermal weights give the mid temperature") {
  FieldModel<double> m(small(FieldMode::Thermo), 2, kBox, {10.0, 30.0}, 5);
  randomize(m, 6);
  for (auto b : m.thermal_blocks().weights) {
    std::fill(m.params().block(b).values.begin(), m.params().block(b).values.end(), 0.0);
  }
  for (auto b : m.thermal_blocks().biases) {
    std::fill(m.params().block(b).values.begin(), m.params().block(b).values.end(), 0.0);
  }
  const auto out = field_eval(m, Eigen::Vector3d(0.2, 0.4, 0.9), Eigen::Vector3d::UnitX(), 1);
  CHECK(*out.temperature == 20.0);
}

TEST_CASE("field_eval matches a plain re-evaluation in every mode") {
  std::mt19937_64 rng(8);
  for (FieldMode mode : {FieldMode::Thermo, FieldMode::RgbOnly, FieldMode::ThermalOnly,
                         FieldMode::Concat4}) {
    FieldModel<double> m(small(mode), 3, kBox, {-5.0, 45.0}, 9);
    randomize(m, 10);
    const auto& P = m.params();
    for (int trial = 0; trial < 10; ++trial) {
      const Eigen::Vector3d x = 0.5 * (random_unit(rng) + Eigen::Vector3d::Ones());
      const Eigen::Vector3d d = random_unit(rng);
      const std::optional<int> a = trial % 2 ? std::optional<int>(trial % 3) : std::nullopt;
      const FieldOutput out = field_eval(m, x, d, a);

      std::vector<double> enc(m.grid_layout().config().output_dim());
      const std::array<double, 3> xa{x.x(), x.y(), x.z()};
      hash_encode<double>(m.grid_layout(), P.block(m.grid_block()).values,
                          std::span<const double, 3>(xa), enc);
      auto [f, raw] = run_mlp(P, m.density_blocks(), enc);
      CHECK(out.sigma == doctest::Approx(std::log1p(std::exp(raw[0]))).epsilon(1e-12));
      std::vector<double> head_in = f;
      std::vector<double> sh(16);
      const std::array<double, 3> da{d.x(), d.y(), d.z()};
      sh_encode<double>(std::span<const double, 3>(da), ShConfig{4}, sh);
      head_in.insert(head_in.end(), sh.begin(), sh.end());
      const auto& A = P.block(m.appearance_block());
      for (int c = 0; c < A.cols; ++c) {
        double v = 0.0;
        if (a) {
          v = A.values[*a * A.cols + c];
        } else {
          for (int r = 0; r < A.rows; ++r) v += A.values[r * A.cols + c];
          v /= A.rows;
        }
        head_in.push_back(v);
      }
      const auto head = run_mlp(P, m.color_blocks(), head_in).second;
      const double range = 50.0;
      switch (mode) {
        case FieldMode::Thermo: {
          const auto t = run_mlp(P, m.thermal_blocks(), f).second;
          CHECK(*out.temperature == doctest::Approx(-5.0 + sigmoid(t[0]) * range).epsilon(1e-12));
          for (int c = 0; c < 3; ++c) CHECK((*out.color)[c] == doctest::Approx(sigmoid(head[c])).epsilon(1e-12));
          break;
        }
        case FieldMode::RgbOnly:
          CHECK_FALSE(out.temperature.has_value());
          for (int c = 0; c < 3; ++c) CHECK((*out.color)[c] == doctest::Approx(sigmoid(head[c])).epsilon(1e-12));
          break;
        case FieldMode::ThermalOnly:
          CHECK_FALSE(out.color.has_value());
          CHECK(*out.temperature == doctest::Approx(-5.0 + sigmoid(head[0]) * range).epsilon(1e-12));
          break;
        case FieldMode::Concat4:
          for (int c = 0; c < 3; ++c) CHECK((*out.color)[c] == doctest::Approx(sigmoid(head[c])).epsilon(1e-12));
          CHECK(*out.temperature == doctest::Approx(-5.0 + sigmoid(head[3]) * range).epsilon(1e-12));
          break;
      }
    }
  }
}

TEST_CASE("outputs stay in range for extreme parameters") {
  FieldModel<double> m(small(FieldMode::Thermo), 2, kBox, {0.0, 10.0}, 11);
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (auto& b : m.params().blocks()) {
    for (auto& v : b.values) v = u(rng);
  }
  for (int k = 0; k < 50; ++k) {
    const Eigen::Vector3d x = 0.5 * (random_unit(rng) + Eigen::Vector3d::Ones());
    const auto out = field_eval(m, x, random_unit(rng), std::nullopt);
    CHECK(std::isfinite(out.sigma));
    CHECK(out.sigma >= 0.0);
    for (double c : *out.color) CHECK((c >= 0.0 && c <= 1.0));
    CHECK((*out.temperature >= 0.0 && *out.temperature <= 10.0));
  }
}

TEST_CASE("appearance lookups are bounds checked") {
  FieldModel<double> m(small(FieldMode::Thermo), 2, kBox, {0.0, 1.0}, 1);
  CHECK_THROWS_AS(field_eval(m, Eigen::Vector3d::Constant(0.5), Eigen::Vector3d::UnitZ(), 2),
                  LookupError);
  CHECK_THROWS_AS(field_eval(m, Eigen::Vector3d::Constant(0.5), Eigen::Vector3d::UnitZ(), -1),
                  LookupError);
}

TEST_CASE("contraction maps the box onto the unit cube") {
  const Aabb box{Eigen::Vector3d(-2, 0, 1), Eigen::Vector3d(2, 4, 3)};
  CHECK(contract_to_unit_cube(box.lo, box) == Eigen::Vector3d::Zero());
  CHECK(contract_to_unit_cube(box.center(), box).isApprox(Eigen::Vector3d::Constant(0.5)));
  CHECK(contract_to_unit_cube(Eigen::Vector3d(9, 2, -7), box) == Eigen::Vector3d(1, 0.5, 0));
  const Aabb flat{Eigen::Vector3d::Zero(), Eigen::Vector3d(1, 0, 1)};
  CHECK_THROWS_AS(contract_to_unit_cube(Eigen::Vector3d::Zero(), flat), ConfigError);
}

TEST_CASE("colour and thermal losses do not leak into the other head") {
  FieldModel<double> m(small(FieldMode::Thermo), 3, kBox, {0.0, 100.0}, 13);
  randomize(m, 14);
  std::mt19937_64 rng(15);
  std::vector<Ray> rays;
  while (rays.size() < 6) {
    Ray r;
    r.origin = 3.0 * random_unit(rng);
    r.direction = (0.3 * random_unit(rng) - r.origin).normalized();
    if (auto c = clip_to_box(r, kBox, 0.05)) rays.push_back(*c);
  }
  RayTargets<double> tg;
  tg.rgb = ad::Matrix<double>::Random(6, 3).cwiseAbs();
  tg.t_unit = ad::Matrix<double>::Random(6, 1).cwiseAbs();
  SamplerOptions so;
  so.proposal_samples = 12;
  so.final_samples = 8;
  auto grads_of = [&](bool thermal) {
    ad::GradientBuffer<double> g(m.params(), false);
    ad::Tape<double> t;
    std::mt19937_64 r2(16);
    const auto graph = trace_rays(m, t, &g, rays, {0, 1, 2, 0, 1, 2}, so, &r2);
    const auto lg = build_loss_graph(t, rays, graph, tg, LossWeights{});
    t.backward(thermal ? lg.thermal : lg.rgb);
    return g;
  };
  const auto gt = grads_of(true), gr = grads_of(false);
  auto all_zero = [&](const ad::GradientBuffer<double>& g, const ad::MlpBlocks& b) {
    for (auto i : b.weights) for (double v : g.dense(i)) if (v != 0.0) return false;
    for (auto i : b.biases) for (double v : g.dense(i)) if (v != 0.0) return false;
    return true;
  };
  CHECK(all_zero(gt, m.color_blocks()));
  CHECK(all_zero(gr, m.thermal_blocks()));
  CHECK_FALSE(all_zero(gt, m.thermal_blocks()));
  CHECK_FALSE(all_zero(gr, m.color_blocks()));
  // The shared density network hears from both.
  CHECK_FALSE(all_zero(gt, m.density_blocks()));
  CHECK_FALSE(all_zero(gr, m.density_blocks()));
}

TEST_CASE("cast preserves parameters") {
  FieldModel<double> m(small(FieldMode::Thermo), 2, kBox, {0.0, 1.0}, 17);
  const FieldModel<float> f = m.cast<float>();
  for (std::size_t b = 0; b < m.params().size(); ++b) {
    for (std::size_t i = 0; i < m.params().block(b).size(); ++i) {
      CHECK(f.params().block(b).values[i] == static_cast<float>(m.params().block(b).values[i]));
    }
  }
}

}  // TEST_SUITE
