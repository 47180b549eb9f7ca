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
#include <limits>
#include <random>

#include <doctest.h>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "thermofield/losses.hpp"

using namespace thermofield;

namespace {

std::vector<double> uniform(std::mt19937_64& rng, std::size_t n, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

std::vector<double> sorted_edges(std::mt19937_64& rng, std::size_t n) {
  auto e = uniform(rng, n + 1);
  std::sort(e.begin(), e.end());
  return e;
}

const Aabb kBox{Eigen::Vector3d::Constant(-1.0), Eigen::Vector3d::Constant(1.0)};

FieldConfig tiny(FieldMode mode) {
  FieldConfig c;
  c.mode = mode;
  c.grid = {4, 4, 32, 2, 10};
  c.proposal_grid = {2, 4, 16, 2, 10};
  c.proposal_hidden_width = 8;
  c.hidden_width = 12;
  c.appearance_dim = 4;
  return c;
}

std::vector<Ray> random_rays(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> g;
  std::vector<Ray> rays;
  while (rays.size() < n) {
    Ray r;
    r.origin = 3.0 * Eigen::Vector3d(g(rng), g(rng), g(rng)).normalized();
    r.direction = (0.3 * Eigen::Vector3d(g(rng), g(rng), g(rng)) - r.origin).normalized();
    if (auto c = clip_to_box(r, kBox, 0.05)) rays.push_back(*c);
  }
  return rays;
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("rgb mse") {
  const std::vector<double> gt{0.1, 0.5, 0.9, 0.3, 0.3, 0.3};
  CHECK(loss_rgb(gt, gt) == 0.0);
  std::vector<double> off = gt;
  for (auto& v : off) v += 0.1;
  CHECK(loss_rgb(off, gt) == doctest::Approx(0.01).epsilon(1e-12));
  std::mt19937_64 rng(1);
  const auto a = uniform(rng, 300), b = uniform(rng, 300);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  CHECK(std::abs(loss_rgb(a, b) - acc / 300.0) < 1e-15);
  CHECK_THROWS_AS(loss_rgb(std::vector<double>{}, std::vector<double>{}), DomainError);
  CHECK_THROWS_AS(loss_rgb(a, std::vector<double>{1.0}), ConfigError);
}

TEST_CASE("masked thermal mse") {
  std::mt19937_64 rng(2);
  const auto a = uniform(rng, 100), b = uniform(rng, 100);
  CHECK(loss_thermal(a, a, {}) == 0.0);
  std::vector<std::uint8_t> mask(100);
  double acc = 0.0;
  int n = 0;
  for (int i = 0; i < 100; ++i) {
    mask[i] = (i * 7) % 3 != 0;
    if (mask[i]) {
      acc += (a[i] - b[i]) * (a[i] - b[i]);
      ++n;
    }
  }
  CHECK(std::abs(loss_thermal(a, b, mask) - acc / n) < 1e-15);
  const std::vector<std::uint8_t> none(100, 0);
  CHECK(loss_thermal(a, b, none) == 0.0);
}

TEST_CASE("distortion examples and quadratic oracle") {
  const std::vector<double> edges{0.0, 0.25, 0.5, 1.0};
  CHECK(loss_distortion(std::vector<double>{0.0, 0.0, 0.0}, edges) == 0.0);
  CHECK(loss_distortion(std::vector<double>{0.0, 0.6, 0.0}, edges) ==
        doctest::Approx(0.6 * 0.6 * 0.25 / 3.0).epsilon(1e-14));
  std::mt19937_64 rng(3);
  for (int k = 0; k < 100; ++k) {
    const std::size_t n = 1 + k % 30;
    const auto w = uniform(rng, n);
    const auto s = sorted_edges(rng, n);
    const double fast = loss_distortion(w, s);
    const double slow = testing::distortion_quadratic(w, s);
    CHECK(fast >= 0.0);
    CHECK(std::abs(fast - slow) <= 1e-12 * std::max(1.0, slow));
  }
  CHECK_THROWS_AS(loss_distortion(std::vector<double>{1.0}, std::vector<double>{0.0}), ConfigError);
}

TEST_CASE("interlevel penalty") {
  const std::vector<double> h{0.1, 0.5, 0.2};
  CHECK(loss_interlevel(h, h) == 0.0);
  CHECK(loss_interlevel(h, std::vector<double>{0.2, 0.6, 0.3}) == 0.0);
  std::mt19937_64 rng(4);
  for (int k = 0; k < 50; ++k) {
    const auto f = uniform(rng, 16), p = uniform(rng, 16);
    double acc = 0.0;
    for (int i = 0; i < 16; ++i) {
      if (f[i] > p[i]) acc += (f[i] - p[i]) * (f[i] - p[i]) / (p[i] + 1e-6);
    }
    CHECK(std::abs(loss_interlevel(f, p) - acc) <= 1e-12 * std::max(1.0, acc));
  }
  CHECK_THROWS_AS(loss_interlevel(h, std::vector<double>{0.1}), ConfigError);
}

TEST_CASE("re-binning conserves overlapping mass") {
  const std::vector<double> src{0.0, 1.0, 2.0};
  const std::vector<double> w{0.4, 0.6};
  const auto same = resample_weights_to_bins(src, w, src);
  CHECK(same[0] == doctest::Approx(0.4));
  CHECK(same[1] == doctest::Approx(0.6));
  const auto coarse = resample_weights_to_bins(src, w, std::vector<double>{0.0, 2.0});
  CHECK(coarse[0] == doctest::Approx(1.0));
  const auto shifted = resample_weights_to_bins(src, w, std::vector<double>{0.5, 1.5, 3.0});
  CHECK(shifted[0] == doctest::Approx(0.2 + 0.3));
  CHECK(shifted[1] == doctest::Approx(0.3));
}

TEST_CASE("total loss") {
  LossWeights lw;
  CHECK(total_loss({}, lw) == 0.0);
  CHECK(total_loss({0.2, 0.3, 0.01, 0.02}, lw) == doctest::Approx(0.53).epsilon(1e-14));
  lw.lambda_t = 0.0;
  CHECK(total_loss({0.2, 0.3, 0.01, 0.02}, lw) == doctest::Approx(0.23).epsilon(1e-14));
  try {
    total_loss({0.2, std::numeric_limits<double>::quiet_NaN(), 0.0, 0.0}, LossWeights{});
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.culprit() == "thermal");
  }
  LossWeights bad;
  bad.lambda_dist = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("loss gradients") {
  for (const auto& r : testing::check_loss_terms(20, 5)) {
    INFO(r.name);
    CHECK(r.max_rel_error < testing::kGradTolerance);
  }
  const auto p = testing::check_proposal_path(10, 6);
  CHECK(p.max_rel_error < testing::kGradTolerance);
}

TEST_CASE("interlevel gradient reaches only the proposal networks") {
  FieldModel<double> m(tiny(FieldMode::Thermo), 2, kBox, {0.0, 1.0}, 7);
  std::mt19937_64 rng(8);
  const auto rays = random_rays(rng, 8);
  ad::Tape<double> t;
  ad::GradientBuffer<double> g(m.params(), false);
  SamplerOptions so;
  so.proposal_samples = 12;
  so.final_samples = 8;
  const auto graph = trace_rays(m, t, &g, rays, {}, so, &rng);
  RayTargets<double> tg;
  tg.rgb = ad::Matrix<double>::Zero(8, 3);
  tg.t_unit = ad::Matrix<double>::Zero(8, 1);
  const auto lg = build_loss_graph(t, rays, graph, tg, LossWeights{});
  REQUIRE(lg.parts.interlevel > 0.0);
  t.backward(lg.interlevel);
  bool proposal_moved = false;
  for (std::size_t b = 0; b < m.params().size(); ++b) {
    const bool proposal = m.params().block(b).group.rfind("proposal", 0) == 0;
    for (double v : g.dense(b)) {
      if (proposal) {
        proposal_moved |= v != 0.0;
      } else {
        CHECK(v == 0.0);
      }
    }
  }
  CHECK(proposal_moved);
}

TEST_CASE("zero thermal weight matches an rgb-only model") {
  FieldModel<double> thermo(tiny(FieldMode::Thermo), 3, kBox, {0.0, 1.0}, 9);
  FieldModel<double> rgb(tiny(FieldMode::RgbOnly), 3, kBox, {0.0, 1.0}, 10);
  for (auto& b : rgb.params().blocks()) b.values = thermo.params().block(thermo.params().find(b.name)).values;

  std::mt19937_64 ray_rng(11);
  const auto rays = random_rays(ray_rng, 10);
  RayTargets<double> tg;
  tg.rgb = ad::Matrix<double>::Random(10, 3).cwiseAbs();
  tg.t_unit = ad::Matrix<double>::Random(10, 1).cwiseAbs();
  LossWeights lw;
  lw.lambda_t = 0.0;
  SamplerOptions so;
  so.proposal_samples = 12;
  so.final_samples = 8;
  auto run = [&](const FieldModel<double>& m, ad::GradientBuffer<double>& g) {
    ad::Tape<double> t;
    std::mt19937_64 rng(12);
    const auto graph = trace_rays(m, t, &g, rays, {0, 1, 2, 0, 1, 2, 0, 1, 2, 0}, so, &rng);
    const auto lg = build_loss_graph(t, rays, graph, tg, lw);
    t.backward(lg.total);
    return lg.parts;
  };
  ad::GradientBuffer<double> gt(thermo.params(), false), gr(rgb.params(), false);
  const auto pt = run(thermo, gt);
  const auto pr = run(rgb, gr);
  CHECK(pt.rgb == pr.rgb);
  for (auto idx : rgb.color_blocks().weights) {
    const auto a = gr.dense(idx);
    const auto b = gt.dense(thermo.params().find(rgb.params().block(idx).name));
    CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
  }
}

}  // TEST_SUITE
