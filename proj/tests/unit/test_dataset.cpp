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
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include <doctest.h>

#include "oracles.hpp"
#include "thermofield/dataset.hpp"
#include "thermofield/image_io.hpp"

using namespace thermofield;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("thermofield_test_" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

SynthSceneSpec small_sphere_scene() {
  SynthSceneSpec s;
  SynthPrimitive p;
  p.half_size = Eigen::Vector3d::Constant(1.0);
  p.temperature = 40.0;
  s.primitives = {p};
  s.background_temperature = 10.0;
  s.num_cameras = 6;
  s.test_stride = 3;
  s.width = 24;
  s.height = 20;
  s.t_min = 0.0;
  s.t_max = 50.0;
  return s;
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("dequantisation") {
  CHECK(decode_thermal(0, -20.0, 36.4) == -20.0);
  CHECK(decode_thermal(65535, -20.0, 36.4) == 36.4);
  CHECK(decode_thermal(32768, -20.0, 36.4) == doctest::Approx(8.2).epsilon(1e-3));
  CHECK(encode_thermal(-100.0, 0.0, 10.0) == 0);
  CHECK(encode_thermal(100.0, 0.0, 10.0) == 65535);
}

TEST_CASE("encode and decode stay within half a quantum") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-20.0, 120.0);
  for (int k = 0; k < 20; ++k) {
    const double t_min = -20.0 + k, t_max = 60.0 + 3 * k;
    const double half = 0.5 * (t_max - t_min) / 65535.0;
    for (int i = 0; i < 1000; ++i) {
      const double t = std::clamp(u(rng), t_min, t_max);
      CHECK(std::abs(decode_thermal(encode_thermal(t, t_min, t_max), t_min, t_max) - t) <= half + 1e-12);
    }
  }
}

TEST_CASE("clamping") {
  ThermalMap m(4, 3);
  const float vals[] = {-35, -20, -19.5f, 0, 5, -100, 30, -20.001f, 12, 8, -21, 7};
  for (int i = 0; i < 12; ++i) m[i] = vals[i];
  m.valid[3] = 0;
  std::size_t changed = 0;
  const ThermalMap c = clamp_thermal(m, -20.0, &changed);
  std::size_t brute = 0;
  for (float v : vals) brute += v < -20.0f;
  CHECK(changed == brute);
  CHECK(c[0] == -20.0f);
  CHECK(c[4] == 5.0f);
  CHECK(c.valid == m.valid);
  std::size_t again = 99;
  const ThermalMap cc = clamp_thermal(c, -20.0, &again);
  CHECK(again == 0);
  CHECK(cc.celsius.data == c.celsius.data);
  ThermalMap warm(3, 3, 15.0f);
  CHECK(clamp_thermal(warm).celsius.data == warm.celsius.data);
}

TEST_CASE("sensor range mask") {
  ThermalMap m(3, 1);
  m[0] = -25.0f;
  m[1] = 50.0f;
  m[2] = 130.0f;
  CHECK(sensor_range_mask(m, SensorRange{}) == std::vector<std::uint8_t>{0, 1, 0});
}

TEST_CASE("precision estimator") {
  std::vector<ThermalMap> same(5, ThermalMap(8, 6, 21.5f));
  CHECK(estimate_precision(same) == 0.0);
  std::vector<ThermalMap> pair{ThermalMap(8, 6, 20.0f), ThermalMap(8, 6, 21.0f)};
  CHECK(estimate_precision(pair) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-6));
  std::vector<ThermalMap> one{ThermalMap(2, 2)};
  CHECK_THROWS_AS(estimate_precision(one), DomainError);
  std::vector<ThermalMap> shapes{ThermalMap(2, 2), ThermalMap(3, 2)};
  CHECK_THROWS_AS(estimate_precision(shapes), DomainError);

  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 0.14);
  std::vector<ThermalMap> noisy;
  for (int k = 0; k < 20; ++k) {
    ThermalMap m(160, 120, 25.0f);
    for (auto& v : m.celsius.data) v = static_cast<float>(25.0 + g(rng));
    noisy.push_back(std::move(m));
  }
  CHECK(std::abs(estimate_precision(noisy) - 0.14) < 0.05 * 0.14);
}

TEST_CASE("png and csv round trips") {
  TempDir dir;
  Image<std::uint8_t> rgb(5, 4, 3);
  for (std::size_t i = 0; i < rgb.data.size(); ++i) rgb.data[i] = static_cast<std::uint8_t>(i * 7);
  write_png8(dir.path / "a.png", rgb);
  CHECK(read_png8(dir.path / "a.png").data == rgb.data);

  Image<std::uint16_t> th(6, 3, 1);
  for (std::size_t i = 0; i < th.data.size(); ++i) th.data[i] = static_cast<std::uint16_t>(i * 3000 + 17);
  write_png16(dir.path / "t.png", th);
  CHECK(read_png16(dir.path / "t.png").data == th.data);
  CHECK_THROWS_AS(read_png16(dir.path / "a.png"), DatasetError);

  Image<float> grid(4, 3, 1);
  for (std::size_t i = 0; i < grid.data.size(); ++i) grid.data[i] = 1.0f / (i + 3.0f) - 2.0f;
  write_csv_grid(dir.path / "g.csv", grid);
  CHECK(read_csv_grid(dir.path / "g.csv").data == grid.data);
  CHECK_THROWS_AS(read_png8(dir.path / "missing.png"), DatasetError);
}

TEST_CASE("synthetic sphere pixels match an independent intersection") {
  const SynthSceneSpec spec = small_sphere_scene();
  for (const Camera& cam : spec.cameras()) {
    const SynthFrame f = render_synthetic_frame(spec, cam);
    for (int y = 0; y < cam.height; ++y) {
      for (int x = 0; x < cam.width; ++x) {
        const Ray r = generate_ray(cam, x + 0.5, y + 0.5);
        const bool hit = testing::ray_sphere(r.origin, r.direction, Eigen::Vector3d::Zero(), 1.0)
                             .has_value();
        CHECK(f.coverage.at(x, y) == hit);
        const float t = f.thermal[static_cast<std::size_t>(y) * cam.width + x];
        CHECK(t == (hit ? 40.0f : 10.0f));
      }
    }
  }
}

TEST_CASE("checker sphere varies in colour but not in temperature") {
  SynthSceneSpec spec = SynthSceneSpec::preset("checker-sphere");
  spec.supersample = 1;
  const SynthFrame f = render_synthetic_frame(spec, spec.cameras().front());
  std::set<float> temps;
  float lo = 1.0f, hi = 0.0f;
  for (int y = 0; y < f.rgb.height; ++y) {
    for (int x = 0; x < f.rgb.width; ++x) {
      if (!f.coverage.at(x, y)) continue;
      temps.insert(f.thermal[static_cast<std::size_t>(y) * f.rgb.width + x]);
      lo = std::min(lo, f.rgb.at(x, y, 1));
      hi = std::max(hi, f.rgb.at(x, y, 1));
    }
  }
  CHECK(temps.size() == 1);
  CHECK(hi - lo > 0.3f);
}

TEST_CASE("generated scenes load back") {
  TempDir dir;
  const SynthSceneSpec spec = small_sphere_scene();
  generate_synthetic_scene(spec, dir.path / "s", 3);
  const SceneDataset d = load_scene(dir.path / "s");
  CHECK(d.frames.size() == 6);
  CHECK(d.test.size() == 2);
  CHECK(d.train.size() == 4);
  CHECK(d.bounds.t_min == 0.0);
  CHECK(d.bounds.t_max == 50.0);
  for (int i : d.test) CHECK(d.frames[i].appearance == -1);
  for (std::size_t k = 0; k < d.train.size(); ++k) CHECK(d.frames[d.train[k]].appearance == static_cast<int>(k));
  const SynthFrame f = render_synthetic_frame(spec, d.frames[1].camera);
  for (std::size_t p = 0; p < f.thermal.size(); ++p) {
    CHECK(std::abs(d.frames[1].thermal[p] - f.thermal[p]) <= 0.5 * 50.0 / 65535.0 + 1e-5);
  }
  LoadOptions raw;
  raw.prefer_raw_csv = true;
  const SceneDataset exact = load_scene(dir.path / "s", raw);
  CHECK(exact.frames[1].thermal.celsius.data == f.thermal.celsius.data);

  std::mt19937_64 rng(4);
  CHECK(sample_ray_batch(d, 0, rng).size() == 0);
  const RayBatch b = sample_ray_batch(d, 500, rng);
  CHECK(b.size() == 500);
  for (std::size_t i = 0; i < b.size(); ++i) {
    CHECK_FALSE(d.frames[b.frame[i]].is_test);
    CHECK(b.appearance[i] == d.frames[b.frame[i]].appearance);
  }
}

TEST_CASE("loader errors name the frame") {
  TempDir dir;
  generate_synthetic_scene(small_sphere_scene(), dir.path / "s", 5);
  const SceneManifest m = SceneManifest::read(dir.path / "s" / "manifest.json");
  fs::remove(dir.path / "s" / m.frames[2].thermal_path);
  try {
    load_scene(dir.path / "s");
    FAIL("expected DatasetError");
  } catch (const DatasetError& e) {
    CHECK(std::string(e.what()).find(m.frames[2].id) != std::string::npos);
  }

  generate_synthetic_scene(small_sphere_scene(), dir.path / "r", 5);
  write_png16(dir.path / "r" / m.frames[1].thermal_path, Image<std::uint16_t>(10, 10, 1));
  CHECK_THROWS_AS(load_scene(dir.path / "r"), DatasetError);
  CHECK_THROWS_AS(load_scene(dir.path / "nowhere"), DatasetError);
}

TEST_CASE("uniform ray sampling over a 2x2 frame") {
  SceneDataset d;
  Frame f;
  f.id = "only";
  f.camera.width = f.camera.height = 2;
  f.camera.fx = f.camera.fy = 2.0;
  f.camera.cx = f.camera.cy = 1.0;
  f.camera.cam_to_world.col(3) = Eigen::Vector3d(0, 0, 3);
  f.rgb = Image<float>(2, 2, 3, 0.5f);
  f.thermal = ThermalMap(2, 2, 20.0f);
  f.appearance = 0;
  d.frames = {f};
  d.train = {0};
  d.box = {Eigen::Vector3d::Constant(-1.0), Eigen::Vector3d::Constant(1.0)};
  d.bounds = {0.0, 40.0};
  std::mt19937_64 rng(6);
  const RayBatch b = sample_ray_batch(d, 10000, rng);
  int count[4] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < b.size(); ++i) ++count[b.py[i] * 2 + b.px[i]];
  for (int c : count) CHECK(std::abs(c - 2500) < 125);
  CHECK(b.t_unit.front() == doctest::Approx(0.5));
  d.train.clear();
  CHECK_THROWS_AS(sample_ray_batch(d, 1, rng), DatasetError);
}

TEST_CASE("manifest round trip") {
  TempDir dir;
  generate_synthetic_scene(small_sphere_scene(), dir.path / "s", 7);
  const SceneManifest a = SceneManifest::read(dir.path / "s" / "manifest.json");
  a.write(dir.path / "copy.json");
  const SceneManifest b = SceneManifest::read(dir.path / "copy.json");
  REQUIRE(a.frames.size() == b.frames.size());
  for (std::size_t i = 0; i < a.frames.size(); ++i) {
    CHECK(a.frames[i].id == b.frames[i].id);
    CHECK(a.frames[i].camera.cam_to_world.isApprox(b.frames[i].camera.cam_to_world, 1e-15));
  }
  CHECK(a.t_max == b.t_max);
  CHECK(a.test_flags() == b.test_flags());
  const std::string bytes = "thermofield";
  CHECK(fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size())) ==
        fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size())));
  CHECK(fnv1a64({}) == 0xcbf29ce484222325ULL);
}

}  // TEST_SUITE
