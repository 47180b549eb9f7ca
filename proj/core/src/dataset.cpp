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

#include "thermofield/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include <Eigen/Geometry>
#include <nlohmann/json.hpp>
#include <tbb/parallel_for.h>

#include "thermofield/image_io.hpp"

namespace thermofield {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Manifest

namespace {

double get_number(const json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_number()) {
    throw DatasetError(where + ": missing numeric field '" + key + "'");
  }
  return it->get<double>();
}

Eigen::Matrix<double, 3, 4> parse_pose(const json& m, const std::string& where) {
  if (!m.is_array() || (m.size() != 3 && m.size() != 4)) {
    throw DatasetError(where + ": transform_matrix must have 3 or 4 rows");
  }
  Eigen::Matrix<double, 3, 4> pose;
  for (int r = 0; r < 3; ++r) {
    if (!m[r].is_array() || m[r].size() != 4) {
      throw DatasetError(where + ": transform_matrix rows must have 4 entries");
    }
    for (int c = 0; c < 4; ++c) pose(r, c) = m[r][c].get<double>();
  }
  return pose;
}

}  // namespace

SceneManifest SceneManifest::read(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DatasetError("cannot open manifest " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DatasetError("malformed manifest " + file.string() + ": " + e.what());
  }
  SceneManifest m;
  try {
    m.t_min = get_number(j, "t_min", "manifest");
    m.t_max = get_number(j, "t_max", "manifest");
    if (j.contains("sensor_range")) {
      m.sensor_range.min = j["sensor_range"].at(0).get<double>();
      m.sensor_range.max = j["sensor_range"].at(1).get<double>();
    }
    m.test_stride = j.value("test_stride", kDefaultTestStride);
    if (j.contains("aabb")) {
      Aabb box;
      for (int a = 0; a < 3; ++a) {
        box.lo[a] = j["aabb"].at(0).at(a).get<double>();
        box.hi[a] = j["aabb"].at(1).at(a).get<double>();
      }
      m.aabb = box;
    }
    if (!j.contains("frames") || !j["frames"].is_array()) {
      throw DatasetError("manifest has no frames array");
    }
    int index = 0;
    for (const auto& f : j["frames"]) {
      FrameRecord rec;
      rec.id = f.value("id", std::to_string(index));
      const std::string where = "frame '" + rec.id + "'";
      if (!f.contains("file_path")) throw DatasetError(where + ": missing file_path");
      if (!f.contains("thermal_path")) throw DatasetError(where + ": missing thermal_path");
      rec.rgb_path = f["file_path"].get<std::string>();
      rec.thermal_path = f["thermal_path"].get<std::string>();
      rec.thermal_raw_path = f.value("thermal_raw_path", std::string());
      auto intr = [&](const char* key) {
        return f.contains(key) ? get_number(f, key, where) : get_number(j, key, where);
      };
      rec.camera.fx = intr("fl_x");
      rec.camera.fy = intr("fl_y");
      rec.camera.cx = intr("cx");
      rec.camera.cy = intr("cy");
      rec.camera.width = static_cast<int>(intr("w"));
      rec.camera.height = static_cast<int>(intr("h"));
      if (!f.contains("transform_matrix")) throw DatasetError(where + ": missing transform_matrix");
      rec.camera.cam_to_world = parse_pose(f["transform_matrix"], where);
      if (f.contains("split")) {
        const auto s = f["split"].get<std::string>();
        if (s != "train" && s != "test") throw DatasetError(where + ": split must be train or test");
        rec.is_test = s == "test";
      }
      m.frames.push_back(std::move(rec));
      ++index;
    }
  } catch (const json::exception& e) {
    throw DatasetError("malformed manifest " + file.string() + ": " + e.what());
  }
  m.validate();
  return m;
}

void SceneManifest::write(const fs::path& file) const {
  json j;
  j["t_min"] = t_min;
  j["t_max"] = t_max;
  j["sensor_range"] = {sensor_range.min, sensor_range.max};
  j["test_stride"] = test_stride;
  if (aabb) {
    j["aabb"] = {{aabb->lo.x(), aabb->lo.y(), aabb->lo.z()},
                 {aabb->hi.x(), aabb->hi.y(), aabb->hi.z()}};
  }
  json frames = json::array();
  for (const auto& f : this->frames) {
    json jf;
    jf["id"] = f.id;
    jf["file_path"] = f.rgb_path.generic_string();
    jf["thermal_path"] = f.thermal_path.generic_string();
    if (!f.thermal_raw_path.empty()) jf["thermal_raw_path"] = f.thermal_raw_path.generic_string();
    jf["fl_x"] = f.camera.fx;
    jf["fl_y"] = f.camera.fy;
    jf["cx"] = f.camera.cx;
    jf["cy"] = f.camera.cy;
    jf["w"] = f.camera.width;
    jf["h"] = f.camera.height;
    json pose = json::array();
    for (int r = 0; r < 3; ++r) {
      pose.push_back({f.camera.cam_to_world(r, 0), f.camera.cam_to_world(r, 1),
                      f.camera.cam_to_world(r, 2), f.camera.cam_to_world(r, 3)});
    }
    pose.push_back({0.0, 0.0, 0.0, 1.0});
    jf["transform_matrix"] = pose;
    if (f.is_test) jf["split"] = *f.is_test ? "test" : "train";
    frames.push_back(std::move(jf));
  }
  j["frames"] = std::move(frames);
  std::ofstream out(file);
  if (!out) throw DatasetError("cannot write manifest " + file.string());
  out << j.dump(2) << '\n';
}

void SceneManifest::validate() const {
  if (!(t_min < t_max)) throw DatasetError("manifest requires t_min < t_max");
  if (!(sensor_range.min < sensor_range.max)) throw DatasetError("manifest sensor_range is empty");
  if (test_stride < 1) throw DatasetError("manifest test_stride must be >= 1");
  if (frames.empty()) throw DatasetError("manifest lists no frames");
  for (const auto& f : frames) {
    try {
      f.camera.validate();
    } catch (const ConfigError& e) {
      throw DatasetError("frame '" + f.id + "': " + e.what());
    }
  }
}

std::vector<bool> SceneManifest::test_flags() const {
  const bool explicit_split =
      std::any_of(frames.begin(), frames.end(), [](const auto& f) { return f.is_test.has_value(); });
  std::vector<bool> out(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    out[i] = explicit_split ? frames[i].is_test.value_or(false) : (i % test_stride == 0);
  }
  return out;
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t file_digest(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + file.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return fnv1a64(bytes);
}

// ---------------------------------------------------------------------------
// Thermal preprocessing

std::uint16_t encode_thermal(double celsius, double t_min, double t_max) {
  const double q = std::round((celsius - t_min) / (t_max - t_min) * 65535.0);
  return static_cast<std::uint16_t>(std::clamp(q, 0.0, 65535.0));
}

double decode_thermal(std::uint16_t raw, double t_min, double t_max) {
  return t_min + (static_cast<double>(raw) / 65535.0) * (t_max - t_min);
}

Image<std::uint16_t> encode_thermal_map(const ThermalMap& map, double t_min, double t_max) {
  Image<std::uint16_t> out(map.width(), map.height(), 1);
  for (std::size_t i = 0; i < map.size(); ++i) out.data[i] = encode_thermal(map[i], t_min, t_max);
  return out;
}

ThermalMap decode_thermal_map(const Image<std::uint16_t>& raw, double t_min, double t_max) {
  if (raw.channels != 1) throw DatasetError("thermal rasters must be single-channel");
  ThermalMap out(raw.width, raw.height);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(decode_thermal(raw.data[i], t_min, t_max));
  }
  return out;
}

ThermalMap clamp_thermal(const ThermalMap& map, double floor, std::size_t* changed) {
  ThermalMap out = map;
  std::size_t n = 0;
  const float f = static_cast<float>(floor);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] < f) {
      out[i] = f;
      ++n;
    }
  }
  if (changed != nullptr) *changed = n;
  return out;
}

std::vector<std::uint8_t> sensor_range_mask(const ThermalMap& map, const SensorRange& range) {
  std::vector<std::uint8_t> mask(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) {
    mask[i] = map[i] >= range.min && map[i] <= range.max ? 1 : 0;
  }
  return mask;
}

double estimate_precision(std::span<const ThermalMap> stack) {
  if (stack.size() < 2) throw DomainError("precision needs at least two thermal maps");
  const std::size_t n = stack.front().size();
  for (const auto& m : stack) {
    if (m.width() != stack.front().width() || m.height() != stack.front().height()) {
      throw DomainError("precision needs co-registered maps of equal shape");
    }
  }
  const double k = static_cast<double>(stack.size());
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    bool ok = true;
    double mean = 0.0;
    for (const auto& m : stack) {
      ok = ok && (m.valid.empty() || m.valid[i] != 0);
      mean += m[i];
    }
    if (!ok) continue;
    mean /= k;
    double ss = 0.0;
    for (const auto& m : stack) ss += (m[i] - mean) * (m[i] - mean);
    total += std::sqrt(ss / (k - 1.0));
    ++count;
  }
  if (count == 0) throw DomainError("precision: no pixel is valid in every map");
  return total / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Loading

Aabb scene_box_from_cameras(std::span<const Camera> cameras, double min_half) {
  if (cameras.empty()) throw DatasetError("scene box needs at least one camera");
  Eigen::Vector3d lo = cameras.front().center();
  Eigen::Vector3d hi = lo;
  for (const auto& c : cameras) {
    lo = lo.cwiseMin(c.center());
    hi = hi.cwiseMax(c.center());
  }
  const Eigen::Vector3d mid = 0.5 * (lo + hi);
  const double half = std::max(1.5 * 0.5 * (hi - lo).maxCoeff(), min_half);
  Aabb box;
  box.lo = mid.array() - half;
  box.hi = mid.array() + half;
  return box;
}

SceneDataset load_scene(const fs::path& dir, const LoadOptions& opts) {
  const fs::path manifest_file = dir / "manifest.json";
  if (!fs::exists(manifest_file)) throw DatasetError("no manifest.json in " + dir.string());
  SceneDataset data;
  data.root = dir;
  data.manifest = SceneManifest::read(manifest_file);
  data.digest = file_digest(manifest_file);
  const auto& m = data.manifest;

  const auto flags = m.test_flags();
  data.frames.resize(m.frames.size());
  tbb::parallel_for(std::size_t{0}, m.frames.size(), [&](std::size_t i) {
    const FrameRecord& rec = m.frames[i];
    const std::string where = "frame '" + rec.id + "'";
    Frame& f = data.frames[i];
    f.id = rec.id;
    f.camera = rec.camera;
    f.is_test = flags[i];
    const fs::path rgb_file = dir / rec.rgb_path;
    const fs::path th_file =
        opts.prefer_raw_csv && !rec.thermal_raw_path.empty() ? dir / rec.thermal_raw_path
                                                             : dir / rec.thermal_path;
    if (!fs::exists(rgb_file)) throw DatasetError(where + ": missing RGB image " + rgb_file.string());
    if (!fs::exists(th_file)) {
      throw DatasetError(where + ": missing thermal image " + th_file.string());
    }
    Image<std::uint8_t> rgb8 = read_png8(rgb_file);
    if (rgb8.channels == 1) {
      Image<std::uint8_t> expanded(rgb8.width, rgb8.height, 3);
      for (std::size_t p = 0; p < rgb8.data.size(); ++p) {
        for (int c = 0; c < 3; ++c) expanded.data[p * 3 + c] = rgb8.data[p];
      }
      rgb8 = std::move(expanded);
    }
    f.rgb = to_unit_float(rgb8);
    ThermalMap raw;
    if (th_file.extension() == ".csv") {
      Image<float> grid = read_csv_grid(th_file);
      raw = ThermalMap(grid.width, grid.height);
      raw.celsius = std::move(grid);
    } else {
      raw = decode_thermal_map(read_png16(th_file), m.t_min, m.t_max);
    }
    if (raw.width() != f.rgb.width || raw.height() != f.rgb.height) {
      throw DatasetError(where + ": RGB and thermal resolutions differ");
    }
    if (f.rgb.width != rec.camera.width || f.rgb.height != rec.camera.height) {
      throw DatasetError(where + ": image size does not match the intrinsics");
    }
    f.in_range = sensor_range_mask(raw, m.sensor_range);
    f.thermal = clamp_thermal(raw, opts.clamp_floor);
    f.thermal.valid = opts.mask_invalid ? f.in_range
                                        : std::vector<std::uint8_t>(f.thermal.size(), 1);
  });

  for (std::size_t i = 0; i < data.frames.size(); ++i) {
    if (data.frames[i].is_test) {
      data.test.push_back(static_cast<int>(i));
    } else {
      data.frames[i].appearance = static_cast<int>(data.train.size());
      data.train.push_back(static_cast<int>(i));
    }
  }
  if (data.train.empty()) throw DatasetError("scene has no training frames");

  data.bounds.t_min = std::max(m.t_min, opts.clamp_floor);
  data.bounds.t_max = m.t_max;
  if (!(data.bounds.t_min < data.bounds.t_max)) {
    throw DatasetError("temperature bounds collapse after clamping");
  }
  if (m.aabb) {
    data.box = *m.aabb;
  } else {
    std::vector<Camera> cams;
    for (const auto& f : data.frames) cams.push_back(f.camera);
    data.box = scene_box_from_cameras(cams);
  }
  data.box.validate();

  double rgb_sum[3] = {0, 0, 0};
  double t_sum = 0.0;
  std::size_t px = 0, tn = 0;
  for (int i : data.train) {
    const Frame& f = data.frames[i];
    for (std::size_t p = 0; p < f.rgb.pixel_count(); ++p) {
      for (int c = 0; c < 3; ++c) rgb_sum[c] += f.rgb.data[p * 3 + c];
      if (f.thermal.valid[p]) {
        t_sum += data.bounds.normalize(f.thermal[p]);
        ++tn;
      }
    }
    px += f.rgb.pixel_count();
  }
  for (int c = 0; c < 3; ++c) data.mean_rgb[c] = rgb_sum[c] / static_cast<double>(px);
  data.mean_t_unit = tn > 0 ? t_sum / static_cast<double>(tn) : 0.5;
  return data;
}

// ---------------------------------------------------------------------------
// Ray batches

RayBatch sample_ray_batch(const SceneDataset& data, int n_rays, std::mt19937_64& rng,
                          double near_plane) {
  if (data.train.empty()) throw DatasetError("training split is empty");
  RayBatch b;
  if (n_rays <= 0) return b;
  std::vector<std::uint64_t> prefix(data.train.size() + 1, 0);
  for (std::size_t k = 0; k < data.train.size(); ++k) {
    prefix[k + 1] = prefix[k] + data.frames[data.train[k]].rgb.pixel_count();
  }
  std::uniform_int_distribution<std::uint64_t> pick(0, prefix.back() - 1);
  b.rays.reserve(n_rays);
  for (int r = 0; r < n_rays; ++r) {
    const std::uint64_t flat = pick(rng);
    const auto k = static_cast<std::size_t>(
        std::upper_bound(prefix.begin(), prefix.end(), flat) - prefix.begin() - 1);
    const int fi = data.train[k];
    const Frame& f = data.frames[fi];
    const auto local = static_cast<int>(flat - prefix[k]);
    const int x = local % f.rgb.width;
    const int y = local / f.rgb.width;
    const auto clipped = clip_to_box(generate_ray(f.camera, x + 0.5, y + 0.5), data.box, near_plane);
    if (!clipped) throw DatasetError("frame '" + f.id + "': training ray misses the scene box");
    b.rays.push_back(*clipped);
    b.frame.push_back(fi);
    b.appearance.push_back(f.appearance);
    b.px.push_back(x);
    b.py.push_back(y);
    for (int c = 0; c < 3; ++c) b.rgb.push_back(f.rgb.at(x, y, c));
    const std::size_t p = static_cast<std::size_t>(y) * f.rgb.width + x;
    b.t_unit.push_back(static_cast<float>(data.bounds.normalize(f.thermal[p])));
    b.t_valid.push_back(f.thermal.valid[p]);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

double SynthPrimitive::temperature_at(const Eigen::Vector3d& p) const {
  return temperature + temperature_gradient.dot(p - center);
}

std::array<double, 3> SynthPrimitive::albedo_at(const Eigen::Vector3d& p) const {
  if (checker_frequency <= 0.0) return albedo;
  const Eigen::Vector3d q = (p - center) * checker_frequency;
  const long parity = static_cast<long>(std::floor(q.x())) + static_cast<long>(std::floor(q.y())) +
                      static_cast<long>(std::floor(q.z()));
  return (parity & 1) == 0 ? albedo : albedo_alt;
}

void SynthSceneSpec::validate() const {
  if (primitives.empty()) throw ConfigError("synthetic scene needs at least one primitive");
  if (num_cameras < 3) throw ConfigError("synthetic scene needs at least 3 cameras");
  if (width < 1 || height < 1) throw ConfigError("synthetic image size must be positive");
  if (!(fov_y_degrees > 0.0 && fov_y_degrees < 180.0)) throw ConfigError("fov must be in (0, 180)");
  if (!(t_min < t_max)) throw ConfigError("synthetic bounds need t_min < t_max");
  if (supersample < 1) throw ConfigError("supersample must be >= 1");
  if (!(ambient >= 0.0 && ambient <= 1.0)) throw ConfigError("ambient must lie in [0, 1]");
  if (test_stride < 1) throw ConfigError("test_stride must be >= 1");
  if (!(ring_radius > 0.0)) throw ConfigError("ring radius must be positive");
  if (scene_box) scene_box->validate();
  auto in_bounds = [&](double t) { return t >= t_min && t <= t_max; };
  if (!in_bounds(background_temperature)) {
    throw ConfigError("background temperature outside the scene bounds");
  }
  for (const auto& p : primitives) {
    if ((p.half_size.array() <= 0.0).any()) throw ConfigError("primitive sizes must be positive");
    // Linear fields peak on the bounding box corners.
    for (int c = 0; c < 8; ++c) {
      Eigen::Vector3d corner = p.center;
      for (int a = 0; a < 3; ++a) {
        const double h = p.kind == SynthPrimitive::Kind::Sphere ? p.half_size.x() : p.half_size[a];
        corner[a] += (c >> a & 1) ? h : -h;
      }
      if (!in_bounds(p.temperature_at(corner)) &&
          p.kind == SynthPrimitive::Kind::Box) {
        throw ConfigError("primitive temperature leaves the scene bounds");
      }
    }
    if (p.kind == SynthPrimitive::Kind::Sphere) {
      const double span = p.temperature_gradient.norm() * p.half_size.x();
      if (!in_bounds(p.temperature + span) || !in_bounds(p.temperature - span)) {
        throw ConfigError("primitive temperature leaves the scene bounds");
      }
    }
  }
}

std::vector<Camera> SynthSceneSpec::cameras() const {
  std::vector<Camera> cams;
  const double fy = 0.5 * height / std::tan(0.5 * fov_y_degrees * std::numbers::pi / 180.0);
  for (int i = 0; i < num_cameras; ++i) {
    const double a = 2.0 * std::numbers::pi * i / num_cameras;
    Camera c;
    c.width = width;
    c.height = height;
    c.fx = fy;
    c.fy = fy;
    c.cx = 0.5 * width;
    c.cy = 0.5 * height;
    const Eigen::Vector3d eye(ring_radius * std::cos(a), ring_height, ring_radius * std::sin(a));
    c.cam_to_world = look_at(eye, look_at_point, Eigen::Vector3d::UnitY());
    cams.push_back(c);
  }
  return cams;
}

SynthSceneSpec SynthSceneSpec::preset(const std::string& name) {
  SynthSceneSpec s;
  s.num_cameras = 22;
  s.test_stride = 11;
  s.supersample = 3;
  s.scene_box = Aabb{Eigen::Vector3d::Constant(-2.0), Eigen::Vector3d::Constant(2.0)};
  if (name == "hot-sphere") {
    SynthPrimitive p;
    p.half_size = Eigen::Vector3d::Constant(1.0);
    p.albedo = {0.85, 0.45, 0.2};
    p.temperature = 60.0;
    p.temperature_gradient = Eigen::Vector3d(0.0, 0.0, 20.0);
    s.primitives = {p};
    s.background_rgb = {0.15, 0.15, 0.2};
    s.background_temperature = 20.0;
    s.t_min = 0.0;
    s.t_max = 100.0;
    return s;
  }
  if (name == "checker-sphere") {
    SynthPrimitive p;
    p.half_size = Eigen::Vector3d::Constant(1.0);
    p.albedo = {0.9, 0.9, 0.9};
    p.albedo_alt = {0.1, 0.1, 0.1};
    p.checker_frequency = 2.0;
    p.temperature = 40.0;
    s.primitives = {p};
    s.background_rgb = {0.5, 0.5, 0.5};
    s.background_temperature = 10.0;
    s.t_min = 0.0;
    s.t_max = 50.0;
    s.ambient = 1.0;
    return s;
  }
  throw ConfigError("unknown synthetic preset '" + name + "'");
}

std::optional<SynthHit> intersect_scene(const SynthSceneSpec& spec, const Ray& ray) {
  std::optional<SynthHit> best;
  const Eigen::Vector3d d = ray.direction.normalized();
  for (std::size_t k = 0; k < spec.primitives.size(); ++k) {
    const auto& p = spec.primitives[k];
    double t = -1.0;
    Eigen::Vector3d n;
    if (p.kind == SynthPrimitive::Kind::Sphere) {
      const Eigen::Vector3d oc = ray.origin - p.center;
      const double r = p.half_size.x();
      const double b = oc.dot(d);
      const double c = oc.squaredNorm() - r * r;
      const double disc = b * b - c;
      if (disc < 0.0) continue;
      const double sq = std::sqrt(disc);
      t = -b - sq > 0.0 ? -b - sq : -b + sq;
      if (t <= 0.0) continue;
      n = (ray.origin + t * d - p.center).normalized();
    } else {
      double t0 = -std::numeric_limits<double>::infinity();
      double t1 = std::numeric_limits<double>::infinity();
      int axis0 = 0, axis1 = 0;
      bool miss = false;
      for (int a = 0; a < 3; ++a) {
        const double lo = p.center[a] - p.half_size[a];
        const double hi = p.center[a] + p.half_size[a];
        if (std::abs(d[a]) < 1e-15) {
          if (ray.origin[a] < lo || ray.origin[a] > hi) miss = true;
          continue;
        }
        double ta = (lo - ray.origin[a]) / d[a];
        double tb = (hi - ray.origin[a]) / d[a];
        if (ta > tb) std::swap(ta, tb);
        if (ta > t0) {
          t0 = ta;
          axis0 = a;
        }
        if (tb < t1) {
          t1 = tb;
          axis1 = a;
        }
      }
      if (miss || t1 < t0 || t1 <= 0.0) continue;
      const int axis = t0 > 0.0 ? axis0 : axis1;
      t = t0 > 0.0 ? t0 : t1;
      n = Eigen::Vector3d::Zero();
      n[axis] = (ray.origin[axis] + t * d[axis]) > p.center[axis] ? 1.0 : -1.0;
    }
    if (!best || t < best->t) {
      SynthHit h;
      h.primitive = static_cast<int>(k);
      h.t = t;
      h.point = ray.origin + t * d;
      h.normal = n;
      best = h;
    }
  }
  return best;
}

SynthFrame render_synthetic_frame(const SynthSceneSpec& spec, const Camera& cam) {
  SynthFrame out;
  out.rgb = Image<float>(cam.width, cam.height, 3);
  out.thermal = ThermalMap(cam.width, cam.height);
  out.coverage = Image<std::uint8_t>(cam.width, cam.height, 1);
  const Eigen::Vector3d light = spec.light_direction.normalized();
  const int s = spec.supersample;
  tbb::parallel_for(0, cam.height, [&](int y) {
    for (int x = 0; x < cam.width; ++x) {
      double rgb[3] = {0, 0, 0};
      double temp = 0.0;
      for (int sy = 0; sy < s; ++sy) {
        for (int sx = 0; sx < s; ++sx) {
          const double u = x + (sx + 0.5) / s;
          const double v = y + (sy + 0.5) / s;
          const Ray ray = generate_ray(cam, u, v);
          const auto hit = intersect_scene(spec, ray);
          if (!hit) {
            for (int c = 0; c < 3; ++c) rgb[c] += spec.background_rgb[c];
            temp += spec.background_temperature;
            continue;
          }
          const auto& prim = spec.primitives[hit->primitive];
          const double lambert = std::max(0.0, hit->normal.dot(light));
          const double shade = spec.ambient + (1.0 - spec.ambient) * lambert;
          const auto albedo = prim.albedo_at(hit->point);
          for (int c = 0; c < 3; ++c) rgb[c] += albedo[c] * shade;
          temp += prim.temperature_at(hit->point);
        }
      }
      const double inv = 1.0 / (s * s);
      for (int c = 0; c < 3; ++c) out.rgb.at(x, y, c) = static_cast<float>(rgb[c] * inv);
      out.thermal.celsius.at(x, y) = static_cast<float>(temp * inv);
      out.coverage.at(x, y) = intersect_scene(spec, generate_ray(cam, x + 0.5, y + 0.5)) ? 1 : 0;
    }
  });
  return out;
}

void generate_synthetic_scene(const SynthSceneSpec& spec, const fs::path& dir,
                              std::uint64_t seed) {
  spec.validate();
  fs::create_directories(dir / "rgb");
  fs::create_directories(dir / "thermal");
  fs::create_directories(dir / "thermal_raw");
  SceneManifest m;
  m.t_min = spec.t_min;
  m.t_max = spec.t_max;
  m.test_stride = spec.test_stride;
  m.aabb = spec.scene_box;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, spec.thermal_noise_std);
  const auto cams = spec.cameras();
  for (std::size_t i = 0; i < cams.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%04zu", i);
    SynthFrame f = render_synthetic_frame(spec, cams[i]);
    if (spec.thermal_noise_std > 0.0) {
      for (std::size_t p = 0; p < f.thermal.size(); ++p) {
        f.thermal[p] = static_cast<float>(std::clamp(f.thermal[p] + noise(rng), spec.t_min, spec.t_max));
      }
    }
    FrameRecord rec;
    rec.id = name;
    rec.rgb_path = fs::path("rgb") / (std::string(name) + ".png");
    rec.thermal_path = fs::path("thermal") / (std::string(name) + ".png");
    rec.thermal_raw_path = fs::path("thermal_raw") / (std::string(name) + ".csv");
    rec.camera = cams[i];
    write_png8(dir / rec.rgb_path, to_u8(f.rgb));
    write_png16(dir / rec.thermal_path, encode_thermal_map(f.thermal, spec.t_min, spec.t_max));
    write_csv_grid(dir / rec.thermal_raw_path, f.thermal.celsius);
    m.frames.push_back(std::move(rec));
  }
  m.validate();
  m.write(dir / "manifest.json");
}

}  // namespace thermofield
