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

#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace thermofield {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent configuration or mismatched shapes.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Index lookups that fall outside a table.
class LookupError : public Error {
 public:
  using Error::Error;
};

/// Operation called in the wrong order (e.g. backward before forward).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Malformed or missing scene data on disk.
class DatasetError : public Error {
 public:
  using Error::Error;
};

/// Metric undefined for the given inputs.
class MetricError : public Error {
 public:
  using Error::Error;
};

/// Numeric failure during optimisation. Carries the parameter group or loss
/// term that went non-finite.
class TrainingError : public Error {
 public:
  TrainingError(std::string what, std::string culprit)
      : Error(std::move(what)), culprit_(std::move(culprit)) {}
  const std::string& culprit() const noexcept { return culprit_; }

 private:
  std::string culprit_;
};

/// Interleaved row-major image.
template <typename T>
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<T> data;

  Image() = default;
  Image(int w, int h, int c, T fill = T{})
      : width(w), height(h), channels(c),
        data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  bool empty() const { return data.empty(); }

  T& at(int x, int y, int c = 0) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  const T& at(int x, int y, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool same_shape(const Image& other) const {
    return width == other.width && height == other.height && channels == other.channels;
  }
};

/// Per-pixel temperatures in degrees Celsius with a validity mask.
struct ThermalMap {
  Image<float> celsius;             // single channel
  std::vector<std::uint8_t> valid;  // 1 = usable pixel

  ThermalMap() = default;
  ThermalMap(int w, int h, float fill = 0.0f)
      : celsius(w, h, 1, fill), valid(static_cast<std::size_t>(w) * h, 1) {}

  int width() const { return celsius.width; }
  int height() const { return celsius.height; }
  std::size_t size() const { return celsius.data.size(); }
  float& operator[](std::size_t i) { return celsius.data[i]; }
  float operator[](std::size_t i) const { return celsius.data[i]; }
};

/// Operating range of the thermal sensor, degrees Celsius.
struct SensorRange {
  double min = -20.0;
  double max = 120.0;
};

/// Affine map between degrees Celsius and the normalised [0, 1] range used
/// by the networks.
struct TemperatureBounds {
  double t_min = 0.0;
  double t_max = 1.0;

  double range() const { return t_max - t_min; }
  double normalize(double celsius) const { return (celsius - t_min) / range(); }
  double denormalize(double unit) const { return t_min + unit * range(); }
  void validate() const {
    if (!(t_min < t_max)) throw ConfigError("temperature bounds require t_min < t_max");
  }
};

}  // namespace thermofield
