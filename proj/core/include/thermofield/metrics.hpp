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

// Image-quality and temperature-accuracy metrics for rendered views.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "thermofield/common.hpp"

namespace thermofield {

/// Mean |pred - gt| over pixels valid in both maps. Throws MetricError when
/// no pixel is jointly valid or shapes differ.
double mae(const ThermalMap& pred, const ThermalMap& gt);

struct OtsuResult {
  double threshold = 0.0;  // lower edge of the first bin of the upper class
  int bin = 0;             // first bin of the upper class
  std::vector<std::uint8_t> above;  // per pixel; 0 for invalid pixels
};

/// Otsu's method over `bins` equal bins spanning the valid values of `gt`.
/// Ties go to the lower bin. Throws MetricError for a constant image.
OtsuResult otsu_threshold(const ThermalMap& gt, int bins = 256);

enum class RoiSide { Auto, Above, Below };
RoiSide parse_roi_side(std::string_view name);
std::string_view roi_side_name(RoiSide side);

struct RoiResult {
  double mae = 0.0;
  double threshold = 0.0;
  bool above = true;                // which Otsu class was taken
  std::vector<std::uint8_t> mask;   // ROI pixels
};

/// MAE over the region of interest. With RoiSide::Auto the ROI is the Otsu
/// class of `gt` whose mean absolute deviation from the median valid
/// temperature is larger.
RoiResult mae_roi(const ThermalMap& pred, const ThermalMap& gt, RoiSide side = RoiSide::Auto,
                  int bins = 256);

/// 10 log10(range^2 / MSE) over all entries; +inf for identical images.
double psnr(const Image<float>& pred, const Image<float>& gt, double data_range);

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), k1 = 0.01,
/// k2 = 0.03, averaged over valid window positions and then over channels.
double ssim(const Image<float>& pred, const Image<float>& gt, double data_range);

/// Thermal maps normalised by `bounds` (data range 1).
double psnr_thermal(const ThermalMap& pred, const ThermalMap& gt, const TemperatureBounds& bounds);
double ssim_thermal(const ThermalMap& pred, const ThermalMap& gt, const TemperatureBounds& bounds);

inline constexpr double kPsnrTableCap = 99.0;

struct ErrorMap {
  Image<float> abs_error;       // degrees Celsius, 0 where not jointly valid
  Image<std::uint8_t> colored;  // RGB with a scale bar on the right
  double scale_max = 0.0;       // value at the top of the scale bar
};

/// `scale_max <= 0` scales to the largest error.
ErrorMap error_map(const ThermalMap& pred, const ThermalMap& gt, double scale_max = 0.0);

struct ViewMetrics {
  std::string id;
  std::optional<double> mae, mae_roi, roi_threshold;
  std::optional<double> psnr_rgb, ssim_rgb;
  std::optional<double> psnr_th, ssim_th;
};

struct MetricsReport {
  std::string scene;
  std::string mode;
  std::vector<ViewMetrics> views;

  /// Means over the views that define each metric.
  ViewMetrics aggregate() const;
  std::string to_json() const;
  /// Fixed-width table, one row per view plus a mean row; PSNR capped at 99.
  std::string to_table() const;
};

}  // namespace thermofield
