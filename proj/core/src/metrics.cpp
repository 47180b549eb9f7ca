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

#include "thermofield/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

namespace thermofield {

namespace {

void check_shapes(const ThermalMap& a, const ThermalMap& b) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw MetricError("thermal maps have different shapes");
  }
}

bool jointly_valid(const ThermalMap& a, const ThermalMap& b, std::size_t i) {
  return (a.valid.empty() || a.valid[i] != 0) && (b.valid.empty() || b.valid[i] != 0);
}

bool is_valid(const ThermalMap& m, std::size_t i) { return m.valid.empty() || m.valid[i] != 0; }

}  // namespace

double mae(const ThermalMap& pred, const ThermalMap& gt) {
  check_shapes(pred, gt);
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!jointly_valid(pred, gt, i)) continue;
    acc += std::abs(static_cast<double>(pred[i]) - gt[i]);
    ++n;
  }
  if (n == 0) throw MetricError("mae: no jointly valid pixels");
  return acc / static_cast<double>(n);
}

OtsuResult otsu_threshold(const ThermalMap& gt, int bins) {
  if (bins < 2) throw MetricError("otsu needs at least two bins");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!is_valid(gt, i)) continue;
    lo = std::min(lo, static_cast<double>(gt[i]));
    hi = std::max(hi, static_cast<double>(gt[i]));
  }
  if (!(hi > lo)) throw MetricError("otsu: image has fewer than two distinct values");
  const double width = (hi - lo) / bins;
  auto bin_of = [&](double v) { return std::clamp(static_cast<int>((v - lo) / width), 0, bins - 1); };

  std::vector<double> hist(bins, 0.0);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (is_valid(gt, i)) hist[bin_of(gt[i])] += 1.0;
  }
  const double total = std::accumulate(hist.begin(), hist.end(), 0.0);
  double sum_all = 0.0;
  for (int b = 0; b < bins; ++b) sum_all += hist[b] * (lo + (b + 0.5) * width);

  double best = -1.0;
  int best_k = 1;
  double w0 = 0.0, s0 = 0.0;
  for (int k = 1; k < bins; ++k) {
    w0 += hist[k - 1];
    s0 += hist[k - 1] * (lo + (k - 0.5) * width);
    const double w1 = total - w0;
    if (w0 <= 0.0 || w1 <= 0.0) continue;
    const double m0 = s0 / w0;
    const double m1 = (sum_all - s0) / w1;
    const double between = (w0 / total) * (w1 / total) * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_k = k;
    }
  }
  OtsuResult r;
  r.bin = best_k;
  r.threshold = lo + best_k * width;
  r.above.assign(gt.size(), 0);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (is_valid(gt, i) && bin_of(gt[i]) >= best_k) r.above[i] = 1;
  }
  return r;
}

RoiSide parse_roi_side(std::string_view name) {
  if (name == "auto") return RoiSide::Auto;
  if (name == "above") return RoiSide::Above;
  if (name == "below") return RoiSide::Below;
  throw ConfigError("roi side must be auto, above or below");
}

std::string_view roi_side_name(RoiSide side) {
  switch (side) {
    case RoiSide::Auto: return "auto";
    case RoiSide::Above: return "above";
    case RoiSide::Below: return "below";
  }
  return "auto";
}

RoiResult mae_roi(const ThermalMap& pred, const ThermalMap& gt, RoiSide side, int bins) {
  check_shapes(pred, gt);
  const OtsuResult otsu = otsu_threshold(gt, bins);
  RoiResult r;
  r.threshold = otsu.threshold;
  if (side == RoiSide::Auto) {
    std::vector<double> values;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (is_valid(gt, i)) values.push_back(gt[i]);
    }
    const std::size_t mid = values.size() / 2;
    std::nth_element(values.begin(), values.begin() + mid, values.end());
    double median = values[mid];
    if (values.size() % 2 == 0) {
      const double lower = *std::max_element(values.begin(), values.begin() + mid);
      median = 0.5 * (median + lower);
    }
    double dev[2] = {0, 0};
    double cnt[2] = {0, 0};
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (!is_valid(gt, i)) continue;
      const int c = otsu.above[i];
      dev[c] += std::abs(gt[i] - median);
      cnt[c] += 1.0;
    }
    const double below_dev = cnt[0] > 0 ? dev[0] / cnt[0] : 0.0;
    const double above_dev = cnt[1] > 0 ? dev[1] / cnt[1] : 0.0;
    r.above = above_dev >= below_dev;
  } else {
    r.above = side == RoiSide::Above;
  }
  r.mask.assign(gt.size(), 0);
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!is_valid(gt, i) || (otsu.above[i] != 0) != r.above) continue;
    r.mask[i] = 1;
    if (!jointly_valid(pred, gt, i)) continue;
    acc += std::abs(static_cast<double>(pred[i]) - gt[i]);
    ++n;
  }
  if (n == 0) throw MetricError("mae_roi: region of interest is empty");
  r.mae = acc / static_cast<double>(n);
  return r;
}

double psnr(const Image<float>& pred, const Image<float>& gt, double data_range) {
  if (!pred.same_shape(gt)) throw MetricError("psnr: images have different shapes");
  if (gt.data.empty()) throw MetricError("psnr: empty image");
  if (!(data_range > 0.0)) throw MetricError("psnr: data_range must be positive");
  double acc = 0.0;
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    const double e = static_cast<double>(pred.data[i]) - gt.data[i];
    acc += e * e;
  }
  const double mse = acc / static_cast<double>(gt.data.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / mse);
}

namespace {

constexpr int kWin = 11;

std::array<double, kWin> gaussian_window() {
  std::array<double, kWin> w{};
  double s = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double x = i - kWin / 2;
    w[i] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
    s += w[i];
  }
  for (auto& v : w) v /= s;
  return w;
}

// Valid-mode separable filtering of one channel.
std::vector<double> filter_valid(const std::vector<double>& img, int w, int h,
                                 const std::array<double, kWin>& k) {
  const int ow = w - kWin + 1;
  const int oh = h - kWin + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < kWin; ++i) acc += k[i] * img[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < kWin; ++i) acc += k[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  return out;
}

}  // namespace

double ssim(const Image<float>& pred, const Image<float>& gt, double data_range) {
  if (!pred.same_shape(gt)) throw MetricError("ssim: images have different shapes");
  if (gt.width < kWin || gt.height < kWin) throw MetricError("ssim: image smaller than the window");
  if (!(data_range > 0.0)) throw MetricError("ssim: data_range must be positive");
  const auto k = gaussian_window();
  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  const int w = gt.width;
  const int h = gt.height;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  double total = 0.0;
  for (int c = 0; c < gt.channels; ++c) {
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = pred.data[i * gt.channels + c];
      y[i] = gt.data[i * gt.channels + c];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, w, h, k);
    const auto my = filter_valid(y, w, h, k);
    const auto sxx = filter_valid(xx, w, h, k);
    const auto syy = filter_valid(yy, w, h, k);
    const auto sxy = filter_valid(xy, w, h, k);
    double acc = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cov = sxy[i] - mx[i] * my[i];
      acc += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += acc / static_cast<double>(mx.size());
  }
  return total / gt.channels;
}

namespace {

Image<float> normalized(const ThermalMap& m, const TemperatureBounds& b) {
  Image<float> out(m.width(), m.height(), 1);
  for (std::size_t i = 0; i < m.size(); ++i) out.data[i] = static_cast<float>(b.normalize(m[i]));
  return out;
}

}  // namespace

double psnr_thermal(const ThermalMap& pred, const ThermalMap& gt, const TemperatureBounds& bounds) {
  check_shapes(pred, gt);
  bounds.validate();
  return psnr(normalized(pred, bounds), normalized(gt, bounds), 1.0);
}

double ssim_thermal(const ThermalMap& pred, const ThermalMap& gt, const TemperatureBounds& bounds) {
  check_shapes(pred, gt);
  bounds.validate();
  return ssim(normalized(pred, bounds), normalized(gt, bounds), 1.0);
}

namespace {

// Perceptually ordered dark-to-bright ramp.
std::array<std::uint8_t, 3> colormap(double t) {
  static constexpr double stops[5][3] = {{0.00, 0.00, 0.02},
                                         {0.34, 0.06, 0.43},
                                         {0.73, 0.21, 0.33},
                                         {0.98, 0.55, 0.04},
                                         {0.99, 1.00, 0.64}};
  t = std::clamp(t, 0.0, 1.0) * 4.0;
  const int i = std::min(static_cast<int>(t), 3);
  const double f = t - i;
  std::array<std::uint8_t, 3> out{};
  for (int c = 0; c < 3; ++c) {
    const double v = stops[i][c] + f * (stops[i + 1][c] - stops[i][c]);
    out[c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

}  // namespace

ErrorMap error_map(const ThermalMap& pred, const ThermalMap& gt, double scale_max) {
  check_shapes(pred, gt);
  const int w = gt.width();
  const int h = gt.height();
  ErrorMap m;
  m.abs_error = Image<float>(w, h, 1);
  double worst = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!jointly_valid(pred, gt, i)) continue;
    m.abs_error.data[i] = std::abs(pred[i] - gt[i]);
    worst = std::max(worst, static_cast<double>(m.abs_error.data[i]));
  }
  m.scale_max = scale_max > 0.0 ? scale_max : (worst > 0.0 ? worst : 1.0);

  constexpr int kGap = 4;
  const int bar = std::max(8, w / 16);
  m.colored = Image<std::uint8_t>(w + kGap + bar, h, 3, 255);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto c = colormap(m.abs_error.at(x, y) / m.scale_max);
      for (int k = 0; k < 3; ++k) m.colored.at(x, y, k) = c[k];
    }
    const auto c = colormap(h > 1 ? 1.0 - static_cast<double>(y) / (h - 1) : 1.0);
    for (int x = w + kGap; x < w + kGap + bar; ++x) {
      for (int k = 0; k < 3; ++k) m.colored.at(x, y, k) = c[k];
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Report

ViewMetrics MetricsReport::aggregate() const {
  ViewMetrics mean;
  mean.id = "mean";
  using Field = std::optional<double> ViewMetrics::*;
  for (Field f : {&ViewMetrics::mae, &ViewMetrics::mae_roi, &ViewMetrics::roi_threshold,
                  &ViewMetrics::psnr_rgb, &ViewMetrics::ssim_rgb, &ViewMetrics::psnr_th,
                  &ViewMetrics::ssim_th}) {
    double acc = 0.0;
    int n = 0;
    for (const auto& v : views) {
      if (!(v.*f)) continue;
      acc += *(v.*f);
      ++n;
    }
    if (n > 0) mean.*f = acc / n;
  }
  return mean;
}

namespace {

nlohmann::json view_json(const ViewMetrics& v) {
  nlohmann::json j;
  j["id"] = v.id;
  auto put = [&](const char* key, const std::optional<double>& x) {
    if (!x) {
      j[key] = nullptr;
    } else if (std::isinf(*x)) {
      j[key] = "inf";
    } else {
      j[key] = *x;
    }
  };
  put("mae", v.mae);
  put("mae_roi", v.mae_roi);
  put("roi_threshold", v.roi_threshold);
  put("psnr_rgb", v.psnr_rgb);
  put("ssim_rgb", v.ssim_rgb);
  put("psnr_th", v.psnr_th);
  put("ssim_th", v.ssim_th);
  return j;
}

std::string cell(const std::optional<double>& v, bool is_psnr) {
  if (!v) return "n/a";
  double x = *v;
  if (is_psnr) x = std::min(x, kPsnrTableCap);
  char buf[32];
  std::snprintf(buf, sizeof(buf), is_psnr ? "%.2f" : "%.3f", x);
  return buf;
}

}  // namespace

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["scene"] = scene;
  j["mode"] = mode;
  j["views"] = nlohmann::json::array();
  for (const auto& v : views) j["views"].push_back(view_json(v));
  j["mean"] = view_json(aggregate());
  return j.dump(2);
}

std::string MetricsReport::to_table() const {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-12s %9s %9s %9s %9s %9s %9s\n", "view", "MAE", "MAE_roi",
                "PSNR_rgb", "SSIM_rgb", "PSNR_th", "SSIM_th");
  out += line;
  auto row = [&](const ViewMetrics& v) {
    std::snprintf(line, sizeof(line), "%-12s %9s %9s %9s %9s %9s %9s\n", v.id.c_str(),
                  cell(v.mae, false).c_str(), cell(v.mae_roi, false).c_str(),
                  cell(v.psnr_rgb, true).c_str(), cell(v.ssim_rgb, false).c_str(),
                  cell(v.psnr_th, true).c_str(), cell(v.ssim_th, false).c_str());
    out += line;
  };
  for (const auto& v : views) row(v);
  row(aggregate());
  return out;
}

}  // namespace thermofield
