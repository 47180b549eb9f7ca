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

#include "thermofield/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <png.h>

namespace thermofield {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.string().c_str(), mode));
  if (!f) throw DatasetError("cannot open " + path.string());
  return f;
}

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  if (what != nullptr) *what = msg;
  png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

// Decodes into rows of `bit_depth` samples after applying `setup` transforms.
struct Decoded {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 0;
  int color_type = 0;
  std::vector<png_byte> pixels;
};

Decoded decode(const std::filesystem::path& path, bool keep16) {
  FilePtr f = open_file(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw DatasetError(path.string() + " is not a PNG file");
  }
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
  if (png == nullptr) throw DatasetError("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  Decoded d;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DatasetError("cannot decode " + path.string() + ": " + err);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  d.color_type = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (d.color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (d.color_type == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (d.color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (depth == 16) {
    if (keep16) {
      png_set_swap(png);  // little-endian host order
    } else {
      png_set_strip_16(png);
    }
  }
  png_read_update_info(png, info);
  d.width = static_cast<int>(png_get_image_width(png, info));
  d.height = static_cast<int>(png_get_image_height(png, info));
  d.channels = png_get_channels(png, info);
  d.bit_depth = png_get_bit_depth(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  d.pixels.resize(stride * d.height);
  rows.resize(d.height);
  for (int y = 0; y < d.height; ++y) rows[y] = d.pixels.data() + stride * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return d;
}

void encode(const std::filesystem::path& path, int width, int height, int channels, int depth,
            const png_byte* data) {
  if (width < 1 || height < 1) throw DatasetError("cannot write an empty image");
  if (channels != 1 && channels != 3) throw DatasetError("PNG output needs 1 or 3 channels");
  FilePtr f = open_file(path, "wb");
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
  if (png == nullptr) throw DatasetError("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows(height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DatasetError("cannot encode " + path.string() + ": " + err);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, width, height, depth,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (depth == 16) png_set_swap(png);
  const std::size_t stride = static_cast<std::size_t>(width) * channels * (depth / 8);
  for (int y = 0; y < height; ++y) rows[y] = const_cast<png_bytep>(data + stride * y);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Image<std::uint8_t> read_png8(const std::filesystem::path& path) {
  Decoded d = decode(path, false);
  if (d.channels == 2) throw DatasetError(path.string() + ": unsupported gray+alpha layout");
  Image<std::uint8_t> img(d.width, d.height, d.channels);
  std::copy(d.pixels.begin(), d.pixels.end(), img.data.begin());
  return img;
}

void write_png8(const std::filesystem::path& path, const Image<std::uint8_t>& image) {
  encode(path, image.width, image.height, image.channels, 8, image.data.data());
}

Image<std::uint16_t> read_png16(const std::filesystem::path& path) {
  Decoded d = decode(path, true);
  if (d.bit_depth != 16 || d.channels != 1) {
    throw DatasetError(path.string() + " is not a single-channel 16-bit PNG");
  }
  Image<std::uint16_t> img(d.width, d.height, 1);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    img.data[i] = static_cast<std::uint16_t>(d.pixels[2 * i] | (d.pixels[2 * i + 1] << 8));
  }
  return img;
}

void write_png16(const std::filesystem::path& path, const Image<std::uint16_t>& image) {
  if (image.channels != 1) throw DatasetError("16-bit PNG output must be single-channel");
  std::vector<png_byte> bytes(image.data.size() * 2);
  for (std::size_t i = 0; i < image.data.size(); ++i) {
    bytes[2 * i] = static_cast<png_byte>(image.data[i] & 0xff);
    bytes[2 * i + 1] = static_cast<png_byte>(image.data[i] >> 8);
  }
  encode(path, image.width, image.height, 1, 16, bytes.data());
}

Image<float> to_unit_float(const Image<std::uint8_t>& image) {
  Image<float> out(image.width, image.height, image.channels);
  for (std::size_t i = 0; i < image.data.size(); ++i) out.data[i] = image.data[i] / 255.0f;
  return out;
}

Image<std::uint8_t> to_u8(const Image<float>& image) {
  Image<std::uint8_t> out(image.width, image.height, image.channels);
  for (std::size_t i = 0; i < image.data.size(); ++i) {
    const float v = std::isfinite(image.data[i]) ? std::clamp(image.data[i], 0.0f, 1.0f) : 0.0f;
    out.data[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

Image<float> read_csv_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open " + path.string());
  std::vector<float> values;
  int width = -1;
  int height = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    std::stringstream ss(line);
    std::string cell;
    int count = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        values.push_back(std::stof(cell, &used));
      } catch (const std::exception&) {
        throw DatasetError(path.string() + ": bad number '" + cell + "'");
      }
      ++count;
    }
    if (width < 0) width = count;
    if (count != width) throw DatasetError(path.string() + ": ragged rows");
    ++height;
  }
  if (height == 0 || width <= 0) throw DatasetError(path.string() + ": empty grid");
  Image<float> img(width, height, 1);
  img.data = std::move(values);
  return img;
}

void write_csv_grid(const std::filesystem::path& path, const Image<float>& image) {
  if (image.channels != 1) throw DatasetError("CSV grids are single-channel");
  std::FILE* raw = std::fopen(path.string().c_str(), "w");
  if (raw == nullptr) throw DatasetError("cannot open " + path.string());
  FilePtr f(raw);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      std::fprintf(f.get(), x == 0 ? "%.9g" : ",%.9g", static_cast<double>(image.at(x, y)));
    }
    std::fputc('\n', f.get());
  }
}

}  // namespace thermofield
