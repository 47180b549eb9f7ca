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

// PNG and CSV image files. All failures raise DatasetError.

#pragma once

#include <cstdint>
#include <filesystem>

#include "thermofield/common.hpp"

namespace thermofield {

/// 8-bit PNG as 1 (gray) or 3 (RGB) channels; alpha is dropped, palettes
/// are expanded and 16-bit inputs are reduced to 8 bits.
Image<std::uint8_t> read_png8(const std::filesystem::path& path);
/// Writes 1- or 3-channel 8-bit images.
void write_png8(const std::filesystem::path& path, const Image<std::uint8_t>& image);

/// Single-channel 16-bit PNG; other formats are rejected.
Image<std::uint16_t> read_png16(const std::filesystem::path& path);
void write_png16(const std::filesystem::path& path, const Image<std::uint16_t>& image);

/// [0, 255] -> [0, 1].
Image<float> to_unit_float(const Image<std::uint8_t>& image);
/// [0, 1] -> [0, 255] with clamping and rounding.
Image<std::uint8_t> to_u8(const Image<float>& image);

/// Comma-separated rows of one float per pixel, written with round-trip precision.
Image<float> read_csv_grid(const std::filesystem::path& path);
void write_csv_grid(const std::filesystem::path& path, const Image<float>& image);

}  // namespace thermofield
