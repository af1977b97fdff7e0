// SPDX-License-Identifier: Apache-2.0
//
// radioloc: urban radio-map localization benchmark
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#pragma once

// File helpers: 8-bit grayscale PNG via libpng, raw little-endian float64 grids, CRC-32 checksums,
// and atomic (temp + rename) writes.

#include "radioloc/errors.hpp"
#include "radioloc/grid.hpp"

#include <png.h>
#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace radioloc::io
{

namespace fs = std::filesystem;

inline std::uint32_t crc32_bytes(const void *data, std::size_t len, std::uint32_t seed = 0)
{
    uLong crc = seed;
    const auto *p = static_cast<const Bytef *>(data);
    while (len > 0)
    {
        const uInt chunk = uInt(std::min<std::size_t>(len, 1u << 30));
        crc = ::crc32(crc, p, chunk);
        p += chunk;
        len -= chunk;
    }
    return std::uint32_t(crc);
}

inline std::string read_file(const fs::path &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw MalformedFileError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::string hex32(std::uint32_t v)
{
    std::ostringstream ss;
    ss << std::hex << std::setw(8) << std::setfill('0') << v;
    return ss.str();
}

inline std::string file_crc32(const fs::path &path)
{
    const auto bytes = read_file(path);
    return hex32(crc32_bytes(bytes.data(), bytes.size()));
}

// Write to a sibling temp file, then rename over the destination.
inline void write_atomic(const fs::path &path, const std::string &bytes)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw std::runtime_error("cannot write " + tmp.string());
        out.write(bytes.data(), std::streamsize(bytes.size()));
        if (!out)
            throw std::runtime_error("short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

// --- PNG ------------------------------------------------------------------

inline std::string encode_png_gray8(const Grid<std::uint8_t> &img)
{
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = png_uint_32(img.cols());
    image.height = png_uint_32(img.rows());
    image.format = PNG_FORMAT_GRAY;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.data().data(), 0, nullptr))
        throw std::runtime_error(std::string("png encode failed: ") + image.message);
    std::string out(size, '\0');
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.data().data(), 0, nullptr))
        throw std::runtime_error(std::string("png encode failed: ") + image.message);
    out.resize(size);
    return out;
}

inline void write_png_gray8(const fs::path &path, const Grid<std::uint8_t> &img)
{
    write_atomic(path, encode_png_gray8(img));
}

// Any PNG, converted to 8-bit gray by libpng.
inline Grid<std::uint8_t> decode_png_gray8(const std::string &bytes, const std::string &what)
{
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
        throw MalformedFileError("invalid PNG " + what + ": " + image.message);
    image.format = PNG_FORMAT_GRAY;
    Grid<std::uint8_t> img(int(image.height), int(image.width), 0);
    if (!png_image_finish_read(&image, nullptr, img.data().data(), 0, nullptr))
    {
        png_image_free(&image);
        throw MalformedFileError("corrupt PNG " + what + ": " + image.message);
    }
    return img;
}

inline Grid<std::uint8_t> read_png_gray8(const fs::path &path)
{
    return decode_png_gray8(read_file(path), path.string());
}

// Gray level in [0,1] quantized to 0..255.
inline Grid<std::uint8_t> quantize_gray(const RealGrid &gray)
{
    Grid<std::uint8_t> out(gray.rows(), gray.cols(), 0);
    for (std::size_t i = 0; i < gray.size(); ++i)
        out.at_index(i) = std::uint8_t(std::lround(std::clamp(gray.at_index(i), 0.0, 1.0) * 255.0));
    return out;
}

inline RealGrid dequantize_gray(const Grid<std::uint8_t> &img)
{
    RealGrid out(img.rows(), img.cols(), 0.0);
    for (std::size_t i = 0; i < img.size(); ++i)
        out.at_index(i) = img.at_index(i) / 255.0;
    return out;
}

// --- raw float64 grids ----------------------------------------------------
// Layout: "RLGRID01" magic, int32 rows, int32 cols, rows*cols float64, all little-endian.

static_assert(std::endian::native == std::endian::little, "raw grid I/O assumes a little-endian host");

inline std::string encode_real_grid(const RealGrid &g)
{
    std::string out = "RLGRID01";
    const std::int32_t dims[2] = {g.rows(), g.cols()};
    out.append(reinterpret_cast<const char *>(dims), sizeof(dims));
    out.append(reinterpret_cast<const char *>(g.data().data()), g.size() * sizeof(double));
    return out;
}

inline RealGrid decode_real_grid(const std::string &bytes, const std::string &what)
{
    if (bytes.size() < 16 || bytes.compare(0, 8, "RLGRID01") != 0)
        throw MalformedFileError("bad grid header in " + what);
    std::int32_t dims[2];
    std::memcpy(dims, bytes.data() + 8, sizeof(dims));
    if (dims[0] < 0 || dims[1] < 0 || bytes.size() != 16 + std::size_t(dims[0]) * dims[1] * sizeof(double))
        throw MalformedFileError("truncated grid in " + what);
    RealGrid g(dims[0], dims[1], 0.0);
    std::memcpy(g.data().data(), bytes.data() + 16, g.size() * sizeof(double));
    return g;
}

inline std::string encode_binary_grid(const BinaryGrid &g)
{
    std::string out = "RLMASK01";
    const std::int32_t dims[2] = {g.rows(), g.cols()};
    out.append(reinterpret_cast<const char *>(dims), sizeof(dims));
    out.append(reinterpret_cast<const char *>(g.data().data()), g.size());
    return out;
}

inline BinaryGrid decode_binary_grid(const std::string &bytes, const std::string &what)
{
    if (bytes.size() < 16 || bytes.compare(0, 8, "RLMASK01") != 0)
        throw MalformedFileError("bad mask header in " + what);
    std::int32_t dims[2];
    std::memcpy(dims, bytes.data() + 8, sizeof(dims));
    if (dims[0] < 0 || dims[1] < 0 || bytes.size() != 16 + std::size_t(dims[0]) * dims[1])
        throw MalformedFileError("truncated mask in " + what);
    BinaryGrid g(dims[0], dims[1], 0);
    std::memcpy(g.data().data(), bytes.data() + 16, g.size());
    return g;
}

// Fixed 4-decimal rendering used by CSV outputs; parse(format4(x)) is the stored value.
inline std::string format4(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

inline double round4(double v)
{
    return std::strtod(format4(v).c_str(), nullptr);
}

} // namespace radioloc::io
