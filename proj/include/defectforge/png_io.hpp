// Copyright (C) 2026 The DefectForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <png.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "defectforge/error.hpp"
#include "defectforge/image.hpp"

namespace defectforge {

namespace detail {

inline void png_write_to_vector(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + len);
}

inline void png_flush_noop(png_structp) {}

// Encodes rows of `channels` bytes per pixel. When `one_bit` is set the data
// is single-channel 0/1 and is packed to 1-bit grayscale.
inline std::vector<std::uint8_t> encode_png(const std::uint8_t* data, int width, int height,
                                            int channels, bool one_bit) {
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorKind::IoError, "libpng init failed");
  }
  std::vector<std::uint8_t> row;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorKind::IoError, "png encode failed");
  }
  png_set_write_fn(png, &out, png_write_to_vector, png_flush_noop);
  png_set_compression_level(png, 1);
  png_set_filter(png, PNG_FILTER_TYPE_BASE, one_bit ? PNG_FILTER_NONE : PNG_FILTER_SUB);

  const int color = channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
               one_bit ? 1 : 8, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (one_bit) {
    row.assign(static_cast<std::size_t>((width + 7) / 8), 0);
    for (int y = 0; y < height; ++y) {
      std::fill(row.begin(), row.end(), 0);
      const auto* src = data + static_cast<std::size_t>(y) * width;
      for (int x = 0; x < width; ++x) {
        if (src[x]) row[static_cast<std::size_t>(x >> 3)] |= static_cast<std::uint8_t>(0x80 >> (x & 7));
      }
      png_write_row(png, row.data());
    }
  } else {
    const std::size_t stride = static_cast<std::size_t>(width) * channels;
    for (int y = 0; y < height; ++y) {
      png_write_row(png, const_cast<png_bytep>(data + stride * y));
    }
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

inline std::vector<std::uint8_t> decode_png(std::span<const std::uint8_t> bytes, int format,
                                            int& width, int& height) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw Error(ErrorKind::IoError, std::string("png decode failed: ") + img.message);
  }
  img.format = static_cast<png_uint_32>(format);
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw Error(ErrorKind::IoError, std::string("png decode failed: ") + img.message);
  }
  width = static_cast<int>(img.width);
  height = static_cast<int>(img.height);
  return buf;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_png(const Image& img) {
  return detail::encode_png(img.pixels.data(), img.width, img.height, 3, false);
}

/// Masks are stored as 1-bit grayscale PNGs.
inline std::vector<std::uint8_t> encode_png(const Mask& m) {
  return detail::encode_png(m.data.data(), m.width, m.height, 1, true);
}

inline Image decode_png_image(std::span<const std::uint8_t> bytes) {
  Image img;
  img.pixels = detail::decode_png(bytes, PNG_FORMAT_RGB, img.width, img.height);
  return img;
}

/// Any grayscale or color PNG; a pixel is set when its gray value is >= 128.
inline Mask decode_png_mask(std::span<const std::uint8_t> bytes) {
  Mask m;
  m.data = detail::decode_png(bytes, PNG_FORMAT_GRAY, m.width, m.height);
  for (auto& v : m.data) v = v >= 128 ? 1 : 0;
  return m;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot read " + path.string(), path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes via a temporary sibling and rename, so readers never see partial files.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::WriteFailure, "cannot write " + tmp.string(), path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::WriteFailure, "short write " + tmp.string(), path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::WriteFailure, "rename failed: " + ec.message(), path.string());
}

inline void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline Image read_png_image(const std::filesystem::path& path) {
  return decode_png_image(read_file_bytes(path));
}
inline Mask read_png_mask(const std::filesystem::path& path) {
  return decode_png_mask(read_file_bytes(path));
}
inline void write_png(const std::filesystem::path& path, const Image& img) {
  write_file_atomic(path, encode_png(img));
}
inline void write_png(const std::filesystem::path& path, const Mask& m) {
  write_file_atomic(path, encode_png(m));
}

}  // namespace defectforge
