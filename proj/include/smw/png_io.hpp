#pragma once

#include <png.h>

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "smw/tensor.hpp"

namespace smw {

// 8-bit RGB PNG; values clamped to [0, 1] and rounded.
inline void write_png(const std::string& path, const Image& img) {
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error("cannot open for writing: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    throw std::runtime_error("png write failed: " + path);
  }

  png_init_io(png, fp);
  png_set_IHDR(png, info, img.w, img.h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<png_byte> row(static_cast<std::size_t>(img.w) * 3);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        double v = img.at(y, x, ch);
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        row[x * 3 + ch] = static_cast<png_byte>(v * 255.0 + 0.5);
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

// Headerless row-major H x W x 3 little-endian float32 dump.
inline void write_raw_f32(const std::string& path, const Image& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  std::vector<float> buf;
  buf.reserve(img.data.size());
  for (double v : img.data) buf.push_back(static_cast<float>(v));
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace smw
