#pragma once

#include <cstdio>
#include <filesystem>
#include <memory>
#include <vector>

#include <png.h>

#include "cof/core/tensor.hpp"

namespace cof::io {

// 8-bit image, interleaved: pixels[(y * width + x) * channels + c].
struct Image {
  int width = 0, height = 0, channels = 0;
  std::vector<unsigned char> pixels;
};

inline void write_png(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw InvalidInput("write_png: only gray or RGB images");
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * img.channels)
    throw InvalidInput("write_png: pixel buffer size mismatch");
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng error writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + y * stride));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Reads any PNG, converting to 8-bit RGB (channels = 3).
inline Image read_png_rgb(const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw IoError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng error reading " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  Image img;
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.channels = 3;
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) rows[y] = img.pixels.data() + static_cast<std::size_t>(y) * img.width * 3;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

// [3,H,W] in [0,1] <-> RGB image.
template <class T>
Tensor<T> image_to_tensor(const Image& img) {
  Tensor<T> t({3, img.height, img.width});
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        t.at(c, y, x) = static_cast<T>(img.pixels[(static_cast<std::size_t>(y) * img.width + x) * 3 + c]) / T(255);
  return t;
}

template <class T>
Image tensor_to_image(const Tensor<T>& t) {
  if (t.rank() != 3 || (t.dim(0) != 1 && t.dim(0) != 3)) throw InvalidInput("tensor_to_image: expects [1|3,H,W]");
  Image img;
  img.channels = static_cast<int>(t.dim(0));
  img.height = static_cast<int>(t.dim(1));
  img.width = static_cast<int>(t.dim(2));
  img.pixels.resize(t.size());
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        const double v = std::clamp(static_cast<double>(t.at(c, y, x)), 0.0, 1.0);
        img.pixels[(static_cast<std::size_t>(y) * img.width + x) * img.channels + c] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }
  return img;
}

}  // namespace cof::io
