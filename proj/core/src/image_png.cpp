#include "nfuse/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace nfuse {

namespace {

struct FileCloser {
  void operator()(FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

int png_color_type(int channels) {
  switch (channels) {
    case 1: return PNG_COLOR_TYPE_GRAY;
    case 3: return PNG_COLOR_TYPE_RGB;
    default: throw std::invalid_argument("png: only 1 or 3 channels supported");
  }
}

void write_png_impl(const std::string& path, const Image& img, int bit_depth) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot open for writing: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng error while writing " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width, img.height, bit_depth, png_color_type(img.channels),
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);

  const size_t row_n = static_cast<size_t>(img.width) * img.channels;
  if (bit_depth == 8) {
    std::vector<uint8_t> row(row_n);
    for (int v = 0; v < img.height; ++v) {
      for (size_t i = 0; i < row_n; ++i) {
        const float x = img.data[static_cast<size_t>(v) * row_n + i];
        row[i] = static_cast<uint8_t>(std::lround(clamp(x, 0.0, 1.0) * 255.0));
      }
      png_write_row(png, row.data());
    }
  } else {
    std::vector<uint16_t> row(row_n);
    png_set_swap(png);  // we feed native little-endian samples
    for (int v = 0; v < img.height; ++v) {
      for (size_t i = 0; i < row_n; ++i) {
        const float x = img.data[static_cast<size_t>(v) * row_n + i];
        row[i] = static_cast<uint16_t>(std::lround(clamp(x, 0.0, 1.0) * 65535.0));
      }
      png_write_row(png, reinterpret_cast<png_bytep>(row.data()));
    }
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png8(const std::string& path, const Image& img) {
  write_png_impl(path, img, 8);
}

void write_png16(const std::string& path, const Image& img) {
  write_png_impl(path, img, 16);
}

Image read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng error while reading " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  const int width = png_get_image_width(png, info);
  const int height = png_get_image_height(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  int color_type = png_get_color_type(png, info);

  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  if (bit_depth == 16) png_set_swap(png);
  png_read_update_info(png, info);

  const int channels = png_get_channels(png, info);
  Image img(width, height, channels);
  const size_t row_n = static_cast<size_t>(width) * channels;
  const double scale = bit_depth == 16 ? 65535.0 : 255.0;

  if (bit_depth == 16) {
    std::vector<uint16_t> row(row_n);
    for (int v = 0; v < height; ++v) {
      png_read_row(png, reinterpret_cast<png_bytep>(row.data()), nullptr);
      for (size_t i = 0; i < row_n; ++i)
        img.data[static_cast<size_t>(v) * row_n + i] = static_cast<float>(row[i] / scale);
    }
  } else {
    std::vector<uint8_t> row(row_n);
    for (int v = 0; v < height; ++v) {
      png_read_row(png, row.data(), nullptr);
      for (size_t i = 0; i < row_n; ++i)
        img.data[static_cast<size_t>(v) * row_n + i] = static_cast<float>(row[i] / scale);
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

Image encode_normal_map(const Image& world_normals) {
  Image out(world_normals.width, world_normals.height, 3);
  for (size_t i = 0; i < world_normals.data.size(); ++i)
    out.data[i] = (world_normals.data[i] + 1.0f) * 0.5f;
  return out;
}

Image decode_normal_map(const Image& encoded) {
  Image out(encoded.width, encoded.height, 3);
  for (size_t i = 0; i < encoded.data.size(); ++i)
    out.data[i] = encoded.data[i] * 2.0f - 1.0f;
  return out;
}

}  // namespace nfuse
