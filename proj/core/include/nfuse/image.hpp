#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nfuse/vec.hpp"

namespace nfuse {

/// Dense float image, interleaved channels, row-major.
struct Image {
  int width = 0, height = 0, channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c) : width(w), height(h), channels(c),
                               data(static_cast<size_t>(w) * h * c, 0.0f) {}

  float& at(int u, int v, int c = 0) {
    return data[(static_cast<size_t>(v) * width + u) * channels + c];
  }
  float at(int u, int v, int c = 0) const {
    return data[(static_cast<size_t>(v) * width + u) * channels + c];
  }
  Vec3 rgb(int u, int v) const {
    const size_t i = (static_cast<size_t>(v) * width + u) * channels;
    return {data[i], data[i + 1], data[i + 2]};
  }
  void set_rgb(int u, int v, const Vec3& c) {
    const size_t i = (static_cast<size_t>(v) * width + u) * channels;
    data[i] = static_cast<float>(c.x);
    data[i + 1] = static_cast<float>(c.y);
    data[i + 2] = static_cast<float>(c.z);
  }
  size_t pixel_count() const { return static_cast<size_t>(width) * height; }
};

// PNG codecs. Values are mapped as:
//   8-bit:  byte = round(clamp(v,0,1) * 255)
//   16-bit: sample = round(clamp(v,0,1) * 65535)
// write_png_* pick 8/16-bit RGB or 8-bit gray from `bit_depth`/`channels`.
void write_png8(const std::string& path, const Image& img);
void write_png16(const std::string& path, const Image& img);
Image read_png(const std::string& path);  // returns floats in [0,1]

// Normal-map codec: channel = (n+1)/2 mapped to 16-bit.
Image encode_normal_map(const Image& world_normals);  // 3ch [-1,1] -> 3ch [0,1]
Image decode_normal_map(const Image& encoded);        // 3ch [0,1] -> 3ch [-1,1]

}  // namespace nfuse
