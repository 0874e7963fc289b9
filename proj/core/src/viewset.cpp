#include "nfuse/viewset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "nfuse/rng.hpp"

namespace nfuse {

void ViewSet::validate() const {
  const size_t k = cameras.size();
  if (normals.size() != k || colors.size() != k || masks.size() != k)
    throw std::invalid_argument("viewset: map counts do not match camera count");
  for (size_t i = 0; i < k; ++i) {
    const CameraView& cam = cameras[i];
    cam.validate();
    auto check_dims = [&](const Image& img, int ch, const char* what) {
      if (img.width != cam.width || img.height != cam.height || img.channels != ch)
        throw std::invalid_argument(std::string("viewset: ") + what +
                                    " resolution/channels mismatch");
    };
    check_dims(normals[i], 3, "normal map");
    check_dims(colors[i], 3, "color map");
    check_dims(masks[i], 1, "mask");
    for (int v = 0; v < cam.height; ++v)
      for (int u = 0; u < cam.width; ++u) {
        const Vec3 n = normals[i].rgb(u, v);
        if (masks[i].at(u, v) > 0.5f) {
          if (std::fabs(n.norm() - 1.0) > 1e-3)
            throw std::invalid_argument("viewset: masked-in normal not unit");
        } else if (n.norm() > 0.0) {
          throw std::invalid_argument("viewset: masked-out pixel missing sentinel normal");
        }
      }
  }
}

void CorruptionSpec::validate() const {
  if (outlier_fraction < 0 || outlier_fraction > 1)
    throw std::invalid_argument("corruption: outlier_fraction must be in [0,1]");
  if (flip_fraction < 0 || flip_fraction > 1)
    throw std::invalid_argument("corruption: flip_fraction must be in [0,1]");
  if (mask_erosion_px < 0)
    throw std::invalid_argument("corruption: mask_erosion_px must be >= 0");
}

namespace {

// First `take` entries of a seeded partial Fisher-Yates shuffle of `items`.
std::vector<int> draw_subset(std::vector<int> items, size_t take, StreamRng& rng) {
  take = std::min(take, items.size());
  for (size_t i = 0; i < take; ++i) {
    const size_t j = i + rng.below(items.size() - i);
    std::swap(items[i], items[j]);
  }
  items.resize(take);
  return items;
}

}  // namespace

ViewSet corrupt(const ViewSet& vs, const CorruptionSpec& spec) {
  spec.validate();
  ViewSet out = vs;

  for (int k = 0; k < vs.view_count(); ++k) {
    const CameraView& cam = vs.cameras[k];
    const Image& mask = vs.masks[k];

    std::vector<int> masked_in;
    for (int v = 0; v < cam.height; ++v)
      for (int u = 0; u < cam.width; ++u)
        if (mask.at(u, v) > 0.5f) masked_in.push_back(v * cam.width + u);

    const size_t n_out =
        static_cast<size_t>(std::floor(spec.outlier_fraction * masked_in.size()));
    const size_t n_flip =
        static_cast<size_t>(std::floor(spec.flip_fraction * masked_in.size()));

    StreamRng pick_color(spec.seed, 0xC0102ULL, k);
    StreamRng pick_normal(spec.seed, 0x2302a1ULL, k);
    const std::vector<int> color_outliers = draw_subset(masked_in, n_out, pick_color);
    const std::vector<int> normal_outliers = draw_subset(masked_in, n_out, pick_normal);

    // Flips act on real normals only: exclude the normal-outlier set.
    std::vector<int> flip_pool;
    {
      std::vector<char> taken(static_cast<size_t>(cam.width) * cam.height, 0);
      for (int i : normal_outliers) taken[i] = 1;
      for (int i : masked_in)
        if (!taken[i]) flip_pool.push_back(i);
    }
    StreamRng pick_flip(spec.seed, 0xF11BULL, k);
    const std::vector<int> flips = draw_subset(std::move(flip_pool), n_flip, pick_flip);

    for (int idx : color_outliers) {
      const int u = idx % cam.width, v = idx / cam.width;
      StreamRng rng(spec.seed, 0x0C01ULL * (k + 1), u, v);
      out.colors[k].set_rgb(u, v, {rng.uniform(), rng.uniform(), rng.uniform()});
    }
    for (int idx : normal_outliers) {
      const int u = idx % cam.width, v = idx / cam.width;
      StreamRng rng(spec.seed, 0x0A02ULL * (k + 1), u, v);
      out.normals[k].set_rgb(u, v, rng.unit_vector());
    }
    for (int idx : flips) {
      const int u = idx % cam.width, v = idx / cam.width;
      const Vec3 g = vs.normals[k].rgb(u, v);
      const Vec3 view_dir = pixel_ray(cam, u, v, k).direction;
      // Reflect about the plane orthogonal to the ray; flips the sign of
      // cos(v, g), so a valid observation becomes an impossible one.
      Vec3 flipped = g - view_dir * (2.0 * g.dot(view_dir));
      if (flipped.dot(view_dir) <= 1e-4)
        flipped = (flipped + view_dir * 1e-2).normalized();
      else
        flipped = flipped.normalized();
      out.normals[k].set_rgb(u, v, flipped);
    }

    if (spec.mask_erosion_px > 0) {
      const int e = spec.mask_erosion_px;
      Image eroded(cam.width, cam.height, 1);
      for (int v = 0; v < cam.height; ++v)
        for (int u = 0; u < cam.width; ++u) {
          float m = mask.at(u, v);
          for (int dv = -e; dv <= e && m > 0.5f; ++dv)
            for (int du = -e; du <= e; ++du) {
              const int uu = u + du, vvp = v + dv;
              if (uu < 0 || uu >= cam.width || vvp < 0 || vvp >= cam.height ||
                  mask.at(uu, vvp) < 0.5f) {
                m = 0.0f;
                break;
              }
            }
          eroded.at(u, v) = m;
        }
      // keep the sentinel invariant on newly masked-out pixels
      for (int v = 0; v < cam.height; ++v)
        for (int u = 0; u < cam.width; ++u)
          if (eroded.at(u, v) < 0.5f) out.normals[k].set_rgb(u, v, {0, 0, 0});
      out.masks[k] = std::move(eroded);
    }
  }
  return out;
}

void save_viewset(const ViewSet& vs, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (int k = 0; k < vs.view_count(); ++k) {
    const std::string base = dir + "/view_" + std::to_string(k);
    write_png16(base + "_normal.png", encode_normal_map(vs.normals[k]));
    write_png8(base + "_rgb.png", vs.colors[k]);
    write_png8(base + "_mask.png", vs.masks[k]);
  }
  save_cameras_json(vs.cameras, dir + "/cameras.json");
}

ViewSet load_viewset(const std::string& dir) {
  ViewSet vs;
  vs.cameras = load_cameras_json(dir + "/cameras.json");
  for (size_t k = 0; k < vs.cameras.size(); ++k) {
    const std::string base = dir + "/view_" + std::to_string(k);
    Image normal = decode_normal_map(read_png(base + "_normal.png"));
    Image color = read_png(base + "_rgb.png");
    Image mask = read_png(base + "_mask.png");
    if (mask.channels != 1) throw std::runtime_error("viewset: mask must be grayscale");
    for (auto& m : mask.data) m = m > 0.5f ? 1.0f : 0.0f;
    // quantization never recovers the exact sentinel; restore it from the mask
    for (int v = 0; v < normal.height; ++v)
      for (int u = 0; u < normal.width; ++u)
        if (mask.at(u, v) < 0.5f) normal.set_rgb(u, v, {0, 0, 0});
    vs.normals.push_back(std::move(normal));
    vs.colors.push_back(std::move(color));
    vs.masks.push_back(std::move(mask));
  }
  if (!vs.cameras.empty()) vs.conditioning_image_index = 0;
  return vs;
}

CorruptionSpec corruption_from_json(const std::string& json_text) {
  const nlohmann::json j = nlohmann::json::parse(json_text);
  CorruptionSpec spec;
  spec.outlier_fraction = j.value("outlier_fraction", 0.0);
  spec.flip_fraction = j.value("flip_fraction", 0.0);
  spec.mask_erosion_px = j.value("mask_erosion_px", 0);
  spec.seed = j.value("seed", 0ULL);
  spec.validate();
  return spec;
}

CorruptionSpec load_corruption(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open corruption spec: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return corruption_from_json(ss.str());
}

}  // namespace nfuse
