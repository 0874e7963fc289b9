#include <cmath>

#include "nfuse/parallel.hpp"
#include "nfuse/viewset.hpp"

namespace nfuse {

namespace {

struct TraceResult {
  bool hit = false;
  Vec3 point;
};

// Sphere tracing against the scene SDF. The cube [-1,1]^3 bounds every
// scene, so rays are clipped to it before marching.
TraceResult sphere_trace(const AnalyticScene& scene, const Ray& ray,
                         const SphereTraceParams& params, double max_len) {
  // Clip to an origin-centered bounding sphere of the unit cube (radius
  // sqrt(3)), so marching starts near the scene.
  const double b = ray.origin.dot(ray.direction);
  const double c = ray.origin.norm2() - 3.0;
  const double disc = b * b - c;
  if (disc < 0.0) return {};
  double t = std::fmax(0.0, -b - std::sqrt(disc));
  const double t_end = std::fmin(max_len, -b + std::sqrt(disc));

  for (int step = 0; step < params.max_steps && t <= t_end; ++step) {
    const Vec3 p = ray.origin + ray.direction * t;
    const double d = scene.sdf(p);
    if (d < params.hit_threshold) return {true, p};
    t += d;
  }
  return {};
}

}  // namespace

ViewSet render_views(const AnalyticScene& scene, const std::vector<CameraView>& cams,
                     const SphereTraceParams& params, int threads) {
  for (const auto& c : cams) c.validate();
  ViewSet vs;
  vs.cameras = cams;
  vs.conditioning_image_index = cams.empty() ? std::nullopt : std::optional<int>(0);
  const int n_threads = resolve_threads(threads);

  for (size_t k = 0; k < cams.size(); ++k) {
    const CameraView& cam = cams[k];
    Image normal_map(cam.width, cam.height, 3);
    Image color_map(cam.width, cam.height, 3);
    Image mask_map(cam.width, cam.height, 1);
    const double max_len = 2.0 * cam.center().norm();

    parallel_for(static_cast<int64_t>(cam.width) * cam.height, n_threads, [&](int64_t i) {
      const int u = static_cast<int>(i % cam.width);
      const int v = static_cast<int>(i / cam.width);
      const Ray ray = pixel_ray(cam, u, v, static_cast<int>(k));
      const TraceResult tr = sphere_trace(scene, ray, params, max_len);
      if (tr.hit) {
        normal_map.set_rgb(u, v, scene.normal(tr.point));
        color_map.set_rgb(u, v, scene.color(tr.point));
        mask_map.at(u, v) = 1.0f;
      }
      // misses keep the zero init: black color, sentinel normal, mask 0
    });

    vs.normals.push_back(std::move(normal_map));
    vs.colors.push_back(std::move(color_map));
    vs.masks.push_back(std::move(mask_map));
  }
  return vs;
}

}  // namespace nfuse
