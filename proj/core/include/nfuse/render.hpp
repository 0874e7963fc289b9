#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nfuse/camera.hpp"
#include "nfuse/field.hpp"

namespace nfuse {

struct RenderParams {
  int n_coarse = 64;
  int n_fine = 64;
  /// Stop compositing once transmittance falls below this (0 disables; keep
  /// 0 wherever gradients are checked against finite differences).
  double early_stop_transmittance = 0.0;
  uint64_t seed = 0;  // stream key for importance-sample jitter
};

/// Per-ray discretization: M+1 strictly increasing depths, the sdf at each,
/// and the M alpha/weight/transmittance triples of the logistic-CDF
/// compositing  alpha_i = max((Phi_s(f_i) - Phi_s(f_{i+1})) / Phi_s(f_i), 0),
/// w_i = T_i alpha_i, T_i = prod_{j<i} (1 - alpha_j).
struct RaySampleSet {
  std::vector<double> t;
  std::vector<double> f;
  std::vector<double> alpha;
  std::vector<double> weight;
  std::vector<double> transmittance;

  bool empty() const { return t.empty(); }
  double weight_sum() const {
    double s = 0;
    for (double w : weight) s += w;
    return s;
  }
};

std::string ray_sample_set_to_json(const RaySampleSet& s);

struct RayRender {
  Vec3 color{0, 0, 0};
  Vec3 normal{0, 0, 0};  // unit, or sentinel (0,0,0)
  bool normal_ok = false;
  double mask = 0.0;
};

/// Forward cache retained for the backward pass.
struct RayShadeCache {
  std::vector<double> depths;
  std::vector<double> f;        // at every depth
  std::vector<double> alpha;    // per interval
  std::vector<double> weight;
  std::vector<double> trans;
  std::vector<Vec3> grad;       // sdf spatial gradient at interval start
  std::vector<Vec3> color;      // activated color at interval start
  size_t used = 0;              // intervals actually composited
  Vec3 n_raw{0, 0, 0};
  double n_raw_norm = 0.0;
  RayRender out;
};

/// Intersection of the ray with the [-1,1]^3 cube; false on miss.
bool ray_cube_span(const Ray& ray, double* t_enter, double* t_exit);

/// Reusable buffers for per-ray depth sampling.
struct DepthScratch {
  RayShadeCache coarse;
  std::vector<double> cdf;
  std::vector<double> out;
};

/// n_coarse+1 uniform depths over the cube span plus n_fine importance
/// samples drawn from the coarse weight distribution (stratified, stream
/// keyed by (params.seed, ray_key)). Sample placement is treated as a
/// constant in the backward pass. Empty when the ray misses the cube.
std::vector<double> sample_depths(const Field& field, const Ray& ray,
                                  const RenderParams& params, uint64_t ray_key);

/// Allocation-free variant; the result lands in scratch.out.
void sample_depths(const Field& field, const Ray& ray, const RenderParams& params,
                   uint64_t ray_key, DepthScratch& scratch);

/// Coarse+fine march; the full discretization as a RaySampleSet.
RaySampleSet march(const Field& field, const Ray& ray, int n_coarse, int n_fine,
                   uint64_t ray_key = 0, uint64_t seed = 0);

/// Composites color / normal / mask over a fixed set of depths.
RayRender shade_ray(const Field& field, const Ray& ray, std::span<const double> depths,
                    const RenderParams& params, RayShadeCache* cache);

/// Accumulates parameter gradients for upstream derivatives w.r.t. the
/// rendered color, unit normal and mask.
void shade_ray_backward(const Field& field, const Ray& ray, const RayShadeCache& cache,
                        const Vec3& d_color, const Vec3& d_normal, double d_mask,
                        ParamGrad& grad, bool atomic = false);

RayRender render_ray(const Field& field, const Ray& ray, const RenderParams& params = {},
                     uint64_t ray_key = 0);

}  // namespace nfuse
