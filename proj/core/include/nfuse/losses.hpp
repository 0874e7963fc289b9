#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nfuse/field.hpp"
#include "nfuse/render.hpp"

namespace nfuse {

/// Weights of the six-term objective
///   L = l_n L_normal + l_rgb L_rgb + l_m L_mask
///     + l_e R_eik + l_s R_sparse + l_sm R_smooth
/// plus the normal-weight threshold and the outlier-drop fractions.
struct LossWeights {
  double normal = 1.0;
  double rgb = 1.0;
  double mask = 1.0;
  double eik = 0.1;
  double sparse = 0.01;
  double smooth = 0.01;
  double eps_thresh = -0.05;  // must be <= 0
  double drop_fraction_rgb = 0.05;
  // The silhouette is carved by a thin band of high-error mask pixels; a
  // trimmed mask mean discards exactly that band and geometry stalls, so
  // mask dropping is off by default (the mechanism stays available).
  double drop_fraction_mask = 0.0;
  // Ablation switch: false replaces w_k by 1 for every included pixel.
  bool geometry_aware = true;

  void validate() const;
};

/// One sampled pixel: supervision targets plus its ray.
struct RayPixel {
  Ray ray;            // direction = viewing direction v_k
  Vec3 g{0, 0, 0};    // generated world-space normal, sentinel when absent
  bool g_ok = false;
  Vec3 h{0, 0, 0};    // generated color
  double m = 0.0;     // mask value in {0,1}
};

struct RayBatch {
  std::vector<RayPixel> pixels;
  size_t size() const { return pixels.size(); }
};

/// Geometry-aware weight: zero when the observed normal faces away from the
/// camera less than the threshold allows (an impossible observation is
/// down-weighted to nothing), exp(|cos|) otherwise.
double normal_weight(const Vec3& v, const Vec3& g, double eps_thresh);

struct DropResult {
  double mean = 0.0;
  std::vector<uint8_t> kept;  // 1 = kept, aligned with input
  size_t kept_count = 0;
};

/// Trimmed mean: drops the floor(drop_fraction * n) largest errors (ties
/// resolved by keeping the lower original index) and averages the rest.
DropResult outlier_drop_mean(std::span<const double> errors, double drop_fraction);

struct NormalLossResult {
  double value = 0.0;
  double weight_sum = 0.0;
  std::vector<Vec3> d_rendered;  // dL/d(unit rendered normal), empty unless requested
};
NormalLossResult normal_loss(const RayBatch& batch, std::span<const RayRender> rendered,
                             double eps_thresh, bool want_grad = false,
                             bool geometry_aware = true);

struct RgbLossResult {
  double value = 0.0;
  std::vector<Vec3> d_rendered;
};
RgbLossResult rgb_loss(const RayBatch& batch, std::span<const RayRender> rendered,
                       double drop_fraction, bool want_grad = false);

struct MaskLossResult {
  double value = 0.0;
  std::vector<double> d_rendered;
};
MaskLossResult mask_loss(const RayBatch& batch, std::span<const RayRender> rendered,
                         double drop_fraction, bool want_grad = false);

// Regularizers, each a mean over n_points seeded uniform samples of the
// cube. A non-null grad accumulates d(term)/d(params) * grad_scale.
double eikonal_reg(const Field& f, int n_points, uint64_t seed,
                   ParamGrad* grad = nullptr, double grad_scale = 1.0);
double sparsity_reg(const Field& f, int n_points, uint64_t seed,
                    ParamGrad* grad = nullptr, double grad_scale = 1.0,
                    double tau = 20.0);
double smooth_reg(const Field& f, int n_points, double delta, uint64_t seed,
                  ParamGrad* grad = nullptr, double grad_scale = 1.0);

struct RegParams {
  int n_points = 1024;
  double smooth_delta = 0.0;  // 0: one cell (2 / sdf_res)
  double sparsity_tau = 20.0;
  uint64_t seed = 0;
};

struct TotalLossParams {
  RenderParams render;
  RegParams reg;
  int threads = 1;
};

/// Reusable buffers for total_loss; keeping one alive across iterations
/// avoids reallocating the per-ray forward caches.
struct TotalLossWorkspace {
  std::vector<RayShadeCache> caches;
};

struct LossBreakdown {
  double normal = 0, rgb = 0, mask = 0, eik = 0, sparse = 0, smooth = 0;
  double total = 0;
  double mean_weight_sum = 0;  // mean rendered mask over the batch
  bool finite() const;
};

/// Renders the batch, evaluates the weighted objective and, when grad is
/// non-null, overwrites it with the parameter gradient. Deterministic for
/// fixed (params.render.seed, params.reg.seed, threads); with threads = 1
/// the reduction order is canonical.
LossBreakdown total_loss(const Field& f, const RayBatch& batch, const LossWeights& w,
                         const TotalLossParams& params, ParamGrad* grad = nullptr,
                         TotalLossWorkspace* workspace = nullptr);

}  // namespace nfuse
