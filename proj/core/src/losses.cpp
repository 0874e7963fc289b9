#include "nfuse/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "nfuse/parallel.hpp"
#include "nfuse/rng.hpp"

namespace nfuse {

void LossWeights::validate() const {
  if (normal < 0 || rgb < 0 || mask < 0 || eik < 0 || sparse < 0 || smooth < 0)
    throw std::invalid_argument("loss weights must be non-negative");
  if (eps_thresh > 0)
    throw std::invalid_argument("eps_thresh must be <= 0");
  if (drop_fraction_rgb < 0 || drop_fraction_rgb >= 1 || drop_fraction_mask < 0 ||
      drop_fraction_mask >= 1)
    throw std::invalid_argument("drop fractions must be in [0,1)");
}

double normal_weight(const Vec3& v, const Vec3& g, double eps_thresh) {
  const double denom = v.norm() * g.norm();
  if (denom < 1e-12) return 0.0;
  const double c = v.dot(g) / denom;
  if (c > eps_thresh) return 0.0;
  return std::exp(std::fabs(c));
}

DropResult outlier_drop_mean(std::span<const double> errors, double drop_fraction) {
  if (drop_fraction < 0 || drop_fraction >= 1)
    throw std::invalid_argument("outlier_drop_mean: drop_fraction must be in [0,1)");
  DropResult out;
  const size_t n = errors.size();
  out.kept.assign(n, 1);
  if (n == 0) return out;

  const size_t n_drop = static_cast<size_t>(std::floor(drop_fraction * n));
  if (n_drop > 0) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    // descending error; among ties the higher index drops first, so the
    // lower index stays kept
    std::nth_element(order.begin(), order.begin() + n_drop - 1, order.end(),
                     [&](int a, int b) {
                       if (errors[a] != errors[b]) return errors[a] > errors[b];
                       return a > b;
                     });
    for (size_t i = 0; i < n_drop; ++i) out.kept[order[i]] = 0;
  }

  double sum = 0.0;
  size_t cnt = 0;
  for (size_t i = 0; i < n; ++i)
    if (out.kept[i]) {
      sum += errors[i];
      ++cnt;
    }
  out.kept_count = cnt;
  out.mean = cnt > 0 ? sum / cnt : 0.0;
  return out;
}

NormalLossResult normal_loss(const RayBatch& batch, std::span<const RayRender> rendered,
                             double eps_thresh, bool want_grad, bool geometry_aware) {
  if (rendered.size() != batch.size())
    throw std::invalid_argument("normal_loss: batch and rendered misaligned");
  NormalLossResult out;
  if (want_grad) out.d_rendered.assign(batch.size(), Vec3{});

  const bool uniform = !geometry_aware;
  double num = 0.0, wsum = 0.0;
  for (size_t k = 0; k < batch.size(); ++k) {
    const RayPixel& px = batch.pixels[k];
    if (px.m < 0.5 || !px.g_ok || !rendered[k].normal_ok) continue;
    const double w =
        uniform ? 1.0 : normal_weight(px.ray.direction, px.g, eps_thresh);
    if (w == 0.0) continue;
    const Vec3 g_hat = px.g.normalized();
    num += w * (1.0 - rendered[k].normal.dot(g_hat));
    wsum += w;
  }
  out.weight_sum = wsum;
  if (wsum <= 0.0) return out;  // loss 0, zero gradient

  out.value = num / wsum;
  if (want_grad) {
    for (size_t k = 0; k < batch.size(); ++k) {
      const RayPixel& px = batch.pixels[k];
      if (px.m < 0.5 || !px.g_ok || !rendered[k].normal_ok) continue;
      const double w =
          uniform ? 1.0 : normal_weight(px.ray.direction, px.g, eps_thresh);
      if (w == 0.0) continue;
      out.d_rendered[k] = px.g.normalized() * (-w / wsum);
    }
  }
  return out;
}

RgbLossResult rgb_loss(const RayBatch& batch, std::span<const RayRender> rendered,
                       double drop_fraction, bool want_grad) {
  if (rendered.size() != batch.size())
    throw std::invalid_argument("rgb_loss: batch and rendered misaligned");
  std::vector<double> errors(batch.size());
  for (size_t k = 0; k < batch.size(); ++k)
    errors[k] = (rendered[k].color - batch.pixels[k].h).norm2();
  const DropResult drop = outlier_drop_mean(errors, drop_fraction);

  RgbLossResult out;
  out.value = drop.mean;
  if (want_grad) {
    out.d_rendered.assign(batch.size(), Vec3{});
    if (drop.kept_count > 0) {
      const double inv = 1.0 / drop.kept_count;
      for (size_t k = 0; k < batch.size(); ++k)
        if (drop.kept[k])
          out.d_rendered[k] = (rendered[k].color - batch.pixels[k].h) * (2.0 * inv);
    }
  }
  return out;
}

namespace {
constexpr double kMaskClamp = 1e-5;
}

MaskLossResult mask_loss(const RayBatch& batch, std::span<const RayRender> rendered,
                         double drop_fraction, bool want_grad) {
  if (rendered.size() != batch.size())
    throw std::invalid_argument("mask_loss: batch and rendered misaligned");
  std::vector<double> errors(batch.size());
  for (size_t k = 0; k < batch.size(); ++k) {
    const double mc = clamp(rendered[k].mask, kMaskClamp, 1.0 - kMaskClamp);
    const double m = batch.pixels[k].m;
    errors[k] = -(m * std::log(mc) + (1.0 - m) * std::log(1.0 - mc));
  }
  const DropResult drop = outlier_drop_mean(errors, drop_fraction);

  MaskLossResult out;
  out.value = drop.mean;
  if (want_grad) {
    out.d_rendered.assign(batch.size(), 0.0);
    if (drop.kept_count > 0) {
      const double inv = 1.0 / drop.kept_count;
      for (size_t k = 0; k < batch.size(); ++k) {
        if (!drop.kept[k]) continue;
        const double mh = rendered[k].mask;
        if (mh <= kMaskClamp || mh >= 1.0 - kMaskClamp) continue;  // clamped
        const double m = batch.pixels[k].m;
        out.d_rendered[k] = (-m / mh + (1.0 - m) / (1.0 - mh)) * inv;
      }
    }
  }
  return out;
}

double eikonal_reg(const Field& f, int n_points, uint64_t seed, ParamGrad* grad,
                   double grad_scale) {
  if (n_points <= 0) return 0.0;
  StreamRng rng(seed, 0xE1C0ULL);
  double sum = 0.0;
  const double inv_n = 1.0 / n_points;
  for (int i = 0; i < n_points; ++i) {
    const Vec3 p = rng.in_unit_cube();
    const Vec3 g = f.sdf_gradient(p);
    const double n = g.norm();
    if (n < 1e-12) {
      sum += 1.0;  // (0 - 1)^2, with zero (sub)gradient
      continue;
    }
    const double r = n - 1.0;
    sum += r * r;
    if (grad) f.backprop_sdf(p, 0.0, g * (2.0 * r / n * inv_n * grad_scale), *grad);
  }
  return sum * inv_n;
}

double sparsity_reg(const Field& f, int n_points, uint64_t seed, ParamGrad* grad,
                    double grad_scale, double tau) {
  if (n_points <= 0) return 0.0;
  StreamRng rng(seed, 0x59A2ULL);
  double sum = 0.0;
  const double inv_n = 1.0 / n_points;
  for (int i = 0; i < n_points; ++i) {
    const Vec3 p = rng.in_unit_cube();
    const double v = f.sdf(p);
    const double e = std::exp(-tau * std::fabs(v));
    sum += e;
    if (grad && v != 0.0) {
      const double up = -tau * (v > 0 ? 1.0 : -1.0) * e * inv_n * grad_scale;
      f.backprop_sdf(p, up, Vec3{}, *grad);
    }
  }
  return sum * inv_n;
}

double smooth_reg(const Field& f, int n_points, double delta, uint64_t seed,
                  ParamGrad* grad, double grad_scale) {
  if (n_points <= 0 || delta == 0.0) return 0.0;
  StreamRng rng(seed, 0x5300ULL);
  double sum = 0.0;
  const double inv_n = 1.0 / n_points;
  // base points stay delta inside the bounds so the probe pair never runs
  // into the boundary clamp
  const double span = std::fmax(1.0 - delta, 0.0);
  for (int i = 0; i < n_points; ++i) {
    const Vec3 p = rng.in_unit_cube() * span;
    const Vec3 q = p + rng.unit_vector() * delta;
    const Vec3 d = f.sdf_gradient(p) - f.sdf_gradient(q);
    sum += d.norm2();
    if (grad) {
      f.backprop_sdf(p, 0.0, d * (2.0 * inv_n * grad_scale), *grad);
      f.backprop_sdf(q, 0.0, d * (-2.0 * inv_n * grad_scale), *grad);
    }
  }
  return sum * inv_n;
}

bool LossBreakdown::finite() const {
  return std::isfinite(normal) && std::isfinite(rgb) && std::isfinite(mask) &&
         std::isfinite(eik) && std::isfinite(sparse) && std::isfinite(smooth) &&
         std::isfinite(total);
}

LossBreakdown total_loss(const Field& f, const RayBatch& batch, const LossWeights& w,
                         const TotalLossParams& params, ParamGrad* grad,
                         TotalLossWorkspace* workspace) {
  w.validate();
  const size_t n = batch.size();
  const int threads = resolve_threads(params.threads);

  TotalLossWorkspace local_ws;
  TotalLossWorkspace& ws = workspace ? *workspace : local_ws;

  // Phase 1: forward render, caches retained for the backward pass.
  if (grad && ws.caches.size() < n) ws.caches.resize(n);
  std::vector<RayRender> rendered(n);
  {
    parallel_chunks(static_cast<int64_t>(n), threads, [&](int, int64_t b, int64_t e) {
      RayShadeCache local;
      DepthScratch scratch;
      for (int64_t k = b; k < e; ++k) {
        sample_depths(f, batch.pixels[k].ray, params.render, static_cast<uint64_t>(k),
                      scratch);
        RayShadeCache& c = grad ? ws.caches[k] : local;
        if (scratch.out.empty()) {
          c.used = 0;
          c.out = RayRender{};
          rendered[k] = RayRender{};
          continue;
        }
        rendered[k] = shade_ray(f, batch.pixels[k].ray, scratch.out, params.render, &c);
      }
    });
  }

  // Phase 2: losses and per-ray upstream derivatives.
  const bool want_grad = grad != nullptr;
  const auto ln = normal_loss(batch, rendered, w.eps_thresh, want_grad,
                              w.geometry_aware);
  const auto lr = rgb_loss(batch, rendered, w.drop_fraction_rgb, want_grad);
  const auto lm = mask_loss(batch, rendered, w.drop_fraction_mask, want_grad);

  LossBreakdown out;
  out.normal = ln.value;
  out.rgb = lr.value;
  out.mask = lm.value;
  double wsum_mean = 0.0;
  for (const auto& r : rendered) wsum_mean += r.mask;
  out.mean_weight_sum = n > 0 ? wsum_mean / n : 0.0;

  // Phase 3: backward over rays. Single-threaded accumulation runs in
  // canonical ray order (the deterministic mode); multi-threaded
  // accumulation uses lock-free atomic adds.
  if (grad) {
    if (grad->sdf.size() != f.sdf_data().size()) *grad = ParamGrad(f);
    const bool atomic = threads > 1;
    parallel_chunks(static_cast<int64_t>(grad->sdf.size() + grad->color.size()), threads,
                    [&](int, int64_t b, int64_t e) {
                      const int64_t ns = static_cast<int64_t>(grad->sdf.size());
                      for (int64_t i = b; i < e; ++i)
                        (i < ns ? grad->sdf[i] : grad->color[i - ns]) = 0.0;
                    });
    grad->log_sharpness = 0.0;
    parallel_chunks(static_cast<int64_t>(n), threads, [&](int, int64_t b, int64_t e) {
      for (int64_t k = b; k < e; ++k) {
        if (ws.caches[k].used == 0) continue;
        const Vec3 d_color = lr.d_rendered[k] * w.rgb;
        const Vec3 d_normal = ln.d_rendered[k] * w.normal;
        const double d_mask = lm.d_rendered[k] * w.mask;
        shade_ray_backward(f, batch.pixels[k].ray, ws.caches[k], d_color, d_normal,
                           d_mask, *grad, atomic);
      }
    });
  }

  const double delta =
      params.reg.smooth_delta > 0 ? params.reg.smooth_delta : 2.0 / f.sdf_res();
  out.eik = eikonal_reg(f, params.reg.n_points, params.reg.seed, grad, w.eik);
  out.sparse = sparsity_reg(f, params.reg.n_points, params.reg.seed + 1, grad, w.sparse,
                            params.reg.sparsity_tau);
  out.smooth = smooth_reg(f, params.reg.n_points, delta, params.reg.seed + 2, grad, w.smooth);

  out.total = w.normal * out.normal + w.rgb * out.rgb + w.mask * out.mask +
              w.eik * out.eik + w.sparse * out.sparse + w.smooth * out.smooth;
  return out;
}

}  // namespace nfuse
