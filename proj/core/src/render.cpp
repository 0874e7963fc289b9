#include "nfuse/render.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include <json.hpp>

#include "nfuse/rng.hpp"

namespace nfuse {

namespace {

inline double softplus(double z) {
  if (z > 30.0) return z;
  if (z < -30.0) return std::exp(z);
  return std::log1p(std::exp(z));
}

/// log Phi_s(x) for Phi_s(x) = 1 / (1 + exp(-s x)), stable for large |s x|.
inline double log_logistic(double sx) { return -softplus(-sx); }

inline double sigmoid(double z) {
  if (z >= 0) {
    const double e = std::exp(-z);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

bool ray_cube_span(const Ray& ray, double* t_enter, double* t_exit) {
  double lo = 0.0, hi = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double o = ray.origin[a], d = ray.direction[a];
    if (std::fabs(d) < 1e-12) {
      if (o < -1.0 || o > 1.0) return false;
      continue;
    }
    double t0 = (-1.0 - o) / d, t1 = (1.0 - o) / d;
    if (t0 > t1) std::swap(t0, t1);
    lo = std::fmax(lo, t0);
    hi = std::fmin(hi, t1);
  }
  if (lo >= hi) return false;
  *t_enter = lo;
  *t_exit = hi;
  return true;
}

namespace {

struct AlphaResult {
  double alpha;
  double r;      // Phi(f_next) / Phi(f)
  bool active;   // false when clamped at 0
};

inline AlphaResult alpha_from_pair(double f0, double f1, double s) {
  const double r = std::exp(log_logistic(s * f1) - log_logistic(s * f0));
  if (r >= 1.0) return {0.0, r, false};
  return {1.0 - r, r, true};
}

void composite(const Field& field, const Ray& ray, std::span<const double> depths,
               double early_stop, RayShadeCache& c, bool want_appearance) {
  const size_t m = depths.size() >= 2 ? depths.size() - 1 : 0;
  c.depths.assign(depths.begin(), depths.end());
  c.f.resize(depths.size());
  c.alpha.assign(m, 0.0);
  c.weight.assign(m, 0.0);
  c.trans.assign(m, 1.0);
  c.grad.assign(want_appearance ? m : 0, Vec3{});
  c.color.assign(want_appearance ? m : 0, Vec3{});
  c.used = 0;
  c.n_raw = {0, 0, 0};
  c.n_raw_norm = 0.0;
  c.out = RayRender{};
  if (m == 0) return;

  const double s = field.sharpness();

  // pass 1: sdf values along the ray
  c.f[0] = field.sdf(ray.origin + ray.direction * depths[0]);

  // pass 2: compositing weights
  double T = 1.0;
  double mask = 0.0;
  size_t used = 0;
  for (size_t i = 0; i < m; ++i) {
    c.f[i + 1] = field.sdf(ray.origin + ray.direction * depths[i + 1]);
    const AlphaResult a = alpha_from_pair(c.f[i], c.f[i + 1], s);
    c.alpha[i] = a.alpha;
    c.weight[i] = T * a.alpha;
    c.trans[i] = T;
    mask += c.weight[i];
    T *= (1.0 - a.alpha);
    used = i + 1;
    if (early_stop > 0.0 && T < early_stop) break;
  }
  c.used = used;
  c.out.mask = mask;
  if (!want_appearance) return;

  // pass 3: appearance only where it carries weight; zero-weight samples
  // contribute nothing to the outputs or to any gradient
  Vec3 color_sum{0, 0, 0};
  Vec3 n_raw{0, 0, 0};
  for (size_t i = 0; i < used; ++i) {
    const double w = c.weight[i];
    if (w <= 0.0) continue;
    const Vec3 p_i = ray.origin + ray.direction * depths[i];
    Vec3 col;
    field.sample_appearance(p_i, &c.grad[i], &col);
    c.color[i] = col;
    color_sum += col * w;
    n_raw += c.grad[i] * w;
  }
  c.out.color = color_sum;
  c.n_raw = n_raw;
  c.n_raw_norm = n_raw.norm();
  if (c.n_raw_norm > 1e-6) {
    c.out.normal = n_raw / c.n_raw_norm;
    c.out.normal_ok = true;
  }
}

}  // namespace

void sample_depths(const Field& field, const Ray& ray, const RenderParams& params,
                   uint64_t ray_key, DepthScratch& scratch) {
  std::vector<double>& out = scratch.out;
  out.clear();
  double t0, t1;
  if (!ray_cube_span(ray, &t0, &t1)) return;
  const int n = std::max(2, params.n_coarse);

  out.resize(n + 1);
  for (int i = 0; i <= n; ++i) out[i] = t0 + (t1 - t0) * i / n;
  if (params.n_fine <= 0) return;

  // Coarse weights drive the importance distribution.
  RayShadeCache& coarse = scratch.coarse;
  composite(field, ray, out, 0.0, coarse, /*want_appearance=*/false);
  double wsum = 0.0;
  for (double w : coarse.weight) wsum += w;
  if (wsum < 1e-9) return;

  std::vector<double>& cdf = scratch.cdf;
  cdf.assign(coarse.weight.size() + 1, 0.0);
  for (size_t i = 0; i < coarse.weight.size(); ++i)
    cdf[i + 1] = cdf[i] + coarse.weight[i] / wsum;
  cdf.back() = 1.0;

  StreamRng rng(params.seed, 0x5a3fULL, ray_key);
  const size_t n_coarse_depths = out.size();
  for (int j = 0; j < params.n_fine; ++j) {
    const double u = (j + rng.uniform()) / params.n_fine;
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    size_t idx = static_cast<size_t>(std::distance(cdf.begin(), it));
    idx = std::min(std::max<size_t>(idx, 1), coarse.weight.size()) - 1;
    const double span = cdf[idx + 1] - cdf[idx];
    const double frac = span > 0 ? (u - cdf[idx]) / span : 0.5;
    out.push_back(out[idx] + (out[idx + 1] - out[idx]) * frac);
  }
  (void)n_coarse_depths;

  std::sort(out.begin(), out.end());
  size_t kept = 0;
  for (size_t i = 0; i < out.size(); ++i)
    if (kept == 0 || out[i] > out[kept - 1] + 1e-12) out[kept++] = out[i];
  out.resize(kept);
}

std::vector<double> sample_depths(const Field& field, const Ray& ray,
                                  const RenderParams& params, uint64_t ray_key) {
  DepthScratch scratch;
  sample_depths(field, ray, params, ray_key, scratch);
  return std::move(scratch.out);
}

RaySampleSet march(const Field& field, const Ray& ray, int n_coarse, int n_fine,
                   uint64_t ray_key, uint64_t seed) {
  if (n_coarse < 2) throw std::invalid_argument("march: n_coarse must be >= 2");
  RenderParams p;
  p.n_coarse = n_coarse;
  p.n_fine = n_fine;
  p.seed = seed;
  const std::vector<double> depths = sample_depths(field, ray, p, ray_key);
  RaySampleSet out;
  if (depths.empty()) return out;

  RayShadeCache cache;
  composite(field, ray, depths, 0.0, cache, /*want_appearance=*/false);
  out.t = cache.depths;
  out.f = cache.f;
  out.alpha = cache.alpha;
  out.weight = cache.weight;
  out.transmittance = cache.trans;
  return out;
}

RayRender shade_ray(const Field& field, const Ray& ray, std::span<const double> depths,
                    const RenderParams& params, RayShadeCache* cache) {
  RayShadeCache local;
  RayShadeCache& c = cache ? *cache : local;
  composite(field, ray, depths, params.early_stop_transmittance, c,
            /*want_appearance=*/true);
  return c.out;
}

void shade_ray_backward(const Field& field, const Ray& ray, const RayShadeCache& cache,
                        const Vec3& d_color, const Vec3& d_normal, double d_mask,
                        ParamGrad& grad, bool atomic) {
  const size_t m = cache.used;
  if (m == 0) return;
  const double s = field.sharpness();

  //  d(unit normal)/d(raw normal): project out the radial component.
  Vec3 d_nraw{0, 0, 0};
  if (cache.out.normal_ok && d_normal.norm2() > 0.0) {
    const Vec3& nh = cache.out.normal;
    d_nraw = (d_normal - nh * nh.dot(d_normal)) / cache.n_raw_norm;
  }

  // dL/dw_i, and per-sample color / sdf-gradient upstreams.
  std::vector<double> d_w(m);
  for (size_t i = 0; i < m; ++i) {
    double a = d_mask;
    a += d_color.dot(cache.color[i]);
    a += d_nraw.dot(cache.grad[i]);
    d_w[i] = a;
  }

  // Reverse the compositing recurrence  w_i = T_i alpha_i,
  // T_{i+1} = T_i (1 - alpha_i)  without dividing by (1 - alpha).
  std::vector<double> d_alpha(m, 0.0);
  double d_T = 0.0;  // dL/dT_{i+1}, rolling
  for (size_t ii = m; ii-- > 0;) {
    const double T_i = cache.trans[ii];
    const double a_i = cache.alpha[ii];
    d_alpha[ii] = d_w[ii] * T_i - d_T * T_i;
    d_T = d_w[ii] * a_i + d_T * (1.0 - a_i);
  }

  // alpha_i = 1 - Phi_s(f_{i+1}) / Phi_s(f_i)  on the active branch.
  std::vector<double> d_f(m + 1, 0.0);
  double d_log_s = 0.0;
  for (size_t i = 0; i < m; ++i) {
    if (d_alpha[i] == 0.0) continue;
    const double f0 = cache.f[i], f1 = cache.f[i + 1];
    const double r = std::exp(log_logistic(s * f1) - log_logistic(s * f0));
    if (r >= 1.0) continue;  // clamped branch, zero derivative
    // d log Phi_s(x) / dx = s sigmoid(-s x);  d log Phi_s / ds = x sigmoid(-s x)
    const double sig0 = sigmoid(-s * f0), sig1 = sigmoid(-s * f1);
    const double d_r_df1 = r * s * sig1;
    const double d_r_df0 = -r * s * sig0;
    const double d_r_ds = r * (f1 * sig1 - f0 * sig0);
    d_f[i + 1] += d_alpha[i] * (-d_r_df1);
    d_f[i] += d_alpha[i] * (-d_r_df0);
    d_log_s += d_alpha[i] * (-d_r_ds) * s;
  }
  if (atomic) {
    std::atomic_ref<double> ref(grad.log_sharpness);
    double old = ref.load(std::memory_order_relaxed);
    while (!ref.compare_exchange_weak(old, old + d_log_s, std::memory_order_relaxed)) {
    }
  } else {
    grad.log_sharpness += d_log_s;
  }

  const bool want_color = d_color.norm2() > 0.0;
  const bool want_nraw = d_nraw.norm2() > 0.0;
  for (size_t i = 0; i <= m; ++i) {
    const double w_i = i < m ? cache.weight[i] : 0.0;
    const Vec3 up_grad = (i < m && want_nraw) ? d_nraw * w_i : Vec3{};
    const Vec3 up_color = (want_color && i < m && w_i != 0.0) ? d_color * w_i : Vec3{};
    if (d_f[i] == 0.0 && up_grad.norm2() == 0.0 && up_color.norm2() == 0.0) continue;
    const Vec3 p = ray.origin + ray.direction * cache.depths[i];
    field.backprop_sample(p, d_f[i], up_grad, up_color, grad, atomic);
  }
}

RayRender render_ray(const Field& field, const Ray& ray, const RenderParams& params,
                     uint64_t ray_key) {
  const std::vector<double> depths = sample_depths(field, ray, params, ray_key);
  if (depths.empty()) return RayRender{};
  return shade_ray(field, ray, depths, params, nullptr);
}

std::string ray_sample_set_to_json(const RaySampleSet& s) {
  nlohmann::json j;
  j["t"] = s.t;
  j["f"] = s.f;
  j["alpha"] = s.alpha;
  j["weight"] = s.weight;
  j["transmittance"] = s.transmittance;
  j["weight_sum"] = s.weight_sum();
  return j.dump(2);
}

}  // namespace nfuse
