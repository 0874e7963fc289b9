#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nfuse/vec.hpp"

namespace nfuse {

struct ParamGrad;

/// Trilinear SDF + color grid over [-1,1]^3 with a global sharpness scalar.
/// Grids store f32; all evaluation arithmetic is double. G nodes per axis,
/// spacing 2/(G-1). Points outside the bounds clamp to the boundary cell.
/// Color is stored pre-activation; evaluation applies a sigmoid, so rendered
/// colors always lie in (0,1).
class Field {
 public:
  Field() = default;
  Field(int sdf_res, int color_res);

  /// node values ||x|| - radius, mid-gray color, sharpness 10.
  static Field sphere(int sdf_res, int color_res, double radius);
  /// Re-initializes this field in place. Throws unless 0 < radius < 1.
  void sphere_init(double radius);

  int sdf_res() const { return g_; }
  int color_res() const { return gc_; }
  double cell_size() const { return 2.0 / (g_ - 1); }

  double sdf(const Vec3& p) const;
  /// Spatial gradient of the trilinear interpolant (piecewise analytic).
  Vec3 sdf_gradient(const Vec3& p) const;
  void sdf_and_gradient(const Vec3& p, double* f, Vec3* grad) const;

  struct NormalResult {
    Vec3 n;          // unit, or (0,0,0) sentinel
    bool ok = false; // false when the gradient is degenerate (< 1e-9)
  };
  NormalResult normal(const Vec3& p) const;

  Vec3 color(const Vec3& p) const;  // sigmoid-activated RGB in (0,1)

  /// Gradient and color at one point, sharing the trilinear cell math when
  /// both grids have the same resolution (the renderer's hot path).
  void sample_appearance(const Vec3& p, Vec3* grad, Vec3* color) const;

  double sharpness() const { return std::exp(log_sharpness_); }
  double log_sharpness() const { return log_sharpness_; }
  void set_log_sharpness(double v) { log_sharpness_ = v; }

  /// Accumulates d(loss)/d(node values) for the 8 nodes around p, given
  /// upstream derivatives w.r.t. the sdf value, the sdf spatial gradient and
  /// the activated color. The sigmoid chain is handled here. With
  /// atomic = true the writes are lock-free atomic adds, so accumulation
  /// may run from many threads (at the cost of a scheduling-dependent FP
  /// summation order; single-threaded accumulation is the deterministic
  /// mode).
  void backprop_point(const Vec3& p, double up_sdf, const Vec3& up_sdf_grad,
                      const Vec3& up_color, ParamGrad& grad, bool atomic = false) const;
  void backprop_sdf(const Vec3& p, double up_sdf, const Vec3& up_sdf_grad,
                    ParamGrad& grad, bool atomic = false) const;
  void backprop_color(const Vec3& p, const Vec3& up_color, ParamGrad& grad,
                      bool atomic = false) const;
  /// backprop_point with shared cell math for same-resolution grids.
  void backprop_sample(const Vec3& p, double up_sdf, const Vec3& up_sdf_grad,
                       const Vec3& up_color, ParamGrad& grad, bool atomic) const;

  // Flat parameter view: [sdf nodes | color nodes | log_sharpness].
  int64_t param_count() const;
  double get_param(int64_t idx) const;
  void set_param(int64_t idx, double value);
  const char* param_block_name(int64_t idx) const;

  std::vector<float>& sdf_data() { return sdf_; }
  const std::vector<float>& sdf_data() const { return sdf_; }
  std::vector<float>& color_data() { return color_; }
  const std::vector<float>& color_data() const { return color_; }

  int64_t sdf_node_index(int i, int j, int k) const {
    return i + static_cast<int64_t>(g_) * (j + static_cast<int64_t>(g_) * k);
  }
  Vec3 sdf_node_position(int i, int j, int k) const {
    const double h = cell_size();
    return {-1.0 + i * h, -1.0 + j * h, -1.0 + k * h};
  }

  bool operator==(const Field& o) const {
    return g_ == o.g_ && gc_ == o.gc_ && sdf_ == o.sdf_ && color_ == o.color_ &&
           log_sharpness_ == o.log_sharpness_;
  }

 private:
  int g_ = 0, gc_ = 0;
  std::vector<float> sdf_;
  std::vector<float> color_;  // 3 channels interleaved, pre-activation
  double log_sharpness_ = 0.0;
};

/// Accumulated partial derivatives of a scalar loss w.r.t. every Field
/// parameter. Doubles, so reductions of many small contributions stay exact
/// enough for finite-difference verification.
struct ParamGrad {
  std::vector<double> sdf;
  std::vector<double> color;
  double log_sharpness = 0.0;

  ParamGrad() = default;
  explicit ParamGrad(const Field& f)
      : sdf(f.sdf_data().size(), 0.0), color(f.color_data().size(), 0.0) {}

  void zero();
  void add(const ParamGrad& other);
  double get(int64_t idx) const;
  bool is_finite() const;
};

// Checkpoint: little-endian, header {magic "NFUS", u32 version, u32 G,
// u32 G_c, f64 log_sharpness} followed by the raw f32 sdf and color grids.
void save_field(const Field& f, const std::string& path);
Field load_field(const std::string& path);

}  // namespace nfuse
