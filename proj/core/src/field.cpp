#include "nfuse/field.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace nfuse {

namespace {

inline void slot_add(double& slot, double v, bool atomic) {
  if (!atomic) {
    slot += v;
    return;
  }
  std::atomic_ref<double> ref(slot);
  double old = ref.load(std::memory_order_relaxed);
  while (!ref.compare_exchange_weak(old, old + v, std::memory_order_relaxed)) {
  }
}

}  // namespace

namespace {

struct AxisQuery {
  int i0;        // lower node index
  double frac;   // in [0,1]
  double dcoord; // d(grid coordinate)/d(world coordinate); 0 when clamped
};

inline AxisQuery axis_query(double x, int res) {
  const double scale = 0.5 * (res - 1);
  double g = (x + 1.0) * scale;
  double d = scale;
  if (g <= 0.0) { g = 0.0; d = 0.0; }
  if (g >= res - 1) { g = res - 1; d = 0.0; }
  int i0 = static_cast<int>(g);
  if (i0 > res - 2) i0 = res - 2;
  return {i0, g - i0, d};
}

struct CellQuery {
  int64_t base;       // flat index of corner (i0, j0, k0)
  int64_t sx, sy, sz; // strides
  double fx, fy, fz;
  double dx, dy, dz;  // coordinate derivatives (0 on clamped axes)
  double w[8];        // trilinear weights, corner order (x + 2y + 4z bits)
};

inline CellQuery cell_query(const Vec3& p, int res) {
  const AxisQuery qx = axis_query(p.x, res);
  const AxisQuery qy = axis_query(p.y, res);
  const AxisQuery qz = axis_query(p.z, res);
  CellQuery c;
  c.sx = 1;
  c.sy = res;
  c.sz = static_cast<int64_t>(res) * res;
  c.base = qx.i0 * c.sx + qy.i0 * c.sy + qz.i0 * c.sz;
  c.fx = qx.frac; c.fy = qy.frac; c.fz = qz.frac;
  c.dx = qx.dcoord; c.dy = qy.dcoord; c.dz = qz.dcoord;
  const double gx[2] = {1.0 - c.fx, c.fx};
  const double gy[2] = {1.0 - c.fy, c.fy};
  const double gz[2] = {1.0 - c.fz, c.fz};
  for (int b = 0; b < 8; ++b)
    c.w[b] = gx[b & 1] * gy[(b >> 1) & 1] * gz[(b >> 2) & 1];
  return c;
}

inline int64_t corner_offset(const CellQuery& c, int b) {
  return c.base + (b & 1) * c.sx + ((b >> 1) & 1) * c.sy + ((b >> 2) & 1) * c.sz;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Field::Field(int sdf_res, int color_res) : g_(sdf_res), gc_(color_res) {
  if (sdf_res < 2 || color_res < 2)
    throw std::invalid_argument("field: grid resolution must be >= 2");
  sdf_.assign(static_cast<size_t>(g_) * g_ * g_, 0.0f);
  color_.assign(static_cast<size_t>(gc_) * gc_ * gc_ * 3, 0.0f);
  log_sharpness_ = std::log(10.0);
}

Field Field::sphere(int sdf_res, int color_res, double radius) {
  Field f(sdf_res, color_res);
  f.sphere_init(radius);
  return f;
}

void Field::sphere_init(double radius) {
  if (!(radius > 0.0 && radius < 1.0))
    throw std::invalid_argument("sphere_init: radius must be in (0,1)");
  const double h = cell_size();
  for (int k = 0; k < g_; ++k)
    for (int j = 0; j < g_; ++j)
      for (int i = 0; i < g_; ++i) {
        const Vec3 p{-1.0 + i * h, -1.0 + j * h, -1.0 + k * h};
        sdf_[sdf_node_index(i, j, k)] = static_cast<float>(p.norm() - radius);
      }
  std::fill(color_.begin(), color_.end(), 0.0f);
  log_sharpness_ = std::log(10.0);
}

double Field::sdf(const Vec3& p) const {
  const CellQuery c = cell_query(p, g_);
  double f = 0.0;
  for (int b = 0; b < 8; ++b) f += c.w[b] * sdf_[corner_offset(c, b)];
  return f;
}

namespace {

inline void sdf_eval_cell(const std::vector<float>& values, const CellQuery& c,
                          double* f, Vec3* grad) {
  double v[8];
  for (int b = 0; b < 8; ++b) v[b] = values[corner_offset(c, b)];

  const double gx0 = 1.0 - c.fx, gy0 = 1.0 - c.fy, gz0 = 1.0 - c.fz;
  if (f) {
    *f = gz0 * (gy0 * (gx0 * v[0] + c.fx * v[1]) + c.fy * (gx0 * v[2] + c.fx * v[3])) +
         c.fz * (gy0 * (gx0 * v[4] + c.fx * v[5]) + c.fy * (gx0 * v[6] + c.fx * v[7]));
  }
  if (grad) {
    const double ddx = gy0 * gz0 * (v[1] - v[0]) + c.fy * gz0 * (v[3] - v[2]) +
                       gy0 * c.fz * (v[5] - v[4]) + c.fy * c.fz * (v[7] - v[6]);
    const double ddy = gx0 * gz0 * (v[2] - v[0]) + c.fx * gz0 * (v[3] - v[1]) +
                       gx0 * c.fz * (v[6] - v[4]) + c.fx * c.fz * (v[7] - v[5]);
    const double ddz = gx0 * gy0 * (v[4] - v[0]) + c.fx * gy0 * (v[5] - v[1]) +
                       gx0 * c.fy * (v[6] - v[2]) + c.fx * c.fy * (v[7] - v[3]);
    *grad = {ddx * c.dx, ddy * c.dy, ddz * c.dz};
  }
}

inline Vec3 color_eval_cell(const std::vector<float>& values, const CellQuery& c) {
  Vec3 pre{0, 0, 0};
  for (int b = 0; b < 8; ++b) {
    const int64_t o = corner_offset(c, b) * 3;
    pre.x += c.w[b] * values[o];
    pre.y += c.w[b] * values[o + 1];
    pre.z += c.w[b] * values[o + 2];
  }
  return {sigmoid(pre.x), sigmoid(pre.y), sigmoid(pre.z)};
}

}  // namespace

void Field::sdf_and_gradient(const Vec3& p, double* f, Vec3* grad) const {
  const CellQuery c = cell_query(p, g_);
  sdf_eval_cell(sdf_, c, f, grad);
}

void Field::sample_appearance(const Vec3& p, Vec3* grad, Vec3* color) const {
  const CellQuery c = cell_query(p, g_);
  sdf_eval_cell(sdf_, c, nullptr, grad);
  *color = g_ == gc_ ? color_eval_cell(color_, c)
                     : color_eval_cell(color_, cell_query(p, gc_));
}

Vec3 Field::sdf_gradient(const Vec3& p) const {
  Vec3 g;
  sdf_and_gradient(p, nullptr, &g);
  return g;
}

Field::NormalResult Field::normal(const Vec3& p) const {
  const Vec3 g = sdf_gradient(p);
  const double n = g.norm();
  if (n < 1e-9) return {{0, 0, 0}, false};
  return {g / n, true};
}

Vec3 Field::color(const Vec3& p) const {
  return color_eval_cell(color_, cell_query(p, gc_));
}

namespace {

inline void backprop_sdf_cell(const CellQuery& c, double up_sdf,
                              const Vec3& up_sdf_grad, std::vector<double>& out,
                              bool atomic) {
  const double gx0 = 1.0 - c.fx, gy0 = 1.0 - c.fy, gz0 = 1.0 - c.fz;
  const double ux = up_sdf_grad.x * c.dx;
  const double uy = up_sdf_grad.y * c.dy;
  const double uz = up_sdf_grad.z * c.dz;
  // d f / d v[b] = w[b]; d grad_x / d v[b] = +-(gy gz) etc.
  const double gx[2] = {gx0, c.fx}, gy[2] = {gy0, c.fy}, gz[2] = {gz0, c.fz};
  const double sgn[2] = {-1.0, 1.0};
  for (int b = 0; b < 8; ++b) {
    const int bx = b & 1, by = (b >> 1) & 1, bz = (b >> 2) & 1;
    double g = up_sdf * c.w[b];
    g += ux * sgn[bx] * gy[by] * gz[bz];
    g += uy * sgn[by] * gx[bx] * gz[bz];
    g += uz * sgn[bz] * gx[bx] * gy[by];
    slot_add(out[corner_offset(c, b)], g, atomic);
  }
}

inline void backprop_color_cell(const std::vector<float>& values, const CellQuery& c,
                                const Vec3& up_color, std::vector<double>& out,
                                bool atomic) {
  Vec3 pre{0, 0, 0};
  for (int b = 0; b < 8; ++b) {
    const int64_t o = corner_offset(c, b) * 3;
    pre.x += c.w[b] * values[o];
    pre.y += c.w[b] * values[o + 1];
    pre.z += c.w[b] * values[o + 2];
  }
  // chain through the sigmoid: dc/dpre = c (1 - c)
  Vec3 up_pre;
  for (int ch = 0; ch < 3; ++ch) {
    const double sg = sigmoid(pre[ch]);
    up_pre[ch] = up_color[ch] * sg * (1.0 - sg);
  }
  for (int b = 0; b < 8; ++b) {
    const int64_t o = corner_offset(c, b) * 3;
    slot_add(out[o], c.w[b] * up_pre.x, atomic);
    slot_add(out[o + 1], c.w[b] * up_pre.y, atomic);
    slot_add(out[o + 2], c.w[b] * up_pre.z, atomic);
  }
}

}  // namespace

void Field::backprop_sdf(const Vec3& p, double up_sdf, const Vec3& up_sdf_grad,
                         ParamGrad& grad, bool atomic) const {
  backprop_sdf_cell(cell_query(p, g_), up_sdf, up_sdf_grad, grad.sdf, atomic);
}

void Field::backprop_color(const Vec3& p, const Vec3& up_color, ParamGrad& grad,
                           bool atomic) const {
  backprop_color_cell(color_, cell_query(p, gc_), up_color, grad.color, atomic);
}

void Field::backprop_sample(const Vec3& p, double up_sdf, const Vec3& up_sdf_grad,
                            const Vec3& up_color, ParamGrad& grad, bool atomic) const {
  const bool want_sdf = up_sdf != 0.0 || up_sdf_grad.norm2() != 0.0;
  const bool want_color = up_color.norm2() != 0.0;
  if (!want_sdf && !want_color) return;
  if (g_ == gc_) {
    const CellQuery c = cell_query(p, g_);
    if (want_sdf) backprop_sdf_cell(c, up_sdf, up_sdf_grad, grad.sdf, atomic);
    if (want_color) backprop_color_cell(color_, c, up_color, grad.color, atomic);
  } else {
    if (want_sdf) backprop_sdf(p, up_sdf, up_sdf_grad, grad, atomic);
    if (want_color) backprop_color(p, up_color, grad, atomic);
  }
}

void Field::backprop_point(const Vec3& p, double up_sdf, const Vec3& up_sdf_grad,
                           const Vec3& up_color, ParamGrad& grad, bool atomic) const {
  if (up_sdf != 0.0 || up_sdf_grad.norm2() != 0.0)
    backprop_sdf(p, up_sdf, up_sdf_grad, grad, atomic);
  if (up_color.norm2() != 0.0) backprop_color(p, up_color, grad, atomic);
}

int64_t Field::param_count() const {
  return static_cast<int64_t>(sdf_.size()) + static_cast<int64_t>(color_.size()) + 1;
}

double Field::get_param(int64_t idx) const {
  const int64_t ns = static_cast<int64_t>(sdf_.size());
  const int64_t nc = static_cast<int64_t>(color_.size());
  if (idx < ns) return sdf_[idx];
  if (idx < ns + nc) return color_[idx - ns];
  return log_sharpness_;
}

void Field::set_param(int64_t idx, double value) {
  const int64_t ns = static_cast<int64_t>(sdf_.size());
  const int64_t nc = static_cast<int64_t>(color_.size());
  if (idx < ns)
    sdf_[idx] = static_cast<float>(value);
  else if (idx < ns + nc)
    color_[idx - ns] = static_cast<float>(value);
  else
    log_sharpness_ = value;
}

const char* Field::param_block_name(int64_t idx) const {
  const int64_t ns = static_cast<int64_t>(sdf_.size());
  const int64_t nc = static_cast<int64_t>(color_.size());
  if (idx < ns) return "sdf_grid";
  if (idx < ns + nc) return "color_grid";
  return "log_sharpness";
}

void ParamGrad::zero() {
  std::fill(sdf.begin(), sdf.end(), 0.0);
  std::fill(color.begin(), color.end(), 0.0);
  log_sharpness = 0.0;
}

void ParamGrad::add(const ParamGrad& other) {
  for (size_t i = 0; i < sdf.size(); ++i) sdf[i] += other.sdf[i];
  for (size_t i = 0; i < color.size(); ++i) color[i] += other.color[i];
  log_sharpness += other.log_sharpness;
}

double ParamGrad::get(int64_t idx) const {
  const int64_t ns = static_cast<int64_t>(sdf.size());
  const int64_t nc = static_cast<int64_t>(color.size());
  if (idx < ns) return sdf[idx];
  if (idx < ns + nc) return color[idx - ns];
  return log_sharpness;
}

bool ParamGrad::is_finite() const {
  for (double v : sdf)
    if (!std::isfinite(v)) return false;
  for (double v : color)
    if (!std::isfinite(v)) return false;
  return std::isfinite(log_sharpness);
}

namespace {

template <typename T>
void write_raw(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_raw(std::istream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
}

}  // namespace

void save_field(const Field& f, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out.write("NFUS", 4);
  write_raw(out, static_cast<uint32_t>(1));
  write_raw(out, static_cast<uint32_t>(f.sdf_res()));
  write_raw(out, static_cast<uint32_t>(f.color_res()));
  write_raw(out, f.log_sharpness());
  out.write(reinterpret_cast<const char*>(f.sdf_data().data()),
            static_cast<std::streamsize>(f.sdf_data().size() * sizeof(float)));
  out.write(reinterpret_cast<const char*>(f.color_data().data()),
            static_cast<std::streamsize>(f.color_data().size() * sizeof(float)));
  if (!out) throw std::runtime_error("write failed: " + path);
}

Field load_field(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "NFUS", 4) != 0)
    throw std::runtime_error("not a field checkpoint (bad magic): " + path);
  uint32_t version = 0, g = 0, gc = 0;
  double log_s = 0;
  read_raw(in, version);
  if (version != 1) throw std::runtime_error("unsupported checkpoint version");
  read_raw(in, g);
  read_raw(in, gc);
  read_raw(in, log_s);
  Field f(static_cast<int>(g), static_cast<int>(gc));
  f.set_log_sharpness(log_s);
  in.read(reinterpret_cast<char*>(f.sdf_data().data()),
          static_cast<std::streamsize>(f.sdf_data().size() * sizeof(float)));
  in.read(reinterpret_cast<char*>(f.color_data().data()),
          static_cast<std::streamsize>(f.color_data().size() * sizeof(float)));
  if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  return f;
}

}  // namespace nfuse
