#include "nfuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include <Eigen/Dense>

#include "nfuse/parallel.hpp"
#include "nfuse/rng.hpp"

namespace nfuse {

std::vector<Vec3> sample_surface(const TriMesh& mesh, int n_samples, uint64_t seed) {
  if (mesh.empty()) throw std::invalid_argument("sample_surface: empty mesh");
  std::vector<double> cum(mesh.triangles.size());
  double total = 0.0;
  for (size_t t = 0; t < mesh.triangles.size(); ++t) {
    total += 0.5 * mesh.face_normal(static_cast<int>(t)).norm();
    cum[t] = total;
  }
  if (total <= 0.0) throw std::invalid_argument("sample_surface: zero-area mesh");

  std::vector<Vec3> pts(n_samples);
  StreamRng rng(seed, 0x5a3d7ULL);
  for (int i = 0; i < n_samples; ++i) {
    const double u = rng.uniform() * total;
    const size_t t = std::lower_bound(cum.begin(), cum.end(), u) - cum.begin();
    const auto& tri = mesh.triangles[std::min(t, mesh.triangles.size() - 1)];
    double r1 = std::sqrt(rng.uniform()), r2 = rng.uniform();
    const Vec3& a = mesh.vertices[tri[0]];
    const Vec3& b = mesh.vertices[tri[1]];
    const Vec3& c = mesh.vertices[tri[2]];
    pts[i] = a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2);
  }
  return pts;
}

namespace {

/// Uniform hash-grid nearest neighbor over a fixed point set.
class GridNN {
 public:
  explicit GridNN(const std::vector<Vec3>& pts) : pts_(pts) {
    lo_ = {1e30, 1e30, 1e30};
    Vec3 hi{-1e30, -1e30, -1e30};
    for (const auto& p : pts) {
      for (int a = 0; a < 3; ++a) {
        lo_[a] = std::fmin(lo_[a], p[a]);
        hi[a] = std::fmax(hi[a], p[a]);
      }
    }
    const double diag = (hi - lo_).norm();
    cell_ = std::fmax(diag / 64.0, 1e-9);
    for (int a = 0; a < 3; ++a)
      dims_[a] = std::max(1, static_cast<int>((hi[a] - lo_[a]) / cell_) + 1);
    cells_.reserve(pts.size());
    for (size_t i = 0; i < pts.size(); ++i)
      cells_[key_of(coord(pts[i]))].push_back(static_cast<int>(i));
  }

  struct Hit {
    double distance = 1e30;
    int index = -1;
  };

  Hit nearest(const Vec3& q) const {
    const std::array<int, 3> c = coord(q);
    Hit best;
    const int max_ring = dims_[0] + dims_[1] + dims_[2] + 2;
    for (int ring = 0; ring <= max_ring; ++ring) {
      // all cells whose Chebyshev distance from c equals ring
      for (int dz = -ring; dz <= ring; ++dz)
        for (int dy = -ring; dy <= ring; ++dy)
          for (int dx = -ring; dx <= ring; ++dx) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
            const std::array<int, 3> cc{c[0] + dx, c[1] + dy, c[2] + dz};
            if (cc[0] < 0 || cc[1] < 0 || cc[2] < 0 || cc[0] >= dims_[0] ||
                cc[1] >= dims_[1] || cc[2] >= dims_[2])
              continue;
            const auto it = cells_.find(key_of(cc));
            if (it == cells_.end()) continue;
            for (int i : it->second) {
              const double d = (pts_[i] - q).norm();
              if (d < best.distance) {
                best.distance = d;
                best.index = i;
              }
            }
          }
      // points in farther rings are at least (ring) * cell away
      if (best.distance <= ring * cell_) return best;
    }
    return best;
  }

  double nearest_distance(const Vec3& q) const { return nearest(q).distance; }

  const Vec3& point(int i) const { return pts_[i]; }

 private:
  std::array<int, 3> coord(const Vec3& p) const {
    std::array<int, 3> c;
    for (int a = 0; a < 3; ++a)
      c[a] = std::min(dims_[a] - 1,
                      std::max(0, static_cast<int>((p[a] - lo_[a]) / cell_)));
    return c;
  }
  uint64_t key_of(const std::array<int, 3>& c) const {
    return (static_cast<uint64_t>(c[2]) * dims_[1] + c[1]) * dims_[0] + c[0];
  }

  const std::vector<Vec3>& pts_;
  Vec3 lo_;
  double cell_;
  std::array<int, 3> dims_;
  std::unordered_map<uint64_t, std::vector<int>> cells_;
};

double directed_mean_nn(const std::vector<Vec3>& from, const GridNN& to, int threads) {
  std::vector<double> partial(resolve_threads(threads), 0.0);
  parallel_chunks(static_cast<int64_t>(from.size()), resolve_threads(threads),
                  [&](int tid, int64_t b, int64_t e) {
                    double s = 0;
                    for (int64_t i = b; i < e; ++i) s += to.nearest_distance(from[i]);
                    partial[tid] = s;
                  });
  double sum = 0;
  for (double p : partial) sum += p;
  return from.empty() ? 0.0 : sum / static_cast<double>(from.size());
}

}  // namespace

double chamfer(const TriMesh& a, const TriMesh& b, int n_samples, uint64_t seed) {
  if (a.empty() || b.empty()) throw std::invalid_argument("chamfer: empty mesh");
  // one stream for both clouds: chamfer(m, m, n, s) is exactly 0
  const std::vector<Vec3> pa = sample_surface(a, n_samples, splitmix64(seed));
  const std::vector<Vec3> pb = sample_surface(b, n_samples, splitmix64(seed));
  const GridNN nna(pa), nnb(pb);
  const double ab = directed_mean_nn(pa, nnb, 0);
  const double ba = directed_mean_nn(pb, nna, 0);
  return 0.5 * (ab + ba);
}

namespace {

std::vector<uint8_t> voxelize(const TriMesh& mesh, const Vec3& lo, double cell,
                              int grid) {
  const MeshTopology topo = analyze_topology(mesh);
  if (!topo.watertight())
    throw std::invalid_argument("volume_iou: mesh is not watertight (" +
                                std::to_string(topo.boundary_edges) + " boundary edges, " +
                                std::to_string(topo.non_manifold_edges) +
                                " non-manifold edges)");

  std::vector<uint8_t> occ(static_cast<size_t>(grid) * grid * grid, 0);

  // bucket triangles by the (y,z) rows their bbox spans
  struct RowHit {
    std::vector<int> tris;
  };
  std::vector<std::vector<int>> rows(static_cast<size_t>(grid) * grid);
  auto row_center = [&](int iy, int iz, double jy, double jz) {
    return std::pair<double, double>{lo.y + (iy + 0.5 + jy) * cell,
                                     lo.z + (iz + 0.5 + jz) * cell};
  };
  for (size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tri = mesh.triangles[t];
    double ymin = 1e30, ymax = -1e30, zmin = 1e30, zmax = -1e30;
    for (int c = 0; c < 3; ++c) {
      const Vec3& p = mesh.vertices[tri[c]];
      ymin = std::fmin(ymin, p.y); ymax = std::fmax(ymax, p.y);
      zmin = std::fmin(zmin, p.z); zmax = std::fmax(zmax, p.z);
    }
    const int y0 = std::max(0, static_cast<int>(std::floor((ymin - lo.y) / cell - 1)));
    const int y1 = std::min(grid - 1, static_cast<int>(std::ceil((ymax - lo.y) / cell)));
    const int z0 = std::max(0, static_cast<int>(std::floor((zmin - lo.z) / cell - 1)));
    const int z1 = std::min(grid - 1, static_cast<int>(std::ceil((zmax - lo.z) / cell)));
    for (int iz = z0; iz <= z1; ++iz)
      for (int iy = y0; iy <= y1; ++iy)
        rows[static_cast<size_t>(iz) * grid + iy].push_back(static_cast<int>(t));
  }

  parallel_for(static_cast<int64_t>(grid) * grid, 0, [&](int64_t row_idx) {
    const int iy = static_cast<int>(row_idx % grid);
    const int iz = static_cast<int>(row_idx / grid);
    const auto& tris = rows[row_idx];
    if (tris.empty()) return;
    // deterministic jitter dodges rays through vertices/edges
    StreamRng jr(0x70C5ULL, iy, iz);
    const double jy = (jr.uniform() - 0.5) * 1e-3;
    const double jz = (jr.uniform() - 0.5) * 1e-3;
    const auto [ry, rz] = row_center(iy, iz, jy, jz);

    std::vector<double> xs;
    for (int t : tris) {
      const auto& tri = mesh.triangles[t];
      const Vec3& a = mesh.vertices[tri[0]];
      const Vec3& b = mesh.vertices[tri[1]];
      const Vec3& c = mesh.vertices[tri[2]];
      // 2D point-in-triangle in the (y,z) projection
      const double d1 = (b.y - a.y) * (rz - a.z) - (b.z - a.z) * (ry - a.y);
      const double d2 = (c.y - b.y) * (rz - b.z) - (c.z - b.z) * (ry - b.y);
      const double d3 = (a.y - c.y) * (rz - c.z) - (a.z - c.z) * (ry - c.y);
      const bool neg = (d1 < 0) || (d2 < 0) || (d3 < 0);
      const bool pos = (d1 > 0) || (d2 > 0) || (d3 > 0);
      if (neg && pos) continue;
      // x of the plane at (ry, rz)
      const Vec3 n = (b - a).cross(c - a);
      if (std::fabs(n.x) < 1e-15) continue;  // ray parallel to plane
      const double x = a.x - (n.y * (ry - a.y) + n.z * (rz - a.z)) / n.x;
      xs.push_back(x);
    }
    if (xs.empty()) return;
    std::sort(xs.begin(), xs.end());
    // parity fill between crossing pairs
    for (size_t p = 0; p + 1 < xs.size(); p += 2) {
      int x0 = static_cast<int>(std::ceil((xs[p] - lo.x) / cell - 0.5));
      int x1 = static_cast<int>(std::floor((xs[p + 1] - lo.x) / cell - 0.5));
      x0 = std::max(x0, 0);
      x1 = std::min(x1, grid - 1);
      for (int ix = x0; ix <= x1; ++ix)
        occ[(static_cast<size_t>(iz) * grid + iy) * grid + ix] = 1;
    }
  });
  return occ;
}

}  // namespace

double volume_iou(const TriMesh& a, const TriMesh& b, int grid) {
  if (a.empty() || b.empty()) throw std::invalid_argument("volume_iou: empty mesh");
  Vec3 lo{1e30, 1e30, 1e30}, hi{-1e30, -1e30, -1e30};
  for (const TriMesh* m : {&a, &b})
    for (const auto& v : m->vertices)
      for (int ax = 0; ax < 3; ++ax) {
        lo[ax] = std::fmin(lo[ax], v[ax]);
        hi[ax] = std::fmax(hi[ax], v[ax]);
      }
  const double extent = (hi - lo).max_component() * 1.02 + 1e-9;
  const Vec3 center = (lo + hi) / 2.0;
  const Vec3 origin = center - Vec3{extent, extent, extent} / 2.0;
  const double cell = extent / grid;

  const std::vector<uint8_t> oa = voxelize(a, origin, cell, grid);
  const std::vector<uint8_t> ob = voxelize(b, origin, cell, grid);
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < oa.size(); ++i) {
    inter += oa[i] & ob[i];
    uni += oa[i] | ob[i];
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

TriMesh apply_similarity(const TriMesh& mesh, const Similarity& s) {
  TriMesh out = mesh;
  for (auto& v : out.vertices) v = s.apply(v);
  return out;
}

namespace {

Similarity umeyama_fit(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
  const size_t n = src.size();
  Vec3 mu_s{}, mu_d{};
  for (size_t i = 0; i < n; ++i) {
    mu_s += src[i];
    mu_d += dst[i];
  }
  mu_s = mu_s / static_cast<double>(n);
  mu_d = mu_d / static_cast<double>(n);

  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  double var_s = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const Vec3 s = src[i] - mu_s, d = dst[i] - mu_d;
    Eigen::Vector3d es(s.x, s.y, s.z), ed(d.x, d.y, d.z);
    cov += ed * es.transpose();
    var_s += s.norm2();
  }
  cov /= static_cast<double>(n);
  var_s /= static_cast<double>(n);

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d S = Eigen::Matrix3d::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) S(2, 2) = -1;
  const Eigen::Matrix3d R = svd.matrixU() * S * svd.matrixV().transpose();
  const double scale =
      var_s > 1e-30 ? (svd.singularValues().asDiagonal() * S).trace() / var_s : 1.0;

  Similarity out;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out.rotation(r, c) = R(r, c);
  out.scale = scale;
  out.translation = mu_d - out.rotation * mu_s * scale;
  return out;
}

}  // namespace

Similarity align(const TriMesh& src, const TriMesh& dst, int n_samples, uint64_t seed) {
  // one stream for both clouds: aligning a mesh to itself (or to a
  // similarity transform of itself) sees exactly corresponding samples
  const std::vector<Vec3> ps = sample_surface(src, n_samples, splitmix64(seed));
  const std::vector<Vec3> pd = sample_surface(dst, n_samples, splitmix64(seed));

  // coarse init: centroid + RMS radius
  Vec3 mu_s{}, mu_d{};
  for (const auto& p : ps) mu_s += p;
  for (const auto& p : pd) mu_d += p;
  mu_s = mu_s / static_cast<double>(ps.size());
  mu_d = mu_d / static_cast<double>(pd.size());
  double rms_s = 0, rms_d = 0;
  for (const auto& p : ps) rms_s += (p - mu_s).norm2();
  for (const auto& p : pd) rms_d += (p - mu_d).norm2();
  Similarity cur;
  cur.scale = rms_s > 1e-30 ? std::sqrt(rms_d / rms_s) : 1.0;
  cur.translation = mu_d - mu_s * cur.scale;

  const GridNN nn(pd);
  double prev_residual = -1.0;
  std::vector<Vec3> moved(ps.size()), target(ps.size());
  for (int it = 0; it < 50; ++it) {
    for (size_t i = 0; i < ps.size(); ++i) moved[i] = cur.apply(ps[i]);

    double residual = 0.0;
    for (size_t i = 0; i < moved.size(); ++i) {
      const GridNN::Hit hit = nn.nearest(moved[i]);
      residual += hit.distance;
      target[i] = nn.point(hit.index);
    }
    residual /= static_cast<double>(moved.size());
    if (prev_residual >= 0 &&
        std::fabs(prev_residual - residual) <= 1e-6 * std::fmax(prev_residual, 1e-12))
      break;
    prev_residual = residual;

    cur = umeyama_fit(ps, target);
  }
  return cur;
}

double psnr(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw std::invalid_argument("psnr: image dimensions differ");
  double mse = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  if (mse <= 0.0) return 99.0;
  return std::fmin(99.0, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw std::invalid_argument("ssim: image dimensions differ");
  constexpr int kWin = 11, kHalf = 5;
  constexpr double kSigma = 1.5, kK1 = 0.01, kK2 = 0.03;
  const double c1 = kK1 * kK1, c2 = kK2 * kK2;
  if (a.width < kWin || a.height < kWin)
    throw std::invalid_argument("ssim: image smaller than the 11x11 window");

  double w[kWin][kWin];
  double wsum = 0.0;
  for (int y = 0; y < kWin; ++y)
    for (int x = 0; x < kWin; ++x) {
      const double dx = x - kHalf, dy = y - kHalf;
      w[y][x] = std::exp(-(dx * dx + dy * dy) / (2 * kSigma * kSigma));
      wsum += w[y][x];
    }
  for (auto& row : w)
    for (double& v : row) v /= wsum;

  double total = 0.0;
  int64_t count = 0;
  for (int ch = 0; ch < a.channels; ++ch) {
    for (int cy = kHalf; cy < a.height - kHalf; ++cy)
      for (int cx = kHalf; cx < a.width - kHalf; ++cx) {
        double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
        for (int y = 0; y < kWin; ++y)
          for (int x = 0; x < kWin; ++x) {
            const double va = a.at(cx + x - kHalf, cy + y - kHalf, ch);
            const double vb = b.at(cx + x - kHalf, cy + y - kHalf, ch);
            mu_a += w[y][x] * va;
            mu_b += w[y][x] * vb;
            aa += w[y][x] * va * va;
            bb += w[y][x] * vb * vb;
            ab += w[y][x] * va * vb;
          }
        const double var_a = aa - mu_a * mu_a;
        const double var_b = bb - mu_b * mu_b;
        const double cov = ab - mu_a * mu_b;
        total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                 ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
        ++count;
      }
  }
  return total / static_cast<double>(count);
}

}  // namespace nfuse
