#include "nfuse/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "nfuse/parallel.hpp"

namespace nfuse {

#include "mc_tables.inl"

namespace {

constexpr int kCornerOffset[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                     {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kMcEdgeCorners[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0},
                                       {4, 5}, {5, 6}, {6, 7}, {7, 4},
                                       {0, 4}, {1, 5}, {2, 6}, {3, 7}};

}  // namespace

void TriMesh::validate() const {
  const int n = static_cast<int>(vertices.size());
  for (const auto& t : triangles)
    for (int i : t)
      if (i < 0 || i >= n) throw std::invalid_argument("mesh: triangle index out of range");
  if (!colors.empty() && colors.size() != vertices.size())
    throw std::invalid_argument("mesh: color count must match vertex count");
}

double TriMesh::area() const {
  double a = 0;
  for (size_t t = 0; t < triangles.size(); ++t) a += 0.5 * face_normal(static_cast<int>(t)).norm();
  return a;
}

Vec3 TriMesh::centroid_of_vertices() const {
  Vec3 c{};
  for (const auto& v : vertices) c += v;
  return vertices.empty() ? c : c / static_cast<double>(vertices.size());
}

MeshTopology analyze_topology(const TriMesh& mesh) {
  MeshTopology topo;
  topo.vertices = static_cast<int64_t>(mesh.vertices.size());
  topo.triangles = static_cast<int64_t>(mesh.triangles.size());
  std::unordered_map<uint64_t, int> edge_use;
  edge_use.reserve(mesh.triangles.size() * 3);
  for (const auto& t : mesh.triangles)
    for (int e = 0; e < 3; ++e) {
      const uint64_t a = static_cast<uint64_t>(std::min(t[e], t[(e + 1) % 3]));
      const uint64_t b = static_cast<uint64_t>(std::max(t[e], t[(e + 1) % 3]));
      edge_use[(a << 32) | b] += 1;
    }
  topo.edges = static_cast<int64_t>(edge_use.size());
  for (const auto& [k, uses] : edge_use) {
    if (uses == 1) ++topo.boundary_edges;
    if (uses > 2) ++topo.non_manifold_edges;
  }
  return topo;
}

TriMesh marching_cubes_fn(const ScalarFieldFn& field, int resolution) {
  if (resolution < 8) throw std::invalid_argument("marching_cubes: resolution must be >= 8");
  const int n = resolution;                  // nodes per axis
  const double h = 2.0 / (n - 1);
  auto node_pos = [&](int i, int j, int k) {
    return Vec3{-1.0 + i * h, -1.0 + j * h, -1.0 + k * h};
  };

  // two z-slabs of field values at a time
  const size_t slab_n = static_cast<size_t>(n) * n;
  std::vector<double> slab0(slab_n), slab1(slab_n);
  auto fill_slab = [&](std::vector<double>& slab, int k) {
    parallel_for(static_cast<int64_t>(slab_n), 0, [&](int64_t idx) {
      const int i = static_cast<int>(idx % n), j = static_cast<int>(idx / n);
      slab[idx] = field(node_pos(i, j, k));
    });
  };
  fill_slab(slab0, 0);

  TriMesh mesh;
  std::unordered_map<uint64_t, int> edge_vertex;  // global edge id -> vertex index
  // global edge id: 3 * node_flat + axis, node = edge's lower corner
  auto edge_id = [&](int i, int j, int k, int axis) {
    const uint64_t flat =
        (static_cast<uint64_t>(k) * n + j) * static_cast<uint64_t>(n) + i;
    return flat * 3 + static_cast<uint64_t>(axis);
  };

  double corner_val[8];
  Vec3 corner_pos[8];
  for (int k = 0; k + 1 < n; ++k) {
    fill_slab(slab1, k + 1);
    for (int j = 0; j + 1 < n; ++j)
      for (int i = 0; i + 1 < n; ++i) {
        int cube_index = 0;
        for (int c = 0; c < 8; ++c) {
          const int ci = i + kCornerOffset[c][0];
          const int cj = j + kCornerOffset[c][1];
          const int ck = kCornerOffset[c][2];
          const double v = (ck == 0 ? slab0 : slab1)[static_cast<size_t>(cj) * n + ci];
          corner_val[c] = v;
          if (v < 0.0) cube_index |= 1 << c;
        }
        if (kMcEdgeTable[cube_index] == 0) continue;
        for (int c = 0; c < 8; ++c)
          corner_pos[c] = node_pos(i + kCornerOffset[c][0], j + kCornerOffset[c][1],
                                   k + kCornerOffset[c][2]);

        int edge_to_vertex[12];
        for (int e = 0; e < 12; ++e) {
          if (!(kMcEdgeTable[cube_index] & (1 << e))) continue;
          const int c0 = kMcEdgeCorners[e][0], c1 = kMcEdgeCorners[e][1];
          // global key: the edge's minimum corner plus its axis (the table
          // lists some edges with corners in descending order)
          const int gi = i + std::min(kCornerOffset[c0][0], kCornerOffset[c1][0]);
          const int gj = j + std::min(kCornerOffset[c0][1], kCornerOffset[c1][1]);
          const int gk = k + std::min(kCornerOffset[c0][2], kCornerOffset[c1][2]);
          const int axis = kCornerOffset[c1][0] != kCornerOffset[c0][0]   ? 0
                           : kCornerOffset[c1][1] != kCornerOffset[c0][1] ? 1
                                                                          : 2;
          const uint64_t key = edge_id(gi, gj, gk, axis);
          auto it = edge_vertex.find(key);
          if (it == edge_vertex.end()) {
            const double f0 = corner_val[c0], f1 = corner_val[c1];
            // keep vertices strictly off the corners: corner-exact crossings
            // would otherwise create zero-area slivers whose removal would
            // puncture the surface
            const double t = clamp(f0 / (f0 - f1), 1e-3, 1.0 - 1e-3);
            mesh.vertices.push_back(corner_pos[c0] +
                                    (corner_pos[c1] - corner_pos[c0]) * t);
            it = edge_vertex.emplace(key, static_cast<int>(mesh.vertices.size()) - 1).first;
          }
          edge_to_vertex[e] = it->second;
        }

        const int* tri = kMcTriTable[cube_index];
        for (int e = 0; tri[e] != -1; e += 3) {
          const int a = edge_to_vertex[tri[e]];
          const int b = edge_to_vertex[tri[e + 1]];
          const int c = edge_to_vertex[tri[e + 2]];
          if (a == b || b == c || a == c) continue;  // collapsed by welding
          mesh.triangles.push_back({a, b, c});
        }
      }
    std::swap(slab0, slab1);
  }

  // orient against the field gradient (outward for an SDF)
  const double gh = h * 0.25;
  for (auto& t : mesh.triangles) {
    const Vec3 c = (mesh.vertices[t[0]] + mesh.vertices[t[1]] + mesh.vertices[t[2]]) / 3.0;
    const Vec3 g{field({c.x + gh, c.y, c.z}) - field({c.x - gh, c.y, c.z}),
                 field({c.x, c.y + gh, c.z}) - field({c.x, c.y - gh, c.z}),
                 field({c.x, c.y, c.z + gh}) - field({c.x, c.y, c.z - gh})};
    const Vec3 fn = (mesh.vertices[t[1]] - mesh.vertices[t[0]])
                        .cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]);
    if (fn.dot(g) < 0.0) std::swap(t[1], t[2]);
  }
  return mesh;
}

TriMesh marching_cubes(const Field& f, int resolution) {
  return marching_cubes_fn([&f](const Vec3& p) { return f.sdf(p); }, resolution);
}

TriMesh largest_component(const TriMesh& mesh) {
  if (mesh.empty()) return mesh;
  std::vector<int> parent(mesh.vertices.size());
  for (size_t i = 0; i < parent.size(); ++i) parent[i] = static_cast<int>(i);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& t : mesh.triangles) {
    parent[find(t[0])] = find(t[1]);
    parent[find(t[1])] = find(t[2]);
  }
  std::unordered_map<int, double> area;
  for (size_t t = 0; t < mesh.triangles.size(); ++t)
    area[find(mesh.triangles[t][0])] +=
        0.5 * mesh.face_normal(static_cast<int>(t)).norm();
  int best = -1;
  double best_area = -1;
  for (const auto& [root, a] : area)
    if (a > best_area) {
      best_area = a;
      best = root;
    }

  TriMesh out;
  std::vector<int> remap(mesh.vertices.size(), -1);
  for (const auto& t : mesh.triangles) {
    if (find(t[0]) != best) continue;
    std::array<int, 3> nt{};
    for (int c = 0; c < 3; ++c) {
      if (remap[t[c]] < 0) {
        remap[t[c]] = static_cast<int>(out.vertices.size());
        out.vertices.push_back(mesh.vertices[t[c]]);
        if (mesh.has_colors()) out.colors.push_back(mesh.colors[t[c]]);
      }
      nt[c] = remap[t[c]];
    }
    out.triangles.push_back(nt);
  }
  return out;
}

TriMesh bake_colors(TriMesh mesh, const Field& f) {
  mesh.colors.resize(mesh.vertices.size());
  const double inset = 0.5 * f.cell_size();
  for (size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3& v = mesh.vertices[i];
    const Field::NormalResult nr = f.normal(v);
    const Vec3 p = nr.ok ? v - nr.n * inset : v;
    mesh.colors[i] = f.color(p);
  }
  return mesh;
}

}  // namespace nfuse
