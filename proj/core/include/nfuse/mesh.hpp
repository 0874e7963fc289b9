#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "nfuse/field.hpp"
#include "nfuse/vec.hpp"

namespace nfuse {

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<Vec3> colors;  // empty, or one RGB per vertex

  bool empty() const { return triangles.empty(); }
  bool has_colors() const { return colors.size() == vertices.size(); }
  /// Index ranges and color-array length. Throws on violation.
  void validate() const;

  Vec3 face_normal(int t) const {
    const auto& tri = triangles[t];
    return (vertices[tri[1]] - vertices[tri[0]])
        .cross(vertices[tri[2]] - vertices[tri[0]]);
  }
  double area() const;
  Vec3 centroid_of_vertices() const;
};

struct MeshTopology {
  int64_t vertices = 0, edges = 0, triangles = 0;
  int64_t boundary_edges = 0;    // edges used by exactly one triangle
  int64_t non_manifold_edges = 0;
  int64_t euler_characteristic() const { return vertices - edges + triangles; }
  bool watertight() const { return boundary_edges == 0 && non_manifold_edges == 0; }
};
MeshTopology analyze_topology(const TriMesh& mesh);

using ScalarFieldFn = std::function<double(const Vec3&)>;

/// Zero-isosurface of an arbitrary scalar field sampled on a res^3 lattice
/// over [-1,1]^3, with linear edge interpolation and exact vertex welding
/// (watertight whenever the zero set avoids the cube boundary). Triangles
/// are oriented so face normals point along the field gradient (outward for
/// an SDF). No sign change produces an empty mesh. Throws for res < 8.
TriMesh marching_cubes_fn(const ScalarFieldFn& field, int resolution);

TriMesh marching_cubes(const Field& f, int resolution);

/// Mesh restricted to its largest-area connected component; drops isolated
/// bubbles left by optimization noise in unobserved space.
TriMesh largest_component(const TriMesh& mesh);

/// Per-vertex colors from the field's color grid, sampled half a cell
/// inward along -grad so silhouette vertices do not blur into background.
TriMesh bake_colors(TriMesh mesh, const Field& f);

enum class MeshFormat { OBJ, PLY };
MeshFormat mesh_format_from_path(const std::string& path);

/// OBJ with the `v x y z r g b` vertex-color extension, or binary
/// little-endian PLY with uchar colors. Positions are written as f32 in
/// both formats, so re-import round-trips within float precision.
void export_mesh(const TriMesh& mesh, const std::string& path, MeshFormat format);
void export_mesh(const TriMesh& mesh, const std::string& path);  // format from extension
TriMesh import_mesh(const std::string& path);

}  // namespace nfuse
