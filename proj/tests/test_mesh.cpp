#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "nfuse/mesh.hpp"
#include "nfuse/rng.hpp"
#include "test_support.hpp"

using namespace nfuse;
using nfuse::testing::scratch_dir;

TEST_CASE("marching cubes on the init sphere") {
  Field f = Field::sphere(128, 8, 0.5);
  const TriMesh mesh = marching_cubes(f, 128);
  REQUIRE(!mesh.empty());
  mesh.validate();

  SUBCASE("surface area matches the analytic sphere within 2%") {
    const double analytic = 4.0 * M_PI * 0.25;  // = pi
    CHECK(std::fabs(mesh.area() - analytic) / analytic < 0.02);
  }

  SUBCASE("topology is a watertight sphere") {
    const MeshTopology topo = analyze_topology(mesh);
    CHECK(topo.watertight());
    CHECK(topo.euler_characteristic() == 2);
  }

  SUBCASE("every vertex sits within a cell of the zero level set") {
    const double bound = 2.0 * (2.0 / 128);
    for (const auto& v : mesh.vertices) CHECK(std::fabs(f.sdf(v)) < bound);
  }

  SUBCASE("faces wind outward against the gradient") {
    int aligned = 0;
    for (size_t t = 0; t < mesh.triangles.size(); ++t) {
      const auto& tri = mesh.triangles[t];
      const Vec3 c =
          (mesh.vertices[tri[0]] + mesh.vertices[tri[1]] + mesh.vertices[tri[2]]) / 3.0;
      if (mesh.face_normal(static_cast<int>(t)).dot(f.sdf_gradient(c)) > 0) ++aligned;
    }
    CHECK(static_cast<double>(aligned) / mesh.triangles.size() >= 0.99);
  }

  SUBCASE("no degenerate triangles") {
    for (size_t t = 0; t < mesh.triangles.size(); ++t)
      CHECK(0.5 * mesh.face_normal(static_cast<int>(t)).norm() > 1e-12);
  }
}

TEST_CASE("marching cubes corner cases") {
  Field f(16, 8);
  std::fill(f.sdf_data().begin(), f.sdf_data().end(), 1.0f);
  CHECK(marching_cubes(f, 32).empty());
  CHECK_THROWS_AS(marching_cubes(f, 4), std::invalid_argument);
}

TEST_CASE("marching cubes resolves csg detail") {
  const AnalyticScene scene = nfuse::testing::box_minus_sphere_scene();
  const TriMesh mesh =
      marching_cubes_fn([&](const Vec3& p) { return scene.sdf(p); }, 96);
  REQUIRE(!mesh.empty());
  CHECK(analyze_topology(mesh).watertight());
  // the dent: surface points must exist inside the subtracted ball
  int dented = 0;
  for (const auto& v : mesh.vertices)
    if ((v - Vec3{0, -0.55, 0}).norm() < 0.305) ++dented;
  CHECK(dented > 50);
}

TEST_CASE("bake_colors") {
  Field f = Field::sphere(32, 32, 0.5);

  SUBCASE("constant color field bakes uniformly") {
    const double pre = std::log(0.8 / 0.2);  // sigmoid^-1(0.8)
    for (size_t i = 0; i < f.color_data().size(); i += 3) {
      f.color_data()[i] = static_cast<float>(pre);
      f.color_data()[i + 1] = -static_cast<float>(pre);
      f.color_data()[i + 2] = 0.0f;
    }
    const TriMesh mesh = bake_colors(marching_cubes(f, 48), f);
    REQUIRE(mesh.has_colors());
    for (const auto& c : mesh.colors) {
      CHECK(c.x == doctest::Approx(0.8).epsilon(1.0 / 255.0));
      CHECK(c.y == doctest::Approx(0.2).epsilon(1.0 / 255.0));
      CHECK(c.z == doctest::Approx(0.5).epsilon(1.0 / 255.0));
    }
  }

  SUBCASE("empty mesh stays empty") {
    TriMesh empty;
    const TriMesh baked = bake_colors(empty, f);
    CHECK(baked.empty());
    CHECK(baked.colors.empty());
  }
}

TEST_CASE("mesh export and import round-trip within float precision") {
  Field f = Field::sphere(24, 24, 0.42);
  StreamRng rng(3);
  for (auto& v : f.color_data()) v = static_cast<float>(rng.normal());
  const TriMesh mesh = bake_colors(marching_cubes(f, 32), f);
  const std::string dir = scratch_dir("meshio");

  for (const char* name : {"m.obj", "m.ply"}) {
    const std::string path = dir + "/" + name;
    export_mesh(mesh, path);
    const TriMesh back = import_mesh(path);
    REQUIRE(back.vertices.size() == mesh.vertices.size());
    REQUIRE(back.triangles.size() == mesh.triangles.size());
    CHECK(back.has_colors());
    for (size_t i = 0; i < mesh.vertices.size(); ++i)
      CHECK((back.vertices[i] - mesh.vertices[i]).norm() < 1e-6);
    for (size_t i = 0; i < mesh.triangles.size(); ++i)
      CHECK(back.triangles[i] == mesh.triangles[i]);
    for (size_t i = 0; i < mesh.colors.size(); ++i)
      CHECK((back.colors[i] - mesh.colors[i]).norm() < 3.0 / 255.0);
  }

  SUBCASE("empty meshes produce valid files") {
    TriMesh empty;
    export_mesh(empty, dir + "/empty.ply");
    const TriMesh back = import_mesh(dir + "/empty.ply");
    CHECK(back.empty());
    export_mesh(empty, dir + "/empty.obj");
    CHECK(import_mesh(dir + "/empty.obj").empty());
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("ply bytes match the format specification exactly") {
  // one triangle with colors, every byte accounted for
  TriMesh mesh;
  mesh.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  mesh.colors = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  mesh.triangles = {{0, 1, 2}};
  const std::string dir = scratch_dir("plygold");
  const std::string path = dir + "/tri.ply";
  export_mesh(mesh, path, MeshFormat::PLY);

  std::string expected =
      "ply\nformat binary_little_endian 1.0\n"
      "element vertex 3\n"
      "property float x\nproperty float y\nproperty float z\n"
      "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      "element face 1\n"
      "property list uchar int vertex_indices\n"
      "end_header\n";
  auto put_f = [&](float v) { expected.append(reinterpret_cast<const char*>(&v), 4); };
  auto put_b = [&](uint8_t v) { expected.push_back(static_cast<char>(v)); };
  auto put_i = [&](int32_t v) { expected.append(reinterpret_cast<const char*>(&v), 4); };
  put_f(0); put_f(0); put_f(0); put_b(255); put_b(0); put_b(0);
  put_f(1); put_f(0); put_f(0); put_b(0); put_b(255); put_b(0);
  put_f(0); put_f(1); put_f(0); put_b(0); put_b(0); put_b(255);
  put_b(3); put_i(0); put_i(1); put_i(2);

  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() == expected);

  // header element counts match the payload (parse succeeds, sizes agree)
  const TriMesh back = import_mesh(path);
  CHECK(back.vertices.size() == 3);
  CHECK(back.triangles.size() == 1);
  std::filesystem::remove_all(dir);
}

TEST_CASE("mesh validation rejects bad indices") {
  TriMesh mesh;
  mesh.vertices = {{0, 0, 0}, {1, 0, 0}};
  mesh.triangles = {{0, 1, 5}};
  CHECK_THROWS_AS(mesh.validate(), std::invalid_argument);
  CHECK_THROWS_AS(mesh_format_from_path("mesh.stl"), std::invalid_argument);
}
