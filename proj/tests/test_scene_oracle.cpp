#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "nfuse/image.hpp"
#include "nfuse/mesh.hpp"
#include "nfuse/metrics.hpp"
#include "nfuse/rng.hpp"
#include "nfuse/scene.hpp"
#include "nfuse/viewset.hpp"
#include "test_support.hpp"

using namespace nfuse;
using nfuse::testing::scratch_dir;
using nfuse::testing::sphere_scene;

TEST_CASE("sdf_eval primitives and operators") {
  AnalyticScene sphere = sphere_scene(0.5);
  CHECK(sphere.sdf({0, 0, 0}) == doctest::Approx(-0.5));
  CHECK(sphere.sdf({1, 0, 0}) == doctest::Approx(0.5));

  AnalyticScene uni;
  {
    std::vector<std::unique_ptr<CsgNode>> kids;
    kids.push_back(make_sphere({0, 0, 0}, 0.5));
    kids.push_back(make_box({0, 0, 0}, {0.3, 0.3, 0.3}));
    uni.root = make_op(CsgNode::Kind::Union, std::move(kids));
  }
  CHECK(uni.sdf({0, 0, 0}) == doctest::Approx(-0.5));  // union = min
}

TEST_CASE("scene validation bounds primitives to the unit cube") {
  AnalyticScene s;
  s.root = make_sphere({0.8, 0, 0}, 0.5);  // escapes
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);

  AnalyticScene ok = sphere_scene(0.5);
  CHECK_NOTHROW(ok.validate());
}

TEST_CASE("scene json round-trip") {
  AnalyticScene s = nfuse::testing::box_minus_sphere_scene();
  const std::string text = scene_to_json(s);
  AnalyticScene back = scene_from_json(text);
  StreamRng rng(5);
  for (int i = 0; i < 200; ++i) {
    const Vec3 p = rng.in_unit_cube();
    CHECK(back.sdf(p) == doctest::Approx(s.sdf(p)).epsilon(1e-12));
    CHECK((back.color(p) - s.color(p)).norm() < 1e-12);
  }
  CHECK_THROWS(scene_from_json("{ not json"));
  CHECK_THROWS_AS(scene_from_json("{\"root\": {\"type\": \"blob\"}}"),
                  std::invalid_argument);
}

TEST_CASE("exact-operator scenes are 1-Lipschitz against a dense surface cloud") {
  // |sdf(p)| can never exceed the true distance to the surface; estimate the
  // distance with marching-cubes vertices of the same scene (within a cell
  // of the true surface).
  std::vector<AnalyticScene> scenes;
  scenes.push_back(sphere_scene(0.5));
  scenes.push_back(nfuse::testing::box_minus_sphere_scene());
  for (const AnalyticScene& scene : scenes) {
    REQUIRE(scene.exact_operators_only());
    const int res = 96;
    const TriMesh surf =
        marching_cubes_fn([&](const Vec3& p) { return scene.sdf(p); }, res);
    REQUIRE(!surf.empty());
    const std::vector<Vec3> cloud = sample_surface(surf, 20000, 7);
    const double slack = 2.0 * (2.0 / (res - 1));

    StreamRng rng(11);
    for (int i = 0; i < 1000; ++i) {
      const Vec3 p = rng.in_unit_cube();
      double nearest = 1e30;
      for (const auto& q : cloud) nearest = std::fmin(nearest, (q - p).norm());
      CHECK(std::fabs(scene.sdf(p)) <= nearest + slack);
    }
  }
}

TEST_CASE("render_views: center pixel of the front view sees the facing normal") {
  AnalyticScene scene = sphere_scene(0.5);
  auto cams = standard_rig(2.5, 65, 65);
  const ViewSet vs = render_views(scene, {cams[0]}, {}, 1);
  REQUIRE(vs.masks[0].at(32, 32) > 0.5f);
  const Vec3 g = vs.normals[0].rgb(32, 32);
  const Vec3 axis = cams[0].optical_axis();
  // normal points straight back at the camera
  CHECK(g.normalized().dot(axis) == doctest::Approx(-1.0).epsilon(1e-6));
  const Vec3 v = pixel_ray(cams[0], 32, 32).direction;
  CHECK(g.normalized().dot(v) == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("render_views: empty scene gives empty masks") {
  AnalyticScene empty;
  empty.colorizer.kind = Colorizer::Kind::Constant;
  const ViewSet vs = render_views(empty, standard_rig(2.5, 32, 32), {}, 1);
  for (const auto& m : vs.masks)
    for (float x : m.data) CHECK(x == 0.0f);
}

TEST_CASE("render_views: masked pixel count matches the projected disc area") {
  AnalyticScene scene = sphere_scene(0.5);
  const auto cams = standard_rig(2.5, 64, 64);
  const ViewSet vs = render_views(scene, cams, {}, 2);
  for (int k = 0; k < vs.view_count(); ++k) {
    int count = 0;
    for (float m : vs.masks[k].data) count += m > 0.5f;
    const double beta = std::asin(0.5 / 2.5);
    const double rho = cams[k].focal * std::tan(beta);
    const double expected = M_PI * rho * rho;
    CHECK(std::fabs(count - expected) / expected < 0.02);
  }
}

TEST_CASE("render_views: masked-in world normals face the cameras") {
  AnalyticScene scene = nfuse::testing::box_minus_sphere_scene();
  const auto cams = standard_rig(2.5, 48, 48);
  const ViewSet vs = render_views(scene, cams, {}, 2);
  vs.validate();
  for (int k = 0; k < vs.view_count(); ++k)
    for (int v = 0; v < 48; ++v)
      for (int u = 0; u < 48; ++u) {
        if (vs.masks[k].at(u, v) < 0.5f) continue;
        const Vec3 g = vs.normals[k].rgb(u, v);
        const Vec3 dir = pixel_ray(vs.cameras[k], u, v, k).direction;
        CHECK(g.dot(dir) <= 1e-3);
      }
}

TEST_CASE("render_views is deterministic") {
  AnalyticScene scene = sphere_scene(0.5);
  const auto cams = standard_rig(2.5, 32, 32);
  const ViewSet a = render_views(scene, cams, {}, 1);
  const ViewSet b = render_views(scene, cams, {}, 4);
  for (int k = 0; k < a.view_count(); ++k) {
    CHECK(a.normals[k].data == b.normals[k].data);
    CHECK(a.colors[k].data == b.colors[k].data);
    CHECK(a.masks[k].data == b.masks[k].data);
  }
}

TEST_CASE("corrupt: all-zero spec is the identity") {
  const ViewSet vs = render_views(sphere_scene(0.5), standard_rig(2.5, 32, 32), {}, 1);
  const ViewSet out = corrupt(vs, CorruptionSpec{});
  for (int k = 0; k < vs.view_count(); ++k) {
    CHECK(out.normals[k].data == vs.normals[k].data);
    CHECK(out.colors[k].data == vs.colors[k].data);
    CHECK(out.masks[k].data == vs.masks[k].data);
  }
}

TEST_CASE("corrupt: flips produce exactly the requested share of impossible normals") {
  const ViewSet vs = render_views(sphere_scene(0.5), standard_rig(2.5, 48, 48), {}, 1);
  CorruptionSpec spec;
  spec.flip_fraction = 0.1;
  spec.seed = 21;
  const ViewSet out = corrupt(vs, spec);
  for (int k = 0; k < vs.view_count(); ++k) {
    size_t masked = 0, violating = 0;
    for (int v = 0; v < 48; ++v)
      for (int u = 0; u < 48; ++u) {
        if (vs.masks[k].at(u, v) < 0.5f) continue;
        ++masked;
        const Vec3 g = out.normals[k].rgb(u, v);
        const Vec3 dir = pixel_ray(vs.cameras[k], u, v, k).direction;
        if (g.dot(dir) > 0.0) ++violating;
      }
    CHECK(violating == static_cast<size_t>(std::floor(0.1 * masked)));
  }
}

TEST_CASE("corrupt: outliers alter exactly the requested count per map") {
  const ViewSet vs = render_views(sphere_scene(0.5), standard_rig(2.5, 48, 48), {}, 1);
  CorruptionSpec spec;
  spec.outlier_fraction = 0.07;
  spec.seed = 4;
  const ViewSet out = corrupt(vs, spec);
  for (int k = 0; k < vs.view_count(); ++k) {
    size_t masked = 0, color_changed = 0, normal_changed = 0;
    for (int v = 0; v < 48; ++v)
      for (int u = 0; u < 48; ++u) {
        if (vs.masks[k].at(u, v) < 0.5f) continue;
        ++masked;
        if ((out.colors[k].rgb(u, v) - vs.colors[k].rgb(u, v)).norm() > 0)
          ++color_changed;
        if ((out.normals[k].rgb(u, v) - vs.normals[k].rgb(u, v)).norm() > 0)
          ++normal_changed;
      }
    const size_t expect = static_cast<size_t>(std::floor(0.07 * masked));
    CHECK(color_changed == expect);
    CHECK(normal_changed == expect);
  }
}

TEST_CASE("corrupt: same seed is bit-identical, erosion keeps the invariant") {
  const ViewSet vs = render_views(sphere_scene(0.5), standard_rig(2.5, 48, 48), {}, 1);
  CorruptionSpec spec;
  spec.outlier_fraction = 0.05;
  spec.flip_fraction = 0.1;
  spec.mask_erosion_px = 1;
  spec.seed = 1234;
  const ViewSet a = corrupt(vs, spec);
  const ViewSet b = corrupt(vs, spec);
  for (int k = 0; k < vs.view_count(); ++k) {
    CHECK(a.normals[k].data == b.normals[k].data);
    CHECK(a.colors[k].data == b.colors[k].data);
    CHECK(a.masks[k].data == b.masks[k].data);
  }
  CHECK_NOTHROW(a.validate());
  // erosion shrank every view's mask
  for (int k = 0; k < vs.view_count(); ++k) {
    int before = 0, after = 0;
    for (float m : vs.masks[k].data) before += m > 0.5f;
    for (float m : a.masks[k].data) after += m > 0.5f;
    CHECK(after < before);
  }
  CorruptionSpec bad;
  bad.outlier_fraction = 1.5;
  CHECK_THROWS_AS(corrupt(vs, bad), std::invalid_argument);
}

TEST_CASE("viewset save/load inverts the encoding within quantization") {
  const ViewSet vs = render_views(sphere_scene(0.5), standard_rig(2.5, 32, 32), {}, 1);
  const std::string dir = scratch_dir("viewset");
  save_viewset(vs, dir);
  const ViewSet back = load_viewset(dir);
  REQUIRE(back.view_count() == vs.view_count());
  CHECK(back.conditioning_image_index == 0);
  for (int k = 0; k < vs.view_count(); ++k) {
    CHECK(back.masks[k].data == vs.masks[k].data);
    for (int v = 0; v < 32; ++v)
      for (int u = 0; u < 32; ++u) {
        const Vec3 n0 = vs.normals[k].rgb(u, v);
        const Vec3 n1 = back.normals[k].rgb(u, v);
        for (int c = 0; c < 3; ++c)
          CHECK(std::fabs(n0[c] - n1[c]) <= 1.0 / 65535.0 + 1e-9);
        const Vec3 c0 = vs.colors[k].rgb(u, v);
        const Vec3 c1 = back.colors[k].rgb(u, v);
        for (int c = 0; c < 3; ++c)
          CHECK(std::fabs(c0[c] - c1[c]) <= 0.5 / 255.0 + 1e-9);
      }
  }
  back.validate();
  std::filesystem::remove_all(dir);
}
