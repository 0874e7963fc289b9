#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "nfuse/camera.hpp"
#include "nfuse/rng.hpp"
#include "test_support.hpp"

using namespace nfuse;

TEST_CASE("standard rig geometry") {
  const auto cams = standard_rig(2.5, 256, 256);
  REQUIRE(cams.size() == 6);

  // front camera sits on -Y under the fixed convention
  CHECK(cams[0].label == ViewLabel::Front);
  CHECK(cams[0].center().x == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(cams[0].center().y == doctest::Approx(-2.5));
  CHECK(cams[0].center().z == doctest::Approx(0.0).epsilon(1e-12));

  // front and back are antipodal
  const Vec3 sum = cams[0].center() + cams[1].center();
  CHECK(sum.norm() < 1e-9);

  for (const auto& cam : cams) {
    CHECK(cam.center().norm() == doctest::Approx(2.5));
    // optical axis passes through the origin
    const Vec3 axis = cam.optical_axis();
    const Vec3 to_origin = (Vec3{0, 0, 0} - cam.center()).normalized();
    CHECK((axis - to_origin).norm() < 1e-6);
    CHECK(cam.world_from_camera.rotation.orthonormality_error() < 1e-9);
  }
}

TEST_CASE("standard rig rejects bad arguments") {
  CHECK_THROWS_AS(standard_rig(-1.0, 64, 64), std::invalid_argument);
  CHECK_THROWS_AS(standard_rig(0.0, 64, 64), std::invalid_argument);
  CHECK_THROWS_AS(standard_rig(2.5, 0, 64), std::invalid_argument);
  CHECK_THROWS_AS(standard_rig(2.5, 64, -3), std::invalid_argument);
  // camera inside the cube's circumsphere cannot frame it
  CHECK_THROWS_AS(standard_rig(1.0, 64, 64), std::invalid_argument);
}

TEST_CASE("unit cube projects inside the frame") {
  for (const auto& cam : standard_rig(2.5, 128, 96)) {
    for (int corner = 0; corner < 8; ++corner) {
      const Vec3 p{corner & 1 ? 1.0 : -1.0, corner & 2 ? 1.0 : -1.0,
                   corner & 4 ? 1.0 : -1.0};
      double px, py;
      project(cam, p, &px, &py);
      CHECK(px >= 0.0);
      CHECK(px <= cam.width);
      CHECK(py >= 0.0);
      CHECK(py <= cam.height);
    }
  }
}

TEST_CASE("pixel_ray basics") {
  // odd resolution puts the principal point exactly on a pixel center
  const auto cams = standard_rig(2.5, 65, 65);
  const CameraView& cam = cams[0];

  SUBCASE("principal-point pixel looks along the optical axis") {
    const Ray r = pixel_ray(cam, 32, 32);
    CHECK((r.direction - cam.optical_axis()).norm() < 1e-12);
  }

  SUBCASE("directions are unit and pairwise distinct") {
    std::set<std::tuple<double, double, double>> seen;
    for (int v = 0; v < cam.height; ++v)
      for (int u = 0; u < cam.width; ++u) {
        const Ray r = pixel_ray(cam, u, v);
        CHECK(std::fabs(r.direction.norm() - 1.0) < 1e-12);
        seen.insert({r.direction.x, r.direction.y, r.direction.z});
      }
    CHECK(seen.size() == static_cast<size_t>(cam.width) * cam.height);
  }

  SUBCASE("out of range pixels are rejected") {
    CHECK_THROWS_AS(pixel_ray(cam, -1, 0), std::invalid_argument);
    CHECK_THROWS_AS(pixel_ray(cam, 0, 65), std::invalid_argument);
  }
}

TEST_CASE("projection round-trip closes within half a pixel") {
  for (const auto& cam : standard_rig(2.5, 256, 256)) {
    StreamRng rng(17, static_cast<uint64_t>(cam.label));
    for (int i = 0; i < 1000; ++i) {
      const int u = static_cast<int>(rng.below(cam.width));
      const int v = static_cast<int>(rng.below(cam.height));
      const Ray r = pixel_ray(cam, u, v);
      const double t = rng.uniform(0.5, 4.0);
      double px, py;
      project(cam, r.origin + r.direction * t, &px, &py);
      CHECK(std::fabs(px - (u + 0.5)) < 0.5);
      CHECK(std::fabs(py - (v + 0.5)) < 0.5);
    }
  }
}

TEST_CASE("cameras.json round-trips bit-exactly") {
  const auto cams = standard_rig(2.5, 64, 48);
  const std::string dir = nfuse::testing::scratch_dir("cams");
  const std::string path = dir + "/cameras.json";
  save_cameras_json(cams, path);
  const auto loaded = load_cameras_json(path);
  REQUIRE(loaded.size() == cams.size());
  for (size_t i = 0; i < cams.size(); ++i) {
    CHECK(loaded[i].label == cams[i].label);
    CHECK(loaded[i].focal == cams[i].focal);  // bit-exact
    CHECK(loaded[i].cx == cams[i].cx);
    CHECK(loaded[i].cy == cams[i].cy);
    CHECK(loaded[i].width == cams[i].width);
    CHECK(loaded[i].height == cams[i].height);
    for (int r = 0; r < 3; ++r) {
      CHECK(loaded[i].world_from_camera.translation[r] ==
            cams[i].world_from_camera.translation[r]);
      for (int c = 0; c < 3; ++c)
        CHECK(loaded[i].world_from_camera.rotation(r, c) ==
              cams[i].world_from_camera.rotation(r, c));
    }
  }

  // second save must produce identical bytes
  const std::string path2 = dir + "/cameras2.json";
  save_cameras_json(loaded, path2);
  std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  CHECK(sa.str() == sb.str());
  std::filesystem::remove_all(dir);
}

TEST_CASE("camera validation catches broken rotations") {
  CameraView cam = standard_rig(2.5, 64, 64)[0];
  cam.world_from_camera.rotation(0, 0) += 1e-3;
  CHECK_THROWS_AS(cam.validate(), std::invalid_argument);
}
