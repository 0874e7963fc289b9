#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>

#include "nfuse/fusion.hpp"
#include "nfuse/mesh.hpp"
#include "test_support.hpp"

using namespace nfuse;
using nfuse::testing::scratch_dir;
using nfuse::testing::sphere_scene;

namespace {

FusionConfig tiny_config() {
  FusionConfig cfg;
  cfg.iterations = 12;
  cfg.rays_per_batch = 256;
  cfg.grid_res = 24;
  cfg.color_res = 24;
  cfg.render.n_coarse = 24;
  cfg.render.n_fine = 16;
  cfg.reg.n_points = 512;
  cfg.threads = 1;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST_CASE("sample_batch") {
  const ViewSet vs = render_views(sphere_scene(0.5), standard_rig(2.5, 32, 32), {}, 1);

  SUBCASE("n = 0 gives an empty batch") {
    CHECK(sample_batch(vs, 0, 1, 0).size() == 0);
  }

  SUBCASE("same seed and iteration reproduce the batch exactly") {
    const RayBatch a = sample_batch(vs, 500, 9, 3);
    const RayBatch b = sample_batch(vs, 500, 9, 3);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
      CHECK(a.pixels[i].ray.u == b.pixels[i].ray.u);
      CHECK(a.pixels[i].ray.v == b.pixels[i].ray.v);
      CHECK(a.pixels[i].ray.view_index == b.pixels[i].ray.view_index);
      CHECK((a.pixels[i].g - b.pixels[i].g).norm() == 0.0);
    }
    const RayBatch c = sample_batch(vs, 500, 9, 4);
    bool any_diff = false;
    for (size_t i = 0; i < a.size(); ++i)
      any_diff = any_diff || a.pixels[i].ray.u != c.pixels[i].ray.u ||
                 a.pixels[i].ray.v != c.pixels[i].ray.v;
    CHECK(any_diff);
  }

  SUBCASE("views contribute evenly within 3 sigma") {
    const int n = 6000;
    const RayBatch batch = sample_batch(vs, n, 13, 0);
    std::map<int, int> per_view;
    for (const auto& px : batch.pixels) per_view[px.ray.view_index]++;
    const double expect = n / 6.0;
    const double sigma = std::sqrt(n * (1.0 / 6.0) * (5.0 / 6.0));
    for (const auto& [view, count] : per_view)
      CHECK(std::fabs(count - expect) <= 3.0 * sigma);
  }

  SUBCASE("half the batch is restricted to masked-in pixels") {
    const RayBatch batch = sample_batch(vs, 2000, 2, 0);
    int masked = 0;
    for (size_t i = 0; i < 1000; ++i) masked += batch.pixels[i].m > 0.5;
    CHECK(masked == 1000);  // first half drawn from the masked pool
    // unrestricted half includes background
    int background = 0;
    for (size_t i = 1000; i < 2000; ++i) background += batch.pixels[i].m < 0.5;
    CHECK(background > 500);  // sphere covers ~12% of pixels
  }

  SUBCASE("sentinel normals are flagged") {
    const RayBatch batch = sample_batch(vs, 2000, 7, 1);
    for (const auto& px : batch.pixels) {
      if (px.m < 0.5) CHECK(!px.g_ok);
      if (px.g_ok) CHECK(std::fabs(px.g.norm() - 1.0) < 2e-3);
    }
  }
}

TEST_CASE("fuse smoke run keeps finite losses and logs every iteration") {
  const ViewSet vs = render_views(sphere_scene(0.5), standard_rig(2.5, 24, 24), {}, 1);
  const FusionConfig cfg = tiny_config();
  const FuseResult result = fuse(vs, cfg);
  CHECK(!result.aborted);
  REQUIRE(result.log.size() == static_cast<size_t>(cfg.iterations));
  for (const auto& row : result.log) {
    CHECK(row.loss.finite());
    CHECK(row.sharpness > 0);
  }
  CHECK(result.field.sdf_res() == cfg.grid_res);
}

TEST_CASE("fuse is bit-deterministic in single-thread mode") {
  const ViewSet vs = render_views(sphere_scene(0.5), standard_rig(2.5, 24, 24), {}, 1);
  const FusionConfig cfg = tiny_config();
  const FuseResult a = fuse(vs, cfg);
  const FuseResult b = fuse(vs, cfg);
  CHECK(a.field == b.field);
}

TEST_CASE("fuse on empty masks drives the field positive") {
  AnalyticScene empty;
  const ViewSet vs = render_views(empty, standard_rig(2.5, 24, 24), {}, 1);
  FusionConfig cfg = tiny_config();
  cfg.iterations = 150;
  cfg.init_radius = 0.3;
  const FuseResult result = fuse(vs, cfg);
  CHECK(!result.aborted);
  // mask-only supervision shrinks the initial sphere; the extracted mesh
  // ends up empty or vanishingly small
  const TriMesh mesh = marching_cubes(result.field, 48);
  CHECK(mesh.triangles.size() < 500);
}

TEST_CASE("sharpness floor keeps the schedule") {
  const ViewSet vs = render_views(sphere_scene(0.5), standard_rig(2.5, 24, 24), {}, 1);
  FusionConfig cfg = tiny_config();
  cfg.iterations = 40;
  cfg.adam.lr_sharpness = 0.0;  // isolate the floor from the learned update
  cfg.sharpness_floor.enabled = true;
  cfg.sharpness_floor.growth = 1.05;
  cfg.sharpness_floor.cap = 14.0;
  const FuseResult result = fuse(vs, cfg);
  for (const auto& row : result.log) {
    const double floor =
        std::fmin(14.0, 10.0 * std::pow(1.05, row.iteration + 1));
    CHECK(row.sharpness == doctest::Approx(floor).epsilon(1e-9));
  }
  CHECK(result.log.back().sharpness == doctest::Approx(14.0).epsilon(1e-12));
}

TEST_CASE("fusion config json round-trip") {
  FusionConfig cfg = tiny_config();
  cfg.weights.eps_thresh = -0.08;
  cfg.weights.drop_fraction_rgb = 0.11;
  cfg.sharpness_floor.growth = 1.002;
  cfg.adam.lr_grid = 0.5e-2;
  const std::string text = fusion_config_to_json(cfg);
  const FusionConfig back = fusion_config_from_json(text);
  CHECK(back.iterations == cfg.iterations);
  CHECK(back.rays_per_batch == cfg.rays_per_batch);
  CHECK(back.weights.eps_thresh == cfg.weights.eps_thresh);
  CHECK(back.weights.drop_fraction_rgb == cfg.weights.drop_fraction_rgb);
  CHECK(back.weights.drop_fraction_mask == cfg.weights.drop_fraction_mask);
  CHECK(back.sharpness_floor.growth == cfg.sharpness_floor.growth);
  CHECK(back.adam.lr_grid == cfg.adam.lr_grid);
  CHECK(back.reg.n_points == cfg.reg.n_points);

  CHECK_THROWS_AS(fusion_config_from_json("{\"iterations\": -3}"),
                  std::invalid_argument);
}

TEST_CASE("training log csv has the pinned header") {
  const std::string dir = scratch_dir("log");
  std::vector<FuseLogRow> rows(3);
  for (int i = 0; i < 3; ++i) {
    rows[i].iteration = i;
    rows[i].loss = LossBreakdown{};
    rows[i].sharpness = 10.0 + i;
  }
  const std::string path = dir + "/log.csv";
  write_training_log_csv(rows, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header ==
        "iteration,L_normal,L_rgb,L_mask,R_eik,R_sparse,R_smooth,total,sharpness");
  int lines = 0;
  std::string line;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 3);
  std::filesystem::remove_all(dir);
}
