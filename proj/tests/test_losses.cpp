#include <doctest.h>

#include <cmath>

#include "nfuse/losses.hpp"
#include "nfuse/rng.hpp"
#include "test_support.hpp"

using namespace nfuse;

namespace {

RayPixel make_pixel(const Vec3& dir, const Vec3& g, double m, const Vec3& h = {0, 0, 0}) {
  RayPixel px;
  px.ray.origin = {0, -2.5, 0};
  px.ray.direction = dir.normalized();
  px.g = g;
  px.g_ok = g.norm() > 0.5;
  px.m = m;
  px.h = h;
  return px;
}

RayRender make_render(const Vec3& normal, double mask, const Vec3& color = {0, 0, 0}) {
  RayRender r;
  r.color = color;
  r.mask = mask;
  if (normal.norm() > 0) {
    r.normal = normal.normalized();
    r.normal_ok = true;
  }
  return r;
}

}  // namespace

TEST_CASE("normal_weight formula") {
  const Vec3 v{0, 1, 0};
  // cos(v,g) = -1: facing the camera head-on
  CHECK(normal_weight(v, {0, -1, 0}, -0.05) ==
        doctest::Approx(std::exp(1.0)).epsilon(1e-9));
  // above the threshold: impossible observation, weight 0
  CHECK(normal_weight(v, Vec3{1, 1, 0}.normalized(), -0.05) == 0.0);
  // boundary uses the <= branch
  const double eps = -0.05;
  Vec3 g{std::sqrt(1.0 - eps * eps), eps, 0.0};
  CHECK(normal_weight(v, g, eps) == doctest::Approx(std::exp(0.05)).epsilon(1e-9));
  // monotone in |cos| on the active branch
  double prev = 0.0;
  for (double c : {-0.1, -0.3, -0.6, -0.9, -1.0}) {
    const Vec3 gc{std::sqrt(1.0 - c * c), c, 0.0};
    const double w = normal_weight(v, gc, -0.05);
    CHECK(w > prev);
    prev = w;
  }
}

TEST_CASE("outlier_drop_mean") {
  SUBCASE("drops the largest errors") {
    const std::vector<double> e{5, 1, 2, 9, 3};
    const DropResult r = outlier_drop_mean(e, 0.2);
    CHECK(r.mean == doctest::Approx(2.75).epsilon(1e-12));
    CHECK(r.kept_count == 4);
    CHECK(!r.kept[3]);  // the 9
  }
  SUBCASE("fraction zero is the plain mean") {
    const std::vector<double> e{5, 1, 2, 9, 3};
    const DropResult r = outlier_drop_mean(e, 0.0);
    CHECK(r.mean == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(r.kept_count == 5);
  }
  SUBCASE("kept size is always n - floor(fraction n)") {
    StreamRng rng(2);
    for (int n : {1, 7, 20, 53}) {
      std::vector<double> e(n);
      for (auto& x : e) x = rng.uniform();
      for (double frac : {0.0, 0.1, 0.33, 0.9}) {
        const DropResult r = outlier_drop_mean(e, frac);
        CHECK(r.kept_count == static_cast<size_t>(n) -
                                  static_cast<size_t>(std::floor(frac * n)));
      }
    }
  }
  SUBCASE("ties keep the lower index") {
    const std::vector<double> e{3, 3, 1};
    const DropResult r = outlier_drop_mean(e, 1.0 / 3.0);
    CHECK(r.kept[0] == 1);
    CHECK(r.kept[1] == 0);
    CHECK(r.kept[2] == 1);
  }
  SUBCASE("empty input") {
    const DropResult r = outlier_drop_mean(std::vector<double>{}, 0.5);
    CHECK(r.mean == 0.0);
    CHECK(r.kept_count == 0);
  }
  SUBCASE("dropping the largest cannot raise the mean") {
    StreamRng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> e(1 + rng.below(40));
      for (auto& x : e) x = rng.normal();
      double mean = 0;
      for (double x : e) mean += x;
      mean /= e.size();
      const double frac = rng.uniform(0.0, 0.99);
      CHECK(outlier_drop_mean(e, frac).mean <= mean + 1e-12);
    }
  }
  SUBCASE("invalid fraction") {
    CHECK_THROWS_AS(outlier_drop_mean(std::vector<double>{1.0}, 1.0),
                    std::invalid_argument);
  }
}

TEST_CASE("normal_loss") {
  const Vec3 v{0, 1, 0};
  const Vec3 facing{0, -1, 0};

  SUBCASE("perfect agreement gives zero") {
    RayBatch batch;
    batch.pixels = {make_pixel(v, facing, 1), make_pixel(v, facing, 1)};
    const std::vector<RayRender> rendered{make_render(facing, 1),
                                          make_render(facing, 1)};
    const auto r = normal_loss(batch, rendered, -0.05, true);
    CHECK(r.value == doctest::Approx(0.0).epsilon(1e-12));
  }

  SUBCASE("all weights vanish: zero loss and zero gradient") {
    const Vec3 away{0, 1, 0};  // cos(v,g) = +1 > eps
    RayBatch batch;
    batch.pixels = {make_pixel(v, away, 1), make_pixel(v, away, 1)};
    const std::vector<RayRender> rendered{make_render(facing, 1),
                                          make_render(facing, 1)};
    const auto r = normal_loss(batch, rendered, -0.05, true);
    CHECK(r.value == 0.0);
    CHECK(r.weight_sum == 0.0);
    for (const Vec3& g : r.d_rendered) CHECK(g.norm() == 0.0);
  }

  SUBCASE("hand-evaluated two-pixel case") {
    // errors e = (0.2, 0.4) with weights (e^1, e^0.5):
    // cos(v,g) = -1 and -0.5, rendered normals at angles with cos = 0.8, 0.6
    RayBatch batch;
    const Vec3 g1 = facing;                                // |cos| = 1
    const Vec3 g2 = Vec3{std::sqrt(0.75), -0.5, 0.0};      // |cos| = 0.5
    batch.pixels = {make_pixel(v, g1, 1), make_pixel(v, g2, 1)};
    // rendered normals with cos(rendered, g) = 0.8 and 0.6
    auto rotated = [](const Vec3& n, double cosv) {
      // rotate within the plane spanned by n and +Z' orthogonal to n
      Vec3 ortho = n.cross(Vec3{0, 0, 1});
      if (ortho.norm() < 1e-9) ortho = n.cross(Vec3{1, 0, 0});
      ortho = ortho.normalized();
      Vec3 perp = ortho.cross(n).normalized();
      return (n * cosv + perp * std::sqrt(1.0 - cosv * cosv)).normalized();
    };
    const std::vector<RayRender> rendered{make_render(rotated(g1, 0.8), 1),
                                          make_render(rotated(g2, 0.6), 1)};
    const auto r = normal_loss(batch, rendered, -0.05, false);
    const double w1 = std::exp(1.0), w2 = std::exp(0.5);
    const double expected = (w1 * 0.2 + w2 * 0.4) / (w1 + w2);
    CHECK(r.value == doctest::Approx(expected).epsilon(1e-9));
    // the independently evaluated closed form
    CHECK(expected == doctest::Approx(0.27550801).epsilon(1e-6));
  }

  SUBCASE("masked-out and sentinel pixels are excluded") {
    RayBatch batch;
    batch.pixels = {make_pixel(v, facing, 0),          // masked out
                    make_pixel(v, {0, 0, 0}, 1),       // sentinel generated normal
                    make_pixel(v, facing, 1)};
    std::vector<RayRender> rendered{make_render(v, 1), make_render(v, 1),
                                    make_render({0, 0, 0}, 1)};  // sentinel rendered
    const auto r = normal_loss(batch, rendered, -0.05, true);
    CHECK(r.value == 0.0);
    CHECK(r.weight_sum == 0.0);
  }
}

TEST_CASE("rgb_loss") {
  SUBCASE("exact match is zero") {
    RayBatch batch;
    batch.pixels = {make_pixel({0, 1, 0}, {0, -1, 0}, 1, {0.5, 0.25, 0.75})};
    const std::vector<RayRender> rendered{make_render({0, -1, 0}, 1, {0.5, 0.25, 0.75})};
    CHECK(rgb_loss(batch, rendered, 0.05).value == doctest::Approx(0.0).epsilon(1e-12));
  }

  SUBCASE("a poisoned pixel is dropped and its gradient is exactly zero") {
    RayBatch batch;
    std::vector<RayRender> rendered;
    for (int i = 0; i < 100; ++i) {
      const bool poisoned = i == 37;
      const Vec3 target{0.5, 0.5, 0.5};
      // per-pixel squared error: poisoned 100, others 0.01
      const Vec3 got = poisoned ? Vec3{0.5 + 10.0, 0.5, 0.5}
                                : Vec3{0.5 + 0.1, 0.5, 0.5};
      batch.pixels.push_back(make_pixel({0, 1, 0}, {0, -1, 0}, 1, target));
      rendered.push_back(make_render({0, -1, 0}, 1, got));
    }
    const auto r = rgb_loss(batch, rendered, 0.05, true);
    CHECK(r.value == doctest::Approx(0.01).epsilon(1e-9));
    CHECK(r.d_rendered[37].norm() == 0.0);
    CHECK(r.d_rendered[0].norm() > 0.0);

    // perturbing the dropped pixel's rendered value changes nothing
    rendered[37].color.x += 5.0;
    const auto r2 = rgb_loss(batch, rendered, 0.05, true);
    CHECK(r2.value == r.value);
    for (size_t k = 0; k < r.d_rendered.size(); ++k)
      CHECK((r2.d_rendered[k] - r.d_rendered[k]).norm() == 0.0);
  }
}

TEST_CASE("mask_loss") {
  RayBatch batch;
  std::vector<RayRender> rendered;

  SUBCASE("perfect masks cost at most the clamp floor") {
    batch.pixels = {make_pixel({0, 1, 0}, {0, -1, 0}, 1),
                    make_pixel({0, 1, 0}, {0, 0, 0}, 0)};
    rendered = {make_render({0, -1, 0}, 1.0), make_render({0, 0, 0}, 0.0)};
    const auto r = mask_loss(batch, rendered, 0.05);
    CHECK(r.value <= 1.1e-5);
    CHECK(r.value >= 0.0);
  }

  SUBCASE("uniform 0.5 prediction costs ln 2") {
    for (int i = 0; i < 10; ++i) {
      batch.pixels.push_back(make_pixel({0, 1, 0}, {0, -1, 0}, i % 2));
      rendered.push_back(make_render({0, -1, 0}, 0.5));
    }
    const auto r = mask_loss(batch, rendered, 0.0);
    CHECK(r.value == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  }

  SUBCASE("outlier dropping matches rgb behavior") {
    for (int i = 0; i < 100; ++i) {
      batch.pixels.push_back(make_pixel({0, 1, 0}, {0, -1, 0}, 1));
      rendered.push_back(make_render({0, -1, 0}, i == 11 ? 1e-5 : 0.9));
    }
    const auto r = mask_loss(batch, rendered, 0.05, true);
    CHECK(r.value == doctest::Approx(-std::log(0.9)).epsilon(1e-9));
    CHECK(r.d_rendered[11] == 0.0);
  }
}

TEST_CASE("regularizers") {
  SUBCASE("plane sdf: eikonal and smoothness vanish") {
    Field f(24, 8);
    for (int k = 0; k < 24; ++k)
      for (int j = 0; j < 24; ++j)
        for (int i = 0; i < 24; ++i)
          f.sdf_data()[f.sdf_node_index(i, j, k)] =
              static_cast<float>(f.sdf_node_position(i, j, k).z);
    CHECK(eikonal_reg(f, 512, 3) < 1e-6);
    CHECK(smooth_reg(f, 512, 2.0 / 24, 3) < 1e-6);
  }

  SUBCASE("constant grid: eikonal is one, sparsity depends on the level") {
    Field f(12, 8);
    CHECK(eikonal_reg(f, 256, 1) == doctest::Approx(1.0).epsilon(1e-12));
    // f == 0 everywhere: sparsity is exp(0) = 1
    CHECK(sparsity_reg(f, 256, 1) == doctest::Approx(1.0).epsilon(1e-12));
    std::fill(f.sdf_data().begin(), f.sdf_data().end(), 1.0f);
    CHECK(sparsity_reg(f, 256, 1) ==
          doctest::Approx(std::exp(-20.0)).epsilon(1e-9));
  }

  SUBCASE("sphere_init eikonal stays small") {
    Field f = Field::sphere(48, 8, 0.5);
    CHECK(eikonal_reg(f, 4096, 5) < 0.05);
  }

  SUBCASE("sparsity does not grow when the zero set shrinks") {
    double prev = 1e30;
    for (double radius : {0.8, 0.5, 0.2}) {
      Field f = Field::sphere(32, 8, radius);
      const double s = sparsity_reg(f, 8192, 9);
      CHECK(s <= prev + 1e-9);
      prev = s;
    }
  }

  SUBCASE("white noise is rougher than a sphere") {
    Field noise(32, 8);
    StreamRng rng(4);
    for (auto& v : noise.sdf_data()) v = static_cast<float>(rng.normal() * 0.3);
    Field smooth_f = Field::sphere(32, 8, 0.5);
    CHECK(smooth_reg(noise, 2048, 2.0 / 32, 6) > smooth_reg(smooth_f, 2048, 2.0 / 32, 6));
  }

  SUBCASE("zero probe distance gives zero smoothness") {
    Field f = Field::sphere(16, 8, 0.5);
    CHECK(smooth_reg(f, 256, 0.0, 3) == 0.0);
  }

  SUBCASE("all regularizer values are non-negative on random grids") {
    StreamRng rng(15);
    for (int t = 0; t < 10; ++t) {
      Field f(10, 8);
      for (auto& v : f.sdf_data()) v = static_cast<float>(rng.normal());
      CHECK(eikonal_reg(f, 128, t) >= 0.0);
      CHECK(sparsity_reg(f, 128, t) >= 0.0);
      CHECK(smooth_reg(f, 128, 0.2, t) >= 0.0);
    }
  }
}

TEST_CASE("total_loss composition") {
  nfuse::testing::GradCheckSetup setup(12, 5, 24);
  TotalLossParams params;
  params.render.n_coarse = 16;
  params.render.n_fine = 8;
  params.render.seed = 3;
  params.reg.n_points = 128;
  params.reg.seed = 7;
  params.threads = 1;

  SUBCASE("all lambdas zero: zero loss and zero gradient") {
    LossWeights w;
    w.normal = w.rgb = w.mask = w.eik = w.sparse = w.smooth = 0.0;
    ParamGrad grad(setup.field);
    const LossBreakdown lb = total_loss(setup.field, setup.batch, w, params, &grad);
    CHECK(lb.total == 0.0);
    for (double v : grad.sdf) CHECK(v == 0.0);
    for (double v : grad.color) CHECK(v == 0.0);
    CHECK(grad.log_sharpness == 0.0);
  }

  SUBCASE("only the eikonal weight reproduces eikonal_reg") {
    LossWeights w;
    w.normal = w.rgb = w.mask = w.sparse = w.smooth = 0.0;
    w.eik = 1.0;
    const LossBreakdown lb = total_loss(setup.field, setup.batch, w, params);
    CHECK(lb.total ==
          doctest::Approx(eikonal_reg(setup.field, 128, 7)).epsilon(1e-12));
  }

  SUBCASE("every term is non-negative and finite") {
    const LossBreakdown lb = total_loss(setup.field, setup.batch, LossWeights{}, params);
    CHECK(lb.finite());
    CHECK(lb.normal >= 0.0);
    CHECK(lb.rgb >= 0.0);
    CHECK(lb.mask >= 0.0);
    CHECK(lb.eik >= 0.0);
    CHECK(lb.sparse >= 0.0);
    CHECK(lb.smooth >= 0.0);
  }

  SUBCASE("threads do not change the loss value") {
    TotalLossParams p2 = params;
    p2.threads = 4;
    const LossBreakdown a = total_loss(setup.field, setup.batch, LossWeights{}, params);
    const LossBreakdown b = total_loss(setup.field, setup.batch, LossWeights{}, p2);
    CHECK(a.total == doctest::Approx(b.total).epsilon(1e-12));
  }
}

TEST_CASE("loss weights validation") {
  LossWeights w;
  w.eps_thresh = 0.1;
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
  LossWeights w2;
  w2.drop_fraction_rgb = 1.0;
  CHECK_THROWS_AS(w2.validate(), std::invalid_argument);
  LossWeights w3;
  w3.normal = -1;
  CHECK_THROWS_AS(w3.validate(), std::invalid_argument);
}
