#include <doctest.h>

#include <cmath>

#include "nfuse/diffopt.hpp"
#include "nfuse/losses.hpp"
#include "test_support.hpp"

using namespace nfuse;

TEST_CASE("adam_step basics") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    Field f = Field::sphere(8, 8, 0.5);
    const Field before = f;
    AdamState state(f);
    ParamGrad grad(f);
    adam_step(f, grad, state);
    CHECK(state.step == 1);
    CHECK(f == before);
  }

  SUBCASE("step-1 update magnitude is lr for a unit gradient") {
    Field f(8, 8);
    AdamState state(f);
    state.hyper.lr_grid = 0.1;
    ParamGrad grad(f);
    grad.sdf[100] = 1.0;
    const double before = f.get_param(100);
    adam_step(f, grad, state);
    // bias-corrected m_hat / sqrt(v_hat) = 1 at step 1
    CHECK(std::fabs(f.get_param(100) - (before - 0.1)) < 1e-6);
  }

  SUBCASE("doubling a constant gradient barely changes the step-1 update") {
    Field f1(8, 8), f2(8, 8);
    AdamState s1(f1), s2(f2);
    ParamGrad g1(f1), g2(f2);
    g1.sdf[42] = 0.3;
    g2.sdf[42] = 0.6;
    adam_step(f1, g1, s1);
    adam_step(f2, g2, s2);
    CHECK(std::fabs(f1.get_param(42) - f2.get_param(42)) < 1e-9);
  }

  SUBCASE("non-finite gradients raise an error naming the block") {
    Field f(8, 8);
    AdamState state(f);
    ParamGrad grad(f);
    grad.color[3] = std::numeric_limits<double>::quiet_NaN();
    try {
      adam_step(f, grad, state);
      FAIL("expected an exception");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("color_grid") != std::string::npos);
    }
  }

  SUBCASE("sharpness updates in log space") {
    Field f = Field::sphere(8, 8, 0.5);
    AdamState state(f);
    ParamGrad grad(f);
    grad.log_sharpness = 1.0;
    const double before = f.log_sharpness();
    adam_step(f, grad, state);
    CHECK(f.log_sharpness() == doctest::Approx(before - state.hyper.lr_sharpness)
                                   .epsilon(1e-6));
  }
}

TEST_CASE("adam drives a quadratic bowl to the minimum") {
  // oracle: the same recurrence on a plain scalar
  double x = 1.0, m = 0.0, v = 0.0;
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int t = 1; t <= 200; ++t) {
    const double g = 2.0 * x;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    x -= lr * mh / (std::sqrt(vh) + eps);
  }
  CHECK(std::fabs(x) < 1e-3);

  // module route: a single field parameter under the same dynamics
  Field f(8, 8);
  f.set_param(0, 1.0);
  AdamState state(f);
  state.hyper.lr_grid = lr;
  ParamGrad grad(f);
  for (int t = 1; t <= 200; ++t) {
    grad.zero();
    grad.sdf[0] = 2.0 * f.get_param(0);
    adam_step(f, grad, state);
  }
  CHECK(std::fabs(f.get_param(0)) < 1e-3);
  CHECK(f.get_param(0) == doctest::Approx(x).epsilon(1e-4));
}

TEST_CASE("adam trajectories are deterministic") {
  auto run = [] {
    Field f = Field::sphere(10, 10, 0.5);
    AdamState state(f);
    StreamRng rng(5);
    ParamGrad grad(f);
    for (int t = 0; t < 20; ++t) {
      grad.zero();
      for (auto& g : grad.sdf) g = rng.normal() * 0.01;
      adam_step(f, grad, state, 1);
    }
    return f;
  };
  const Field a = run(), b = run();
  CHECK(a == b);
}

TEST_CASE("grad_check on closed-form functionals") {
  SUBCASE("linear functional is exact to near machine precision") {
    Field f = Field::sphere(10, 10, 0.5);
    auto mean_of_nodes = [](const Field& field, ParamGrad* grad) {
      const auto& data = field.sdf_data();
      double sum = 0;
      for (float v : data) sum += v;
      if (grad)
        for (auto& g : grad->sdf) g += 1.0 / static_cast<double>(data.size());
      return sum / static_cast<double>(data.size());
    };
    // a large step is exact for a linear functional and avoids cancellation
    const GradCheckReport report = grad_check(mean_of_nodes, f, 20, 1e-2, 3);
    // skip the sharpness entry: the functional ignores it (0 vs 0)
    for (const auto& e : report.entries)
      if (std::string(e.block) == "sdf_grid") CHECK(e.rel_error < 1e-10);
  }

  SUBCASE("eikonal gradient") {
    nfuse::testing::GradCheckSetup setup(16, 3);
    auto fn = [](const Field& field, ParamGrad* grad) {
      return eikonal_reg(field, 64, 11, grad);
    };
    CHECK(grad_check(fn, setup.field, 24, 1e-4, 3).max_rel_error < 1e-4);
  }

  SUBCASE("total_loss gradient on the debug grid") {
    nfuse::testing::GradCheckSetup setup(16, 3);
    LossWeights weights;
    TotalLossParams params;
    params.render.n_coarse = 24;
    params.render.n_fine = 0;
    params.render.seed = 7;
    params.reg.n_points = 64;
    params.reg.seed = 11;
    params.threads = 1;
    auto fn = [&](const Field& field, ParamGrad* grad) {
      return total_loss(field, setup.batch, weights, params, grad).total;
    };
    CHECK(grad_check(fn, setup.field, 24, 1e-4, 3).max_rel_error < 1e-3);
  }
}
