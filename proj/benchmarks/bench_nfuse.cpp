#include <benchmark/benchmark.h>

#include "nfuse/camera.hpp"
#include "nfuse/fusion.hpp"
#include "nfuse/losses.hpp"
#include "nfuse/mesh.hpp"
#include "nfuse/metrics.hpp"
#include "nfuse/render.hpp"
#include "nfuse/rng.hpp"
#include "nfuse/scene.hpp"

using namespace nfuse;

namespace {

Field make_field(int res) { return Field::sphere(res, res, 0.5); }

ViewSet make_views(int res) {
  AnalyticScene scene;
  scene.root = make_sphere({0, 0, 0}, 0.5);
  return render_views(scene, standard_rig(2.5, res, res), {}, 0);
}

void BM_FieldSdf(benchmark::State& state) {
  const Field f = make_field(static_cast<int>(state.range(0)));
  StreamRng rng(1);
  for (auto _ : state) {
    const Vec3 p = rng.in_unit_cube();
    benchmark::DoNotOptimize(f.sdf(p));
  }
}
BENCHMARK(BM_FieldSdf)->Arg(64)->Arg(128);

void BM_FieldNormal(benchmark::State& state) {
  const Field f = make_field(128);
  StreamRng rng(1);
  for (auto _ : state) {
    const Vec3 p = rng.in_unit_cube();
    benchmark::DoNotOptimize(f.normal(p));
  }
}
BENCHMARK(BM_FieldNormal);

void BM_RenderRay(benchmark::State& state) {
  const Field f = make_field(128);
  const auto cams = standard_rig(2.5, 64, 64);
  StreamRng rng(2);
  RenderParams params;
  params.n_coarse = static_cast<int>(state.range(0));
  params.n_fine = static_cast<int>(state.range(0));
  uint64_t key = 0;
  for (auto _ : state) {
    const Ray ray = pixel_ray(cams[key % 6], static_cast<int>(rng.below(64)),
                              static_cast<int>(rng.below(64)));
    benchmark::DoNotOptimize(render_ray(f, ray, params, key++));
  }
}
BENCHMARK(BM_RenderRay)->Arg(32)->Arg(64);

void BM_TotalLossBatch(benchmark::State& state) {
  const Field f = make_field(128);
  const ViewSet vs = make_views(64);
  const RayBatch batch = sample_batch(vs, static_cast<int>(state.range(0)), 1, 0);
  LossWeights w;
  TotalLossParams params;
  params.render.early_stop_transmittance = 1e-5;
  params.threads = 1;
  ParamGrad grad(f);
  TotalLossWorkspace ws;
  for (auto _ : state)
    benchmark::DoNotOptimize(total_loss(f, batch, w, params, &grad, &ws));
}
BENCHMARK(BM_TotalLossBatch)->Arg(1024)->Arg(4096)->Unit(benchmark::kMillisecond);

void BM_MarchingCubes(benchmark::State& state) {
  const Field f = make_field(128);
  for (auto _ : state)
    benchmark::DoNotOptimize(marching_cubes(f, static_cast<int>(state.range(0))));
}
BENCHMARK(BM_MarchingCubes)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_Chamfer(benchmark::State& state) {
  const TriMesh a = marching_cubes(make_field(96), 96);
  const TriMesh b = marching_cubes(make_field(64), 96);
  for (auto _ : state)
    benchmark::DoNotOptimize(chamfer(a, b, static_cast<int>(state.range(0)), 1));
}
BENCHMARK(BM_Chamfer)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
