#include "nfuse/fusion.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "nfuse/rng.hpp"

namespace nfuse {

void FusionConfig::validate() const {
  if (iterations <= 0) throw std::invalid_argument("fusion: iterations must be > 0");
  if (rays_per_batch <= 0)
    throw std::invalid_argument("fusion: rays_per_batch must be > 0");
  if (grid_res < 2 || color_res < 2)
    throw std::invalid_argument("fusion: grid resolutions must be >= 2");
  if (!(init_radius > 0 && init_radius < 1))
    throw std::invalid_argument("fusion: init_radius must be in (0,1)");
  weights.validate();
}

RayBatch sample_batch(const ViewSet& vs, int n, uint64_t seed, int iteration) {
  RayBatch batch;
  if (n <= 0 || vs.view_count() == 0) return batch;

  struct PixelRef {
    int view, u, v;
  };
  std::vector<PixelRef> masked;
  std::vector<int64_t> view_offsets(vs.view_count() + 1, 0);
  for (int k = 0; k < vs.view_count(); ++k) {
    const Image& mask = vs.masks[k];
    for (int v = 0; v < mask.height; ++v)
      for (int u = 0; u < mask.width; ++u)
        if (mask.at(u, v) > 0.5f) masked.push_back({k, u, v});
    view_offsets[k + 1] =
        view_offsets[k] + static_cast<int64_t>(vs.cameras[k].width) * vs.cameras[k].height;
  }
  const int64_t total_pixels = view_offsets.back();

  StreamRng rng(seed, 0xBA7C4ULL, static_cast<uint64_t>(iteration));
  const int n_masked = n / 2;
  batch.pixels.reserve(n);

  auto push_pixel = [&](int k, int u, int v) {
    RayPixel px;
    px.ray = pixel_ray(vs.cameras[k], u, v, k);
    px.m = vs.masks[k].at(u, v) > 0.5f ? 1.0 : 0.0;
    px.h = vs.colors[k].rgb(u, v);
    px.g = vs.normals[k].rgb(u, v);
    px.g_ok = px.m > 0.5 && px.g.norm() > 0.5;
    batch.pixels.push_back(px);
  };

  for (int i = 0; i < n; ++i) {
    if (i < n_masked && !masked.empty()) {
      const PixelRef& ref = masked[rng.below(masked.size())];
      push_pixel(ref.view, ref.u, ref.v);
    } else {
      const int64_t flat = static_cast<int64_t>(rng.below(static_cast<uint64_t>(total_pixels)));
      int k = 0;
      while (flat >= view_offsets[k + 1]) ++k;
      const int64_t local = flat - view_offsets[k];
      const int w = vs.cameras[k].width;
      push_pixel(k, static_cast<int>(local % w), static_cast<int>(local / w));
    }
  }
  return batch;
}

FuseResult fuse(const ViewSet& vs, const FusionConfig& cfg, const FuseProgressFn& progress) {
  cfg.validate();
  vs.validate();

  FuseResult result;
  result.field = Field::sphere(cfg.grid_res, cfg.color_res, cfg.init_radius);
  Field& field = result.field;

  AdamHyper hyper = cfg.adam;
  if (hyper.cosine_decay && hyper.decay_total_steps <= 0)
    hyper.decay_total_steps = cfg.iterations;
  AdamState adam(field, hyper);
  ParamGrad grad(field);
  const double s0 = field.sharpness();

  Field last_good = field;
  int last_good_iter = 0;

  TotalLossParams params;
  params.render = cfg.render;
  params.reg = cfg.reg;
  params.threads = cfg.threads;
  TotalLossWorkspace workspace;

  namespace fs = std::filesystem;
  if (!cfg.checkpoint_dir.empty()) fs::create_directories(cfg.checkpoint_dir);

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const RayBatch batch = sample_batch(vs, cfg.rays_per_batch, cfg.seed, iter);
    params.render.seed = splitmix64(cfg.seed ^ (0xF1BEULL + static_cast<uint64_t>(iter)));
    params.reg.seed = splitmix64(cfg.seed ^ (0x4E6ULL + static_cast<uint64_t>(iter) * 3));

    const LossBreakdown loss =
        total_loss(field, batch, cfg.weights, params, &grad, &workspace);

    if (!loss.finite()) {
      result.aborted = true;
      result.abort_iteration = iter;
      if (!cfg.checkpoint_dir.empty()) {
        const std::string path = cfg.checkpoint_dir + "/abort_iter" +
                                 std::to_string(last_good_iter) + ".nfck";
        save_field(last_good, path);
        result.abort_checkpoint = path;
      }
      return result;
    }

    adam_step(field, grad, adam, cfg.threads);

    if (cfg.sharpness_floor.enabled) {
      const double floor = std::fmin(cfg.sharpness_floor.cap,
                                     s0 * std::pow(cfg.sharpness_floor.growth, iter + 1));
      if (field.sharpness() < floor) field.set_log_sharpness(std::log(floor));
    }

    result.log.push_back({iter, loss, field.sharpness()});
    if (progress) progress(iter, loss, field.sharpness());

    if (iter % 25 == 0) {
      last_good = field;
      last_good_iter = iter;
    }
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() &&
        (iter + 1) % cfg.checkpoint_every == 0) {
      save_field(field, cfg.checkpoint_dir + "/iter" + std::to_string(iter + 1) + ".nfck");
    }
  }
  return result;
}

void write_training_log_csv(const std::vector<FuseLogRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open log for writing: " + path);
  out << "iteration,L_normal,L_rgb,L_mask,R_eik,R_sparse,R_smooth,total,sharpness\n";
  char buf[320];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                  r.iteration, r.loss.normal, r.loss.rgb, r.loss.mask, r.loss.eik,
                  r.loss.sparse, r.loss.smooth, r.loss.total, r.sharpness);
    out << buf;
  }
}

namespace {

nlohmann::json weights_to_json(const LossWeights& w) {
  return {{"normal", w.normal},
          {"rgb", w.rgb},
          {"mask", w.mask},
          {"eik", w.eik},
          {"sparse", w.sparse},
          {"smooth", w.smooth},
          {"eps_thresh", w.eps_thresh},
          {"drop_fraction_rgb", w.drop_fraction_rgb},
          {"drop_fraction_mask", w.drop_fraction_mask},
          {"geometry_aware", w.geometry_aware}};
}

LossWeights weights_from_json(const nlohmann::json& j) {
  LossWeights w;
  w.normal = j.value("normal", w.normal);
  w.rgb = j.value("rgb", w.rgb);
  w.mask = j.value("mask", w.mask);
  w.eik = j.value("eik", w.eik);
  w.sparse = j.value("sparse", w.sparse);
  w.smooth = j.value("smooth", w.smooth);
  w.eps_thresh = j.value("eps_thresh", w.eps_thresh);
  w.drop_fraction_rgb = j.value("drop_fraction_rgb", w.drop_fraction_rgb);
  w.drop_fraction_mask = j.value("drop_fraction_mask", w.drop_fraction_mask);
  w.geometry_aware = j.value("geometry_aware", w.geometry_aware);
  return w;
}

}  // namespace

FusionConfig fusion_config_from_json(const std::string& json_text) {
  const nlohmann::json j = nlohmann::json::parse(json_text);
  FusionConfig cfg;
  cfg.iterations = j.value("iterations", cfg.iterations);
  cfg.rays_per_batch = j.value("rays_per_batch", cfg.rays_per_batch);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.grid_res = j.value("grid_res", cfg.grid_res);
  cfg.color_res = j.value("color_res", cfg.color_res);
  cfg.init_radius = j.value("init_radius", cfg.init_radius);
  if (j.contains("weights")) cfg.weights = weights_from_json(j.at("weights"));
  cfg.render.n_coarse = j.value("n_coarse", cfg.render.n_coarse);
  cfg.render.n_fine = j.value("n_fine", cfg.render.n_fine);
  cfg.render.early_stop_transmittance =
      j.value("early_stop_transmittance", cfg.render.early_stop_transmittance);
  cfg.reg.n_points = j.value("reg_points", cfg.reg.n_points);
  cfg.reg.smooth_delta = j.value("smooth_delta", cfg.reg.smooth_delta);
  cfg.reg.sparsity_tau = j.value("sparsity_tau", cfg.reg.sparsity_tau);
  if (j.contains("adam")) {
    const auto& a = j.at("adam");
    cfg.adam.lr_grid = a.value("lr_grid", cfg.adam.lr_grid);
    cfg.adam.lr_sharpness = a.value("lr_sharpness", cfg.adam.lr_sharpness);
    cfg.adam.beta1 = a.value("beta1", cfg.adam.beta1);
    cfg.adam.beta2 = a.value("beta2", cfg.adam.beta2);
    cfg.adam.eps = a.value("eps", cfg.adam.eps);
    cfg.adam.cosine_decay = a.value("cosine_decay", cfg.adam.cosine_decay);
    cfg.adam.decay_total_steps = a.value("decay_total_steps", cfg.adam.decay_total_steps);
    cfg.adam.decay_floor = a.value("decay_floor", cfg.adam.decay_floor);
  }
  if (j.contains("sharpness_floor")) {
    const auto& s = j.at("sharpness_floor");
    cfg.sharpness_floor.enabled = s.value("enabled", cfg.sharpness_floor.enabled);
    cfg.sharpness_floor.growth = s.value("growth", cfg.sharpness_floor.growth);
    cfg.sharpness_floor.cap = s.value("cap", cfg.sharpness_floor.cap);
  }
  cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
  cfg.checkpoint_dir = j.value("checkpoint_dir", cfg.checkpoint_dir);
  cfg.threads = j.value("threads", cfg.threads);
  cfg.validate();
  return cfg;
}

std::string fusion_config_to_json(const FusionConfig& cfg) {
  nlohmann::json j;
  j["iterations"] = cfg.iterations;
  j["rays_per_batch"] = cfg.rays_per_batch;
  j["seed"] = cfg.seed;
  j["grid_res"] = cfg.grid_res;
  j["color_res"] = cfg.color_res;
  j["init_radius"] = cfg.init_radius;
  j["weights"] = weights_to_json(cfg.weights);
  j["n_coarse"] = cfg.render.n_coarse;
  j["n_fine"] = cfg.render.n_fine;
  j["early_stop_transmittance"] = cfg.render.early_stop_transmittance;
  j["reg_points"] = cfg.reg.n_points;
  j["smooth_delta"] = cfg.reg.smooth_delta;
  j["sparsity_tau"] = cfg.reg.sparsity_tau;
  j["adam"] = {{"lr_grid", cfg.adam.lr_grid},
               {"lr_sharpness", cfg.adam.lr_sharpness},
               {"beta1", cfg.adam.beta1},
               {"beta2", cfg.adam.beta2},
               {"eps", cfg.adam.eps},
               {"cosine_decay", cfg.adam.cosine_decay},
               {"decay_total_steps", cfg.adam.decay_total_steps},
               {"decay_floor", cfg.adam.decay_floor}};
  j["sharpness_floor"] = {{"enabled", cfg.sharpness_floor.enabled},
                          {"growth", cfg.sharpness_floor.growth},
                          {"cap", cfg.sharpness_floor.cap}};
  j["checkpoint_every"] = cfg.checkpoint_every;
  j["checkpoint_dir"] = cfg.checkpoint_dir;
  j["threads"] = cfg.threads;
  return j.dump(2);
}

FusionConfig load_fusion_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return fusion_config_from_json(ss.str());
}

}  // namespace nfuse
