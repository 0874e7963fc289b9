#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nfuse/diffopt.hpp"
#include "nfuse/losses.hpp"
#include "nfuse/viewset.hpp"

namespace nfuse {

struct SharpnessFloor {
  bool enabled = true;
  double growth = 1.001;  // multiplicative per iteration
  double cap = 500.0;
};

struct FusionConfig {
  int iterations = 3000;
  int rays_per_batch = 4096;
  uint64_t seed = 0;
  int grid_res = 128;
  int color_res = 128;
  double init_radius = 0.5;  // assets are unit scale
  LossWeights weights;
  RenderParams render{.n_coarse = 64, .n_fine = 64, .early_stop_transmittance = 1e-5};
  // Dense enough that every grid node feels the regularizers regularly;
  // sparsely-touched nodes drift under Adam otherwise.
  RegParams reg{.n_points = 16384};
  AdamHyper adam;
  SharpnessFloor sharpness_floor;
  int checkpoint_every = 0;       // 0: no periodic checkpoints
  std::string checkpoint_dir;    // used when checkpoint_every > 0 or on abort
  int threads = 0;                // 0: hardware concurrency

  void validate() const;
};

FusionConfig fusion_config_from_json(const std::string& json_text);
std::string fusion_config_to_json(const FusionConfig& cfg);
FusionConfig load_fusion_config(const std::string& path);

/// n pixels drawn from the union of all views, half restricted to masked-in
/// pixels (so geometry sees silhouette interiors) and half unrestricted (so
/// the mask loss sees background). Deterministic per (seed, iteration).
RayBatch sample_batch(const ViewSet& vs, int n, uint64_t seed, int iteration);

struct FuseLogRow {
  int iteration;
  LossBreakdown loss;
  double sharpness;
};

struct FuseResult {
  Field field;
  std::vector<FuseLogRow> log;
  bool aborted = false;
  int abort_iteration = -1;
  std::string abort_checkpoint;  // last finite field, when available
};

using FuseProgressFn = std::function<void(int iteration, const LossBreakdown&, double sharpness)>;

/// The fusion loop: sample a batch, render it, evaluate the objective,
/// Adam-update the field. Aborts on a non-finite loss, saving the most
/// recent finite checkpoint when a checkpoint_dir is configured.
FuseResult fuse(const ViewSet& vs, const FusionConfig& cfg,
                const FuseProgressFn& progress = nullptr);

void write_training_log_csv(const std::vector<FuseLogRow>& rows, const std::string& path);

}  // namespace nfuse
