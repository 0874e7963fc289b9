#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nfuse/field.hpp"

namespace nfuse {

struct AdamHyper {
  double lr_grid = 1e-2;
  double lr_sharpness = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Optional cosine decay of both learning rates toward lr * floor over a
  /// horizon of total_steps (0 disables).
  bool cosine_decay = false;
  int64_t decay_total_steps = 0;
  double decay_floor = 0.1;

  double lr_scale(int64_t step) const {
    if (!cosine_decay || decay_total_steps <= 0) return 1.0;
    const double t = std::min(1.0, static_cast<double>(step) / decay_total_steps);
    return decay_floor + (1.0 - decay_floor) * 0.5 * (1.0 + std::cos(M_PI * t));
  }
};

/// First/second moment accumulators matching the Field parameter blocks.
struct AdamState {
  std::vector<float> m_sdf, v_sdf;
  std::vector<float> m_color, v_color;
  double m_sharp = 0.0, v_sharp = 0.0;
  int64_t step = 0;
  AdamHyper hyper;

  AdamState() = default;
  AdamState(const Field& f, const AdamHyper& h = {});
};

/// Generic element-wise Adam update with bias correction; shared by the
/// field optimizer and the toy-network trainer. Returns false when the
/// gradient contains non-finite entries (the update still runs; callers
/// treat it as fatal).
template <typename P>
bool adam_update_span(std::span<P> params, std::span<const double> grad,
                      std::span<float> m, std::span<float> v, int64_t step, double lr,
                      double beta1, double beta2, double eps) {
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  bool finite = true;
  for (size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    finite = finite && std::isfinite(g);
    const double mi = beta1 * m[i] + (1.0 - beta1) * g;
    const double vi = beta2 * v[i] + (1.0 - beta2) * g * g;
    m[i] = static_cast<float>(mi);
    v[i] = static_cast<float>(vi);
    const double m_hat = mi / bc1;
    const double v_hat = vi / bc2;
    params[i] = static_cast<P>(params[i] - lr * m_hat / (std::sqrt(v_hat) + eps));
  }
  return finite;
}

/// One Adam step over all Field parameters (sharpness in log-space).
/// Throws std::runtime_error naming the parameter block if the gradient
/// contains non-finite entries.
void adam_step(Field& f, const ParamGrad& grad, AdamState& state, int threads = 1);

struct GradCheckEntry {
  int64_t param_index;
  const char* block;
  double analytic;
  double finite_diff;
  double rel_error;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
};

/// Central finite differences on n_params randomly chosen parameters.
/// loss_fn must return the loss and, when grad is non-null, accumulate
/// analytic gradients into it. The step is h_rel * max(|p|, 0.1); the
/// actually-applied offsets are read back so f32 parameter storage cannot
/// skew the quotient.
GradCheckReport grad_check(
    const std::function<double(const Field&, ParamGrad*)>& loss_fn, Field& f,
    int n_params, double h_rel, uint64_t seed);

}  // namespace nfuse
