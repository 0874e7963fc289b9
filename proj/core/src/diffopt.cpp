#include "nfuse/diffopt.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>

#include "nfuse/parallel.hpp"
#include "nfuse/rng.hpp"

namespace nfuse {

AdamState::AdamState(const Field& f, const AdamHyper& h)
    : m_sdf(f.sdf_data().size(), 0.0f),
      v_sdf(f.sdf_data().size(), 0.0f),
      m_color(f.color_data().size(), 0.0f),
      v_color(f.color_data().size(), 0.0f),
      hyper(h) {}

void adam_step(Field& f, const ParamGrad& grad, AdamState& state, int threads) {
  if (grad.sdf.size() != f.sdf_data().size() ||
      grad.color.size() != f.color_data().size())
    throw std::invalid_argument("adam_step: gradient/parameter shape mismatch");
  if (!std::isfinite(grad.log_sharpness))
    throw std::runtime_error("adam_step: non-finite gradient in log_sharpness");

  state.step += 1;
  const AdamHyper& h = state.hyper;
  const double lr_scale = h.lr_scale(state.step);
  const int n_threads = resolve_threads(threads);

  auto run_block = [&](std::span<float> p, std::span<const double> g, std::span<float> m,
                       std::span<float> v, const char* block) {
    std::atomic<bool> finite{true};
    parallel_chunks(static_cast<int64_t>(p.size()), n_threads,
                    [&](int, int64_t b, int64_t e) {
                      if (!adam_update_span(p.subspan(b, e - b), g.subspan(b, e - b),
                                            m.subspan(b, e - b), v.subspan(b, e - b),
                                            state.step, h.lr_grid * lr_scale, h.beta1, h.beta2,
                                            h.eps))
                        finite.store(false, std::memory_order_relaxed);
                    });
    if (!finite.load())
      throw std::runtime_error(std::string("adam_step: non-finite gradient in ") + block);
  };
  run_block(f.sdf_data(), grad.sdf, state.m_sdf, state.v_sdf, "sdf_grid");
  run_block(f.color_data(), grad.color, state.m_color, state.v_color, "color_grid");

  // sharpness lives in log-space
  {
    const double g = grad.log_sharpness;
    state.m_sharp = h.beta1 * state.m_sharp + (1.0 - h.beta1) * g;
    state.v_sharp = h.beta2 * state.v_sharp + (1.0 - h.beta2) * g * g;
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
    const double m_hat = state.m_sharp / bc1;
    const double v_hat = state.v_sharp / bc2;
    f.set_log_sharpness(f.log_sharpness() -
                        h.lr_sharpness * lr_scale * m_hat / (std::sqrt(v_hat) + h.eps));
  }
}

GradCheckReport grad_check(
    const std::function<double(const Field&, ParamGrad*)>& loss_fn, Field& f,
    int n_params, double h_rel, uint64_t seed) {
  ParamGrad analytic(f);
  loss_fn(f, &analytic);

  // Half the picks come from parameters the loss actually touches, so the
  // check has teeth even on large grids where most nodes see no rays.
  std::vector<int64_t> active;
  const int64_t count = f.param_count();
  for (int64_t i = 0; i < count; ++i)
    if (std::fabs(analytic.get(i)) > 1e-12) active.push_back(i);

  GradCheckReport report;
  StreamRng rng(seed, 0x6C4DULL);
  for (int i = 0; i < n_params; ++i) {
    int64_t idx;
    if (i == 0)
      idx = count - 1;  // always include the sharpness scalar once
    else if (i % 2 == 1 && !active.empty())
      idx = active[rng.below(active.size())];
    else
      idx = static_cast<int64_t>(rng.below(static_cast<uint64_t>(count)));
    const double p0 = f.get_param(idx);
    const double h = h_rel * std::fmax(std::fabs(p0), 0.1);

    f.set_param(idx, p0 + h);
    const double p_plus = f.get_param(idx);  // read back the rounded value
    const double l_plus = loss_fn(f, nullptr);
    f.set_param(idx, p0 - h);
    const double p_minus = f.get_param(idx);
    const double l_minus = loss_fn(f, nullptr);
    f.set_param(idx, p0);

    const double fd = (l_plus - l_minus) / (p_plus - p_minus);
    const double an = analytic.get(idx);
    const double denom = std::fmax(std::fabs(an) + std::fabs(fd), 1e-6);
    const double rel = std::fabs(an - fd) / denom;
    report.entries.push_back({idx, f.param_block_name(idx), an, fd, rel});
    report.max_rel_error = std::fmax(report.max_rel_error, rel);
  }
  return report;
}

}  // namespace nfuse
