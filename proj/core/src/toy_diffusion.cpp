#include "nfuse/toy_diffusion.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "nfuse/diffopt.hpp"
#include "nfuse/rng.hpp"

namespace nfuse::toy {

Tensor LatentBatch::to_tokens() const {
  Tensor t(token_count(), channels);
  int row = 0;
  for (int item = 0; item < item_count(); ++item)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x, ++row)
        for (int c = 0; c < channels; ++c) t.at(row, c) = at(item, c, y, x);
  return t;
}

LatentBatch LatentBatch::from_tokens(const Tensor& tokens, int k, int d, int c, int h,
                                     int w) {
  LatentBatch b(k, d, c, h, w);
  if (tokens.rows != b.token_count() || tokens.cols != c)
    throw std::invalid_argument("from_tokens: shape mismatch");
  int row = 0;
  for (int item = 0; item < b.item_count(); ++item)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x, ++row)
        for (int ch = 0; ch < c; ++ch) b.at(item, ch, y, x) = tokens.at(row, ch);
  return b;
}

LatentBatch LatentBatch::gaussian(int k, int d, int c, int h, int w, uint64_t seed) {
  LatentBatch b(k, d, c, h, w);
  StreamRng rng(seed, 0x6A5501ULL);
  for (auto& v : b.data) v = rng.normal();
  return b;
}

DdpmSchedule DdpmSchedule::linear_vp(int steps) {
  if (steps < 2) throw std::invalid_argument("schedule needs >= 2 steps");
  DdpmSchedule s;
  s.steps = steps;
  s.alpha.resize(steps);
  s.sigma.resize(steps);
  for (int t = 0; t < steps; ++t) {
    const double sigma2 = (1.0 - 1e-4) * t / (steps - 1);
    s.sigma[t] = std::sqrt(sigma2);
    s.alpha[t] = std::sqrt(1.0 - sigma2);
  }
  return s;
}

LatentBatch ddpm_forward(const LatentBatch& z0, int t, const LatentBatch& noise,
                         const DdpmSchedule& schedule) {
  if (t < 0 || t >= schedule.steps)
    throw std::invalid_argument("ddpm_forward: t out of range");
  if (noise.data.size() != z0.data.size())
    throw std::invalid_argument("ddpm_forward: noise shape mismatch");
  LatentBatch out = z0;
  const double a = schedule.alpha[t], s = schedule.sigma[t];
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = a * z0.data[i] + s * noise.data[i];
  out.timestep = t;
  return out;
}

SwitcherEmbedding::SwitcherEmbedding(int n_freqs, double base) {
  frequencies.resize(n_freqs);
  double f = M_PI;
  for (int i = 0; i < n_freqs; ++i) {
    frequencies[i] = f;
    f *= base;
  }
}

std::vector<double> SwitcherEmbedding::encode(double s) const {
  std::vector<double> out;
  out.reserve(output_dim());
  for (double f : frequencies) {
    out.push_back(std::sin(s * f));
    out.push_back(std::cos(s * f));
  }
  return out;
}

std::vector<double> sinusoidal_time_embedding(int t, int n_freqs) {
  std::vector<double> out;
  out.reserve(2 * n_freqs);
  for (int i = 0; i < n_freqs; ++i) {
    const double w = std::pow(10000.0, -static_cast<double>(i) / n_freqs);
    out.push_back(std::sin(t * w));
    out.push_back(std::cos(t * w));
  }
  return out;
}

std::vector<uint8_t> make_pool_mask(int views, int domains, int tokens_per_item,
                                    AttentionPool pool) {
  const int n = views * domains * tokens_per_item;
  std::vector<uint8_t> mask(static_cast<size_t>(n) * n, 1);
  if (pool == AttentionPool::Joint) return mask;
  auto item_of = [&](int tok) { return tok / tokens_per_item; };
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const int ii = item_of(i), ij = item_of(j);
      const bool ok = pool == AttentionPool::SameDomain
                          ? (ii % domains) == (ij % domains)
                          : (ii / domains) == (ij / domains);
      if (!ok) mask[static_cast<size_t>(i) * n + j] = 0;
    }
  return mask;
}

AttentionWeights AttentionWeights::make(int dim, uint64_t seed) {
  AttentionWeights w;
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  w.wq = Tensor::randn(dim, dim, s, splitmix64(seed ^ 1));
  w.wk = Tensor::randn(dim, dim, s, splitmix64(seed ^ 2));
  w.wv = Tensor::randn(dim, dim, s, splitmix64(seed ^ 3));
  w.wo = Tensor::randn(dim, dim, s, splitmix64(seed ^ 4));
  w.bq = Tensor(1, dim);
  w.bk = Tensor(1, dim);
  w.bv = Tensor(1, dim);
  w.bo = Tensor(1, dim);
  return w;
}

namespace {

Tape::Ref attention(Tape& tape, Tape::Ref x, Tape::Ref wq, Tape::Ref bq, Tape::Ref wk,
                    Tape::Ref bk, Tape::Ref wv, Tape::Ref bv, Tape::Ref wo, Tape::Ref bo,
                    const std::vector<uint8_t>* mask, int dim) {
  const Tape::Ref q = tape.add_row(tape.matmul(x, wq), bq);
  const Tape::Ref k = tape.add_row(tape.matmul(x, wk), bk);
  const Tape::Ref v = tape.add_row(tape.matmul(x, wv), bv);
  const Tape::Ref scores =
      tape.scale(tape.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dim)));
  const Tape::Ref probs = tape.softmax_rows(scores, mask);
  const Tape::Ref mixed = tape.matmul(probs, v);
  return tape.add_row(tape.matmul(mixed, wo), bo);
}

}  // namespace

LatentBatch mv_xd_attention(const LatentBatch& batch, const AttentionWeights& w,
                            AttentionPool pool) {
  if (w.wq.rows != batch.channels)
    throw std::invalid_argument("mv_xd_attention: weight dim must equal channels");
  Tape tape;
  const Tape::Ref x = tape.leaf(batch.to_tokens());
  const Tape::Ref wq = tape.leaf(w.wq), bq = tape.leaf(w.bq);
  const Tape::Ref wk = tape.leaf(w.wk), bk = tape.leaf(w.bk);
  const Tape::Ref wv = tape.leaf(w.wv), bv = tape.leaf(w.bv);
  const Tape::Ref wo = tape.leaf(w.wo), bo = tape.leaf(w.bo);
  const std::vector<uint8_t> mask =
      make_pool_mask(batch.views, batch.domains, batch.tokens_per_item(), pool);
  const Tape::Ref out =
      attention(tape, x, wq, bq, wk, bk, wv, bv, wo, bo, &mask, batch.channels);
  return LatentBatch::from_tokens(tape.value(out), batch.views, batch.domains,
                                  batch.channels, batch.height, batch.width);
}

// ---------------------------------------------------------------------------
// ToyDenoiser

namespace {

// parameter layout per block: attention (8 tensors) [x2 when sequential],
// ln1 gain/bias [x2 when sequential], cond value proj, ff (4), ln2 (2)
struct ParamIndex {
  int w_in, b_in;
  int cam_table;
  int w_t1, b_t1, w_t2, b_t2;
  struct Block {
    int attn[8];       // wq,bq,wk,bk,wv,bv,wo,bo
    int attn2[8];      // sequential wiring only
    int ln1g, ln1b;
    int ln1g2, ln1b2;  // sequential wiring only
    int w_cond;
    int ff_w1, ff_b1, ff_w2, ff_b2;
    int ln2g, ln2b;
  };
  std::vector<Block> blocks;
  int ln_out_g, ln_out_b, w_out, b_out;
};

}  // namespace

struct ToyDenoiser::Forward {
  ParamIndex index;
};

ToyDenoiser::~ToyDenoiser() = default;

namespace {

ParamIndex build_params(const DenoiserConfig& cfg, std::vector<Tensor>& params) {
  ParamIndex ix;
  uint64_t seed = splitmix64(cfg.seed ^ 0x70FDULL);
  auto next_seed = [&seed] { return seed = splitmix64(seed); };
  auto add = [&](Tensor t) {
    params.push_back(std::move(t));
    return static_cast<int>(params.size()) - 1;
  };
  const int e = cfg.embed_dim;
  const double init = 0.02;

  ix.w_in = add(Tensor::randn(cfg.channels, e, 1.0 / std::sqrt(cfg.channels), next_seed()));
  ix.b_in = add(Tensor(1, e));
  ix.cam_table = add(Tensor::randn(cfg.views, e, init, next_seed()));

  const int t_dim = 2 * cfg.time_freqs + 2 * cfg.switcher_freqs;
  ix.w_t1 = add(Tensor::randn(t_dim, e, 1.0 / std::sqrt(t_dim), next_seed()));
  ix.b_t1 = add(Tensor(1, e));
  ix.w_t2 = add(Tensor::randn(e, e, init, next_seed()));
  ix.b_t2 = add(Tensor(1, e));

  ix.blocks.resize(cfg.blocks);
  for (auto& b : ix.blocks) {
    const double s = 1.0 / std::sqrt(static_cast<double>(e));
    auto attn_set = [&](int* slots) {
      slots[0] = add(Tensor::randn(e, e, s, next_seed()));
      slots[1] = add(Tensor(1, e));
      slots[2] = add(Tensor::randn(e, e, s, next_seed()));
      slots[3] = add(Tensor(1, e));
      slots[4] = add(Tensor::randn(e, e, s, next_seed()));
      slots[5] = add(Tensor(1, e));
      slots[6] = add(Tensor::randn(e, e, init, next_seed()));
      slots[7] = add(Tensor(1, e));
    };
    attn_set(b.attn);
    b.ln1g = add(Tensor::ones_gain(1, e));
    b.ln1b = add(Tensor(1, e));
    if (cfg.wiring == Wiring::Sequential) {
      attn_set(b.attn2);
      b.ln1g2 = add(Tensor::ones_gain(1, e));
      b.ln1b2 = add(Tensor(1, e));
    } else {
      for (int& v : b.attn2) v = -1;
      b.ln1g2 = b.ln1b2 = -1;
    }
    b.w_cond = add(Tensor::randn(cfg.cond_dim, e, init, next_seed()));
    b.ff_w1 = add(Tensor::randn(e, cfg.ff_dim, s, next_seed()));
    b.ff_b1 = add(Tensor(1, cfg.ff_dim));
    b.ff_w2 = add(Tensor::randn(cfg.ff_dim, e, init, next_seed()));
    b.ff_b2 = add(Tensor(1, e));
    b.ln2g = add(Tensor::ones_gain(1, e));
    b.ln2b = add(Tensor(1, e));
  }
  ix.ln_out_g = add(Tensor::ones_gain(1, e));
  ix.ln_out_b = add(Tensor(1, e));
  ix.w_out = add(Tensor::randn(e, cfg.channels, init, next_seed()));
  ix.b_out = add(Tensor(1, cfg.channels));
  return ix;
}

}  // namespace

ToyDenoiser::ToyDenoiser(const DenoiserConfig& cfg) : cfg_(cfg) {
  if (cfg.height < 1 || cfg.width < 1 || cfg.channels < 1 || cfg.views < 1 ||
      cfg.domains < 1 || cfg.domains > 2)
    throw std::invalid_argument("toy denoiser: bad config");
  layout_ = std::make_unique<Forward>();
  layout_->index = build_params(cfg_, params_);
}

int64_t ToyDenoiser::param_count() const {
  int64_t n = 0;
  for (const auto& p : params_) n += static_cast<int64_t>(p.size());
  return n;
}

Tape::Ref ToyDenoiser::build(Tape& tape, const LatentBatch& z_t, int t,
                             const std::vector<double>& y,
                             const std::vector<int>* view_perm,
                             const std::vector<double>* switcher,
                             std::vector<Tape::Ref>* param_refs) const {
  if (z_t.channels != cfg_.channels || z_t.views != cfg_.views ||
      z_t.domains != cfg_.domains)
    throw std::invalid_argument("denoise: batch does not match model config");
  if (static_cast<int>(y.size()) != cfg_.cond_dim)
    throw std::invalid_argument("denoise: conditioning size mismatch");

  const ParamIndex& ix = layout_->index;

  std::vector<Tape::Ref> refs(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) refs[i] = tape.leaf(params_[i]);
  if (param_refs) *param_refs = refs;

  const int n_tokens = z_t.token_count();
  const int tpi = z_t.tokens_per_item();
  std::vector<int> item_of(n_tokens), view_of(n_tokens);
  for (int tok = 0; tok < n_tokens; ++tok) {
    item_of[tok] = tok / tpi;
    const int v = z_t.view_of_item(item_of[tok]);
    view_of[tok] = view_perm ? (*view_perm)[v] : v;
  }

  // token embedding + camera embedding
  Tape::Ref x = tape.add_row(tape.matmul(tape.leaf(z_t.to_tokens()), refs[ix.w_in]),
                             refs[ix.b_in]);
  x = tape.add(x, tape.gather_rows(refs[ix.cam_table], view_of));

  // per-item time + switcher embedding -> MLP -> broadcast to tokens
  const SwitcherEmbedding sw(cfg_.switcher_freqs);
  const std::vector<double> te = sinusoidal_time_embedding(t, cfg_.time_freqs);
  Tensor emb_in(z_t.item_count(), static_cast<int>(te.size()) + sw.output_dim());
  for (int item = 0; item < z_t.item_count(); ++item) {
    const double s_value = switcher ? (*switcher)[item]
                                    : static_cast<double>(z_t.domain_of_item(item));
    const std::vector<double> se = sw.encode(s_value);
    int col = 0;
    for (double v : te) emb_in.at(item, col++) = v;
    for (double v : se) emb_in.at(item, col++) = v;
  }
  Tape::Ref emb = tape.add_row(tape.matmul(tape.leaf(std::move(emb_in)), refs[ix.w_t1]),
                               refs[ix.b_t1]);
  emb = tape.add_row(tape.matmul(tape.gelu(emb), refs[ix.w_t2]), refs[ix.b_t2]);
  x = tape.add(x, tape.gather_rows(emb, item_of));

  // conditioning image tokens: a single-key cross-attention collapses to a
  // broadcast value projection of y
  Tensor y_row(1, cfg_.cond_dim);
  for (int i = 0; i < cfg_.cond_dim; ++i) y_row.at(0, i) = y[i];
  const Tape::Ref y_ref = tape.leaf(std::move(y_row));
  const std::vector<int> zeros(n_tokens, 0);

  const std::vector<uint8_t> joint_mask = make_pool_mask(
      cfg_.views, cfg_.domains, tpi,
      cfg_.mask_cross_domain ? AttentionPool::SameDomain : AttentionPool::Joint);
  const std::vector<uint8_t> mv_mask =
      make_pool_mask(cfg_.views, cfg_.domains, tpi, AttentionPool::SameDomain);
  const std::vector<uint8_t> xd_mask = make_pool_mask(
      cfg_.views, cfg_.domains, tpi,
      cfg_.mask_cross_domain ? AttentionPool::SameDomain : AttentionPool::SameView);
  // under the cross-domain ablation the per-view pool degenerates to
  // within-item attention
  std::vector<uint8_t> xd_mask_final = xd_mask;
  if (cfg_.mask_cross_domain && cfg_.wiring == Wiring::Sequential) {
    const std::vector<uint8_t> sv = make_pool_mask(cfg_.views, cfg_.domains, tpi,
                                                   AttentionPool::SameView);
    for (size_t i = 0; i < sv.size(); ++i) xd_mask_final[i] = sv[i] & xd_mask[i];
  }

  for (const auto& blk : ix.blocks) {
    auto attn_with = [&](const int* slots, Tape::Ref input,
                         const std::vector<uint8_t>* mask) {
      return attention(tape, input, refs[slots[0]], refs[slots[1]], refs[slots[2]],
                       refs[slots[3]], refs[slots[4]], refs[slots[5]], refs[slots[6]],
                       refs[slots[7]], mask, cfg_.embed_dim);
    };
    if (cfg_.wiring == Wiring::Joint) {
      const Tape::Ref normed = tape.layernorm(x, refs[blk.ln1g], refs[blk.ln1b]);
      x = tape.add(x, attn_with(blk.attn, normed, &joint_mask));
    } else {
      const Tape::Ref n1 = tape.layernorm(x, refs[blk.ln1g], refs[blk.ln1b]);
      x = tape.add(x, attn_with(blk.attn, n1, &mv_mask));
      const Tape::Ref n2 = tape.layernorm(x, refs[blk.ln1g2], refs[blk.ln1b2]);
      x = tape.add(x, attn_with(blk.attn2, n2, &xd_mask_final));
    }
    // conditioning stub
    x = tape.add(x, tape.gather_rows(tape.matmul(y_ref, refs[blk.w_cond]), zeros));
    // feed-forward
    const Tape::Ref n3 = tape.layernorm(x, refs[blk.ln2g], refs[blk.ln2b]);
    const Tape::Ref h1 = tape.gelu(tape.add_row(tape.matmul(n3, refs[blk.ff_w1]),
                                                refs[blk.ff_b1]));
    x = tape.add(x, tape.add_row(tape.matmul(h1, refs[blk.ff_w2]), refs[blk.ff_b2]));
  }

  const Tape::Ref out_normed = tape.layernorm(x, refs[ix.ln_out_g], refs[ix.ln_out_b]);
  return tape.add_row(tape.matmul(out_normed, refs[ix.w_out]), refs[ix.b_out]);
}

LatentBatch ToyDenoiser::denoise_step(const LatentBatch& z_t, int t,
                                      const std::vector<double>& y) const {
  Tape tape;
  const Tape::Ref out = build(tape, z_t, t, y, nullptr, nullptr, nullptr);
  return LatentBatch::from_tokens(tape.value(out), z_t.views, z_t.domains, z_t.channels,
                                  z_t.height, z_t.width);
}

LatentBatch ToyDenoiser::denoise_step_with_switcher(
    const LatentBatch& z_t, int t, const std::vector<double>& y,
    const std::vector<double>& switcher) const {
  if (static_cast<int>(switcher.size()) != z_t.item_count())
    throw std::invalid_argument("switcher override must have one value per item");
  Tape tape;
  const Tape::Ref out = build(tape, z_t, t, y, nullptr, &switcher, nullptr);
  return LatentBatch::from_tokens(tape.value(out), z_t.views, z_t.domains, z_t.channels,
                                  z_t.height, z_t.width);
}

LatentBatch ToyDenoiser::denoise_step_permuted(const LatentBatch& z_t, int t,
                                               const std::vector<double>& y,
                                               const std::vector<int>& view_perm) const {
  Tape tape;
  const Tape::Ref out = build(tape, z_t, t, y, &view_perm, nullptr, nullptr);
  return LatentBatch::from_tokens(tape.value(out), z_t.views, z_t.domains, z_t.channels,
                                  z_t.height, z_t.width);
}

double ToyDenoiser::loss_and_grad(const LatentBatch& z_t, int t,
                                  const std::vector<double>& y,
                                  const LatentBatch& eps_target,
                                  std::vector<Tensor>* grads) const {
  Tape tape;
  std::vector<Tape::Ref> refs;
  const Tape::Ref pred = build(tape, z_t, t, y, nullptr, nullptr, &refs);
  const Tape::Ref target = tape.leaf(eps_target.to_tokens());
  const Tape::Ref loss = tape.mse(pred, target);
  if (grads) {
    tape.backward(loss);
    grads->clear();
    grads->reserve(refs.size());
    for (const Tape::Ref r : refs) grads->push_back(tape.grad(r));
  }
  return tape.value(loss).at(0, 0);
}

// ---------------------------------------------------------------------------
// Synthetic paired-domain dataset

LatentBatch sample_dataset_item(const ToyDatasetConfig& cfg, uint64_t index,
                                std::vector<double>* y, int cond_dim) {
  LatentBatch b(cfg.views, cfg.domains, cfg.channels, cfg.height, cfg.width);
  StreamRng rng(cfg.seed, 0xDA7AULL, index);

  // Base color pattern, view 0. Channels share one spatial pattern plus a
  // per-channel residual, so the domain transform (channel permutation +
  // sign map) leaves content that attention can match across domains.
  std::vector<double> shared(static_cast<size_t>(cfg.height) * cfg.width);
  for (auto& v : shared) v = rng.normal();
  std::vector<double> base(static_cast<size_t>(cfg.channels) * cfg.height * cfg.width);
  for (int c = 0; c < cfg.channels; ++c) {
    const double coef = (c % 2 == 0 ? 1.0 : -1.0) * (1.0 - 0.1 * c);
    for (int yy = 0; yy < cfg.height; ++yy)
      for (int xx = 0; xx < cfg.width; ++xx)
        base[(static_cast<size_t>(c) * cfg.height + yy) * cfg.width + xx] =
            0.9 * coef * shared[static_cast<size_t>(yy) * cfg.width + xx] +
            0.44 * rng.normal();
  }

  auto base_at = [&](int c, int yy, int xx) {
    return base[(static_cast<size_t>(c) * cfg.height + yy) * cfg.width + xx];
  };

  for (int view = 0; view < cfg.views; ++view) {
    const int shift = (view * cfg.view_shift) % cfg.width;
    for (int c = 0; c < cfg.channels; ++c)
      for (int yy = 0; yy < cfg.height; ++yy)
        for (int xx = 0; xx < cfg.width; ++xx) {
          const double color = base_at(c, yy, (xx + shift) % cfg.width);
          const int color_domain = cfg.domains - 1;  // domain 1 when present
          b.at(view * cfg.domains + color_domain, c, yy, xx) = color;
          if (cfg.domains == 2) {
            // normal domain: channel rotation + alternating sign
            const double src = base_at((c + 1) % cfg.channels, yy, (xx + shift) % cfg.width);
            b.at(view * cfg.domains + 0, c, yy, xx) = (c % 2 == 0 ? 1.0 : -1.0) * src;
          }
        }
  }

  if (y) {
    y->assign(cond_dim, 0.0);
    for (int i = 0; i < cond_dim; ++i)
      (*y)[i] = base[i % base.size()];
  }
  return b;
}

ToyTrainResult train_toy(ToyDenoiser& model, const ToyDatasetConfig& data,
                         const ToyTrainConfig& train) {
  const DdpmSchedule schedule = DdpmSchedule::linear_vp(train.schedule_steps);
  std::vector<Tensor>& params = model.params();

  // per-tensor Adam state
  std::vector<std::vector<float>> m(params.size()), v(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    m[i].assign(params[i].size(), 0.0f);
    v[i].assign(params[i].size(), 0.0f);
  }

  ToyTrainResult result;
  std::vector<Tensor> grads;
  StreamRng rng(train.seed, 0x7124ULL);

  // untrained baseline: averaged eval on held-out batches, no updates
  {
    StreamRng eval_rng(train.seed, 0xE7A1ULL);
    double sum = 0;
    const int n_eval = 50;
    for (int i = 0; i < n_eval; ++i) {
      std::vector<double> y;
      const LatentBatch z0 = sample_dataset_item(
          data, 1000000 + static_cast<uint64_t>(i), &y, model.config().cond_dim);
      const int t_lo = schedule.steps / 10;
      const int t = t_lo + static_cast<int>(eval_rng.below(schedule.steps - t_lo));
      const LatentBatch noise = LatentBatch::gaussian(
          z0.views, z0.domains, z0.channels, z0.height, z0.width,
          splitmix64(train.seed ^ (0x8E + i)));
      const LatentBatch z_t = ddpm_forward(z0, t, noise, schedule);
      sum += model.loss_and_grad(z_t, t, y, noise, nullptr);
    }
    result.initial_smoothed = sum / n_eval;
  }

  for (int step = 0; step < train.steps; ++step) {
    std::vector<double> y;
    const LatentBatch z0 =
        sample_dataset_item(data, static_cast<uint64_t>(step), &y, model.config().cond_dim);
    // skip the first tenth of the schedule: eps-prediction at near-zero
    // noise is unlearnable and only adds loss-floor variance
    const int t_lo = schedule.steps / 10;
    const int t = t_lo + static_cast<int>(rng.below(schedule.steps - t_lo));
    const LatentBatch noise =
        LatentBatch::gaussian(z0.views, z0.domains, z0.channels, z0.height, z0.width,
                              splitmix64(train.seed ^ (0xE9 + step)));
    const LatentBatch z_t = ddpm_forward(z0, t, noise, schedule);
    const double loss = model.loss_and_grad(z_t, t, y, noise, &grads);
    result.loss_curve.push_back(loss);

    for (size_t i = 0; i < params.size(); ++i)
      adam_update_span<double>(std::span<double>(params[i].data),
                               std::span<const double>(grads[i].data),
                               std::span<float>(m[i]), std::span<float>(v[i]), step + 1,
                               train.lr, 0.9, 0.999, 1e-8);
  }

  const size_t n = result.loss_curve.size();
  const size_t window = std::min<size_t>(50, n);
  double sum = 0;
  for (size_t i = n - window; i < n; ++i) sum += result.loss_curve[i];
  result.final_smoothed = window > 0 ? sum / window : 0.0;
  return result;
}

void write_loss_curve_csv(const std::vector<double>& curve, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "step,loss\n";
  for (size_t i = 0; i < curve.size(); ++i) out << i << "," << curve[i] << "\n";
}

namespace {

double max_abs_diff(const LatentBatch& a, const LatentBatch& b) {
  double m = 0;
  for (size_t i = 0; i < a.data.size(); ++i)
    m = std::fmax(m, std::fabs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace

std::string ToyPropertyReport::to_json() const {
  std::string s = "{\n";
  s += std::string("  \"shapes_ok\": ") + (shapes_ok ? "true" : "false") + ",\n";
  char buf[96];
  std::snprintf(buf, sizeof(buf), "  \"equivariance_max_delta\": %.12g,\n",
                equivariance_max_delta);
  s += buf;
  std::snprintf(buf, sizeof(buf), "  \"switcher_delta\": %.12g,\n", switcher_delta);
  s += buf;
  std::snprintf(buf, sizeof(buf), "  \"cross_domain_flow_delta\": %.12g,\n",
                cross_domain_flow_delta);
  s += buf;
  std::snprintf(buf, sizeof(buf), "  \"attention_row_sum_error\": %.12g\n",
                attention_row_sum_error);
  s += buf;
  s += "}\n";
  return s;
}

ToyPropertyReport toy_property_checks(uint64_t seed, Wiring wiring) {
  ToyPropertyReport report;

  // shape preservation over the (K, D) grid
  report.shapes_ok = true;
  for (const int k : {1, 2, 4})
    for (const int d : {1, 2}) {
      DenoiserConfig cfg;
      cfg.views = k;
      cfg.domains = d;
      cfg.wiring = wiring;
      cfg.seed = splitmix64(seed ^ (k * 16 + d));
      const ToyDenoiser model(cfg);
      const LatentBatch z = LatentBatch::gaussian(k, d, cfg.channels, cfg.height,
                                                  cfg.width, splitmix64(seed ^ 0x11));
      const std::vector<double> y(cfg.cond_dim, 0.3);
      const LatentBatch out = model.denoise_step(z, 7, y);
      if (out.views != k || out.domains != d || out.channels != cfg.channels ||
          out.height != cfg.height || out.width != cfg.width)
        report.shapes_ok = false;
    }

  // view-permutation equivariance: permute input items and the camera
  // embedding together; outputs must permute identically
  {
    DenoiserConfig cfg;
    cfg.views = 4;
    cfg.domains = 2;
    cfg.wiring = wiring;
    cfg.seed = splitmix64(seed ^ 0x22);
    const ToyDenoiser model(cfg);
    const LatentBatch z = LatentBatch::gaussian(cfg.views, cfg.domains, cfg.channels,
                                                cfg.height, cfg.width,
                                                splitmix64(seed ^ 0x33));
    const std::vector<double> y(cfg.cond_dim, -0.2);
    const std::vector<int> perm{2, 0, 3, 1};

    LatentBatch z_perm(cfg.views, cfg.domains, cfg.channels, cfg.height, cfg.width);
    for (int v = 0; v < cfg.views; ++v)
      for (int d = 0; d < cfg.domains; ++d)
        for (int c = 0; c < cfg.channels; ++c)
          for (int yy = 0; yy < cfg.height; ++yy)
            for (int xx = 0; xx < cfg.width; ++xx)
              z_perm.at(v * cfg.domains + d, c, yy, xx) =
                  z.at(perm[v] * cfg.domains + d, c, yy, xx);

    const LatentBatch out = model.denoise_step(z, 13, y);
    const LatentBatch out_perm = model.denoise_step_permuted(z_perm, 13, y, perm);

    double max_delta = 0;
    for (int v = 0; v < cfg.views; ++v)
      for (int d = 0; d < cfg.domains; ++d)
        for (int c = 0; c < cfg.channels; ++c)
          for (int yy = 0; yy < cfg.height; ++yy)
            for (int xx = 0; xx < cfg.width; ++xx)
              max_delta = std::fmax(
                  max_delta,
                  std::fabs(out_perm.at(v * cfg.domains + d, c, yy, xx) -
                            out.at(perm[v] * cfg.domains + d, c, yy, xx)));
    report.equivariance_max_delta = max_delta;
  }

  // switcher sensitivity: same tokens, different s
  {
    DenoiserConfig cfg;
    cfg.views = 2;
    cfg.domains = 2;
    cfg.wiring = wiring;
    cfg.seed = splitmix64(seed ^ 0x44);
    const ToyDenoiser model(cfg);
    const LatentBatch z = LatentBatch::gaussian(cfg.views, cfg.domains, cfg.channels,
                                                cfg.height, cfg.width,
                                                splitmix64(seed ^ 0x55));
    const std::vector<double> y(cfg.cond_dim, 0.1);
    const std::vector<double> s0{0, 1, 0, 1};
    const std::vector<double> s1{1, 0, 1, 0};
    const LatentBatch a = model.denoise_step_with_switcher(z, 3, y, s0);
    const LatentBatch b = model.denoise_step_with_switcher(z, 3, y, s1);
    report.switcher_delta = max_abs_diff(a, b);
  }

  // information flows across domains: zeroing domain-1 tokens changes the
  // domain-0 outputs
  {
    DenoiserConfig cfg;
    cfg.views = 2;
    cfg.domains = 2;
    cfg.wiring = wiring;
    cfg.seed = splitmix64(seed ^ 0x66);
    const ToyDenoiser model(cfg);
    const LatentBatch z = LatentBatch::gaussian(cfg.views, cfg.domains, cfg.channels,
                                                cfg.height, cfg.width,
                                                splitmix64(seed ^ 0x77));
    LatentBatch z_zeroed = z;
    for (int v = 0; v < cfg.views; ++v)
      for (int c = 0; c < cfg.channels; ++c)
        for (int yy = 0; yy < cfg.height; ++yy)
          for (int xx = 0; xx < cfg.width; ++xx)
            z_zeroed.at(v * cfg.domains + 1, c, yy, xx) = 0.0;
    const std::vector<double> y(cfg.cond_dim, 0.0);
    const LatentBatch a = model.denoise_step(z, 9, y);
    const LatentBatch b = model.denoise_step(z_zeroed, 9, y);
    double delta = 0;
    for (int v = 0; v < cfg.views; ++v)
      for (int c = 0; c < cfg.channels; ++c)
        for (int yy = 0; yy < cfg.height; ++yy)
          for (int xx = 0; xx < cfg.width; ++xx) {
            const int item = v * cfg.domains + 0;
            const double d = a.at(item, c, yy, xx) - b.at(item, c, yy, xx);
            delta += d * d;
          }
    report.cross_domain_flow_delta = std::sqrt(delta);
  }

  // attention rows are normalized
  {
    Tape tape;
    const Tape::Ref scores = tape.leaf(Tensor::randn(24, 24, 2.0, splitmix64(seed ^ 0x88)));
    const std::vector<uint8_t> mask = make_pool_mask(2, 2, 6, AttentionPool::SameDomain);
    const Tape::Ref probs = tape.softmax_rows(scores, &mask);
    const Tensor& p = tape.value(probs);
    double err = 0;
    for (int i = 0; i < p.rows; ++i) {
      double s = 0;
      for (int j = 0; j < p.cols; ++j) s += p.at(i, j);
      err = std::fmax(err, std::fabs(s - 1.0));
    }
    report.attention_row_sum_error = err;
  }

  return report;
}

}  // namespace nfuse::toy
