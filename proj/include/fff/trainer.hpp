#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "fff/checkpoint.hpp"
#include "fff/errors.hpp"
#include "fff/likelihood.hpp"
#include "fff/linalg.hpp"
#include "fff/loss.hpp"
#include "fff/network.hpp"
#include "fff/rng.hpp"

namespace fff {

// ---------------------------------------------------------------------------
// Adam with bias correction; one state per parameter store.

struct AdamState {
  Vector m;
  Vector v;
  std::int64_t t = 0;
};

inline void adam_step(ParamStore& params, const GradStore& grads, AdamState& state, double lr,
                      double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  const std::size_t n = params.size();
  if (grads.size() != n) throw DimensionMismatch("adam_step: gradient layout mismatch");
  if (state.m.empty()) {
    state.m.assign(n, 0.0);
    state.v.assign(n, 0.0);
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads.data()[i];
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
    params.data()[i] -= lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + eps);
  }
}

// Scales grads in place so the global L2 norm is at most max_norm; returns
// the pre-clip norm. max_norm <= 0 disables clipping.
inline double clip_global_norm(GradStore& grads, double max_norm) {
  double n2 = 0.0;
  for (double g : grads.data()) n2 += g * g;
  const double norm = std::sqrt(n2);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (double& g : grads.data()) g *= scale;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Learning-rate schedules.

enum class ScheduleKind { constant, exponential, one_cycle };

inline ScheduleKind schedule_from_string(const std::string& s) {
  if (s == "constant") return ScheduleKind::constant;
  if (s == "exponential") return ScheduleKind::exponential;
  if (s == "one_cycle") return ScheduleKind::one_cycle;
  throw ConfigError("unknown schedule '" + s + "'");
}

inline std::string schedule_to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::constant:
      return "constant";
    case ScheduleKind::exponential:
      return "exponential";
    case ScheduleKind::one_cycle:
      return "one_cycle";
  }
  return "constant";
}

// one_cycle: linear warmup from lr/25 to lr over the first 30% of steps,
// then cosine decay back to lr/25 over the rest.
inline double lr_at(ScheduleKind kind, double lr, double gamma, std::int64_t step,
                    std::int64_t total_steps) {
  switch (kind) {
    case ScheduleKind::constant:
      return lr;
    case ScheduleKind::exponential:
      return lr * std::pow(gamma, static_cast<double>(step));
    case ScheduleKind::one_cycle: {
      const double floor_lr = lr / 25.0;
      const std::int64_t warm = std::max<std::int64_t>(1, total_steps * 3 / 10);
      if (step < warm) {
        const double f = static_cast<double>(step) / warm;
        return floor_lr + f * (lr - floor_lr);
      }
      const double f =
          static_cast<double>(step - warm) / std::max<std::int64_t>(1, total_steps - warm);
      return floor_lr + 0.5 * (lr - floor_lr) * (1.0 + std::cos(std::numbers::pi * f));
    }
  }
  return lr;
}

// ---------------------------------------------------------------------------
// Training loop.

struct TrainConfig {
  std::int64_t steps = 1000;
  int batch_size = 128;
  double lr = 1e-3;
  ScheduleKind schedule = ScheduleKind::constant;
  double schedule_gamma = 0.9995;  // exponential only
  double grad_clip = 0.0;          // 0 disables
  double beta = 1.0;
  int k_probes = 1;
  ProbeKind probe_kind = ProbeKind::gaussian;
  std::uint64_t seed = 0;
  std::int64_t eval_every = 100;
  std::size_t eval_cap = 512;      // held-out rows used for exact NLL
  bool exact_mle = false;          // encoder-only reference objective
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

struct MetricsRow {
  std::int64_t step = 0;
  double nll_surrogate = 0.0;
  double nll_exact = std::numeric_limits<double>::quiet_NaN();  // NaN when not evaluated
  double recon = 0.0;
  double grad_theta = 0.0;  // pre-clip global norms
  double grad_phi = 0.0;
  double lr = 0.0;
  std::int64_t skipped = 0;  // cumulative skipped batches
};

struct TrainResult {
  ModelPair model;
  std::vector<MetricsRow> metrics;
  std::int64_t skipped = 0;
};

using MetricsCallback = std::function<void(const MetricsRow&)>;

// Held-out slice: the last min(eval_cap, max(1, n/10)) rows are reserved for
// exact NLL evaluation and the rest feed the optimizer. Exact NLL uses the
// decoder-side change of variables (the evaluation convention); with
// exact_mle there is no decoder, so the encoder side is used.
inline std::size_t holdout_rows(std::size_t n, std::size_t cap) {
  return std::min<std::size_t>(cap, std::max<std::size_t>(1, n / 10));
}

inline TrainResult train(const TrainConfig& cfg, ModelPair init, const Matrix& x,
                         const Matrix* ctx = nullptr, const MetricsCallback& on_metrics = nullptr) {
  if (x.rows() < 2) throw ConfigError("train: need at least 2 samples");
  if (cfg.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (cfg.steps < 1) throw ConfigError("train: steps must be >= 1");
  const std::size_t n_hold = holdout_rows(x.rows(), cfg.eval_cap);
  const std::size_t n_train = x.rows() - n_hold;
  if (n_train == 0) throw ConfigError("train: no training rows left after holdout");

  TrainResult result;
  result.model = std::move(init);
  ModelPair& model = result.model;

  RngStream root(cfg.seed);
  RngStream batch_rng = root.split(1);
  RngStream probe_rng = root.split(2);

  AdamState state_theta, state_phi;
  const std::int64_t epoch_len =
      std::max<std::int64_t>(1, static_cast<std::int64_t>((n_train + cfg.batch_size - 1) / cfg.batch_size));
  std::int64_t epoch_skipped = 0, epoch_pos = 0;

  Matrix batch(cfg.batch_size, x.cols());
  Matrix batch_ctx = ctx ? Matrix(cfg.batch_size, ctx->cols()) : Matrix();

  auto eval_exact_nll = [&]() -> double {
    double acc = 0.0;
    std::size_t used = 0;
    try {
      for (std::size_t i = x.rows() - n_hold; i < x.rows(); ++i) {
        const Vector xi = x.row_vector(i);
        const Vector ci = ctx ? ctx->row_vector(i) : Vector{};
        const double ll = cfg.exact_mle
                              ? log_likelihood_encoder(model, xi, ci)
                              : log_likelihood_decoder(model, xi, ci);
        acc -= ll;
        ++used;
      }
    } catch (const SingularMatrix&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
    return used ? acc / used : std::numeric_limits<double>::quiet_NaN();
  };

  const LossConfig loss_cfg{cfg.beta, cfg.k_probes, cfg.probe_kind};
  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    for (int r = 0; r < cfg.batch_size; ++r) {
      const std::size_t pick = batch_rng.below(n_train);
      batch.set_row(r, x.row_vector(pick));
      if (ctx) batch_ctx.set_row(r, ctx->row_vector(pick));
    }
    const double lr_now = lr_at(cfg.schedule, cfg.lr, cfg.schedule_gamma, step, cfg.steps);

    bool skipped_batch = false;
    double grad_theta_norm = 0.0, grad_phi_norm = 0.0;
    double nll_surr = std::numeric_limits<double>::quiet_NaN();
    double recon = std::numeric_limits<double>::quiet_NaN();
    try {
      LossBreakdown out =
          cfg.exact_mle
              ? exact_mle_loss_and_grads(model.encoder, batch, ctx ? &batch_ctx : nullptr)
              : fff_loss_and_grads(model.encoder, model.decoder, batch,
                                   ctx ? &batch_ctx : nullptr, loss_cfg, probe_rng);
      grad_theta_norm = clip_global_norm(out.grad_theta, cfg.grad_clip);
      adam_step(model.encoder.params, out.grad_theta, state_theta, lr_now, cfg.adam_beta1,
                cfg.adam_beta2, cfg.adam_eps);
      if (!cfg.exact_mle) {
        grad_phi_norm = clip_global_norm(out.grad_phi, cfg.grad_clip);
        adam_step(model.decoder.params, out.grad_phi, state_phi, lr_now, cfg.adam_beta1,
                  cfg.adam_beta2, cfg.adam_eps);
      }
      nll_surr = out.nll_surrogate;
      recon = out.recon;
    } catch (const NonFiniteLoss&) {
      skipped_batch = true;
    } catch (const SingularMatrix&) {
      skipped_batch = true;
    }
    if (skipped_batch) {
      ++result.skipped;
      ++epoch_skipped;
    }
    if (++epoch_pos == epoch_len) {
      if (2 * epoch_skipped > epoch_len)
        throw NonFiniteLoss("training diverged: " + std::to_string(epoch_skipped) + " of " +
                            std::to_string(epoch_len) + " batches skipped in one epoch");
      epoch_pos = 0;
      epoch_skipped = 0;
    }

    const bool last = step + 1 == cfg.steps;
    if (step % cfg.eval_every == 0 || last) {
      MetricsRow row;
      row.step = step;
      row.nll_surrogate = nll_surr;
      row.nll_exact = eval_exact_nll();
      row.recon = recon;
      row.grad_theta = grad_theta_norm;
      row.grad_phi = grad_phi_norm;
      row.lr = lr_now;
      row.skipped = result.skipped;
      result.metrics.push_back(row);
      if (on_metrics) on_metrics(row);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Stability-bounded beta search: probe one epoch of training at each beta,
// increasing by `factor` until the surrogate NLL trace stops jumping and no
// batches are skipped, starting from beta_min.

struct BetaProbe {
  double beta = 0.0;
  bool stable = false;
  double max_jump = 0.0;
  std::int64_t skipped = 0;
};

struct BetaSearchResult {
  double beta = 0.0;
  std::vector<BetaProbe> probes;
};

inline BetaSearchResult beta_search(const TrainConfig& base, const ModelPair& init,
                                    const Matrix& x, const Matrix* ctx = nullptr,
                                    double beta_min = 1e-2, double factor = 10.0,
                                    int max_rounds = 6, double jump_threshold = 5.0) {
  if (factor <= 1.0) throw ConfigError("beta_search: factor must be > 1");
  BetaSearchResult result;
  const std::size_t n_hold = holdout_rows(x.rows(), base.eval_cap);
  const std::int64_t epoch_len = std::max<std::int64_t>(
      1, static_cast<std::int64_t>((x.rows() - n_hold + base.batch_size - 1) / base.batch_size));

  double beta = beta_min;
  for (int round = 0; round < max_rounds; ++round, beta *= factor) {
    TrainConfig probe_cfg = base;
    probe_cfg.beta = beta;
    probe_cfg.steps = epoch_len;
    probe_cfg.eval_every = std::max<std::int64_t>(1, epoch_len / 8);

    BetaProbe probe;
    probe.beta = beta;
    bool diverged = false;
    std::vector<double> trace;
    try {
      const TrainResult r = train(probe_cfg, init, x, ctx);
      probe.skipped = r.skipped;
      for (const auto& row : r.metrics)
        if (std::isfinite(row.nll_surrogate)) trace.push_back(row.nll_surrogate);
    } catch (const NonFiniteLoss&) {
      diverged = true;
    }
    for (std::size_t i = 1; i < trace.size(); ++i)
      probe.max_jump = std::max(probe.max_jump, std::abs(trace[i] - trace[i - 1]));
    probe.stable = !diverged && probe.skipped == 0 && !trace.empty() &&
                   probe.max_jump <= jump_threshold;
    result.probes.push_back(probe);
    if (probe.stable) {
      result.beta = beta;
      return result;
    }
  }
  throw NoStableBeta("beta_search: no stable beta in [" + std::to_string(beta_min) + ", " +
                     std::to_string(beta) + ")");
}

}  // namespace fff
