#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "fff/checkpoint.hpp"
#include "fff/errors.hpp"
#include "fff/linalg.hpp"
#include "fff/loss.hpp"
#include "fff/network.hpp"
#include "fff/rng.hpp"

namespace fff {

// Exact (up to the O(D^3) linear algebra) likelihood evaluation for a trained
// pair. Generation is one decoder pass; evaluation is one encoder pass plus a
// full decoder Jacobian at the latent point:
//
//   log p(x) = log N(z; 0, I) - log |det J_g(z)|,   z = f(x).
//
// The encoder-side variant uses +log |det J_f(x)| instead; the two agree
// exactly when g inverts f, and their gap is a useful training diagnostic.

using EnergyFn = std::function<double(const Vector&)>;

inline Vector sample_latent(int dim, RngStream& rng) {
  Vector z(dim);
  for (auto& v : z) v = rng.gaussian();
  return z;
}

inline Matrix sample(const ModelPair& model, std::size_t n, RngStream& rng,
                     const Vector& ctx = {}) {
  const int d = model.decoder.spec.input_dim;
  Matrix out(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const Vector z = sample_latent(d, rng);
    out.set_row(i, forward(model.decoder.spec, model.decoder.params, z, ctx));
  }
  return out;
}

inline double log_likelihood_decoder(const ModelPair& model, const Vector& x,
                                     const Vector& ctx = {}) {
  const Vector z = forward(model.encoder.spec, model.encoder.params, x, ctx);
  const Matrix jg = full_jacobian(model.decoder.spec, model.decoder.params, z, ctx);
  const int d = model.encoder.spec.input_dim;
  return -0.5 * norm2_squared(z) - d * half_log_2pi - log_abs_det(jg);
}

inline double log_likelihood_encoder(const ModelPair& model, const Vector& x,
                                     const Vector& ctx = {}) {
  const Vector z = forward(model.encoder.spec, model.encoder.params, x, ctx);
  const Matrix jf = full_jacobian(model.encoder.spec, model.encoder.params, x, ctx);
  const int d = model.encoder.spec.input_dim;
  return -0.5 * norm2_squared(z) - d * half_log_2pi + log_abs_det(jf);
}

// How far g is from inverting f on given data. mean_distance is the average
// Euclidean error ||x - g(f(x))||; mean_energy_gap compares an energy at x
// and at the round trip (skipped when no energy is supplied);
// mean_jacobian_deviation is ||J_f(x) J_g(z) - I||_F / D.
struct ReconReport {
  double mean_distance = 0.0;
  double mean_energy_gap = std::numeric_limits<double>::quiet_NaN();
  double mean_jacobian_deviation = 0.0;
  std::size_t count = 0;
};

inline ReconReport reconstruction_report(const ModelPair& model, const Matrix& x_rows,
                                         const Matrix* ctx_rows = nullptr,
                                         const EnergyFn& energy = nullptr) {
  ReconReport rep;
  rep.count = x_rows.rows();
  if (rep.count == 0) throw ConfigError("reconstruction_report: empty batch");
  const int d = model.encoder.spec.input_dim;
  double energy_acc = 0.0;
  for (std::size_t i = 0; i < x_rows.rows(); ++i) {
    const Vector x = x_rows.row_vector(i);
    const Vector c = ctx_rows && ctx_rows->rows() ? ctx_rows->row_vector(i) : Vector{};
    const Vector z = forward(model.encoder.spec, model.encoder.params, x, c);
    const Vector xh = forward(model.decoder.spec, model.decoder.params, z, c);
    double d2 = 0.0;
    for (int j = 0; j < d; ++j) d2 += (xh[j] - x[j]) * (xh[j] - x[j]);
    rep.mean_distance += std::sqrt(d2) / rep.count;
    const Matrix jf = full_jacobian(model.encoder.spec, model.encoder.params, x, c);
    const Matrix jg = full_jacobian(model.decoder.spec, model.decoder.params, z, c);
    rep.mean_jacobian_deviation += deviation_from_identity(matmul(jf, jg)) / d / rep.count;
    if (energy) energy_acc += std::abs(energy(x) - energy(xh)) / rep.count;
  }
  if (energy) rep.mean_energy_gap = energy_acc;
  return rep;
}

// ---------------------------------------------------------------------------
// Boltzmann reweighting. For model samples x ~ p_model and target
// pi(x) ∝ exp(-u(x)/tau):  log w = -u(x)/tau - log p_model(x).

struct WeightedSample {
  Vector x;
  double log_weight;
};

inline std::vector<WeightedSample> importance_weights(const ModelPair& model,
                                                      const Matrix& samples, const EnergyFn& u,
                                                      double tau = 1.0, const Vector& ctx = {}) {
  if (!u) throw ConfigError("importance_weights: energy function required");
  if (tau <= 0.0) throw ConfigError("importance_weights: tau must be positive");
  std::vector<WeightedSample> out;
  out.reserve(samples.rows());
  for (std::size_t i = 0; i < samples.rows(); ++i) {
    const Vector x = samples.row_vector(i);
    const double lw = -u(x) / tau - log_likelihood_decoder(model, x, ctx);
    out.push_back({x, lw});
  }
  return out;
}

// (sum w)^2 / sum w^2, computed with a max-shift so only relative weights
// matter. Always in (0, n].
inline double effective_sample_size(const std::vector<double>& log_weights) {
  if (log_weights.empty()) throw ConfigError("effective_sample_size: no weights");
  double m = -std::numeric_limits<double>::infinity();
  for (double lw : log_weights) m = std::max(m, lw);
  double s1 = 0.0, s2 = 0.0;
  for (double lw : log_weights) {
    const double w = std::exp(lw - m);
    s1 += w;
    s2 += w * w;
  }
  return s1 * s1 / s2;
}

inline double effective_sample_size(const std::vector<WeightedSample>& ws) {
  std::vector<double> lw;
  lw.reserve(ws.size());
  for (const auto& w : ws) lw.push_back(w.log_weight);
  return effective_sample_size(lw);
}

// Self-normalized importance estimate of E_pi[h] from per-sample h values.
inline double self_normalized_mean(const std::vector<double>& log_weights,
                                   const std::vector<double>& values) {
  if (log_weights.size() != values.size() || log_weights.empty())
    throw ConfigError("self_normalized_mean: size mismatch");
  double m = -std::numeric_limits<double>::infinity();
  for (double lw : log_weights) m = std::max(m, lw);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double w = std::exp(log_weights[i] - m);
    num += w * values[i];
    den += w;
  }
  return num / den;
}

// Coordinate-wise self-normalized mean of the weighted samples themselves.
inline Vector self_normalized_mean(const std::vector<WeightedSample>& ws) {
  if (ws.empty()) throw ConfigError("self_normalized_mean: no samples");
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& w : ws) m = std::max(m, w.log_weight);
  Vector num(ws.front().x.size(), 0.0);
  double den = 0.0;
  for (const auto& w : ws) {
    const double wt = std::exp(w.log_weight - m);
    axpy(wt, w.x, num);
    den += wt;
  }
  for (auto& v : num) v /= den;
  return num;
}

}  // namespace fff
