#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "fff/errors.hpp"
#include "fff/linalg.hpp"
#include "fff/rng.hpp"

namespace fff {

// ---------------------------------------------------------------------------
// Gaussian mixtures (diagonal covariance).

struct GmmDensity {
  std::vector<double> weights;       // convex combination
  std::vector<Vector> means;         // one per component
  std::vector<Vector> sigmas;        // per-dimension standard deviations

  int dim() const { return means.empty() ? 0 : static_cast<int>(means[0].size()); }
  std::size_t components() const { return weights.size(); }

  void validate() const {
    if (weights.empty() || weights.size() != means.size() || weights.size() != sigmas.size())
      throw ConfigError("GmmDensity: inconsistent component counts");
    double total = 0.0;
    for (double w : weights) {
      if (w <= 0.0) throw ConfigError("GmmDensity: weights must be positive");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("GmmDensity: weights must sum to 1");
    for (std::size_t i = 0; i < means.size(); ++i) {
      if (means[i].size() != means[0].size() || sigmas[i].size() != means[0].size())
        throw ConfigError("GmmDensity: dimension mismatch across components");
      for (double s : sigmas[i])
        if (s <= 0.0) throw ConfigError("GmmDensity: sigmas must be positive");
    }
  }
};

inline Vector gmm_sample(const GmmDensity& q, RngStream& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t pick = q.components() - 1;
  for (std::size_t i = 0; i < q.components(); ++i) {
    acc += q.weights[i];
    if (u < acc) {
      pick = i;
      break;
    }
  }
  Vector x(q.dim());
  for (int d = 0; d < q.dim(); ++d) x[d] = q.means[pick][d] + q.sigmas[pick][d] * rng.gaussian();
  return x;
}

inline Matrix gmm_sample_matrix(const GmmDensity& q, std::size_t n, RngStream& rng) {
  Matrix out(n, q.dim());
  for (std::size_t i = 0; i < n; ++i) out.set_row(i, gmm_sample(q, rng));
  return out;
}

inline double gmm_logpdf(const GmmDensity& q, const Vector& x) {
  if (static_cast<int>(x.size()) != q.dim()) throw DimensionMismatch("gmm_logpdf: dim mismatch");
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> comp_log(q.components());
  for (std::size_t i = 0; i < q.components(); ++i) {
    double lp = std::log(q.weights[i]);
    for (int d = 0; d < q.dim(); ++d) {
      const double zr = (x[d] - q.means[i][d]) / q.sigmas[i][d];
      lp += -0.5 * zr * zr - std::log(q.sigmas[i][d]) - 0.5 * std::log(2 * std::numbers::pi);
    }
    comp_log[i] = lp;
    best = std::max(best, lp);
  }
  double acc = 0.0;
  for (double lp : comp_log) acc += std::exp(lp - best);
  return best + std::log(acc);
}

// ---------------------------------------------------------------------------
// Two moons: one point per draw, moon chosen by fair coin, angle uniform on
// the half circle, isotropic Gaussian jitter of scale `noise`.

inline Matrix two_moons_sample(std::size_t n, double noise, RngStream& rng) {
  Matrix out(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const bool upper = rng.next_u64() & 1u;
    const double t = std::numbers::pi * rng.uniform();
    double x, y;
    if (upper) {
      x = std::cos(t);
      y = std::sin(t);
    } else {
      x = 1.0 - std::cos(t);
      y = 0.5 - std::sin(t);
    }
    out(i, 0) = x + noise * rng.gaussian();
    out(i, 1) = y + noise * rng.gaussian();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pairwise particle potentials. A configuration is the flat vector
// (p_0, ..., p_{N-1}) with each particle a block of space_dim coordinates;
// the energy is a sum over unordered particle pairs of a term in the
// Euclidean distance d.

struct PairwisePotential {
  enum class Kind { double_well, lennard_jones };
  Kind kind = Kind::double_well;
  int n_particles = 4;
  int space_dim = 2;
  double tau = 1.0;
  // double well: (1 / (2 tau)) (a (d - d0) + b (d - d0)^2 + c (d - d0)^4)
  double a = 0.0;
  double b = -4.0;
  double c = 0.9;
  double d0 = 4.0;
  // lennard-jones: (eps / (2 tau)) ((r_m / d)^12 - 2 (r_m / d)^6)
  double r_m = 1.0;
  double eps = 1.0;

  int dim() const { return n_particles * space_dim; }
};

// The 4-particle, 2-D double well benchmark system.
inline PairwisePotential dw4() { return PairwisePotential{}; }

inline double pair_term(const PairwisePotential& p, double d) {
  switch (p.kind) {
    case PairwisePotential::Kind::double_well: {
      const double s = d - p.d0;
      const double s2 = s * s;
      return (p.a * s + p.b * s2 + p.c * s2 * s2) / (2.0 * p.tau);
    }
    case PairwisePotential::Kind::lennard_jones: {
      if (d == 0.0)
        throw DegenerateConfiguration("lennard_jones: coincident particles (d = 0)");
      const double r6 = std::pow(p.r_m / d, 6);
      return p.eps / (2.0 * p.tau) * (r6 * r6 - 2.0 * r6);
    }
  }
  return 0.0;
}

inline double potential_energy(const PairwisePotential& p, const Vector& x) {
  if (static_cast<int>(x.size()) != p.dim())
    throw DimensionMismatch("potential_energy: configuration size mismatch");
  double u = 0.0;
  for (int i = 0; i < p.n_particles; ++i) {
    for (int j = i + 1; j < p.n_particles; ++j) {
      double d2 = 0.0;
      for (int k = 0; k < p.space_dim; ++k) {
        const double diff = x[i * p.space_dim + k] - x[j * p.space_dim + k];
        d2 += diff * diff;
      }
      u += pair_term(p, std::sqrt(d2));
    }
  }
  return u;
}

// Subtract the centroid from every particle, per spatial dimension.
inline void center_configuration(const PairwisePotential& p, Vector& x) {
  for (int k = 0; k < p.space_dim; ++k) {
    double mean = 0.0;
    for (int i = 0; i < p.n_particles; ++i) mean += x[i * p.space_dim + k];
    mean /= p.n_particles;
    for (int i = 0; i < p.n_particles; ++i) x[i * p.space_dim + k] -= mean;
  }
}

// Deterministic start: particles spread on a circle (or line in 1-D) at
// roughly the potential's preferred distance, then centered.
inline Vector initial_configuration(const PairwisePotential& p) {
  const double r0 = p.kind == PairwisePotential::Kind::double_well ? 0.6 * p.d0 : p.r_m;
  Vector x(p.dim(), 0.0);
  for (int i = 0; i < p.n_particles; ++i) {
    if (p.space_dim == 1) {
      x[i] = r0 * i;
    } else {
      const double ang = 2.0 * std::numbers::pi * i / p.n_particles;
      x[i * p.space_dim + 0] = r0 * std::cos(ang);
      x[i * p.space_dim + 1] = r0 * std::sin(ang);
      // Higher spatial dimensions start at zero.
    }
  }
  center_configuration(p, x);
  return x;
}

struct McmcOptions {
  std::size_t n_samples = 10000;
  std::size_t n_burnin = 5000;
  std::size_t thin = 10;           // proposals between saved samples
  double step_scale = 0.2;         // initial; adapted during burn-in
  bool center = true;              // mean-center saved configurations
};

struct McmcResult {
  Matrix samples;       // n_samples x dim
  double acceptance;    // measured after burn-in
  double step_scale;    // the adapted step actually used
};

// Random-walk Metropolis targeting exp(-u(x)). The proposal scale is adapted
// during the first 80% of burn-in toward ~50% acceptance and then frozen, so
// detailed balance holds for every retained sample.
inline McmcResult mcmc_sample(const PairwisePotential& p, const McmcOptions& opt, RngStream& rng) {
  Vector x = initial_configuration(p);
  double u = potential_energy(p, x);
  double step = opt.step_scale;
  const std::size_t tune_until = opt.n_burnin * 8 / 10;
  std::size_t window_accepts = 0, window_total = 0;
  std::size_t accepts = 0, total = 0;

  const std::size_t n_proposals = opt.n_burnin + opt.n_samples * opt.thin;
  Matrix out(opt.n_samples, p.dim());
  std::size_t saved = 0;

  Vector prop(p.dim());
  for (std::size_t it = 0; it < n_proposals && saved < opt.n_samples; ++it) {
    for (int k = 0; k < p.dim(); ++k) prop[k] = x[k] + step * rng.gaussian();
    bool accept = false;
    double u_prop = 0.0;
    try {
      u_prop = potential_energy(p, prop);
      const double log_alpha = u - u_prop;
      accept = log_alpha >= 0.0 || rng.uniform() < std::exp(log_alpha);
    } catch (const DegenerateConfiguration&) {
      accept = false;  // coincident particles: reject
    }
    if (accept) {
      x = prop;
      u = u_prop;
    }

    if (it < tune_until) {
      window_accepts += accept;
      if (++window_total == 100) {
        const double rate = window_accepts / 100.0;
        if (rate < 0.35) step *= 0.8;
        if (rate > 0.65) step *= 1.25;
        window_accepts = window_total = 0;
      }
    } else if (it >= opt.n_burnin) {
      accepts += accept;
      ++total;
      if ((it - opt.n_burnin + 1) % opt.thin == 0) {
        Vector save = x;
        if (opt.center) center_configuration(p, save);
        out.set_row(saved++, save);
      }
    }
  }
  return {std::move(out), total ? static_cast<double>(accepts) / total : 0.0, step};
}

// ---------------------------------------------------------------------------
// Zero centroid subspace. Mean-centered N-particle configurations live on an
// (N-1) * space_dim dimensional subspace of R^(N * space_dim); training a
// dimension-preserving model on the full space would see a degenerate
// distribution. The Helmert vectors give a deterministic orthonormal basis:
//   h_k[i] = 1/sqrt(k(k+1)) for i < k,  h_k[k] = -k/sqrt(k(k+1)),  else 0,
// tensored with the identity on spatial coordinates. y = B^T x are internal
// coordinates; x = B y lifts back (exact for centered x).

inline Matrix com_projection_basis(int n_particles, int space_dim) {
  if (n_particles < 2) throw ConfigError("com_projection_basis: need at least 2 particles");
  const int rows = n_particles * space_dim;
  const int cols = (n_particles - 1) * space_dim;
  Matrix basis(rows, cols);
  for (int k = 1; k < n_particles; ++k) {
    const double norm = 1.0 / std::sqrt(static_cast<double>(k) * (k + 1));
    for (int d = 0; d < space_dim; ++d) {
      const int col = (k - 1) * space_dim + d;
      for (int i = 0; i < k; ++i) basis(i * space_dim + d, col) = norm;
      basis(k * space_dim + d, col) = -k * norm;
    }
  }
  return basis;
}

inline Vector project_com(const Matrix& basis, const Vector& x) { return matvec_t(basis, x); }
inline Vector lift_com(const Matrix& basis, const Vector& y) { return matvec(basis, y); }

inline Matrix project_com_rows(const Matrix& basis, const Matrix& x) {
  Matrix out(x.rows(), basis.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) out.set_row(i, project_com(basis, x.row_vector(i)));
  return out;
}

// ---------------------------------------------------------------------------
// Conditional Gaussian-linear task: theta ~ N(0, I_d), observation
// x_obs = theta + s * eps. The posterior is Gaussian with mean
// x_obs / (1 + s^2) and covariance s^2 / (1 + s^2) I, which makes trained
// conditional samplers checkable in closed form.

struct ConditionalTask {
  int dim = 2;
  double noise_scale = 1.0;
};

struct ConditionalDraws {
  Matrix theta;  // targets (model inputs)
  Matrix x_obs;  // observations (context)
};

inline ConditionalDraws conditional_task_sample(const ConditionalTask& task, std::size_t n,
                                                RngStream& rng) {
  ConditionalDraws out{Matrix(n, task.dim), Matrix(n, task.dim)};
  for (std::size_t i = 0; i < n; ++i)
    for (int d = 0; d < task.dim; ++d) {
      const double theta = rng.gaussian();
      out.theta(i, d) = theta;
      out.x_obs(i, d) = theta + task.noise_scale * rng.gaussian();
    }
  return out;
}

inline Vector conditional_posterior_mean(const ConditionalTask& task, const Vector& x_obs) {
  Vector m(x_obs);
  const double shrink = 1.0 / (1.0 + task.noise_scale * task.noise_scale);
  for (auto& v : m) v *= shrink;
  return m;
}

inline double conditional_posterior_variance(const ConditionalTask& task) {
  const double s2 = task.noise_scale * task.noise_scale;
  return s2 / (1.0 + s2);
}

// ---------------------------------------------------------------------------
// Dataset CSV: header x0,...,x{D-1}[,c0,...,c{C-1}], one row per sample,
// values in round-trip decimal.

struct Dataset {
  Matrix x;
  Matrix context;  // 0 x 0 when absent
  bool has_context() const { return context.rows() > 0 && context.cols() > 0; }
};

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline void write_dataset_csv(const std::filesystem::path& path, const Matrix& x,
                              const Matrix* context = nullptr) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (std::size_t j = 0; j < x.cols(); ++j) out << (j ? "," : "") << "x" << j;
  if (context)
    for (std::size_t j = 0; j < context->cols(); ++j) out << ",c" << j;
  out << '\n';
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j)
      out << (j ? "," : "") << detail::format_double(x(i, j));
    if (context)
      for (std::size_t j = 0; j < context->cols(); ++j)
        out << ',' << detail::format_double((*context)(i, j));
    out << '\n';
  }
  if (!out.good()) throw IoError("write failed for " + path.string());
}

inline Dataset read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty dataset file " + path.string());
  std::size_t n_x = 0, n_c = 0;
  {
    std::stringstream header(line);
    std::string col;
    while (std::getline(header, col, ',')) {
      if (col.rfind('x', 0) == 0 && n_c == 0)
        ++n_x;
      else if (col.rfind('c', 0) == 0)
        ++n_c;
      else
        throw IoError("unexpected column '" + col + "' in " + path.string());
    }
  }
  if (n_x == 0) throw IoError("no data columns in " + path.string());
  std::vector<double> values;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t count = 0;
    while (std::getline(ss, cell, ',')) {
      values.push_back(std::strtod(cell.c_str(), nullptr));
      ++count;
    }
    if (count != n_x + n_c)
      throw IoError("row " + std::to_string(rows + 2) + " has " + std::to_string(count) +
                    " columns, expected " + std::to_string(n_x + n_c));
    ++rows;
  }
  Dataset ds{Matrix(rows, n_x), n_c ? Matrix(rows, n_c) : Matrix()};
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < n_x; ++j) ds.x(i, j) = values[i * (n_x + n_c) + j];
    for (std::size_t j = 0; j < n_c; ++j) ds.context(i, j) = values[i * (n_x + n_c) + n_x + j];
  }
  return ds;
}

}  // namespace fff
