#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "fff/datasets.hpp"
#include "fff/errors.hpp"
#include "fff/linalg.hpp"
#include "fff/loss.hpp"
#include "fff/network.hpp"
#include "fff/rng.hpp"

namespace fff {

// Numerical checks of the identities this library's training objective rests
// on, all at desk scale: the trace-surrogate/log-det gradient identity, its
// error bound for imperfect decoders, the closed-form loss landscape of the
// 1-D linear model, and the partition bound that locates the reconstruction
// weight below which maximum likelihood stops being the dominant force.

// beta matching additive spread noise of scale sigma.
inline double beta_from_noise_scale(double sigma) {
  if (sigma <= 0.0) throw ConfigError("beta_from_noise_scale: sigma must be positive");
  return 1.0 / (2.0 * sigma * sigma);
}

// ---------------------------------------------------------------------------
// 1-D linear model f(x) = a x, g(z) = b z, data x ~ N(0, data_sigma^2).
// Expected-loss gradient fields in closed form, for both the exact-inverse
// surrogate (decoder replaced by f^{-1}) and the learned-decoder surrogate.

struct LinearModel1D {
  double data_sigma = 1.5;
  double beta = 1.0;
};

enum class LandscapeVariant { f_inverse, g_decoder };

struct GradField2D {
  double da = 0.0;
  double db = 0.0;
};

inline GradField2D landscape_gradient(const LinearModel1D& m, LandscapeVariant variant, double a,
                                      double b) {
  const double s2 = m.data_sigma * m.data_sigma;
  const double recon = 2.0 * m.beta * s2 * (a * b - 1.0);
  GradField2D g;
  switch (variant) {
    case LandscapeVariant::f_inverse:
      if (a == 0.0)
        throw DivergentGradient("landscape_gradient: f_inverse field undefined at a = 0");
      g.da = s2 * a - 1.0 / a + recon * b;
      break;
    case LandscapeVariant::g_decoder:
      g.da = s2 * a - b + recon * b;
      break;
  }
  g.db = recon * a;
  return g;
}

// All critical points of the chosen field, in closed form: (1/sigma, sigma)
// and its negation for both variants, plus the origin for g_decoder.
inline std::vector<std::pair<double, double>> landscape_critical_points(const LinearModel1D& m,
                                                                        LandscapeVariant variant) {
  const double a = 1.0 / m.data_sigma;
  const double b = m.data_sigma;
  std::vector<std::pair<double, double>> pts{{a, b}, {-a, -b}};
  if (variant == LandscapeVariant::g_decoder) pts.push_back({0.0, 0.0});
  return pts;
}

enum class CriticalKind { minimum, maximum, saddle, center };

inline std::string critical_kind_to_string(CriticalKind k) {
  switch (k) {
    case CriticalKind::minimum:
      return "minimum";
    case CriticalKind::maximum:
      return "maximum";
    case CriticalKind::saddle:
      return "saddle";
    case CriticalKind::center:
      return "center";
  }
  return "?";
}

using Field2D = std::function<GradField2D(double, double)>;

// Classify a zero of a planar field by the eigenvalues of its local Jacobian
// (central differences). Descent flows toward eigendirections with positive
// real part, so: all positive -> minimum, all negative -> maximum, mixed ->
// saddle, purely imaginary -> center. Throws NotCritical when the field is
// not actually (numerically) zero at the point.
inline CriticalKind classify_critical_point(const Field2D& field, double a, double b,
                                            double fd_step = 1e-5) {
  const GradField2D f0 = field(a, b);
  if (std::hypot(f0.da, f0.db) >= 1e-10)
    throw NotCritical("classify_critical_point: |field| = " +
                      std::to_string(std::hypot(f0.da, f0.db)) + " at (" + std::to_string(a) +
                      ", " + std::to_string(b) + ")");
  const GradField2D fa_p = field(a + fd_step, b), fa_m = field(a - fd_step, b);
  const GradField2D fb_p = field(a, b + fd_step), fb_m = field(a, b - fd_step);
  const double j00 = (fa_p.da - fa_m.da) / (2 * fd_step);
  const double j01 = (fb_p.da - fb_m.da) / (2 * fd_step);
  const double j10 = (fa_p.db - fa_m.db) / (2 * fd_step);
  const double j11 = (fb_p.db - fb_m.db) / (2 * fd_step);

  const double tr = j00 + j11;
  const double det = j00 * j11 - j01 * j10;
  const double disc = tr * tr - 4.0 * det;
  const double scale = std::sqrt(j00 * j00 + j01 * j01 + j10 * j10 + j11 * j11);
  const double tol = 1e-8 * (1.0 + scale);
  if (disc >= 0.0) {
    const double root = std::sqrt(disc);
    const double l1 = 0.5 * (tr - root);
    const double l2 = 0.5 * (tr + root);
    if (l1 > tol && l2 > tol) return CriticalKind::minimum;
    if (l1 < -tol && l2 < -tol) return CriticalKind::maximum;
    if (l1 < -tol && l2 > tol) return CriticalKind::saddle;
    return CriticalKind::center;  // an eigenvalue vanishes: degenerate direction
  }
  const double re = 0.5 * tr;
  if (re > tol) return CriticalKind::minimum;
  if (re < -tol) return CriticalKind::maximum;
  return CriticalKind::center;
}

// ---------------------------------------------------------------------------
// Partition analysis of a separable 1-D mixture. For an encoder constrained
// to transport each group of components onto the latent Gaussian separately,
// the achievable loss is
//
//   loss(beta) = h(q) - H(P) + beta * R_min(P)
//
// with H(P) the entropy of the group masses and R_min(P) the reconstruction
// floor of the best (conditional mean) decoder. Entropy lowers the loss,
// reconstruction raises it; the crossover sits at beta_crit = H / R_min.

struct PartitionSolution {
  std::vector<double> alpha;
  double entropy = 0.0;
  double r_min = 0.0;
  double h_q = 0.0;  // differential entropy of the mixture itself
  double beta_crit = std::numeric_limits<double>::infinity();

  double loss(double beta) const { return h_q - entropy + beta * r_min; }
};

namespace detail {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z * std::numbers::sqrt2 / 2.0); }

inline double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

// CDF of the renormalized mixture restricted to one component group.
inline double group_cdf(const GmmDensity& q, const std::vector<std::size_t>& members, double mass,
                        double x) {
  double acc = 0.0;
  for (std::size_t i : members)
    acc += q.weights[i] * normal_cdf((x - q.means[i][0]) / q.sigmas[i][0]);
  return acc / mass;
}

inline double group_quantile(const GmmDensity& q, const std::vector<std::size_t>& members,
                             double mass, double p) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t i : members) {
    lo = std::min(lo, q.means[i][0] - 14.0 * q.sigmas[i][0]);
    hi = std::max(hi, q.means[i][0] + 14.0 * q.sigmas[i][0]);
  }
  for (int it = 0; it < 90; ++it) {
    const double mid = 0.5 * (lo + hi);
    (group_cdf(q, members, mass, mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

// group_of[i] in [0, n_groups) assigns mixture component i to a group.
// Requires pairwise component separation of at least 5 max(sigma_i, sigma_j)
// so that the per-group transport construction is the optimum it claims to
// be; throws NotSeparable otherwise. 1-D mixtures only.
inline PartitionSolution partition_loss(const GmmDensity& q, const std::vector<int>& group_of) {
  q.validate();
  if (q.dim() != 1) throw ConfigError("partition_loss: 1-D mixtures only");
  if (group_of.size() != q.components())
    throw ConfigError("partition_loss: group assignment size mismatch");
  int n_groups = 0;
  for (int g : group_of) {
    if (g < 0) throw ConfigError("partition_loss: negative group id");
    n_groups = std::max(n_groups, g + 1);
  }
  for (std::size_t i = 0; i < q.components(); ++i)
    for (std::size_t j = i + 1; j < q.components(); ++j) {
      const double sep = std::abs(q.means[i][0] - q.means[j][0]);
      const double need = 5.0 * std::max(q.sigmas[i][0], q.sigmas[j][0]);
      if (sep < need)
        throw NotSeparable("partition_loss: components " + std::to_string(i) + " and " +
                           std::to_string(j) + " are " + std::to_string(sep) +
                           " apart, need " + std::to_string(need));
    }

  std::vector<std::vector<std::size_t>> members(n_groups);
  for (std::size_t i = 0; i < q.components(); ++i) members[group_of[i]].push_back(i);
  for (int g = 0; g < n_groups; ++g)
    if (members[g].empty()) throw ConfigError("partition_loss: empty group " + std::to_string(g));

  PartitionSolution sol;
  sol.alpha.resize(n_groups, 0.0);
  for (std::size_t i = 0; i < q.components(); ++i) sol.alpha[group_of[i]] += q.weights[i];
  for (double a : sol.alpha) sol.entropy -= a * std::log(a);

  // Differential entropy of the mixture by trapezoid quadrature.
  {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < q.components(); ++i) {
      lo = std::min(lo, q.means[i][0] - 12.0 * q.sigmas[i][0]);
      hi = std::max(hi, q.means[i][0] + 12.0 * q.sigmas[i][0]);
    }
    const int n = 20000;
    const double dx = (hi - lo) / n;
    double acc = 0.0;
    for (int k = 0; k <= n; ++k) {
      const double x = lo + k * dx;
      const double p = std::exp(gmm_logpdf(q, {x}));
      if (p > 1e-300) {
        const double w = (k == 0 || k == n) ? 0.5 : 1.0;
        acc -= w * p * std::log(p);
      }
    }
    sol.h_q = acc * dx;
  }

  // Reconstruction floor: per-group quantile transports x_g(z) and the
  // conditional-mean decoder g*(z) = sum_g alpha_g x_g(z).
  {
    const int n = 4000;
    const double z_lo = -8.0, z_hi = 8.0;
    const double dz = (z_hi - z_lo) / n;
    double acc = 0.0;
    std::vector<double> xg(n_groups);
    for (int k = 0; k <= n; ++k) {
      const double z = z_lo + k * dz;
      const double p = detail::normal_cdf(z);
      double gz = 0.0;
      for (int g = 0; g < n_groups; ++g) {
        xg[g] = detail::group_quantile(q, members[g], sol.alpha[g], p);
        gz += sol.alpha[g] * xg[g];
      }
      double sq = 0.0;
      for (int g = 0; g < n_groups; ++g) sq += sol.alpha[g] * (gz - xg[g]) * (gz - xg[g]);
      const double w = (k == 0 || k == n) ? 0.5 : 1.0;
      acc += w * sq * detail::normal_pdf(z);
    }
    sol.r_min = acc * dz;
  }

  if (sol.r_min > 1e-12) sol.beta_crit = sol.entropy / sol.r_min;
  return sol;
}

// ---------------------------------------------------------------------------
// Affine helpers for the exactness checks.

inline Network affine_network(const Matrix& a, const Vector& b) {
  NetworkSpec s;
  s.input_dim = static_cast<int>(a.rows());
  s.global_skip = false;
  Network net{s, ParamStore(s)};
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j)
      net.params.weight(0)[i * a.cols() + j] = a(i, j);
    net.params.bias(0)[i] = b[i];
  }
  return net;
}

// Encoder x -> Ax + b with well-conditioned random A, decoder its exact
// inverse z -> A^{-1}(z - b).
inline std::pair<Network, Network> random_affine_inverse_pair(int dim, RngStream& rng) {
  Matrix a(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) a(i, j) = 0.3 * rng.gaussian() + (i == j ? 1.5 : 0.0);
  Vector b(dim);
  for (auto& v : b) v = rng.gaussian();
  const Matrix ainv = inverse(a);
  Vector binv = matvec(ainv, b);
  for (auto& v : binv) v = -v;
  return {affine_network(a, b), affine_network(ainv, binv)};
}

// ---------------------------------------------------------------------------
// Whole-claim closed-form checks, as used by the verify command.

struct GradientIdentityReport {
  int max_dim = 0;
  int seeds = 0;
  double max_rel_error = 0.0;  // against the Jacobi closed form A^{-T}
};

// With the decoder an exact inverse, the basis-probe surrogate gradient must
// reproduce d/dA log|det A| = A^{-T} (and zero bias gradient) to rel_tol.
inline GradientIdentityReport gradient_identity_check(int max_dim, int seeds,
                                                       std::uint64_t seed,
                                                       double rel_tol = 1e-6) {
  GradientIdentityReport rep{max_dim, seeds, 0.0};
  RngStream root(seed);
  for (int d = 1; d <= max_dim; ++d) {
    for (int s = 0; s < seeds; ++s) {
      RngStream rng = root.split(static_cast<std::uint64_t>(d) * 10000 + s);
      const auto [enc, dec] = random_affine_inverse_pair(d, rng);
      Vector x(d);
      for (auto& v : x) v = rng.gaussian();
      const GapReport gap = surrogate_exactness_gap(enc, dec, x);

      Matrix a(d, d);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) a(i, j) = enc.params.weight(0)[i * d + j];
      const Matrix ainv = inverse(a);
      double scale = 1.0;
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) scale = std::max(scale, std::abs(ainv(j, i)));
      double err = 0.0;
      for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) {
          const double ref = ainv(j, i);  // d log|det A| / dA_ij
          err = std::max(err, std::abs(gap.grad_surrogate[i * d + j] - ref));
          err = std::max(err, std::abs(gap.grad_exact[i * d + j] - ref));
        }
        err = std::max(err, std::abs(gap.grad_surrogate[d * d + i]));
        err = std::max(err, std::abs(gap.grad_exact[d * d + i]));
      }
      rep.max_rel_error = std::max(rep.max_rel_error, err / scale);
      if (err / scale > rel_tol)
        throw IdentityViolated("gradient_identity_check: relative error " +
                               std::to_string(err / scale) + " at dim " + std::to_string(d) +
                               " seed " + std::to_string(s));
    }
  }
  return rep;
}

struct GapBoundReport {
  int trials = 0;
  double max_gap = 0.0;
  double max_bound = 0.0;
  double worst_margin = std::numeric_limits<double>::infinity();  // min(bound - gap)
};

// Random small encoder/decoder MLPs, random inputs: every parameter direction
// must satisfy |surrogate - exact| <= bound + slack.
inline GapBoundReport gap_bound_sweep(int trials, int dim, std::uint64_t seed,
                                      double slack = 1e-9) {
  GapBoundReport rep;
  rep.trials = trials;
  RngStream root(seed);
  for (int t = 0; t < trials; ++t) {
    RngStream rng = root.split(t);
    NetworkSpec se, sd;
    se.input_dim = sd.input_dim = dim;
    se.hidden_widths = {static_cast<int>(3 + rng.below(4))};
    sd.hidden_widths = {static_cast<int>(3 + rng.below(4))};
    se.activation = rng.next_u64() & 1 ? Activation::tanh : Activation::silu;
    sd.activation = rng.next_u64() & 1 ? Activation::tanh : Activation::silu;
    se.global_skip = rng.next_u64() & 1;
    sd.global_skip = true;  // keeps the decoder Jacobian generically well scaled
    const Network enc{se, init_params(se, rng.next_u64(), 1.0)};
    const Network dec{sd, init_params(sd, rng.next_u64(), 1.0)};
    Vector x(dim);
    for (auto& v : x) v = rng.gaussian();

    GapReport gap;
    try {
      gap = surrogate_exactness_gap(enc, dec, x);
    } catch (const SingularMatrix&) {
      continue;  // encoder not invertible at x: the bound does not apply
    }
    for (std::size_t p = 0; p < gap.gaps.size(); ++p) {
      rep.max_gap = std::max(rep.max_gap, gap.gaps[p]);
      rep.max_bound = std::max(rep.max_bound, gap.bounds[p]);
      rep.worst_margin = std::min(rep.worst_margin, gap.bounds[p] - gap.gaps[p]);
      if (gap.gaps[p] > gap.bounds[p] + slack)
        throw BoundViolated("gap_bound_sweep: gap " + std::to_string(gap.gaps[p]) + " > bound " +
                            std::to_string(gap.bounds[p]) + " at trial " + std::to_string(t) +
                            " param " + std::to_string(p));
    }
  }
  return rep;
}

}  // namespace fff
