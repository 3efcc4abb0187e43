// End-to-end acceptance suite. Each test exercises one shipping criterion and
// prints a single "[CRITERION n] PASS" or "[CRITERION n] FAIL" banner followed
// by the measured values, so the binary's stdout is a self-contained report.
// Tolerances and budgets are pinned as named constants next to the criterion
// they guard.

#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "fff/checkpoint.hpp"
#include "fff/cli.hpp"
#include "fff/datasets.hpp"
#include "fff/likelihood.hpp"
#include "fff/loss.hpp"
#include "fff/trainer.hpp"
#include "fff/verify.hpp"

namespace {

using namespace fff;

// --- pinned tolerances ------------------------------------------------------
constexpr double kGradIdentityRelTol = 1e-6;   // criterion 1
constexpr double kGapBoundSlack = 1e-9;        // criterion 2
constexpr double kFieldZeroTol = 1e-12;        // criterion 3: closed-form zeros
constexpr double kDescentTol = 1e-3;           // criterion 3: descent endpoint
constexpr double kSaddleEigTol = 1e-2;         // criterion 3: origin eigenvalues
constexpr double kSaddleEigPlus = 6.2256;      // (2.25 + sqrt(104.0625)) / 2
constexpr double kSaddleEigMinus = -3.9756;    // (2.25 - sqrt(104.0625)) / 2
constexpr double kBetaCritRelTol = 0.05;       // criterion 4
constexpr double kNllGapTol = 0.2;             // criterion 5, nats
constexpr double kQuadratureLo = 0.95;         // criterion 6
constexpr double kQuadratureHi = 1.05;         // criterion 6
constexpr double kPosteriorMeanTol = 0.05;     // criterion 7
constexpr double kPosteriorCovTol = 0.1;       // criterion 7, Frobenius
constexpr double kJacobianDevTol = 0.1;        // criterion 8
constexpr double kEssFractionMin = 0.1;        // criterion 9
constexpr double kEnergySeMultiple = 3.0;      // criterion 9

// --- runtime budgets (seconds) ----------------------------------------------
constexpr double kBudgetGradIdentity = 10.0;
constexpr double kBudgetGapBound = 60.0;
constexpr double kBudgetLandscape = 30.0;
constexpr double kBudgetPartition = 60.0;
constexpr double kBudgetMoonsTraining = 900.0;
constexpr double kBudgetQuadrature = 120.0;
constexpr double kBudgetConditional = 600.0;
constexpr double kBudgetCoupling = 60.0;
constexpr double kBudgetReweighting = 1800.0;
constexpr double kBudgetDeterminism = 300.0;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// Collects named subchecks for one criterion, then prints the banner.
class Criterion {
 public:
  Criterion(int id, double budget_seconds)
      : id_(id), budget_(budget_seconds), start_(std::chrono::steady_clock::now()) {}

  void check(bool ok, const std::string& what) {
    ok_ = ok_ && ok;
    lines_.push_back(std::string(ok ? "ok     " : "FAILED ") + what);
  }

  void note(const std::string& what) { lines_.push_back("       " + what); }

  // Runs a body that may throw; an escaped exception fails the criterion
  // instead of aborting the whole binary.
  template <typename F>
  void section(F&& body) {
    try {
      body();
    } catch (const std::exception& e) {
      check(false, std::string("unexpected exception: ") + e.what());
    }
  }

  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

  [[nodiscard]] bool finish() {
    const double secs = elapsed();
    check(secs < budget_, "elapsed " + fmt(secs) + " s within " + fmt(budget_) + " s budget");
    std::cout << "[CRITERION " << id_ << "] " << (ok_ ? "PASS" : "FAIL") << "\n";
    for (const auto& l : lines_) std::cout << "    " << l << "\n";
    std::cout.flush();
    return ok_;
  }

  std::string details() const {
    std::string all;
    for (const auto& l : lines_) all += l + "\n";
    return all;
  }

 private:
  int id_;
  double budget_;
  bool ok_ = true;
  std::vector<std::string> lines_;
  std::chrono::steady_clock::time_point start_;
};

Vector column_means(const Matrix& m) {
  Vector mu(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) mu[j] += m(i, j) / static_cast<double>(m.rows());
  return mu;
}

Matrix sample_covariance(const Matrix& m, const Vector& mu) {
  Matrix cov(m.cols(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t a = 0; a < m.cols(); ++a)
      for (std::size_t b = 0; b < m.cols(); ++b)
        cov(a, b) += (m(i, a) - mu[a]) * (m(i, b) - mu[b]) / static_cast<double>(m.rows() - 1);
  return cov;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Criterion 1: with an analytic-inverse affine pair and basis-complete probes
// the surrogate parameter gradient must equal the Jacobi-formula gradient of
// log|det A|, i.e. A^{-T}, to 1e-6 relative, for D = 1..8 and 100 seeds each.

TEST(Acceptance, SurrogateGradientIdentity) {
  Criterion c(1, kBudgetGradIdentity);
  c.section([&] {
    const GradientIdentityReport rep =
        gradient_identity_check(8, 100, 20240801ULL, kGradIdentityRelTol);
    c.check(rep.max_dim == 8 && rep.seeds == 100, "covered D = 1..8 with 100 seeds per dimension");
    c.check(rep.max_rel_error <= kGradIdentityRelTol,
            "max relative error vs closed-form inverse-transpose " + fmt(rep.max_rel_error) +
                " <= " + fmt(kGradIdentityRelTol));
  });
  EXPECT_TRUE(c.finish()) << c.details();
}

// ---------------------------------------------------------------------------
// Criterion 2: for random nonlinear encoder/decoder pairs at D = 3, every
// sampled parameter direction satisfies |surrogate - exact| <= bound + 1e-9.

TEST(Acceptance, SurrogateExactnessBound) {
  Criterion c(2, kBudgetGapBound);
  c.section([&] {
    const GapBoundReport rep = gap_bound_sweep(1000, 3, 20240802ULL, kGapBoundSlack);
    c.check(rep.trials == 1000, "1000 random encoder/decoder pairs at D = 3");
    c.check(rep.worst_margin >= -kGapBoundSlack,
            "worst bound margin " + fmt(rep.worst_margin) + " >= -" + fmt(kGapBoundSlack) +
                " (max gap " + fmt(rep.max_gap) + ", max bound " + fmt(rep.max_bound) + ")");
  });
  EXPECT_TRUE(c.finish()) << c.details();
}

// ---------------------------------------------------------------------------
// Criterion 3: the 1-D linear model with data sigma 1.5 and beta 1. The
// closed-form gradient fields vanish at (+-2/3, +-3/2) for both variants and
// additionally at the origin for the learned-decoder variant; full-batch
// gradient descent with the actual training loss lands on (2/3, 3/2); the
// origin classifies as a saddle whose field-Jacobian eigenvalues are the
// roots of l^2 - 2.25 l - 24.75, i.e. (2.25 +- sqrt(104.0625)) / 2.

TEST(Acceptance, LinearLandscape) {
  Criterion c(3, kBudgetLandscape);
  const LinearModel1D model{1.5, 1.0};

  c.section([&] {
    for (const LandscapeVariant variant :
         {LandscapeVariant::f_inverse, LandscapeVariant::g_decoder}) {
      const bool learned = variant == LandscapeVariant::g_decoder;
      const auto pts = landscape_critical_points(model, variant);
      c.check(pts.size() == (learned ? 3u : 2u),
              std::string(learned ? "learned-decoder" : "exact-inverse") + " variant lists " +
                  std::to_string(pts.size()) + " critical points");
      double worst = 0.0;
      for (const auto& [a, b] : pts) {
        const GradField2D g = landscape_gradient(model, variant, a, b);
        worst = std::max(worst, std::hypot(g.da, g.db));
      }
      c.check(worst <= kFieldZeroTol, std::string(learned ? "learned-decoder" : "exact-inverse") +
                                          " field magnitude at critical points " + fmt(worst) +
                                          " <= " + fmt(kFieldZeroTol));
      if (learned) {
        const bool has_origin =
            std::any_of(pts.begin(), pts.end(),
                        [](const auto& p) { return p.first == 0.0 && p.second == 0.0; });
        c.check(has_origin, "learned-decoder variant includes the origin");
      }
    }
  });

  // Descent with the actual stochastic-training loss. Data standardized to
  // mean zero and second moment exactly 2.25 so the expected field is the
  // closed form; one unit-sphere probe in 1-D has v^2 = 1, making the batch
  // gradient deterministic.
  c.section([&] {
    const std::size_t n = 256;
    Matrix x(n, 1);
    RngStream data_rng(20240803ULL);
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      x(i, 0) = data_rng.gaussian();
      mean += x(i, 0) / static_cast<double>(n);
    }
    double second = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      x(i, 0) -= mean;
      second += x(i, 0) * x(i, 0) / static_cast<double>(n);
    }
    const double rescale = model.data_sigma / std::sqrt(second);
    for (std::size_t i = 0; i < n; ++i) x(i, 0) *= rescale;

    NetworkSpec lin;
    lin.input_dim = 1;
    lin.global_skip = false;
    Network enc{lin, ParamStore(lin)};
    Network dec{lin, ParamStore(lin)};
    enc.params.weight(0)[0] = 1.0;
    dec.params.weight(0)[0] = 0.5;

    LossConfig lc;
    lc.beta = model.beta;
    lc.k_probes = 1;
    lc.probe_kind = ProbeKind::sphere;
    RngStream probe_rng(20240804ULL);
    const double lr = 0.05;
    for (int it = 0; it < 1500; ++it) {
      const LossBreakdown br = fff_loss_and_grads(enc, dec, x, nullptr, lc, probe_rng);
      for (std::size_t p = 0; p < enc.params.size(); ++p)
        enc.params.data()[p] -= lr * br.grad_theta.data()[p];
      for (std::size_t p = 0; p < dec.params.size(); ++p)
        dec.params.data()[p] -= lr * br.grad_phi.data()[p];
    }
    const double a = enc.params.weight(0)[0];
    const double b = dec.params.weight(0)[0];
    const double dist = std::hypot(a - 2.0 / 3.0, b - 1.5);
    c.check(dist <= kDescentTol, "descent from (1.0, 0.5) reached (" + fmt(a) + ", " + fmt(b) +
                                     "), distance " + fmt(dist) + " from (2/3, 3/2) <= " +
                                     fmt(kDescentTol));
  });

  c.section([&] {
    const Field2D field = [&](double a, double b) {
      return landscape_gradient(model, LandscapeVariant::g_decoder, a, b);
    };
    const CriticalKind kind = classify_critical_point(field, 0.0, 0.0);
    c.check(kind == CriticalKind::saddle,
            "origin of the learned-decoder field classifies as " + critical_kind_to_string(kind));
    for (const double ab : {2.0 / 3.0, -2.0 / 3.0}) {
      const CriticalKind mk = classify_critical_point(field, ab, 2.25 * ab);
      c.check(mk == CriticalKind::minimum, "(" + fmt(ab) + ", " + fmt(2.25 * ab) +
                                               ") classifies as " + critical_kind_to_string(mk));
    }

    const double h = 1e-5;
    const GradField2D ap = field(h, 0.0), am = field(-h, 0.0);
    const GradField2D bp = field(0.0, h), bm = field(0.0, -h);
    const double j00 = (ap.da - am.da) / (2 * h);
    const double j01 = (bp.da - bm.da) / (2 * h);
    const double j10 = (ap.db - am.db) / (2 * h);
    const double j11 = (bp.db - bm.db) / (2 * h);
    const double tr = j00 + j11;
    const double disc = tr * tr - 4.0 * (j00 * j11 - j01 * j10);
    c.check(disc > 0.0, "origin field Jacobian has real eigenvalues (disc " + fmt(disc) + ")");
    const double lo = 0.5 * (tr - std::sqrt(disc));
    const double hi = 0.5 * (tr + std::sqrt(disc));
    c.check(std::abs(hi - kSaddleEigPlus) <= kSaddleEigTol &&
                std::abs(lo - kSaddleEigMinus) <= kSaddleEigTol,
            "origin eigenvalues {" + fmt(hi) + ", " + fmt(lo) + "} within " + fmt(kSaddleEigTol) +
                " of {" + fmt(kSaddleEigPlus) + ", " + fmt(kSaddleEigMinus) + "}");
  });

  EXPECT_TRUE(c.finish()) << c.details();
}

// ---------------------------------------------------------------------------
// Criterion 4: symmetric two-mode mixture (modes +-4, unit sigma). Splitting
// the modes buys entropy log 2 at reconstruction floor 16, so the two-group
// solution undercuts the invertible one exactly below beta_crit = log 2 / 16.

TEST(Acceptance, PartitionThreshold) {
  Criterion c(4, kBudgetPartition);
  c.section([&] {
    GmmDensity q;
    q.weights = {0.5, 0.5};
    q.means = {{-4.0}, {4.0}};
    q.sigmas = {{1.0}, {1.0}};
    const PartitionSolution split = partition_loss(q, {0, 1});
    const PartitionSolution merged = partition_loss(q, {0, 0});

    const double oracle = std::numbers::ln2 / 16.0;
    const double rel = std::abs(split.beta_crit - oracle) / oracle;
    c.check(rel <= kBetaCritRelTol, "beta_crit " + fmt(split.beta_crit) + " within " +
                                        fmt(100 * kBetaCritRelTol) + "% of log(2)/16 = " +
                                        fmt(oracle) + " (rel err " + fmt(rel) + ")");
    c.note("split: entropy " + fmt(split.entropy) + ", reconstruction floor " + fmt(split.r_min));
    c.check(merged.r_min <= 1e-6,
            "single-group (invertible) reconstruction floor " + fmt(merged.r_min) + " ~ 0");

    const double below = 0.9 * split.beta_crit;
    const double above = 1.1 * split.beta_crit;
    c.check(split.loss(below) < merged.loss(below),
            "split loss " + fmt(split.loss(below)) + " < invertible loss " +
                fmt(merged.loss(below)) + " at 0.9 beta_crit");
    c.check(split.loss(above) > merged.loss(above),
            "split loss " + fmt(split.loss(above)) + " > invertible loss " +
                fmt(merged.loss(above)) + " at 1.1 beta_crit");
  });
  EXPECT_TRUE(c.finish()) << c.details();
}

// ---------------------------------------------------------------------------
// Criteria 5 and 8 share one training fixture: a surrogate-trained model and
// an exact-Jacobian maximum-likelihood reference with the identical spec,
// identical seeds, and identical data.

struct MoonsArtifacts {
  Matrix x;
  TrainResult surrogate;
  TrainResult exact;
};

const MoonsArtifacts& moons_artifacts() {
  static const MoonsArtifacts arts = [] {
    MoonsArtifacts a;
    RngStream data_rng(1);
    a.x = two_moons_sample(10000, 0.05, data_rng);

    NetworkSpec spec;
    spec.input_dim = 2;
    spec.hidden_widths = {24};

    TrainConfig cfg;
    cfg.steps = 5000;
    cfg.batch_size = 128;
    cfg.lr = 1e-3;
    cfg.schedule = ScheduleKind::one_cycle;
    cfg.beta = 50.0;
    cfg.k_probes = 4;
    cfg.probe_kind = ProbeKind::sphere;
    cfg.seed = 11;
    cfg.eval_every = 100;
    cfg.eval_cap = 512;

    a.surrogate = train(cfg, make_model_pair(spec, 11), a.x);

    TrainConfig mle = cfg;
    mle.exact_mle = true;
    a.exact = train(mle, make_model_pair(spec, 11), a.x);
    return a;
  }();
  return arts;
}

// Criterion 5: after 5k steps the surrogate-trained model's decoder-side
// held-out NLL is within 0.2 nats of the exact-MLE encoder's held-out NLL.

TEST(Acceptance, SurrogateMatchesExactTraining) {
  Criterion c(5, kBudgetMoonsTraining);
  c.section([&] {
    const MoonsArtifacts& a = moons_artifacts();
    const double nll_surrogate = a.surrogate.metrics.back().nll_exact;
    const double nll_exact = a.exact.metrics.back().nll_exact;
    c.check(std::isfinite(nll_surrogate) && std::isfinite(nll_exact),
            "held-out NLLs are finite");
    c.note("surrogate-trained decoder-side NLL " + fmt(nll_surrogate));
    c.note("exact-MLE encoder-side NLL        " + fmt(nll_exact));
    const double gap = std::abs(nll_surrogate - nll_exact);
    c.check(gap <= kNllGapTol,
            "NLL difference " + fmt(gap) + " <= " + fmt(kNllGapTol) + " nats after 5000 steps");
  });
  EXPECT_TRUE(c.finish()) << c.details();
}

// ---------------------------------------------------------------------------
// Criterion 6: the change-of-variables likelihood of a trained 2-D model must
// integrate to 1. Riemann quadrature of exp(log-likelihood) over a grid that
// captures the data support.

TEST(Acceptance, LikelihoodNormalization) {
  Criterion c(6, kBudgetQuadrature);
  c.section([&] {
    NetworkSpec spec;
    spec.input_dim = 2;
    spec.hidden_widths = {16};

    TrainConfig cfg;
    cfg.steps = 20000;
    cfg.batch_size = 128;
    cfg.lr = 1e-3;
    cfg.schedule = ScheduleKind::one_cycle;
    cfg.beta = 100.0;
    cfg.k_probes = 4;
    cfg.probe_kind = ProbeKind::sphere;
    cfg.seed = 11;
    cfg.eval_every = 2000;
    cfg.eval_cap = 512;

    const TrainResult r = train(cfg, make_model_pair(spec, 11), moons_artifacts().x);
    c.note("trained 20000 steps, held-out NLL " + fmt(r.metrics.back().nll_exact));

    const double step = 0.02;
    double integral = 0.0;
    for (double gx = -3.0; gx <= 4.0 + 1e-12; gx += step)
      for (double gy = -2.6; gy <= 3.3 + 1e-12; gy += step)
        integral += std::exp(log_likelihood_decoder(r.model, {gx, gy})) * step * step;
    c.check(integral >= kQuadratureLo && integral <= kQuadratureHi,
            "quadrature of exp(log-likelihood) = " + fmt(integral) + " in [" +
                fmt(kQuadratureLo) + ", " + fmt(kQuadratureHi) + "]");
  });
  EXPECT_TRUE(c.finish()) << c.details();
}

// ---------------------------------------------------------------------------
// Criterion 7: conditional task theta ~ N(0, I), x_obs = theta + s eps with
// s = 1 in d = 2. The conjugate posterior is N(x_obs / 2, I / 2); conditional
// samples must match its mean and covariance.

TEST(Acceptance, ConditionalPosterior) {
  Criterion c(7, kBudgetConditional);
  c.section([&] {
    const ConditionalTask task{2, 1.0};
    RngStream data_rng(21);
    const ConditionalDraws draws = conditional_task_sample(task, 40000, data_rng);

    NetworkSpec spec;
    spec.input_dim = 2;
    spec.context_dim = 2;
    spec.hidden_widths = {32};

    TrainConfig cfg;
    cfg.steps = 10000;
    cfg.batch_size = 128;
    cfg.lr = 1e-3;
    cfg.schedule = ScheduleKind::one_cycle;
    cfg.beta = 1.0;
    cfg.k_probes = 4;
    cfg.probe_kind = ProbeKind::sphere;
    cfg.seed = 7;
    cfg.eval_every = 500;
    cfg.eval_cap = 512;

    const TrainResult r = train(cfg, make_model_pair(spec, 7), draws.theta, &draws.x_obs);
    c.note("trained 10000 steps, held-out NLL " + fmt(r.metrics.back().nll_exact) +
           " (floor log(pi e) = " + fmt(std::log(std::numbers::pi * std::numbers::e)) + ")");

    RngStream obs_rng(101);
    const double post_var = conditional_posterior_variance(task);
    double mean_err = 0.0;
    double cov_err = 0.0;
    const int n_obs = 10;
    for (int i = 0; i < n_obs; ++i) {
      Vector x_obs(2);
      for (auto& v : x_obs) v = std::sqrt(2.0) * obs_rng.gaussian();
      RngStream sample_rng(5000 + static_cast<std::uint64_t>(i));
      const Matrix s = sample(r.model, 10000, sample_rng, x_obs);
      const Vector mu = column_means(s);
      const Matrix cov = sample_covariance(s, mu);
      const Vector target = conditional_posterior_mean(task, x_obs);
      mean_err += std::hypot(mu[0] - target[0], mu[1] - target[1]) / n_obs;
      double fro = 0.0;
      for (std::size_t aa = 0; aa < 2; ++aa)
        for (std::size_t bb = 0; bb < 2; ++bb) {
          const double want = aa == bb ? post_var : 0.0;
          fro += (cov(aa, bb) - want) * (cov(aa, bb) - want);
        }
      cov_err += std::sqrt(fro) / n_obs;
    }
    c.check(mean_err <= kPosteriorMeanTol, "mean posterior-mean error " + fmt(mean_err) +
                                               " <= " + fmt(kPosteriorMeanTol) +
                                               " over 10 observations");
    c.check(cov_err <= kPosteriorCovTol, "mean posterior-covariance Frobenius error " +
                                             fmt(cov_err) + " <= " + fmt(kPosteriorCovTol) +
                                             " over 10 observations");
  });
  EXPECT_TRUE(c.finish()) << c.details();
}

// ---------------------------------------------------------------------------
// Criterion 8: at the end of criterion-5 training the encoder/decoder pair is
// close to mutually inverse on held-out data: mean ||J_f J_g - I||_F / D under
// 0.1 on 256 test points, with every report field finite.

TEST(Acceptance, ReconstructionJacobianCoupling) {
  Criterion c(8, kBudgetCoupling);
  c.section([&] {
    const MoonsArtifacts& a = moons_artifacts();
    Matrix test(256, 2);
    for (std::size_t i = 0; i < 256; ++i)
      for (std::size_t j = 0; j < 2; ++j) test(i, j) = a.x(a.x.rows() - 256 + i, j);

    const ReconReport rep = reconstruction_report(a.surrogate.model, test);
    c.check(rep.count == 256, "evaluated on 256 held-out points");
    c.check(std::isfinite(rep.mean_distance) && std::isfinite(rep.mean_jacobian_deviation),
            "reconstruction report is finite");
    c.note("mean round-trip distance " + fmt(rep.mean_distance));
    c.note("mean |energy gap| " + (std::isnan(rep.mean_energy_gap)
                                       ? std::string("(no energy supplied)")
                                       : fmt(rep.mean_energy_gap)));
    c.check(rep.mean_jacobian_deviation < kJacobianDevTol,
            "mean ||J_f J_g - I||_F / D = " + fmt(rep.mean_jacobian_deviation) + " < " +
                fmt(kJacobianDevTol));
  });
  EXPECT_TRUE(c.finish()) << c.details();
}

// ---------------------------------------------------------------------------
// Criterion 9: the four-particle double-well pipeline end to end. MCMC data is
// self-generated, the model trains in centroid-free coordinates, and model
// samples are importance-reweighted by the known energy. Demands ESS/n above
// 0.1 and a self-normalized mean energy within 3 joint standard errors of the
// MCMC test mean.

TEST(Acceptance, BoltzmannReweighting) {
  Criterion c(9, kBudgetReweighting);
  c.section([&] {
    const PairwisePotential pot = dw4();
    const Matrix basis = com_projection_basis(pot.n_particles, pot.space_dim);

    McmcOptions mcmc;
    mcmc.n_samples = 20000;
    mcmc.n_burnin = 20000;
    mcmc.thin = 20;
    RngStream train_rng(31);
    const McmcResult train_chain = mcmc_sample(pot, mcmc, train_rng);
    c.note("train chain acceptance " + fmt(train_chain.acceptance));
    const Matrix x_train = project_com_rows(basis, train_chain.samples);

    McmcOptions test_opts = mcmc;
    test_opts.n_samples = 10000;
    RngStream test_rng(37);
    const McmcResult test_chain = mcmc_sample(pot, test_opts, test_rng);

    NetworkSpec spec;
    spec.input_dim = static_cast<int>(basis.cols());
    spec.hidden_widths = {64, 64};

    TrainConfig cfg;
    cfg.steps = 20000;
    cfg.batch_size = 128;
    cfg.lr = 1e-3;
    cfg.schedule = ScheduleKind::one_cycle;
    cfg.beta = 5.0;
    cfg.k_probes = 4;
    cfg.probe_kind = ProbeKind::sphere;
    cfg.seed = 17;
    cfg.eval_every = 2000;
    cfg.eval_cap = 512;

    const TrainResult r = train(cfg, make_model_pair(spec, 17), x_train);
    c.note("trained 20000 steps, held-out NLL " + fmt(r.metrics.back().nll_exact));

    const std::size_t n = 10000;
    RngStream latent_rng(41);
    const Matrix s = sample(r.model, n, latent_rng);
    const EnergyFn energy = [&](const Vector& y) {
      return potential_energy(pot, lift_com(basis, y));
    };
    const auto weighted = importance_weights(r.model, s, energy, pot.tau);

    std::vector<double> log_w(n), e_model(n);
    for (std::size_t i = 0; i < n; ++i) {
      log_w[i] = weighted[i].log_weight;
      e_model[i] = energy(weighted[i].x);
    }
    const double ess = effective_sample_size(log_w);
    c.check(ess / static_cast<double>(n) > kEssFractionMin,
            "importance ESS/n = " + fmt(ess / static_cast<double>(n)) + " > " +
                fmt(kEssFractionMin) + " on 10^4 samples");

    const double e_hat = self_normalized_mean(log_w, e_model);
    double max_lw = *std::max_element(log_w.begin(), log_w.end());
    double wsum = 0.0, var_w = 0.0;
    for (std::size_t i = 0; i < n; ++i) wsum += std::exp(log_w[i] - max_lw);
    for (std::size_t i = 0; i < n; ++i)
      var_w += std::exp(log_w[i] - max_lw) / wsum * (e_model[i] - e_hat) * (e_model[i] - e_hat);
    const double se_model = std::sqrt(var_w / ess);

    double e_test = 0.0;
    const std::size_t n_test = test_chain.samples.rows();
    std::vector<double> e_rows(n_test);
    for (std::size_t i = 0; i < n_test; ++i) {
      e_rows[i] = potential_energy(pot, test_chain.samples.row_vector(i));
      e_test += e_rows[i] / static_cast<double>(n_test);
    }
    double var_test = 0.0;
    for (std::size_t i = 0; i < n_test; ++i)
      var_test += (e_rows[i] - e_test) * (e_rows[i] - e_test) / static_cast<double>(n_test - 1);
    const double se_test = std::sqrt(var_test / static_cast<double>(n_test));

    const double joint_se = std::hypot(se_model, se_test);
    const double diff = std::abs(e_hat - e_test);
    c.check(diff <= kEnergySeMultiple * joint_se,
            "self-normalized mean energy " + fmt(e_hat) + " within " + fmt(kEnergySeMultiple) +
                " joint SE (" + fmt(joint_se) + ") of MCMC test mean " + fmt(e_test) +
                " (difference " + fmt(diff) + ")");
  });
  EXPECT_TRUE(c.finish()) << c.details();
}

// ---------------------------------------------------------------------------
// Criterion 10: re-running any recorded manifest in sequential mode reproduces
// the output files byte for byte.

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("fff");
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  return fff::cli::main(static_cast<int>(argv.size()), argv.data(), out, err);
}

TEST(Acceptance, ManifestDeterminism) {
  Criterion c(10, kBudgetDeterminism);
  c.section([&] {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "fff-acceptance-determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string out = dir.string();

    c.check(run_cli({"data", "--dataset", "gmm-pair", "--n", "400", "--seed", "1", "--output",
                     "d.csv", "--manifest", "data_manifest.json", "--out", out, "--threads",
                     "1"}) == 0,
            "generated dataset with manifest");
    c.check(run_cli({"train", "--data", (dir / "d.csv").string(), "--steps", "60", "--hidden",
                     "8", "--seed", "2", "--beta", "5", "--output", "m.json", "--metrics",
                     "metrics.csv", "--manifest", "train_manifest.json", "--out", out,
                     "--threads", "1"}) == 0,
            "trained with manifest");

    c.check(run_cli({"rerun", "--manifest", (dir / "train_manifest.json").string(),
                     "--redirect-out", (dir / "replay").string(), "--threads", "1"}) == 0,
            "re-ran the training manifest");
    c.check(run_cli({"rerun", "--manifest", (dir / "data_manifest.json").string(),
                     "--redirect-out", (dir / "replay").string(), "--threads", "1"}) == 0,
            "re-ran the dataset manifest");

    const std::string metrics_a = slurp(dir / "metrics.csv");
    const std::string metrics_b = slurp(dir / "replay" / "metrics.csv");
    c.check(!metrics_a.empty() && metrics_a == metrics_b,
            "metrics CSV reproduced byte-exactly (" + std::to_string(metrics_a.size()) +
                " bytes)");
    const std::string model_a = slurp(dir / "m.json");
    const std::string model_b = slurp(dir / "replay" / "m.json");
    c.check(!model_a.empty() && model_a == model_b,
            "model checkpoint reproduced byte-exactly (" + std::to_string(model_a.size()) +
                " bytes)");
    const std::string data_a = slurp(dir / "d.csv");
    const std::string data_b = slurp(dir / "replay" / "d.csv");
    c.check(!data_a.empty() && data_a == data_b,
            "dataset CSV reproduced byte-exactly (" + std::to_string(data_a.size()) + " bytes)");
    fs::remove_all(dir);
  });
  EXPECT_TRUE(c.finish()) << c.details();
}

}  // namespace
