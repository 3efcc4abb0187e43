#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <ostream>
#include <string>
#include <vector>

#include "fff/checkpoint.hpp"
#include "fff/datasets.hpp"
#include "fff/errors.hpp"
#include "fff/likelihood.hpp"
#include "fff/loss.hpp"
#include "fff/network.hpp"
#include "fff/options.hpp"
#include "fff/reports.hpp"
#include "fff/rng.hpp"
#include "fff/trainer.hpp"
#include "fff/verify.hpp"

namespace fff::cli {

// Exit codes: 0 success, 1 a verified property failed to hold, 2 bad usage or
// configuration or I/O, 3 numerical breakdown.
inline constexpr int exit_ok = 0;
inline constexpr int exit_verification = 1;
inline constexpr int exit_usage = 2;
inline constexpr int exit_numerical = 3;

namespace detail {

inline std::string default_out_dir() {
  const char* env = std::getenv("FFF_OUT_DIR");
  return env && *env ? env : ".";
}

// Options shared by every command.
inline void append_common(std::vector<OptionDecl>& d) {
  d.push_back({"out", default_out_dir(), false, false,
               "directory that relative output paths resolve against (env FFF_OUT_DIR)"});
  d.push_back({"threads", "1", false, false,
               "worker threads; 1 is the bit-reproducible mode (and all work currently runs "
               "sequentially regardless)"});
  d.push_back({"help", "false", true, false, "print this command's options and exit"});
}

inline std::vector<OptionDecl> data_options() {
  std::vector<OptionDecl> d{
      {"dataset", "two-moons", false, false,
       "two-moons | gmm-pair | dw4 | conditional-gaussian"},
      {"n", "10000", false, false, "number of rows to generate"},
      {"seed", "0", false, false, "generator seed"},
      {"output", "dataset.csv", false, true, "destination CSV"},
      {"noise", "0.05", false, false, "two-moons: radial noise scale"},
      {"sep", "4.0", false, false, "gmm-pair: +-mode offset"},
      {"sigma", "1.0", false, false, "gmm-pair: mode width"},
      {"burnin", "5000", false, false, "dw4: discarded warmup proposals"},
      {"thin", "10", false, false, "dw4: proposals per kept sample"},
      {"step-scale", "0.2", false, false, "dw4: initial proposal scale (auto-tuned in burnin)"},
      {"project-com", "false", true, false,
       "dw4: write centroid-free internal coordinates (6 columns) instead of raw planar "
       "coordinates (8 columns)"},
      {"cond-dim", "2", false, false, "conditional-gaussian: parameter dimension"},
      {"noise-scale", "1.0", false, false, "conditional-gaussian: observation noise scale"},
      {"manifest", "", false, true, "also write a run manifest to this path"},
  };
  append_common(d);
  return d;
}

inline std::vector<OptionDecl> spec_options() {
  return {
      {"hidden", "64,64", false, false, "comma-separated hidden layer widths (empty = linear)"},
      {"activation", "tanh", false, false, "tanh | silu"},
      {"no-skip", "false", true, false, "disable the global input-to-output skip connection"},
      {"context-every-layer", "false", true, false,
       "feed context columns into every layer, not just the first"},
  };
}

inline std::vector<OptionDecl> train_hyper_options() {
  return {
      {"steps", "2000", false, false, "optimizer steps"},
      {"batch-size", "128", false, false, "rows per step (sampled with replacement)"},
      {"lr", "1e-3", false, false, "peak learning rate"},
      {"schedule", "constant", false, false, "constant | exponential | one_cycle"},
      {"gamma", "0.9995", false, false, "per-step decay for the exponential schedule"},
      {"grad-clip", "0", false, false, "global-norm gradient clip per network (0 = off)"},
      {"k-probes", "1", false, false, "trace probes per sample"},
      {"probes", "gaussian", false, false, "probe distribution: gaussian | rademacher | sphere"},
      {"seed", "0", false, false, "seed for init, batching and probes"},
      {"eval-every", "100", false, false, "steps between exact-likelihood evaluations"},
      {"eval-cap", "512", false, false, "max held-out rows used per evaluation"},
  };
}

inline std::vector<OptionDecl> train_options() {
  std::vector<OptionDecl> d{
      {"data", "", false, false, "training CSV (x columns, optional c context columns)"},
      {"output", "model.json", false, true, "checkpoint destination"},
      {"metrics", "metrics.csv", false, true, "metrics trace destination"},
      {"manifest", "", false, true, "also write a run manifest to this path"},
      {"beta", "1.0", false, false, "reconstruction weight"},
      {"exact-mle", "false", true, false,
       "train the encoder alone by exact maximum likelihood (reference objective)"},
  };
  for (auto& o : train_hyper_options()) d.push_back(o);
  for (auto& o : spec_options()) d.push_back(o);
  append_common(d);
  return d;
}

inline std::vector<OptionDecl> sample_options() {
  std::vector<OptionDecl> d{
      {"model", "", false, false, "checkpoint to sample from"},
      {"n", "1000", false, false, "number of samples"},
      {"seed", "0", false, false, "latent seed"},
      {"output", "samples.csv", false, true, "destination CSV"},
      {"context", "", false, false,
       "comma-separated context vector applied to every sample (conditional models)"},
  };
  append_common(d);
  return d;
}

inline std::vector<OptionDecl> nll_options() {
  std::vector<OptionDecl> d{
      {"model", "", false, false, "checkpoint to evaluate"},
      {"data", "", false, false, "evaluation CSV (same layout as training data)"},
      {"output", "nll.csv", false, true, "per-row log-likelihood CSV"},
      {"encoder-side", "false", true, false,
       "evaluate through the encoder Jacobian instead of the decoder (the two agree when the "
       "decoder inverts the encoder)"},
  };
  append_common(d);
  return d;
}

inline std::vector<OptionDecl> verify_options() {
  std::vector<OptionDecl> d{
      {"check", "all", false, false,
       "all | gradient-identity | gap-bound | partition | landscape"},
      {"max-dim", "8", false, false, "gradient-identity: largest dimension"},
      {"seeds", "100", false, false, "gradient-identity: trials per dimension"},
      {"trials", "1000", false, false, "gap-bound: random network pairs"},
      {"dim", "3", false, false, "gap-bound: data dimension"},
      {"seed", "2024", false, false, "seed for the random sweeps"},
      {"tol", "1e-6", false, false, "gradient-identity: max relative error accepted"},
      {"slack", "1e-9", false, false, "gap-bound: additive tolerance on the bound"},
  };
  append_common(d);
  return d;
}

inline std::vector<OptionDecl> landscape_options() {
  std::vector<OptionDecl> d{
      {"variant", "g-decoder", false, false,
       "g-decoder (learned decoder) | f-inverse (decoder replaced by the exact inverse)"},
      {"data-sigma", "1.5", false, false, "data standard deviation of the 1-D linear model"},
      {"beta", "1.0", false, false, "reconstruction weight"},
      {"a-min", "-1.2", false, false, "encoder-weight axis lower bound"},
      {"a-max", "1.2", false, false, "encoder-weight axis upper bound"},
      {"b-min", "-2.2", false, false, "decoder-weight axis lower bound"},
      {"b-max", "2.2", false, false, "decoder-weight axis upper bound"},
      {"grid", "21", false, false, "grid points per axis"},
      {"output", "landscape.csv", false, true, "gradient-field CSV"},
      {"svg", "", false, true, "also write a quiver plot to this path"},
  };
  append_common(d);
  return d;
}

inline std::vector<OptionDecl> beta_search_options() {
  std::vector<OptionDecl> d{
      {"data", "", false, false, "training CSV"},
      {"beta-min", "1e-2", false, false, "first reconstruction weight probed"},
      {"factor", "10", false, false, "multiplicative step between probes"},
      {"max-rounds", "6", false, false, "probes before giving up"},
      {"jump-threshold", "5.0", false, false,
       "largest eval-to-eval surrogate jump (nats) still called stable"},
      {"manifest", "", false, true, "also write a run manifest to this path"},
  };
  for (auto& o : train_hyper_options()) d.push_back(o);
  for (auto& o : spec_options()) d.push_back(o);
  append_common(d);
  return d;
}

inline std::vector<OptionDecl> reweight_options() {
  std::vector<OptionDecl> d{
      {"model", "", false, false, "checkpoint to sample from"},
      {"potential", "dw4", false, false, "target energy: dw4"},
      {"n", "10000", false, false, "number of samples"},
      {"seed", "0", false, false, "latent seed"},
      {"tau", "1.0", false, false, "target temperature"},
      {"project-com", "false", true, false,
       "model lives in centroid-free internal coordinates; lift before evaluating the energy"},
      {"output", "weighted.csv", false, true, "samples + log importance weights"},
  };
  append_common(d);
  return d;
}

inline std::vector<OptionDecl> rerun_options() {
  std::vector<OptionDecl> d{
      {"manifest", "", false, false, "run manifest written by a previous command"},
      {"redirect-out", "", false, false,
       "rewrite the recorded output paths into this directory (basenames kept)"},
  };
  append_common(d);
  return d;
}

struct CommandInfo {
  std::string name;
  std::string summary;
  std::vector<OptionDecl> (*options)();
};

inline const std::vector<CommandInfo>& commands() {
  static const std::vector<CommandInfo> cmds{
      {"data", "generate a benchmark dataset CSV", &data_options},
      {"train", "fit an encoder/decoder pair with the one-step objective", &train_options},
      {"sample", "draw one-step samples from a trained model", &sample_options},
      {"nll", "exact per-row log-likelihoods under a trained model", &nll_options},
      {"verify", "numerically check the identities the objective rests on", &verify_options},
      {"landscape", "closed-form gradient field of the 1-D linear model", &landscape_options},
      {"beta-search", "smallest stable reconstruction weight on a dataset",
       &beta_search_options},
      {"reweight", "importance-weight model samples against a target energy", &reweight_options},
      {"rerun", "repeat a recorded run bit for bit", &rerun_options},
  };
  return cmds;
}

inline void print_global_help(std::ostream& out) {
  out << "usage: fff <command> [--option value ...] [--config file]\n\n"
      << "Train dimension-preserving networks as one-step generative models and\n"
      << "evaluate them by exact change of variables.\n\ncommands:\n";
  for (const auto& c : commands()) out << "  " << c.name << std::string(13 - c.name.size(), ' ')
                                       << c.summary << "\n";
  out << "\n'fff <command> --help' lists the command's options.\n"
      << "Config files hold 'key = value' lines using the option names; command-line\n"
      << "flags override them. Exit codes: 0 ok, 1 verification failure, 2 usage, 3\n"
      << "numerical breakdown.\n";
}

inline void print_command_help(std::ostream& out, const CommandInfo& cmd) {
  out << "usage: fff " << cmd.name << " [--option value ...] [--config file]\n"
      << cmd.summary << "\n\noptions:\n";
  for (const auto& d : cmd.options()) {
    out << "  --" << d.key;
    if (!d.flag) out << " <" << (d.value.empty() ? "value" : d.value) << ">";
    out << "\n        " << d.help << "\n";
  }
}

// Relative paths resolve against --out; parent directories are created.
inline std::filesystem::path resolve_out(const OptionSet& opts, const std::string& key) {
  std::filesystem::path p = opts.str(key);
  if (p.empty()) return p;
  if (!p.is_absolute()) p = std::filesystem::path(opts.str("out")) / p;
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  return p;
}

inline void require(const OptionSet& opts, const std::string& key) {
  if (opts.str(key).empty())
    throw ConfigError("option '--" + key + "' is required");
}

inline void check_threads(const OptionSet& opts) {
  if (opts.i64("threads") < 1) throw ConfigError("option '--threads' must be at least 1");
}

inline ProbeKind probe_from_string(const std::string& s) {
  if (s == "gaussian") return ProbeKind::gaussian;
  if (s == "rademacher") return ProbeKind::rademacher;
  if (s == "sphere") return ProbeKind::sphere;
  throw ConfigError("unknown probe distribution '" + s + "'");
}

inline NetworkSpec spec_from_options(const OptionSet& opts, int input_dim, int context_dim) {
  NetworkSpec spec;
  spec.input_dim = input_dim;
  spec.context_dim = context_dim;
  spec.hidden_widths = opts.int_list("hidden");
  for (int w : spec.hidden_widths)
    if (w < 1) throw ConfigError("option '--hidden': widths must be positive");
  spec.activation = activation_from_string(opts.str("activation"));
  spec.global_skip = !opts.boolean("no-skip");
  spec.context_every_layer = opts.boolean("context-every-layer");
  return spec;
}

inline TrainConfig train_config_from_options(const OptionSet& opts) {
  TrainConfig cfg;
  cfg.steps = opts.i64("steps");
  cfg.batch_size = static_cast<int>(opts.i64("batch-size"));
  cfg.lr = opts.dbl("lr");
  cfg.schedule = schedule_from_string(opts.str("schedule"));
  cfg.schedule_gamma = opts.dbl("gamma");
  cfg.grad_clip = opts.dbl("grad-clip");
  cfg.k_probes = static_cast<int>(opts.i64("k-probes"));
  cfg.probe_kind = probe_from_string(opts.str("probes"));
  cfg.seed = opts.u64("seed");
  cfg.eval_every = opts.i64("eval-every");
  cfg.eval_cap = static_cast<std::size_t>(opts.i64("eval-cap"));
  return cfg;
}

// All resolved option values, for the manifest.
inline std::vector<std::pair<std::string, std::string>> snapshot(const OptionSet& opts) {
  std::vector<std::pair<std::string, std::string>> kv;
  for (const auto& d : opts.decls())
    if (d.key != "help") kv.emplace_back(d.key, opts.str(d.key));
  return kv;
}

inline void maybe_write_manifest(const OptionSet& opts, const std::string& command,
                                 const std::vector<std::string>& outputs, std::ostream& out) {
  if (opts.str("manifest").empty()) return;
  const auto path = resolve_out(opts, "manifest");
  write_run_manifest(path, command, snapshot(opts), outputs);
  out << "wrote manifest " << path.string() << "\n";
}

// ---------------------------------------------------------------------------
// Commands.

inline int cmd_data(const OptionSet& opts, std::ostream& out) {
  const std::string name = opts.str("dataset");
  const std::size_t n = static_cast<std::size_t>(opts.i64("n"));
  RngStream rng(opts.u64("seed"));
  const auto path = resolve_out(opts, "output");

  Matrix x;
  Matrix ctx;
  std::string note;
  if (name == "two-moons") {
    x = two_moons_sample(n, opts.dbl("noise"), rng);
  } else if (name == "gmm-pair") {
    GmmDensity q;
    const double sep = opts.dbl("sep"), sigma = opts.dbl("sigma");
    q.weights = {0.5, 0.5};
    q.means = {{-sep}, {sep}};
    q.sigmas = {{sigma}, {sigma}};
    x = gmm_sample_matrix(q, n, rng);
  } else if (name == "dw4") {
    const PairwisePotential pot = dw4();
    McmcOptions mc;
    mc.n_samples = n;
    mc.n_burnin = static_cast<std::size_t>(opts.i64("burnin"));
    mc.thin = static_cast<std::size_t>(opts.i64("thin"));
    mc.step_scale = opts.dbl("step-scale");
    const McmcResult r = mcmc_sample(pot, mc, rng);
    note = "acceptance " + fmt17(r.acceptance) + ", step scale " + fmt17(r.step_scale);
    if (opts.boolean("project-com")) {
      const Matrix basis = com_projection_basis(pot.n_particles, pot.space_dim);
      x = project_com_rows(basis, r.samples);
    } else {
      x = r.samples;
    }
  } else if (name == "conditional-gaussian") {
    ConditionalTask task{static_cast<int>(opts.i64("cond-dim")), opts.dbl("noise-scale")};
    const ConditionalDraws draws = conditional_task_sample(task, n, rng);
    x = draws.theta;
    ctx = draws.x_obs;
  } else {
    throw ConfigError("unknown dataset '" + name + "'");
  }

  write_dataset_csv(path, x, ctx.rows() ? &ctx : nullptr);
  out << "wrote " << x.rows() << " rows, " << x.cols() << " feature columns";
  if (ctx.rows()) out << ", " << ctx.cols() << " context columns";
  out << " to " << path.string() << "\n";
  if (!note.empty()) out << note << "\n";
  maybe_write_manifest(opts, "data", {path.string()}, out);
  return exit_ok;
}

inline int cmd_train(const OptionSet& opts, std::ostream& out) {
  require(opts, "data");
  const Dataset ds = read_dataset_csv(opts.str("data"));
  const NetworkSpec spec = spec_from_options(opts, static_cast<int>(ds.x.cols()),
                                             ds.has_context() ? static_cast<int>(ds.context.cols())
                                                              : 0);
  TrainConfig cfg = train_config_from_options(opts);
  cfg.beta = opts.dbl("beta");
  cfg.exact_mle = opts.boolean("exact-mle");

  const ModelPair init = make_model_pair(spec, cfg.seed);
  const TrainResult result =
      train(cfg, init, ds.x, ds.has_context() ? &ds.context : nullptr);

  const auto model_path = resolve_out(opts, "output");
  const auto metrics_path = resolve_out(opts, "metrics");
  CheckpointMeta meta;
  meta.seed = cfg.seed;
  meta.beta = cfg.beta;
  meta.step = cfg.steps;
  meta.dataset_id = std::filesystem::path(opts.str("data")).filename().string();
  save_checkpoint(model_path, result.model, meta);
  write_metrics_csv(metrics_path, result.metrics);

  const MetricsRow& last = result.metrics.back();
  const auto show = [](double v) { return std::isnan(v) ? std::string("-") : fmt17(v); };
  out << "trained " << cfg.steps << " steps on " << ds.x.rows() << " rows (dim " << ds.x.cols()
      << ")\n";
  out << "final: nll_surrogate " << show(last.nll_surrogate) << ", nll_exact "
      << show(last.nll_exact) << ", recon " << show(last.recon) << ", skipped "
      << result.skipped << "\n";
  out << "wrote model " << model_path.string() << "\n";
  out << "wrote metrics " << metrics_path.string() << "\n";
  maybe_write_manifest(opts, "train", {model_path.string(), metrics_path.string()}, out);
  return exit_ok;
}

inline int cmd_sample(const OptionSet& opts, std::ostream& out) {
  require(opts, "model");
  const Checkpoint ckpt = load_checkpoint(opts.str("model"));
  const std::size_t n = static_cast<std::size_t>(opts.i64("n"));
  RngStream rng(opts.u64("seed"));
  const Vector ctx = opts.dbl_list("context");
  const int want_ctx = ckpt.model.decoder.spec.context_dim;
  if (static_cast<int>(ctx.size()) != want_ctx)
    throw ConfigError("model expects " + std::to_string(want_ctx) +
                      " context values, got " + std::to_string(ctx.size()));
  const Matrix xs = sample(ckpt.model, n, rng, ctx);
  const auto path = resolve_out(opts, "output");
  write_dataset_csv(path, xs);
  out << "wrote " << n << " samples of dim " << xs.cols() << " to " << path.string() << "\n";
  return exit_ok;
}

inline int cmd_nll(const OptionSet& opts, std::ostream& out) {
  require(opts, "model");
  require(opts, "data");
  const Checkpoint ckpt = load_checkpoint(opts.str("model"));
  const Dataset ds = read_dataset_csv(opts.str("data"));
  const bool encoder_side = opts.boolean("encoder-side");
  std::vector<double> ll(ds.x.rows());
  double mean_nll = 0.0;
  for (std::size_t i = 0; i < ds.x.rows(); ++i) {
    const Vector xi = ds.x.row_vector(i);
    const Vector ci = ds.has_context() ? ds.context.row_vector(i) : Vector{};
    ll[i] = encoder_side ? log_likelihood_encoder(ckpt.model, xi, ci)
                         : log_likelihood_decoder(ckpt.model, xi, ci);
    mean_nll -= ll[i] / static_cast<double>(ds.x.rows());
  }
  const auto path = resolve_out(opts, "output");
  write_loglik_csv(path, ll);
  out << "rows " << ds.x.rows() << "\n";
  out << "mean_nll " << fmt17(mean_nll) << "\n";
  out << "wrote " << path.string() << "\n";
  return exit_ok;
}

inline int cmd_verify(const OptionSet& opts, std::ostream& out) {
  const std::string check = opts.str("check");
  const bool all = check == "all";
  bool matched = false;

  if (all || check == "gradient-identity") {
    matched = true;
    const auto rep = gradient_identity_check(static_cast<int>(opts.i64("max-dim")),
                                             static_cast<int>(opts.i64("seeds")),
                                             opts.u64("seed"), opts.dbl("tol"));
    out << "gradient-identity: dims 1.." << rep.max_dim << ", " << rep.seeds
        << " trials each, max relative error " << fmt17(rep.max_rel_error) << " -> OK\n";
  }
  if (all || check == "gap-bound") {
    matched = true;
    const auto rep = gap_bound_sweep(static_cast<int>(opts.i64("trials")),
                                     static_cast<int>(opts.i64("dim")), opts.u64("seed"),
                                     opts.dbl("slack"));
    out << "gap-bound: " << rep.trials << " random pairs at dim " << opts.i64("dim")
        << ", max gap " << fmt17(rep.max_gap) << ", worst margin " << fmt17(rep.worst_margin)
        << " -> OK\n";
  }
  if (all || check == "partition") {
    matched = true;
    GmmDensity q;
    q.weights = {0.5, 0.5};
    q.means = {{-4.0}, {4.0}};
    q.sigmas = {{1.0}, {1.0}};
    const auto split = partition_loss(q, {0, 1});
    const auto trivial = partition_loss(q, {0, 0});
    out << "partition: entropy " << fmt17(split.entropy) << ", reconstruction floor "
        << fmt17(split.r_min) << ", critical beta " << fmt17(split.beta_crit) << "\n";
    // Both groups are single components 8 apart, so the floor is exactly 16
    // and the critical beta is log(2)/16.
    const double bc_ref = std::log(2.0) / 16.0;
    if (std::abs(split.r_min - 16.0) > 16.0 * 1e-3)
      throw VerificationFailure("partition: reconstruction floor " + fmt17(split.r_min) +
                                " deviates from the closed form 16");
    if (std::abs(split.beta_crit - bc_ref) > bc_ref * 1e-3)
      throw VerificationFailure("partition: critical beta " + fmt17(split.beta_crit) +
                                " deviates from the closed form " + fmt17(bc_ref));
    const bool below = split.loss(0.9 * split.beta_crit) < trivial.loss(0.9 * split.beta_crit);
    const bool above = split.loss(1.1 * split.beta_crit) > trivial.loss(1.1 * split.beta_crit);
    if (!below || !above)
      throw VerificationFailure("partition: loss curves do not cross at the critical beta");
    out << "partition: mode-splitting wins below critical beta, loses above -> OK\n";
  }
  if (all || check == "landscape") {
    matched = true;
    const LinearModel1D m{1.5, 1.0};
    for (auto variant : {LandscapeVariant::f_inverse, LandscapeVariant::g_decoder}) {
      const Field2D field = [&, variant](double a, double b) {
        return landscape_gradient(m, variant, a, b);
      };
      const char* vname = variant == LandscapeVariant::f_inverse ? "f-inverse" : "g-decoder";
      for (const auto& [a, b] : landscape_critical_points(m, variant)) {
        const CriticalKind kind = classify_critical_point(field, a, b);
        out << "landscape " << vname << ": critical point (" << fmt17(a) << ", " << fmt17(b)
            << ") is a " << critical_kind_to_string(kind) << "\n";
        const bool origin = a == 0.0 && b == 0.0;
        if (origin && kind != CriticalKind::saddle)
          throw VerificationFailure("landscape: the origin must be a saddle of the learned-"
                                    "decoder field");
        if (!origin && kind != CriticalKind::minimum)
          throw VerificationFailure("landscape: the matched-scale points must be minima");
      }
    }
    out << "landscape: classifications match the closed-form analysis -> OK\n";
  }
  if (!matched) throw ConfigError("unknown check '" + check + "'");
  return exit_ok;
}

inline int cmd_landscape(const OptionSet& opts, std::ostream& out) {
  LandscapeGrid grid;
  grid.model = LinearModel1D{opts.dbl("data-sigma"), opts.dbl("beta")};
  const std::string variant = opts.str("variant");
  if (variant == "g-decoder")
    grid.variant = LandscapeVariant::g_decoder;
  else if (variant == "f-inverse")
    grid.variant = LandscapeVariant::f_inverse;
  else
    throw ConfigError("unknown variant '" + variant + "'");
  grid.a_min = opts.dbl("a-min");
  grid.a_max = opts.dbl("a-max");
  grid.b_min = opts.dbl("b-min");
  grid.b_max = opts.dbl("b-max");
  grid.resolution = static_cast<int>(opts.i64("grid"));

  const auto pts = landscape_grid_points(grid);
  const auto path = resolve_out(opts, "output");
  write_landscape_csv(path, pts);
  out << "wrote " << pts.size() << " grid points to " << path.string() << "\n";
  if (!opts.str("svg").empty()) {
    const auto svg_path = resolve_out(opts, "svg");
    write_landscape_svg(svg_path, grid, pts);
    out << "wrote quiver plot " << svg_path.string() << "\n";
  }
  const Field2D field = [&](double a, double b) {
    return landscape_gradient(grid.model, grid.variant, a, b);
  };
  for (const auto& [a, b] : landscape_critical_points(grid.model, grid.variant)) {
    out << "critical point a=" << fmt17(a) << " b=" << fmt17(b) << " -> "
        << critical_kind_to_string(classify_critical_point(field, a, b)) << "\n";
  }
  return exit_ok;
}

inline int cmd_beta_search(const OptionSet& opts, std::ostream& out) {
  require(opts, "data");
  const Dataset ds = read_dataset_csv(opts.str("data"));
  const NetworkSpec spec = spec_from_options(opts, static_cast<int>(ds.x.cols()),
                                             ds.has_context() ? static_cast<int>(ds.context.cols())
                                                              : 0);
  const TrainConfig cfg = train_config_from_options(opts);
  const ModelPair init = make_model_pair(spec, cfg.seed);
  const BetaSearchResult r = beta_search(
      cfg, init, ds.x, ds.has_context() ? &ds.context : nullptr, opts.dbl("beta-min"),
      opts.dbl("factor"), static_cast<int>(opts.i64("max-rounds")), opts.dbl("jump-threshold"));
  for (const auto& p : r.probes) {
    out << "beta " << fmt17(p.beta) << ": max jump " << fmt17(p.max_jump) << " nats, skipped "
        << p.skipped << " -> " << (p.stable ? "stable" : "unstable") << "\n";
  }
  out << "selected beta " << fmt17(r.beta) << "\n";
  maybe_write_manifest(opts, "beta-search", {}, out);
  return exit_ok;
}

inline int cmd_reweight(const OptionSet& opts, std::ostream& out) {
  require(opts, "model");
  if (opts.str("potential") != "dw4")
    throw ConfigError("unknown potential '" + opts.str("potential") + "'");
  const Checkpoint ckpt = load_checkpoint(opts.str("model"));
  const PairwisePotential pot = dw4();
  const bool projected = opts.boolean("project-com");
  const int want_dim = projected ? (pot.n_particles - 1) * pot.space_dim : pot.dim();
  if (ckpt.model.decoder.spec.input_dim != want_dim)
    throw ConfigError("model dimension " + std::to_string(ckpt.model.decoder.spec.input_dim) +
                      " does not match the potential's " + std::to_string(want_dim));
  const Matrix basis =
      projected ? com_projection_basis(pot.n_particles, pot.space_dim) : Matrix();
  const EnergyFn energy = [&](const Vector& y) {
    return potential_energy(pot, projected ? lift_com(basis, y) : y);
  };

  RngStream rng(opts.u64("seed"));
  const std::size_t n = static_cast<std::size_t>(opts.i64("n"));
  const Matrix ys = sample(ckpt.model, n, rng);
  const double tau = opts.dbl("tau");
  const auto ws = importance_weights(ckpt.model, ys, energy, tau);

  const auto path = resolve_out(opts, "output");
  if (projected) {
    // Write full configurations so the file stands on its own.
    std::vector<WeightedSample> lifted;
    lifted.reserve(ws.size());
    for (const auto& w : ws) lifted.push_back({lift_com(basis, w.x), w.log_weight});
    write_weighted_csv(path, lifted);
  } else {
    write_weighted_csv(path, ws);
  }

  const double ess = effective_sample_size(ws);
  std::vector<double> lw(ws.size()), en(ws.size());
  for (std::size_t i = 0; i < ws.size(); ++i) {
    lw[i] = ws[i].log_weight;
    en[i] = energy(ws[i].x);
  }
  out << "samples " << n << "\n";
  out << "ess " << fmt17(ess) << "\n";
  out << "ess_fraction " << fmt17(ess / static_cast<double>(n)) << "\n";
  out << "mean_energy " << fmt17(self_normalized_mean(lw, en)) << "\n";
  out << "wrote " << path.string() << "\n";
  return exit_ok;
}

inline int run_command(const std::string& name, const std::vector<std::string>& args,
                       std::ostream& out);

inline int cmd_rerun(const OptionSet& opts, std::ostream& out) {
  require(opts, "manifest");
  const RunManifest m = read_run_manifest(opts.str("manifest"));
  const CommandInfo* info = nullptr;
  for (const auto& c : commands())
    if (c.name == m.command) info = &c;
  if (!info) throw IoError("manifest names unknown command '" + m.command + "'");
  if (m.command == "rerun") throw ConfigError("refusing to rerun a rerun manifest");

  // Rebuild the argument list, optionally rewriting output paths.
  const std::string redirect = opts.str("redirect-out");
  std::vector<OptionDecl> decls = info->options();
  std::vector<std::string> args;
  for (const auto& [key, value] : m.options) {
    const OptionDecl* decl = nullptr;
    for (const auto& d : decls)
      if (d.key == key) decl = &d;
    if (!decl) throw IoError("manifest option '" + key + "' is unknown to command '" +
                             m.command + "'");
    std::string v = value;
    if (!redirect.empty() && decl->out_path && !v.empty())
      v = (std::filesystem::path(redirect) / std::filesystem::path(v).filename()).string();
    if (decl->flag) {
      if (v == "true") args.push_back("--" + key);
    } else {
      args.push_back("--" + key);
      args.push_back(v);
    }
  }
  out << "rerun: fff " << m.command;
  for (const auto& a : args) out << ' ' << a;
  out << "\n";
  return run_command(m.command, args, out);
}

inline int run_command(const std::string& name, const std::vector<std::string>& args,
                       std::ostream& out) {
  const CommandInfo* info = nullptr;
  for (const auto& c : commands())
    if (c.name == name) info = &c;
  if (!info) throw ConfigError("unknown command '" + name + "'");

  OptionSet opts(info->options());
  opts.parse_args(args);
  if (opts.boolean("help")) {
    print_command_help(out, *info);
    return exit_ok;
  }
  check_threads(opts);

  if (name == "data") return cmd_data(opts, out);
  if (name == "train") return cmd_train(opts, out);
  if (name == "sample") return cmd_sample(opts, out);
  if (name == "nll") return cmd_nll(opts, out);
  if (name == "verify") return cmd_verify(opts, out);
  if (name == "landscape") return cmd_landscape(opts, out);
  if (name == "beta-search") return cmd_beta_search(opts, out);
  if (name == "reweight") return cmd_reweight(opts, out);
  if (name == "rerun") return cmd_rerun(opts, out);
  throw ConfigError("unknown command '" + name + "'");
}

}  // namespace detail

// Entry point shared by the binary and the tests. Output goes to `out`,
// diagnostics to `err`.
inline int main(int argc, const char* const* argv, std::ostream& out = std::cout,
                std::ostream& err = std::cerr) {
  std::vector<std::string> args(argv + 1, argv + argc);
  if (args.empty() || args[0] == "--help" || args[0] == "help") {
    detail::print_global_help(out);
    return exit_ok;
  }
  const std::string command = args[0];
  args.erase(args.begin());
  try {
    return detail::run_command(command, args, out);
  } catch (const VerificationFailure& e) {
    err << "verification failure: " << e.what() << "\n";
    return exit_verification;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    err << "run 'fff " << command << " --help' for the available options\n";
    return exit_usage;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return exit_numerical;
  }
}

}  // namespace fff::cli
